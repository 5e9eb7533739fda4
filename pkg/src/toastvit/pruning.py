"""Coupled per-head dimension pruning for the attention blocks.

Each internal dimension ``j`` of a head lives in two coupled matrix pairs:
its Q and K columns (pruned together so the score dot products stay valid)
and its V column with the matching output-projection row. Importance of a
dimension is its distance from the geometric median of the coupled rows;
the closest-to-center dimensions are the most replaceable and go first.
Plans are head-wise uniform: every head of a layer keeps the same count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .linalg import geometric_median, round_half_up
from .model import BlockWeights, ModelConfig, VitModel
from .validation import check_finite

KIND_QK = "qk"
KIND_VO = "vo"


def coupled_group(block: BlockWeights, head: int, kind: str) -> np.ndarray:
    """Rows of the coupled matrix for one head: row ``j`` concatenates the
    j-th Q and K columns (``qk``) or the j-th V column and projection row
    (``vo``)."""
    if kind == KIND_QK:
        return np.concatenate([block.wq[head].T, block.wk[head].T], axis=1)
    if kind == KIND_VO:
        return np.concatenate([block.wv[head].T, block.wproj[head]], axis=1)
    raise ValueError(f"unknown coupled kind {kind!r}")


def coupled_importance(group: np.ndarray, criterion: str = "gm") -> np.ndarray:
    """Importance score per dimension (row) of a coupled matrix.

    ``gm`` scores each row by its Euclidean distance to the geometric
    median of all rows; ``l1``/``l2`` row norms are available as a
    comparison hook.
    """
    group = np.asarray(group, dtype=np.float64)
    if group.ndim != 2 or group.shape[0] < 1:
        raise ValueError(f"coupled group must be a non-empty matrix, got shape {group.shape}")
    check_finite(group, "coupled group")
    if criterion == "gm":
        center = geometric_median(group)
        return np.linalg.norm(group - center, axis=1)
    if criterion == "l1":
        return np.abs(group).sum(axis=1)
    if criterion == "l2":
        return np.linalg.norm(group, axis=1)
    raise ValueError(f"unknown importance criterion {criterion!r}")


@dataclass
class HeadPlan:
    qk_keep: np.ndarray
    vo_keep: np.ndarray


@dataclass
class LayerPlan:
    dk_prime: int
    heads: list[HeadPlan]


@dataclass
class PruningPlan:
    layers: list[LayerPlan]

    def validate(self, config: ModelConfig) -> None:
        if len(self.layers) != config.num_layers:
            raise ValueError(f"plan: {len(self.layers)} layers but model has {config.num_layers}")
        for i, lp in enumerate(self.layers):
            if not 1 <= lp.dk_prime <= config.head_dim:
                raise ValueError(f"plan: layer {i} dk_prime {lp.dk_prime} outside [1, {config.head_dim}]")
            if len(lp.heads) != config.num_heads:
                raise ValueError(f"plan: layer {i} has {len(lp.heads)} heads, model has {config.num_heads}")
            for h, hp in enumerate(lp.heads):
                for label, kept in (("qk", hp.qk_keep), ("vo", hp.vo_keep)):
                    kept = np.asarray(kept)
                    if kept.size != lp.dk_prime:
                        raise ValueError(
                            f"plan: layer {i} head {h} {label} keeps {kept.size} != dk_prime {lp.dk_prime}"
                        )
                    if kept.size and (kept.min() < 0 or kept.max() >= config.head_dim):
                        raise ValueError(f"plan: layer {i} head {h} {label} index out of range")
                    if np.any(np.diff(kept) <= 0):
                        raise ValueError(f"plan: layer {i} head {h} {label} indices not strictly increasing")

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "dk_prime": lp.dk_prime,
                    "heads": [
                        {"qk_keep": np.asarray(hp.qk_keep).tolist(), "vo_keep": np.asarray(hp.vo_keep).tolist()}
                        for hp in lp.heads
                    ],
                }
                for lp in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PruningPlan":
        return cls(
            layers=[
                LayerPlan(
                    dk_prime=int(lp["dk_prime"]),
                    heads=[
                        HeadPlan(
                            qk_keep=np.asarray(hp["qk_keep"], dtype=np.intp),
                            vo_keep=np.asarray(hp["vo_keep"], dtype=np.intp),
                        )
                        for hp in lp["heads"]
                    ],
                )
                for lp in data["layers"]
            ]
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PruningPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def pruned_head_dim(ratio: float, head_dim: int) -> int:
    """Kept width for a pruning ratio: max(1, round((1 - ratio) * d_k))."""
    return max(1, round_half_up((1.0 - ratio) * head_dim))


def build_plan(model: VitModel, ratio: float, skip_first: bool = True) -> PruningPlan:
    """Head-wise uniform plan keeping the highest-importance dimensions.

    The QK and VO kept sets are chosen independently per head (they govern
    disjoint matrix pairs); ties break toward the lower index. With
    ``skip_first`` the first layer keeps every dimension.
    """
    cfg = model.config
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio {ratio} outside [0, 1)")
    if any(dk != cfg.head_dim for dk in cfg.per_layer_head_dim):
        raise ValueError("build_plan expects unpruned weights (per_layer_head_dim == head_dim)")

    layers = []
    for layer, blk in enumerate(model.blocks):
        if skip_first and layer == 0:
            dk_prime = cfg.head_dim
        else:
            dk_prime = pruned_head_dim(ratio, cfg.head_dim)
        heads = []
        for head in range(cfg.num_heads):
            heads.append(
                HeadPlan(
                    qk_keep=_top_dims(coupled_importance(coupled_group(blk, head, KIND_QK)), dk_prime),
                    vo_keep=_top_dims(coupled_importance(coupled_group(blk, head, KIND_VO)), dk_prime),
                )
            )
        layers.append(LayerPlan(dk_prime=dk_prime, heads=heads))
    plan = PruningPlan(layers=layers)
    plan.validate(cfg)
    return plan


def _top_dims(scores: np.ndarray, count: int) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:count])


def apply_plan(model: VitModel, plan: PruningPlan, scale_original: bool = False) -> VitModel:
    """Materialize a plan as a smaller dense model.

    Q/K keep the QK columns, V keeps the VO columns and the projection the
    matching rows; block width D is untouched. ``scale_original`` pins the
    attention scaling to the pre-pruning head dimension instead of the
    live one.
    """
    cfg = model.config
    plan.validate(cfg)
    blocks = []
    for layer, blk in enumerate(model.blocks):
        lp = plan.layers[layer]
        blocks.append(
            replace(
                blk,
                wq=[blk.wq[h][:, lp.heads[h].qk_keep] for h in range(cfg.num_heads)],
                wk=[blk.wk[h][:, lp.heads[h].qk_keep] for h in range(cfg.num_heads)],
                wv=[blk.wv[h][:, lp.heads[h].vo_keep] for h in range(cfg.num_heads)],
                wproj=[blk.wproj[h][lp.heads[h].vo_keep, :] for h in range(cfg.num_heads)],
                bq=[blk.bq[h][lp.heads[h].qk_keep] for h in range(cfg.num_heads)],
                bk=[blk.bk[h][lp.heads[h].qk_keep] for h in range(cfg.num_heads)],
                bv=[blk.bv[h][lp.heads[h].vo_keep] for h in range(cfg.num_heads)],
            )
        )
    new_config = replace(
        model.config,
        per_layer_head_dim=[lp.dk_prime for lp in plan.layers],
        per_layer_scale_dim=(list(cfg.per_layer_head_dim) if scale_original else None),
    )
    pruned = VitModel(config=new_config, blocks=blocks)
    pruned.validate()
    return pruned


class HeadPruner(BaseEstimator, TransformerMixin):
    """Estimator facade: ``fit`` scores a model and builds the plan,
    ``transform`` returns the compressed model."""

    def __init__(self, ratio: float = 0.9, skip_first: bool = True, scale_original: bool = False):
        self.ratio = ratio
        self.skip_first = skip_first
        self.scale_original = scale_original

    def fit(self, model: VitModel, y=None):
        self.plan_ = build_plan(model, ratio=self.ratio, skip_first=self.skip_first)
        return self

    def transform(self, model: VitModel) -> VitModel:
        if not hasattr(self, "plan_"):
            raise ValueError("HeadPruner is not fitted; call fit first")
        return apply_plan(model, self.plan_, scale_original=self.scale_original)
