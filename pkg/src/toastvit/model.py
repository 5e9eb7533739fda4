"""Model configuration, per-block weights, and their archive naming contract.

Archive tensor names:

    layer{l}.wq.h{h}        D x dk'(l)   (same for wk, wv)
    layer{l}.wproj.h{h}     dk'(l) x D
    layer{l}.wq.h{h}.bias   dk'(l)       (same for wk, wv)
    layer{l}.wproj.bias     D            (single output bias per block)
    layer{l}.fc1            D x D_mlp    / layer{l}.fc1.bias  D_mlp
    layer{l}.fc2            D_mlp x D    / layer{l}.fc2.bias  D
    layer{l}.ln1.scale / layer{l}.ln1.shift   D   (ln2 likewise)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive
from .validation import ShapeError, check_matrix, check_vector, check_shape

_CONFIG_FIELDS = (
    "num_layers",
    "num_tokens",
    "embed_dim",
    "num_heads",
    "head_dim",
    "mlp_dim",
    "has_cls",
    "per_layer_head_dim",
)


@dataclass
class ModelConfig:
    """Architecture hyperparameters; ``per_layer_head_dim`` tracks pruning.

    ``per_layer_scale_dim`` optionally overrides the attention-scaling
    dimension per layer (kept at the pre-pruning width when a plan is
    applied with the original-scale option); ``None`` means scale by the
    live per-layer head dim.
    """

    num_layers: int
    num_tokens: int
    embed_dim: int
    num_heads: int
    head_dim: int
    mlp_dim: int
    has_cls: bool
    per_layer_head_dim: list[int] = field(default_factory=list)
    per_layer_scale_dim: list[int] | None = None

    def __post_init__(self):
        if not self.per_layer_head_dim:
            self.per_layer_head_dim = [self.head_dim] * self.num_layers
        self.validate()

    def validate(self) -> None:
        for name in ("num_layers", "num_tokens", "embed_dim", "num_heads", "head_dim", "mlp_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"config: {name} must be >= 1")
        if self.embed_dim != self.num_heads * self.head_dim:
            raise ValueError(
                f"config: embed_dim {self.embed_dim} != num_heads {self.num_heads} x head_dim {self.head_dim}"
            )
        if len(self.per_layer_head_dim) != self.num_layers:
            raise ValueError("config: per_layer_head_dim length must equal num_layers")
        for layer, dk in enumerate(self.per_layer_head_dim):
            if not 1 <= dk <= self.head_dim:
                raise ValueError(f"config: per_layer_head_dim[{layer}]={dk} outside [1, {self.head_dim}]")
        if self.per_layer_scale_dim is not None:
            if len(self.per_layer_scale_dim) != self.num_layers:
                raise ValueError("config: per_layer_scale_dim length must equal num_layers")
            if any(d < 1 for d in self.per_layer_scale_dim):
                raise ValueError("config: per_layer_scale_dim entries must be >= 1")

    def scale_dim(self, layer: int) -> int:
        """Dimension whose square root scales attention scores at ``layer``."""
        if self.per_layer_scale_dim is not None:
            return self.per_layer_scale_dim[layer]
        return self.per_layer_head_dim[layer]

    def dense(self) -> "ModelConfig":
        """The same architecture with no pruning applied."""
        return replace(
            self,
            per_layer_head_dim=[self.head_dim] * self.num_layers,
            per_layer_scale_dim=None,
        )

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in _CONFIG_FIELDS}
        out["per_layer_head_dim"] = list(self.per_layer_head_dim)
        if self.per_layer_scale_dim is not None:
            out["per_layer_scale_dim"] = list(self.per_layer_scale_dim)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        missing = [name for name in _CONFIG_FIELDS if name not in data]
        if missing:
            raise ValueError(f"config: missing fields {missing}")
        return cls(
            num_layers=int(data["num_layers"]),
            num_tokens=int(data["num_tokens"]),
            embed_dim=int(data["embed_dim"]),
            num_heads=int(data["num_heads"]),
            head_dim=int(data["head_dim"]),
            mlp_dim=int(data["mlp_dim"]),
            has_cls=bool(data["has_cls"]),
            per_layer_head_dim=[int(d) for d in data["per_layer_head_dim"]],
            per_layer_scale_dim=(
                [int(d) for d in data["per_layer_scale_dim"]] if data.get("per_layer_scale_dim") is not None else None
            ),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def deit_config(variant: str, num_tokens: int = 197) -> ModelConfig:
    """Standard DeiT architecture shapes (12 layers, 4x MLP expansion)."""
    dims = {"tiny": (192, 3), "small": (384, 6), "base": (768, 12)}
    if variant not in dims:
        raise ValueError(f"unknown DeiT variant {variant!r}")
    embed_dim, num_heads = dims[variant]
    return ModelConfig(
        num_layers=12,
        num_tokens=num_tokens,
        embed_dim=embed_dim,
        num_heads=num_heads,
        head_dim=embed_dim // num_heads,
        mlp_dim=4 * embed_dim,
        has_cls=True,
    )


@dataclass
class BlockWeights:
    """One transformer block: per-head attention projections plus FFN and norms."""

    wq: list[np.ndarray]
    wk: list[np.ndarray]
    wv: list[np.ndarray]
    wproj: list[np.ndarray]
    bq: list[np.ndarray]
    bk: list[np.ndarray]
    bv: list[np.ndarray]
    bproj: np.ndarray
    fc1: np.ndarray
    fc1_bias: np.ndarray
    fc2: np.ndarray
    fc2_bias: np.ndarray
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray


@dataclass
class VitModel:
    config: ModelConfig
    blocks: list[BlockWeights]

    def validate(self) -> None:
        cfg = self.config
        cfg.validate()
        if len(self.blocks) != cfg.num_layers:
            raise ShapeError(f"model: expected {cfg.num_layers} blocks, got {len(self.blocks)}")
        d, h, m = cfg.embed_dim, cfg.num_heads, cfg.mlp_dim
        for layer, blk in enumerate(self.blocks):
            dk = cfg.per_layer_head_dim[layer]
            for group in (blk.wq, blk.wk, blk.wv, blk.wproj, blk.bq, blk.bk, blk.bv):
                if len(group) != h:
                    raise ShapeError(f"layer{layer}: expected {h} heads, got {len(group)}")
            for head in range(h):
                check_shape(blk.wq[head], (d, dk), f"layer{layer}.wq.h{head}")
                check_shape(blk.wk[head], (d, dk), f"layer{layer}.wk.h{head}")
                check_shape(blk.wv[head], (d, dk), f"layer{layer}.wv.h{head}")
                check_shape(blk.wproj[head], (dk, d), f"layer{layer}.wproj.h{head}")
                check_shape(blk.bq[head], (dk,), f"layer{layer}.wq.h{head}.bias")
                check_shape(blk.bk[head], (dk,), f"layer{layer}.wk.h{head}.bias")
                check_shape(blk.bv[head], (dk,), f"layer{layer}.wv.h{head}.bias")
            check_shape(blk.bproj, (d,), f"layer{layer}.wproj.bias")
            check_shape(blk.fc1, (d, m), f"layer{layer}.fc1")
            check_shape(blk.fc1_bias, (m,), f"layer{layer}.fc1.bias")
            check_shape(blk.fc2, (m, d), f"layer{layer}.fc2")
            check_shape(blk.fc2_bias, (d,), f"layer{layer}.fc2.bias")
            for name in ("ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift"):
                check_shape(getattr(blk, name), (d,), f"layer{layer}.{name.replace('_', '.', 1)}")


def model_to_tensors(model: VitModel) -> list[tuple[str, np.ndarray]]:
    """Flatten a model into (name, tensor) pairs in the canonical order."""
    out = []
    for layer, blk in enumerate(model.blocks):
        p = f"layer{layer}"
        for head in range(model.config.num_heads):
            out.append((f"{p}.wq.h{head}", blk.wq[head]))
            out.append((f"{p}.wk.h{head}", blk.wk[head]))
            out.append((f"{p}.wv.h{head}", blk.wv[head]))
            out.append((f"{p}.wproj.h{head}", blk.wproj[head]))
            out.append((f"{p}.wq.h{head}.bias", blk.bq[head]))
            out.append((f"{p}.wk.h{head}.bias", blk.bk[head]))
            out.append((f"{p}.wv.h{head}.bias", blk.bv[head]))
        out.append((f"{p}.wproj.bias", blk.bproj))
        out.append((f"{p}.fc1", blk.fc1))
        out.append((f"{p}.fc1.bias", blk.fc1_bias))
        out.append((f"{p}.fc2", blk.fc2))
        out.append((f"{p}.fc2.bias", blk.fc2_bias))
        out.append((f"{p}.ln1.scale", blk.ln1_scale))
        out.append((f"{p}.ln1.shift", blk.ln1_shift))
        out.append((f"{p}.ln2.scale", blk.ln2_scale))
        out.append((f"{p}.ln2.shift", blk.ln2_shift))
    return out


def tensors_to_model(config: ModelConfig, tensors: list[tuple[str, np.ndarray]]) -> VitModel:
    """Assemble a model from named tensors, validating every shape."""
    table = dict(tensors)
    if len(table) != len(tensors):
        raise ValueError("weights: duplicate tensor names")

    def take(name: str, kind: str) -> np.ndarray:
        if name not in table:
            raise ShapeError(f"{name}: missing from archive")
        value = table.pop(name)
        if kind == "matrix":
            return check_matrix(value, name)
        return check_vector(value, name)

    blocks = []
    for layer in range(config.num_layers):
        p = f"layer{layer}"
        heads = range(config.num_heads)
        blocks.append(
            BlockWeights(
                wq=[take(f"{p}.wq.h{h}", "matrix") for h in heads],
                wk=[take(f"{p}.wk.h{h}", "matrix") for h in heads],
                wv=[take(f"{p}.wv.h{h}", "matrix") for h in heads],
                wproj=[take(f"{p}.wproj.h{h}", "matrix") for h in heads],
                bq=[take(f"{p}.wq.h{h}.bias", "vector") for h in heads],
                bk=[take(f"{p}.wk.h{h}.bias", "vector") for h in heads],
                bv=[take(f"{p}.wv.h{h}.bias", "vector") for h in heads],
                bproj=take(f"{p}.wproj.bias", "vector"),
                fc1=take(f"{p}.fc1", "matrix"),
                fc1_bias=take(f"{p}.fc1.bias", "vector"),
                fc2=take(f"{p}.fc2", "matrix"),
                fc2_bias=take(f"{p}.fc2.bias", "vector"),
                ln1_scale=take(f"{p}.ln1.scale", "vector"),
                ln1_shift=take(f"{p}.ln1.shift", "vector"),
                ln2_scale=take(f"{p}.ln2.scale", "vector"),
                ln2_shift=take(f"{p}.ln2.shift", "vector"),
            )
        )
    if table:
        raise ShapeError(f"weights: unexpected tensors {sorted(table)[:4]}")
    model = VitModel(config=config, blocks=blocks)
    model.validate()
    return model


def save_model(model: VitModel, path) -> None:
    write_archive(path, model_to_tensors(model))


def load_model(config: ModelConfig, path) -> VitModel:
    return tensors_to_model(config, read_archive(path))
