"""Training-free token channel selection inside each FFN.

Per layer and per call (dynamic mode): sample a token subset, score the
FC1 input channels and the expanded post-GELU channels with the unified
importance metric, keep the top fraction of each, and evaluate the reduced
dense FFN. Static mode freezes the selection computed from a calibration
batch and reuses it. The block interface (token count and width D) is
never altered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .flops import OpCounter
from .linalg import gelu, matmul, round_half_up
from .model import ModelConfig, VitModel


def keep_count(ratio: float, dim: int) -> int:
    """Channels kept for a ratio: max(1, round(ratio * dim)), halves up."""
    return max(1, round_half_up(ratio * dim))


def sample_tokens(num_tokens: int, rate: float, seed: int, has_cls: bool) -> np.ndarray:
    """Seeded patch-token sample of size max(8, round(rate * N)), capped.

    The CLS token (index 0 when present) is never sampled; it enters the
    importance metric through its own term. Sorted, without replacement,
    and identical for identical ``(num_tokens, rate, seed)``.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"sample rate {rate} outside (0, 1]")
    if num_tokens < 1:
        raise ValueError("num_tokens must be >= 1")
    patches = np.arange(1 if has_cls else 0, num_tokens)
    size = min(max(8, round_half_up(rate * num_tokens)), len(patches))
    if size == len(patches):
        return patches
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(patches, size=size, replace=False))


def unified_importance(
    acts: np.ndarray,
    a_cls: np.ndarray | None,
    sample: np.ndarray,
    lambda_cls: float,
    lambda_patch: float,
) -> np.ndarray:
    """Per-channel importance combining CLS saliency and attention-weighted patches.

    ``I_c = lambda_cls * |acts[0, c]| + lambda_patch * mean_{i in sample}(a_cls[i] * |acts[i, c]|)``.
    With ``a_cls`` absent (no CLS token) the first term is dropped and the
    patch weights are uniform 1.
    """
    acts = np.asarray(acts, dtype=np.float64)
    sample = np.sort(np.asarray(sample, dtype=np.intp))
    if sample.size == 0:
        raise ValueError("unified_importance: empty token sample")
    sampled_abs = np.abs(acts[sample])
    if a_cls is None:
        return _importance_from_rows(None, sampled_abs, None, lambda_cls, lambda_patch)
    weights = np.asarray(a_cls, dtype=np.float64)[sample]
    return _importance_from_rows(np.abs(acts[0]), sampled_abs, weights, lambda_cls, lambda_patch)


def _importance_from_rows(cls_abs, sampled_abs, weights, lambda_cls, lambda_patch):
    if weights is None:
        patch = sampled_abs.sum(axis=0) / sampled_abs.shape[0]
    else:
        patch = (weights[:, None] * sampled_abs).sum(axis=0) / sampled_abs.shape[0]
    if cls_abs is None:
        return lambda_patch * patch
    return lambda_cls * cls_abs + lambda_patch * patch


def select_channels(scores: np.ndarray, keep_ratio: float) -> np.ndarray:
    """Indices of the top-k scores, ties to the lower index, sorted ascending."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio {keep_ratio} outside (0, 1]")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    k = keep_count(keep_ratio, scores.shape[0])
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


@dataclass
class ChannelSelection:
    """Frozen per-layer channel choice: FC1 input indices and expanded indices."""

    layer: int
    fc1_in_keep: np.ndarray
    expanded_keep: np.ndarray


@dataclass
class LayerTcsPolicy:
    fc1_keep: float = 1.0
    fc2_keep: float = 1.0
    sample_rate: float = 1.0
    lambda_cls: float = 2.0
    lambda_patch: float = 1.0

    def validate(self) -> None:
        for name in ("fc1_keep", "fc2_keep"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"policy: {name} {value} outside (0, 1]")
        if not (0.02 <= self.sample_rate <= 0.2 or self.sample_rate == 1.0):
            raise ValueError(f"policy: sample_rate {self.sample_rate} outside [0.02, 0.2] and != 1.0")
        if self.lambda_cls < 0 or self.lambda_patch < 0:
            raise ValueError("policy: lambda weights must be >= 0")


@dataclass
class TcsPolicy:
    """Per-layer keep ratios plus sampling and weighting knobs.

    ``selections`` is runtime state for static mode (filled from the first
    batch seen, e.g. a calibration batch) and is not serialized.
    """

    layers: list[LayerTcsPolicy]
    mode: str = "dynamic"
    seed: int = 0
    selections: list[ChannelSelection | None] | None = field(default=None, repr=False, compare=False)

    def validate(self) -> None:
        if self.mode not in ("dynamic", "static"):
            raise ValueError(f"policy: mode {self.mode!r} must be dynamic or static")
        if not self.layers:
            raise ValueError("policy: no layers")
        for layer in self.layers:
            layer.validate()

    def bind(self, config: ModelConfig) -> "TcsPolicy":
        """Validate against a model; forces lambda_cls to 0 without a CLS token."""
        self.validate()
        if len(self.layers) != config.num_layers:
            raise ValueError(
                f"policy: {len(self.layers)} layers but model has {config.num_layers}"
            )
        if not config.has_cls:
            for layer in self.layers:
                layer.lambda_cls = 0.0
        return self

    def keep_counts(self, config: ModelConfig) -> list[tuple[int, int]]:
        """Per-layer (kept_fc1_in, kept_expanded) counts implied by the ratios."""
        return [
            (keep_count(p.fc1_keep, config.embed_dim), keep_count(p.fc2_keep, config.mlp_dim))
            for p in self.layers
        ]

    def layer_seed(self, layer: int) -> int:
        return self.seed * 100_003 + layer

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "fc1_keep": p.fc1_keep,
                    "fc2_keep": p.fc2_keep,
                    "sample_rate": p.sample_rate,
                    "lambda_cls": p.lambda_cls,
                    "lambda_patch": p.lambda_patch,
                }
                for p in self.layers
            ],
            "mode": self.mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TcsPolicy":
        layers = [
            LayerTcsPolicy(
                fc1_keep=float(p["fc1_keep"]),
                fc2_keep=float(p["fc2_keep"]),
                sample_rate=float(p["sample_rate"]),
                lambda_cls=float(p.get("lambda_cls", 2.0)),
                lambda_patch=float(p.get("lambda_patch", 1.0)),
            )
            for p in data["layers"]
        ]
        policy = cls(layers=layers, mode=data.get("mode", "dynamic"), seed=int(data.get("seed", 0)))
        policy.validate()
        return policy

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TcsPolicy":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_policy(
    num_layers: int,
    has_cls: bool = True,
    mode: str = "dynamic",
    seed: int = 0,
) -> TcsPolicy:
    """Layer-adaptive schedule: conservative FC1 keep ratios decaying with
    depth, aggressive FC2 ratios in the deeper half, sampling rate growing
    with depth."""
    layers = []
    half = num_layers // 2
    for layer in range(num_layers):
        t = layer / (num_layers - 1) if num_layers > 1 else 0.0
        if layer < half:
            fc2 = 1.0
        else:
            span = max(1, (num_layers - 1) - half)
            u = (layer - half) / span
            fc2 = 0.5 - 0.4 * u
        layers.append(
            LayerTcsPolicy(
                fc1_keep=1.0 - 0.3 * t,
                fc2_keep=fc2,
                sample_rate=0.02 + 0.18 * t,
                lambda_cls=2.0 if has_cls else 0.0,
                lambda_patch=1.0,
            )
        )
    policy = TcsPolicy(layers=layers, mode=mode, seed=seed)
    policy.validate()
    return policy


def ffn_forward_tcs(
    fc1: np.ndarray,
    fc2: np.ndarray,
    fc1_bias: np.ndarray,
    fc2_bias: np.ndarray,
    x: np.ndarray,
    a_cls: np.ndarray | None,
    policy: LayerTcsPolicy,
    seed: int = 0,
    selection: ChannelSelection | None = None,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Evaluate one FFN with channel selection applied; output stays N x D.

    Pass ``a_cls`` only for models with a CLS token at row 0; ``selection``
    short-circuits scoring with a frozen choice (static mode).
    """
    out, _, _ = _ffn_tcs(fc1, fc2, fc1_bias, fc2_bias, x, a_cls, policy, seed, selection, counter, layer=0)
    return out


def _ffn_tcs(fc1, fc2, fc1_bias, fc2_bias, x, a_cls, policy, seed, selection, counter, layer):
    n, d = x.shape
    d_mlp = fc1.shape[1]
    if fc1.shape[0] != d or fc2.shape != (d_mlp, d):
        raise ValueError(f"ffn weights {fc1.shape}/{fc2.shape} inconsistent with input width {d}")

    if selection is None:
        sample = sample_tokens(n, policy.sample_rate, seed, has_cls=a_cls is not None)
        if sample.size == 0:
            raise ValueError("ffn_forward_tcs: no patch tokens to sample")
        keep_in = select_channels(
            unified_importance(x, a_cls, sample, policy.lambda_cls, policy.lambda_patch),
            policy.fc1_keep,
        )
        keep_exp = _select_expanded(fc1, fc1_bias, x, a_cls, sample, keep_in, policy, counter)
        selection = ChannelSelection(layer=layer, fc1_in_keep=keep_in, expanded_keep=keep_exp)
    else:
        keep_in, keep_exp = selection.fc1_in_keep, selection.expanded_keep

    x_red = x[:, keep_in]
    pre = matmul(x_red, fc1[np.ix_(keep_in, keep_exp)]) + fc1_bias[keep_exp]
    act = gelu(pre)
    out = matmul(act, fc2[keep_exp, :]) + fc2_bias
    if counter is not None:
        counter.add("ffn", n * keep_in.size * keep_exp.size)
        counter.add("ffn", n * keep_exp.size * d)

    act_full = np.zeros((n, d_mlp), dtype=np.float32)
    act_full[:, keep_exp] = act
    return out, act_full, selection


def _select_expanded(fc1, fc1_bias, x, a_cls, sample, keep_in, policy, counter):
    """Score expanded channels from post-GELU rows at the sampled tokens only,
    after the FC1 input reduction (scoring pre-reduction would forfeit the
    FC1 savings)."""
    rows = np.concatenate(([0], sample)) if a_cls is not None else sample
    pre_rows = matmul(x[np.ix_(rows, keep_in)], fc1[keep_in, :]) + fc1_bias
    if counter is not None:
        counter.add("overhead", rows.size * keep_in.size * fc1.shape[1])
    abs_rows = np.abs(gelu(pre_rows).astype(np.float64))
    if a_cls is not None:
        weights = np.asarray(a_cls, dtype=np.float64)[sample]
        imp = _importance_from_rows(abs_rows[0], abs_rows[1:], weights, policy.lambda_cls, policy.lambda_patch)
    else:
        imp = _importance_from_rows(None, abs_rows, None, policy.lambda_cls, policy.lambda_patch)
    return select_channels(imp, policy.fc2_keep)


class TokenChannelSelector(BaseEstimator):
    """Estimator wrapper building a :class:`TcsPolicy` for a model.

    Ratio parameters accept ``None`` (layer-adaptive default schedule), a
    float applied to every layer, or a per-layer sequence. With
    ``mode="static"`` and a calibration batch, ``fit`` freezes the
    selection each layer makes on that batch.
    """

    def __init__(
        self,
        fc1_keep=None,
        fc2_keep=None,
        sample_rate=None,
        lambda_cls=2.0,
        lambda_patch=1.0,
        mode="dynamic",
        seed=0,
    ):
        self.fc1_keep = fc1_keep
        self.fc2_keep = fc2_keep
        self.sample_rate = sample_rate
        self.lambda_cls = lambda_cls
        self.lambda_patch = lambda_patch
        self.mode = mode
        self.seed = seed

    def fit(self, model: VitModel, calibration: np.ndarray | None = None):
        cfg = model.config
        base = default_policy(cfg.num_layers, has_cls=cfg.has_cls, mode=self.mode, seed=self.seed)
        for i, layer in enumerate(base.layers):
            layer.fc1_keep = self._resolve(self.fc1_keep, i, cfg.num_layers, layer.fc1_keep)
            layer.fc2_keep = self._resolve(self.fc2_keep, i, cfg.num_layers, layer.fc2_keep)
            layer.sample_rate = self._resolve(self.sample_rate, i, cfg.num_layers, layer.sample_rate)
            layer.lambda_cls = self.lambda_cls if cfg.has_cls else 0.0
            layer.lambda_patch = self.lambda_patch
        base.bind(cfg)
        if self.mode == "static":
            if calibration is None:
                raise ValueError("static mode requires a calibration batch")
            from .engine import forward

            forward(model, calibration, tcs=base)
        self.policy_ = base
        self.selections_ = base.selections
        return self

    @staticmethod
    def _resolve(param, layer, num_layers, default):
        if param is None:
            return default
        if np.isscalar(param):
            return float(param)
        if len(param) != num_layers:
            raise ValueError(f"per-layer parameter has {len(param)} entries, model has {num_layers}")
        return float(param[layer])
