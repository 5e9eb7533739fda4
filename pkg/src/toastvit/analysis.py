"""Layer-wise FFN redundancy diagnostics.

Three signals per layer, all computed on the post-GELU FC1 activations of
calibration batches: the near-zero activation fraction, the mean linear
reconstruction fidelity of randomly sampled channels, and the effective
rank ratio of the activation spectrum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .linalg import least_squares, singular_values
from .model import VitModel
from .validation import check_finite

DEFAULT_SPARSITY_EPS = 1e-3


def activation_sparsity(acts: np.ndarray, eps: float = DEFAULT_SPARSITY_EPS) -> float:
    """Fraction of entries with magnitude below ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    acts = np.asarray(acts)
    return float(np.mean(np.abs(acts) < eps))


def channel_r2(acts: np.ndarray, target: int, predictors) -> float:
    """Coefficient of determination for predicting one channel from others.

    Fits the target channel on the predictor channels plus an intercept;
    returns ``1 - SS_res / SS_tot`` (at most 1, possibly negative).
    """
    acts = np.asarray(acts, dtype=np.float64)
    check_finite(acts, "activations")
    predictors = np.asarray(predictors, dtype=np.intp).ravel()
    if predictors.size < 1:
        raise ValueError("need at least one predictor channel")
    if target in predictors:
        raise ValueError("target channel cannot be its own predictor")
    n = acts.shape[0]
    if n <= predictors.size:
        raise ValueError(f"need more tokens ({n}) than predictors ({predictors.size})")

    y = acts[:, target]
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    if ss_tot / n <= 1e-12:
        raise ValueError("degenerate target: channel variance below 1e-12")

    design = np.concatenate([np.ones((n, 1)), acts[:, predictors]], axis=1)
    beta = least_squares(design, y)
    resid = y - design @ beta
    return 1.0 - float(resid @ resid) / ss_tot


def effective_rank_ratio(acts: np.ndarray) -> float:
    """exp(entropy of the normalized singular values) over the channel count.

    1.0 for a uniform spectrum, 1/C for rank one; zero singular values
    contribute nothing to the entropy.
    """
    acts = np.asarray(acts, dtype=np.float64)
    sigma = singular_values(acts)
    total = sigma.sum()
    if total == 0.0:
        raise ValueError("zero matrix")
    norm = sigma / total
    positive = norm[norm > 0]
    entropy = -float(np.sum(positive * np.log(positive)))
    return float(np.exp(entropy)) / acts.shape[1]


@dataclass
class LayerRedundancy:
    sparsity: float
    mean_r2: float
    effective_rank_ratio: float
    sampled_channels: int


@dataclass
class RedundancyReport:
    layers: list[LayerRedundancy]

    def to_dicts(self) -> list[dict]:
        return [
            {
                "layer": i,
                "sparsity": lr.sparsity,
                "mean_r2": lr.mean_r2,
                "effective_rank_ratio": lr.effective_rank_ratio,
                "sampled_channels": lr.sampled_channels,
            }
            for i, lr in enumerate(self.layers)
        ]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dicts(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RedundancyReport":
        records = json.loads(Path(path).read_text())
        return cls(
            layers=[
                LayerRedundancy(
                    sparsity=r["sparsity"],
                    mean_r2=r["mean_r2"],
                    effective_rank_ratio=r["effective_rank_ratio"],
                    sampled_channels=r["sampled_channels"],
                )
                for r in records
            ]
        )

    def to_csv(self) -> str:
        lines = ["layer,sparsity,mean_r2,eff_rank"]
        for i, lr in enumerate(self.layers):
            lines.append(f"{i},{lr.sparsity!r},{lr.mean_r2!r},{lr.effective_rank_ratio!r}")
        return "\n".join(lines) + "\n"


def redundancy_report(
    model: VitModel,
    calibration: list[np.ndarray],
    eps: float = DEFAULT_SPARSITY_EPS,
    max_targets: int = 32,
    num_predictors: int = 32,
    seed: int = 0,
) -> RedundancyReport:
    """Diagnostics over the FC1 post-GELU activations of calibration batches.

    Runs one trace-capturing forward per batch, concatenates activations
    along the token axis, and reports per layer. The reconstruction score
    averages over at most ``max_targets`` seeded random target channels,
    each regressed on ``num_predictors`` seeded random other channels;
    channels with negligible variance are excluded from sampling, and a
    fully degenerate (all-near-constant) layer reports ``mean_r2`` 0 with
    ``sampled_channels`` 0 and the minimal rank ratio.
    """
    from .engine import forward

    if not calibration:
        raise ValueError("need at least one calibration batch")
    per_layer = [[] for _ in range(model.config.num_layers)]
    for batch in calibration:
        _, trace = forward(model, batch)
        for layer, acts in enumerate(trace.fc1_acts):
            per_layer[layer].append(acts)

    layers = []
    for layer in range(model.config.num_layers):
        acts = np.concatenate(per_layer[layer], axis=0)
        rng = np.random.default_rng([seed, layer])
        mean_r2, sampled = _sampled_mean_r2(acts, rng, max_targets, num_predictors)
        if np.all(acts == 0.0):
            rank_ratio = 1.0 / acts.shape[1]
        else:
            rank_ratio = effective_rank_ratio(acts)
        layers.append(
            LayerRedundancy(
                sparsity=activation_sparsity(acts, eps),
                mean_r2=mean_r2,
                effective_rank_ratio=rank_ratio,
                sampled_channels=sampled,
            )
        )
    return RedundancyReport(layers=layers)


def _sampled_mean_r2(acts: np.ndarray, rng, max_targets: int, num_predictors: int) -> tuple[float, int]:
    n, c = acts.shape
    variances = np.var(np.asarray(acts, dtype=np.float64), axis=0)
    candidates = np.flatnonzero(variances > 1e-12)
    k = min(num_predictors, c - 1, n - 2)
    if candidates.size == 0 or k < 1:
        return 0.0, 0
    targets = np.sort(rng.choice(candidates, size=min(max_targets, candidates.size), replace=False))
    scores = []
    all_channels = np.arange(c)
    for target in targets:
        others = all_channels[all_channels != target]
        predictors = rng.choice(others, size=k, replace=False)
        scores.append(channel_r2(acts, int(target), predictors))
    return float(np.mean(scores)), int(targets.size)


class RedundancyAnalyzer(BaseEstimator):
    """Estimator facade over :func:`redundancy_report`; ``fit`` stores the
    report as ``report_``."""

    def __init__(self, eps: float = DEFAULT_SPARSITY_EPS, max_targets: int = 32, num_predictors: int = 32, seed: int = 0):
        self.eps = eps
        self.max_targets = max_targets
        self.num_predictors = num_predictors
        self.seed = seed

    def fit(self, model: VitModel, calibration: list[np.ndarray]):
        self.report_ = redundancy_report(
            model,
            calibration,
            eps=self.eps,
            max_targets=self.max_targets,
            num_predictors=self.num_predictors,
            seed=self.seed,
        )
        return self
