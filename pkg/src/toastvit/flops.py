"""Analytic cost model: multiply-accumulate counts per block and in total.

Convention: one multiply-accumulate = one FLOP. Patch embedding and the
classifier head are outside the engine and excluded; so are biases,
normalization, softmax, and GELU. Per layer with N tokens, width D, and
H heads of live dimension k:

    mhsa = 3*N*D*(H*k) + N^2*(H*k) + N^2*(H*k) + N*(H*k)*D
    ffn  = N*kept_fc1_in*kept_expanded + N*kept_expanded*D
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ModelConfig


class OpCounter:
    """Tally of multiply-accumulate counts by bucket, as exact integers.

    ``mhsa`` and ``ffn`` cover the forward evaluation itself and are
    directly comparable to :func:`count_flops`; ``overhead`` holds the
    sampled importance passes of dynamic channel selection.
    """

    def __init__(self):
        self.mhsa = 0
        self.ffn = 0
        self.overhead = 0

    def add(self, bucket: str, macs: int) -> None:
        setattr(self, bucket, getattr(self, bucket) + int(macs))

    @property
    def total(self) -> int:
        return self.mhsa + self.ffn

    def to_dict(self) -> dict:
        return {
            "mhsa_macs": self.mhsa,
            "ffn_macs": self.ffn,
            "selection_overhead_macs": self.overhead,
            "total_macs": self.total,
        }


@dataclass
class LayerFlops:
    mhsa_flops: int
    ffn_flops: int


@dataclass
class FlopsReport:
    layers: list[LayerFlops]
    mhsa_total: int
    ffn_total: int
    total: int
    reduction_percent: float

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"layer": i, "mhsa_flops": lf.mhsa_flops, "ffn_flops": lf.ffn_flops}
                for i, lf in enumerate(self.layers)
            ],
            "mhsa_total": self.mhsa_total,
            "ffn_total": self.ffn_total,
            "total": self.total,
            "reduction_percent": self.reduction_percent,
        }


def count_flops(config: ModelConfig, ffn_keep: list[tuple[int, int]] | None = None) -> FlopsReport:
    """Multiply-accumulate counts for one forward pass of ``config``.

    ``ffn_keep`` lists per-layer ``(kept_fc1_in, kept_expanded)`` channel
    counts; ``None`` means the dense FFN. Reduction is reported against
    the dense version of the same architecture.
    """
    config.validate()
    if ffn_keep is None:
        ffn_keep = [(config.embed_dim, config.mlp_dim)] * config.num_layers
    if len(ffn_keep) != config.num_layers:
        raise ValueError(f"ffn_keep: expected {config.num_layers} entries, got {len(ffn_keep)}")
    for layer, (kept_in, kept_exp) in enumerate(ffn_keep):
        if not 1 <= kept_in <= config.embed_dim:
            raise ValueError(f"ffn_keep[{layer}]: kept_fc1_in {kept_in} outside [1, {config.embed_dim}]")
        if not 1 <= kept_exp <= config.mlp_dim:
            raise ValueError(f"ffn_keep[{layer}]: kept_expanded {kept_exp} outside [1, {config.mlp_dim}]")

    layers = [
        LayerFlops(
            mhsa_flops=_mhsa_macs(config, layer),
            ffn_flops=_ffn_macs(config, *ffn_keep[layer]),
        )
        for layer in range(config.num_layers)
    ]
    mhsa_total = sum(lf.mhsa_flops for lf in layers)
    ffn_total = sum(lf.ffn_flops for lf in layers)
    total = mhsa_total + ffn_total

    dense = config.dense()
    dense_total = sum(
        _mhsa_macs(dense, layer) + _ffn_macs(dense, dense.embed_dim, dense.mlp_dim)
        for layer in range(dense.num_layers)
    )
    reduction = 100.0 * (1.0 - total / dense_total)
    return FlopsReport(
        layers=layers,
        mhsa_total=mhsa_total,
        ffn_total=ffn_total,
        total=total,
        reduction_percent=reduction,
    )


def _mhsa_macs(config: ModelConfig, layer: int) -> int:
    n, d = config.num_tokens, config.embed_dim
    hk = config.num_heads * config.per_layer_head_dim[layer]
    return 3 * n * d * hk + n * n * hk + n * n * hk + n * hk * d


def _ffn_macs(config: ModelConfig, kept_in: int, kept_expanded: int) -> int:
    n, d = config.num_tokens, config.embed_dim
    return n * kept_in * kept_expanded + n * kept_expanded * d
