"""Deterministic random fixtures: seeded models and token batches.

Weights are scaled 1/sqrt(D) so activations stay O(1) through depth;
everything is reproducible from the seed alone, which keeps fixture
archives regenerable instead of shipped.
"""

from __future__ import annotations

import numpy as np

from .model import BlockWeights, ModelConfig, VitModel


def toy_config(
    num_layers: int = 2,
    num_tokens: int = 12,
    embed_dim: int = 32,
    num_heads: int = 2,
    mlp_dim: int = 64,
    has_cls: bool = True,
) -> ModelConfig:
    return ModelConfig(
        num_layers=num_layers,
        num_tokens=num_tokens,
        embed_dim=embed_dim,
        num_heads=num_heads,
        head_dim=embed_dim // num_heads,
        mlp_dim=mlp_dim,
        has_cls=has_cls,
    )


def random_model(config: ModelConfig, seed: int = 0) -> VitModel:
    rng = np.random.default_rng(seed)
    d, m = config.embed_dim, config.mlp_dim
    w_scale = 1.0 / np.sqrt(d)
    blocks = []
    for layer in range(config.num_layers):
        dk = config.per_layer_head_dim[layer]
        blocks.append(
            BlockWeights(
                wq=[_normal(rng, (d, dk), w_scale) for _ in range(config.num_heads)],
                wk=[_normal(rng, (d, dk), w_scale) for _ in range(config.num_heads)],
                wv=[_normal(rng, (d, dk), w_scale) for _ in range(config.num_heads)],
                wproj=[_normal(rng, (dk, d), w_scale) for _ in range(config.num_heads)],
                bq=[_normal(rng, (dk,), 0.02) for _ in range(config.num_heads)],
                bk=[_normal(rng, (dk,), 0.02) for _ in range(config.num_heads)],
                bv=[_normal(rng, (dk,), 0.02) for _ in range(config.num_heads)],
                bproj=_normal(rng, (d,), 0.02),
                fc1=_normal(rng, (d, m), w_scale),
                fc1_bias=_normal(rng, (m,), 0.02),
                fc2=_normal(rng, (m, d), 1.0 / np.sqrt(m)),
                fc2_bias=_normal(rng, (d,), 0.02),
                ln1_scale=(1.0 + _normal(rng, (d,), 0.05)).astype(np.float32),
                ln1_shift=_normal(rng, (d,), 0.05),
                ln2_scale=(1.0 + _normal(rng, (d,), 0.05)).astype(np.float32),
                ln2_shift=_normal(rng, (d,), 0.05),
            )
        )
    model = VitModel(config=config, blocks=blocks)
    model.validate()
    return model


def random_tokens(config: ModelConfig, num_batches: int = 1, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [
        _normal(rng, (config.num_tokens, config.embed_dim), 1.0)
        for _ in range(num_batches)
    ]


def _normal(rng, shape, scale) -> np.ndarray:
    return (rng.standard_normal(shape) * scale).astype(np.float32)
