"""Deterministic forward pass: pre-norm attention and FFN blocks with
residual connections, trace capture, and optional channel selection.

Per block: ``x <- x + MHSA(LN(x))`` then ``x <- x + FFN(LN(x))``. Attention
scores for head ``h`` are ``Q K^T / sqrt(k)`` with ``k`` the layer's live
(or overridden) head dimension. All arithmetic is float32 through the
fixed-order matmul kernel, so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flops import OpCounter
from .linalg import gelu, matmul, stable_softmax_rows
from .model import VitModel
from .tcs import TcsPolicy, _ffn_tcs
from .validation import ShapeError

LN_EPS = np.float32(1e-6)


@dataclass
class ForwardTrace:
    """Per-layer capture: FFN inputs (post-LN), FC1 post-GELU activations,
    and the head-averaged CLS attention row (None without a CLS token)."""

    ffn_inputs: list[np.ndarray] = field(default_factory=list)
    fc1_acts: list[np.ndarray] = field(default_factory=list)
    cls_attention: list[np.ndarray | None] = field(default_factory=list)
    attention: list[list[np.ndarray]] | None = None


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=1, keepdims=True, dtype=np.float32)
    var = np.mean((x - mean) ** 2, axis=1, keepdims=True, dtype=np.float32)
    return (x - mean) / np.sqrt(var + LN_EPS) * scale + shift


def forward(
    model: VitModel,
    x: np.ndarray,
    tcs: TcsPolicy | None = None,
    counter: OpCounter | None = None,
    capture_attention: bool = False,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run all blocks on an ``N x D`` token matrix.

    Returns the output tokens and the populated trace. When ``tcs`` is
    given, every FFN goes through channel selection (static mode caches
    the first selection on the policy object).
    """
    cfg = model.config
    model.validate()
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.shape != (cfg.num_tokens, cfg.embed_dim):
        raise ShapeError(
            f"input: expected shape {(cfg.num_tokens, cfg.embed_dim)}, got {tuple(x.shape)}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("input: contains NaN or Inf")

    if tcs is not None:
        tcs.bind(cfg)
        if tcs.mode == "static" and tcs.selections is None:
            tcs.selections = [None] * cfg.num_layers

    trace = ForwardTrace()
    if capture_attention:
        trace.attention = []

    for layer, blk in enumerate(model.blocks):
        h = layer_norm(x, blk.ln1_scale, blk.ln1_shift)
        scale = np.float32(1.0 / math.sqrt(cfg.scale_dim(layer)))

        attn_out = np.zeros_like(x)
        cls_rows = []
        layer_attn = []
        for head in range(cfg.num_heads):
            q = _mm(h, blk.wq[head], counter, "mhsa") + blk.bq[head]
            k = _mm(h, blk.wk[head], counter, "mhsa") + blk.bk[head]
            v = _mm(h, blk.wv[head], counter, "mhsa") + blk.bv[head]
            attn = stable_softmax_rows(_mm(q, k.T, counter, "mhsa") * scale)
            if cfg.has_cls:
                cls_rows.append(attn[0])
            if capture_attention:
                layer_attn.append(attn)
            ctx = _mm(attn, v, counter, "mhsa")
            attn_out += _mm(ctx, blk.wproj[head], counter, "mhsa")
        attn_out += blk.bproj
        x = x + attn_out

        a_cls = np.stack(cls_rows).mean(axis=0, dtype=np.float32) if cfg.has_cls else None
        h2 = layer_norm(x, blk.ln2_scale, blk.ln2_shift)
        trace.ffn_inputs.append(h2)
        trace.cls_attention.append(a_cls)
        if capture_attention:
            trace.attention.append(layer_attn)

        if tcs is None:
            act = gelu(_mm(h2, blk.fc1, counter, "ffn") + blk.fc1_bias)
            ffn_out = _mm(act, blk.fc2, counter, "ffn") + blk.fc2_bias
            trace.fc1_acts.append(act)
        else:
            layer_policy = tcs.layers[layer]
            cached = tcs.selections[layer] if tcs.mode == "static" else None
            ffn_out, act_full, used = _ffn_tcs(
                blk.fc1,
                blk.fc2,
                blk.fc1_bias,
                blk.fc2_bias,
                h2,
                a_cls,
                layer_policy,
                seed=tcs.layer_seed(layer),
                selection=cached,
                counter=counter,
                layer=layer,
            )
            if tcs.mode == "static" and cached is None:
                tcs.selections[layer] = used
            trace.fc1_acts.append(act_full)
        x = x + ffn_out

    return x, trace


def _mm(a, b, counter, bucket):
    if counter is not None:
        counter.add(bucket, a.shape[0] * a.shape[1] * b.shape[1])
    return matmul(a, b)
