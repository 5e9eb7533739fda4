/**
 * Exporter-side reference forward pass, float64, computed directly from the
 * source checkpoint's out-major tensors (no reuse of the conversion code).
 * Used to cross-check that an exported archive evaluated by the engine
 * reproduces the checkpoint's semantics.
 */

import { Checkpoint } from './safetensors.js';
import { MapSpec, resolveSource, Role } from './mapspec.js';

export interface Mat {
  rows: number;
  cols: number;
  data: Float64Array;
}

export function mat(rows: number, cols: number, data?: Float64Array): Mat {
  return { rows, cols, data: data ?? new Float64Array(rows * cols) };
}

/** y = x @ W^T + b for an out-major weight (outDim x inDim). */
function linearOutMajor(x: Mat, w: Float64Array, outDim: number, b: Float64Array | null): Mat {
  const y = mat(x.rows, outDim);
  const inDim = x.cols;
  for (let n = 0; n < x.rows; n++) {
    for (let o = 0; o < outDim; o++) {
      let acc = 0;
      for (let i = 0; i < inDim; i++) {
        acc += x.data[n * inDim + i] * w[o * inDim + i];
      }
      y.data[n * outDim + o] = acc + (b === null ? 0 : b[o]);
    }
  }
  return y;
}

/** Same contraction for an in-major weight (inDim x outDim). */
function linearInMajor(x: Mat, w: Float64Array, outDim: number, b: Float64Array | null): Mat {
  const y = mat(x.rows, outDim);
  const inDim = x.cols;
  for (let n = 0; n < x.rows; n++) {
    for (let o = 0; o < outDim; o++) {
      let acc = 0;
      for (let i = 0; i < inDim; i++) {
        acc += x.data[n * inDim + i] * w[i * outDim + o];
      }
      y.data[n * outDim + o] = acc + (b === null ? 0 : b[o]);
    }
  }
  return y;
}

function layerNorm(x: Mat, scale: Float64Array, shift: Float64Array, eps = 1e-6): Mat {
  const y = mat(x.rows, x.cols);
  for (let n = 0; n < x.rows; n++) {
    let mean = 0;
    for (let c = 0; c < x.cols; c++) mean += x.data[n * x.cols + c];
    mean /= x.cols;
    let variance = 0;
    for (let c = 0; c < x.cols; c++) {
      const d = x.data[n * x.cols + c] - mean;
      variance += d * d;
    }
    variance /= x.cols;
    const inv = 1 / Math.sqrt(variance + eps);
    for (let c = 0; c < x.cols; c++) {
      y.data[n * x.cols + c] = (x.data[n * x.cols + c] - mean) * inv * scale[c] + shift[c];
    }
  }
  return y;
}

function softmaxRows(x: Mat): Mat {
  const y = mat(x.rows, x.cols);
  for (let n = 0; n < x.rows; n++) {
    let max = -Infinity;
    for (let c = 0; c < x.cols; c++) max = Math.max(max, x.data[n * x.cols + c]);
    let sum = 0;
    for (let c = 0; c < x.cols; c++) {
      const e = Math.exp(x.data[n * x.cols + c] - max);
      y.data[n * x.cols + c] = e;
      sum += e;
    }
    for (let c = 0; c < x.cols; c++) y.data[n * x.cols + c] /= sum;
  }
  return y;
}

function erf(x: number): number {
  // Abramowitz & Stegun 7.1.26, |error| < 1.5e-7.
  const sign = x < 0 ? -1 : 1;
  const ax = Math.abs(x);
  const t = 1 / (1 + 0.3275911 * ax);
  const poly =
    ((((1.061405429 * t - 1.453152027) * t + 1.421413741) * t - 0.284496736) * t + 0.254829592) * t;
  return sign * (1 - poly * Math.exp(-ax * ax));
}

function geluInPlace(x: Mat): void {
  for (let i = 0; i < x.data.length; i++) {
    const v = x.data[i];
    x.data[i] = 0.5 * v * (1 + erf(v / Math.SQRT2));
  }
}

export function referenceForward(checkpoint: Checkpoint, spec: MapSpec, tokens: Mat): Mat {
  const cfg = spec.config;
  const d = cfg.embed_dim;
  const dk = cfg.head_dim;
  const fused = spec.rules.some((r) => r.role === 'qkv_weight');

  const tensor = (role: Role, layer: number): Float64Array => {
    const rule = spec.rules.find((r) => r.role === role);
    if (rule === undefined) throw new Error(`reference: no rule for role ${role}`);
    const name = resolveSource(rule.source, layer);
    const found = checkpoint.get(name);
    if (found === undefined) throw new Error(`reference: missing source tensor ${name}`);
    return found.values;
  };

  let x = mat(tokens.rows, tokens.cols, Float64Array.from(tokens.data));
  for (let layer = 0; layer < cfg.num_layers; layer++) {
    const h = layerNorm(x, tensor('ln1_scale', layer), tensor('ln1_shift', layer));

    let q: Mat;
    let k: Mat;
    let v: Mat;
    if (fused) {
      const w = tensor('qkv_weight', layer);
      const b = tensor('qkv_bias', layer);
      const qkv =
        spec.qkv_split_axis === 0 ? linearOutMajor(h, w, 3 * d, b) : linearInMajor(h, w, 3 * d, b);
      q = sliceCols(qkv, 0, d);
      k = sliceCols(qkv, d, 2 * d);
      v = sliceCols(qkv, 2 * d, 3 * d);
    } else {
      q = linearOutMajor(h, tensor('q_weight', layer), d, tensor('q_bias', layer));
      k = linearOutMajor(h, tensor('k_weight', layer), d, tensor('k_bias', layer));
      v = linearOutMajor(h, tensor('v_weight', layer), d, tensor('v_bias', layer));
    }

    const ctx = mat(x.rows, d);
    for (let head = 0; head < cfg.num_heads; head++) {
      const qh = sliceCols(q, head * dk, (head + 1) * dk);
      const kh = sliceCols(k, head * dk, (head + 1) * dk);
      const vh = sliceCols(v, head * dk, (head + 1) * dk);
      const scores = mat(x.rows, x.rows);
      const scale = 1 / Math.sqrt(dk);
      for (let a = 0; a < x.rows; a++) {
        for (let b2 = 0; b2 < x.rows; b2++) {
          let acc = 0;
          for (let j = 0; j < dk; j++) {
            acc += qh.data[a * dk + j] * kh.data[b2 * dk + j];
          }
          scores.data[a * x.rows + b2] = acc * scale;
        }
      }
      const attn = softmaxRows(scores);
      for (let a = 0; a < x.rows; a++) {
        for (let j = 0; j < dk; j++) {
          let acc = 0;
          for (let b2 = 0; b2 < x.rows; b2++) {
            acc += attn.data[a * x.rows + b2] * vh.data[b2 * dk + j];
          }
          ctx.data[a * d + head * dk + j] = acc;
        }
      }
    }
    const attnOut = linearOutMajor(ctx, tensor('proj_weight', layer), d, tensor('proj_bias', layer));
    for (let i = 0; i < x.data.length; i++) x.data[i] += attnOut.data[i];

    const h2 = layerNorm(x, tensor('ln2_scale', layer), tensor('ln2_shift', layer));
    const act = linearOutMajor(h2, tensor('fc1_weight', layer), cfg.mlp_dim, tensor('fc1_bias', layer));
    geluInPlace(act);
    const ffnOut = linearOutMajor(act, tensor('fc2_weight', layer), d, tensor('fc2_bias', layer));
    for (let i = 0; i < x.data.length; i++) x.data[i] += ffnOut.data[i];
  }
  return x;
}

function sliceCols(x: Mat, from: number, to: number): Mat {
  const width = to - from;
  const y = mat(x.rows, width);
  for (let n = 0; n < x.rows; n++) {
    for (let c = 0; c < width; c++) {
      y.data[n * width + c] = x.data[n * x.cols + from + c];
    }
  }
  return y;
}
