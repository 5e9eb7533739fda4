/** Seeded fixture builders for the exporter tests. */

import { ModelConfig } from '../src/config.js';
import { MapSpec } from '../src/mapspec.js';
import { writeSafetensors } from '../src/safetensors.js';

/** mulberry32: small deterministic PRNG, plenty for fixtures. */
export function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function gaussian(next: () => number): () => number {
  return () => {
    const u = Math.max(next(), 1e-12);
    const v = next();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  };
}

export function normals(count: number, scale: number, g: () => number): Float64Array {
  const out = new Float64Array(count);
  for (let i = 0; i < count; i++) out[i] = g() * scale;
  return out;
}

export function deitShapedConfig(numLayers = 2): ModelConfig {
  return {
    num_layers: numLayers,
    num_tokens: 197,
    embed_dim: 192,
    num_heads: 3,
    head_dim: 64,
    mlp_dim: 768,
    has_cls: true,
  };
}

export function fusedMapSpec(cfg: ModelConfig): MapSpec {
  return {
    config: cfg,
    qkv_split_axis: 0,
    rules: [
      { source: 'blocks.{layer}.attn.qkv.weight', role: 'qkv_weight' },
      { source: 'blocks.{layer}.attn.qkv.bias', role: 'qkv_bias' },
      { source: 'blocks.{layer}.attn.proj.weight', role: 'proj_weight' },
      { source: 'blocks.{layer}.attn.proj.bias', role: 'proj_bias' },
      { source: 'blocks.{layer}.norm1.weight', role: 'ln1_scale' },
      { source: 'blocks.{layer}.norm1.bias', role: 'ln1_shift' },
      { source: 'blocks.{layer}.norm2.weight', role: 'ln2_scale' },
      { source: 'blocks.{layer}.norm2.bias', role: 'ln2_shift' },
      { source: 'blocks.{layer}.mlp.fc1.weight', role: 'fc1_weight' },
      { source: 'blocks.{layer}.mlp.fc1.bias', role: 'fc1_bias' },
      { source: 'blocks.{layer}.mlp.fc2.weight', role: 'fc2_weight' },
      { source: 'blocks.{layer}.mlp.fc2.bias', role: 'fc2_bias' },
    ],
  };
}

/** Random DeiT-shaped checkpoint (fused QKV, torch out-major layout). */
export function randomCheckpoint(cfg: ModelConfig, seed: number): Buffer {
  const g = gaussian(rng(seed));
  const d = cfg.embed_dim;
  const m = cfg.mlp_dim;
  const wScale = 1 / Math.sqrt(d);
  const tensors: { name: string; dtype: 'F32'; shape: number[]; values: ArrayLike<number> }[] = [];
  for (let layer = 0; layer < cfg.num_layers; layer++) {
    const p = `blocks.${layer}`;
    tensors.push(
      { name: `${p}.attn.qkv.weight`, dtype: 'F32', shape: [3 * d, d], values: normals(3 * d * d, wScale, g) },
      { name: `${p}.attn.qkv.bias`, dtype: 'F32', shape: [3 * d], values: normals(3 * d, 0.02, g) },
      { name: `${p}.attn.proj.weight`, dtype: 'F32', shape: [d, d], values: normals(d * d, wScale, g) },
      { name: `${p}.attn.proj.bias`, dtype: 'F32', shape: [d], values: normals(d, 0.02, g) },
      { name: `${p}.norm1.weight`, dtype: 'F32', shape: [d], values: onesPlusNoise(d, g) },
      { name: `${p}.norm1.bias`, dtype: 'F32', shape: [d], values: normals(d, 0.05, g) },
      { name: `${p}.norm2.weight`, dtype: 'F32', shape: [d], values: onesPlusNoise(d, g) },
      { name: `${p}.norm2.bias`, dtype: 'F32', shape: [d], values: normals(d, 0.05, g) },
      { name: `${p}.mlp.fc1.weight`, dtype: 'F32', shape: [m, d], values: normals(m * d, wScale, g) },
      { name: `${p}.mlp.fc1.bias`, dtype: 'F32', shape: [m], values: normals(m, 0.02, g) },
      { name: `${p}.mlp.fc2.weight`, dtype: 'F32', shape: [d, m], values: normals(d * m, 1 / Math.sqrt(m), g) },
      { name: `${p}.mlp.fc2.bias`, dtype: 'F32', shape: [d], values: normals(d, 0.02, g) },
    );
  }
  return writeSafetensors(tensors);
}

function onesPlusNoise(count: number, g: () => number): Float64Array {
  const out = new Float64Array(count);
  for (let i = 0; i < count; i++) out[i] = 1 + g() * 0.05;
  return out;
}

export function randomTokens(cfg: ModelConfig, seed: number): Float64Array {
  return normals(cfg.num_tokens * cfg.embed_dim, 1.0, gaussian(rng(seed)));
}
