/**
 * Checkpoint conversion: out-major (torch-layout) source tensors become the
 * in-major per-head tensors of the archive naming contract.
 *
 * Fused QKV tensors split in Q, K, V order along the output axis, then into
 * heads of width head_dim — the split order is pinned here because a silent
 * mismatch is the classic conversion bug. Weights whose source dtype is not
 * F32 are cast once, and each cast is recorded in the archive manifest's
 * metadata.
 */

import { Checkpoint, SourceTensor } from './safetensors.js';
import { configJson, ModelConfig } from './config.js';
import { MapSpec, resolveSource, Role } from './mapspec.js';
import { ToastTensor, writeToast } from './toast.js';

export interface ExportResult {
  archive: Buffer;
  configJson: string;
  casts: Record<string, string>;
}

export function exportCheckpoint(checkpoint: Checkpoint, spec: MapSpec): ExportResult {
  const cfg = spec.config;
  const produced = new Map<string, ToastTensor>();
  const casts: Record<string, string> = {};
  const missing: string[] = [];

  for (let layer = 0; layer < cfg.num_layers; layer++) {
    for (const rule of spec.rules) {
      const sourceName = resolveSource(rule.source, layer);
      const source = checkpoint.get(sourceName);
      if (source === undefined) {
        missing.push(...archiveNamesFor(rule.role, layer, cfg));
        continue;
      }
      if (source.dtype !== 'F32') {
        casts[sourceName] = `${source.dtype}->F32`;
      }
      for (const tensor of convert(rule.role, source, sourceName, layer, cfg, spec.qkv_split_axis)) {
        if (produced.has(tensor.name)) {
          throw new Error(`rules produce ${tensor.name} twice`);
        }
        produced.set(tensor.name, tensor);
      }
    }
  }

  for (let layer = 0; layer < cfg.num_layers; layer++) {
    for (const name of requiredNames(layer, cfg)) {
      if (!produced.has(name) && !missing.includes(name)) {
        missing.push(name);
      }
    }
  }
  if (missing.length > 0) {
    throw new Error(`missing tensors: ${[...new Set(missing)].sort().join(', ')}`);
  }

  const ordered: ToastTensor[] = [];
  for (let layer = 0; layer < cfg.num_layers; layer++) {
    for (const name of requiredNames(layer, cfg)) {
      ordered.push(produced.get(name)!);
    }
  }
  const metadata = Object.keys(casts).length > 0 ? { casts } : undefined;
  return { archive: writeToast(ordered, metadata), configJson: configJson(cfg), casts };
}

/** Package pre-embedded token batches (patch embedding applied source-side). */
export function exportTokens(checkpoint: Checkpoint, cfg: ModelConfig): Buffer {
  const tensors: ToastTensor[] = [];
  const casts: Record<string, string> = {};
  for (const [name, tensor] of checkpoint) {
    if (tensor.shape.length !== 2 || tensor.shape[0] !== cfg.num_tokens || tensor.shape[1] !== cfg.embed_dim) {
      throw new Error(
        `${name}: expected token batch of shape [${cfg.num_tokens}, ${cfg.embed_dim}], got [${tensor.shape}]`,
      );
    }
    if (tensor.dtype !== 'F32') {
      casts[name] = `${tensor.dtype}->F32`;
    }
    tensors.push({ name, dims: [...tensor.shape], data: Float32Array.from(tensor.values) });
  }
  return writeToast(tensors, Object.keys(casts).length > 0 ? { casts } : undefined);
}

function requiredNames(layer: number, cfg: ModelConfig): string[] {
  const p = `layer${layer}`;
  const names: string[] = [];
  for (let h = 0; h < cfg.num_heads; h++) {
    names.push(`${p}.wq.h${h}`, `${p}.wk.h${h}`, `${p}.wv.h${h}`, `${p}.wproj.h${h}`);
    names.push(`${p}.wq.h${h}.bias`, `${p}.wk.h${h}.bias`, `${p}.wv.h${h}.bias`);
  }
  names.push(
    `${p}.wproj.bias`,
    `${p}.fc1`,
    `${p}.fc1.bias`,
    `${p}.fc2`,
    `${p}.fc2.bias`,
    `${p}.ln1.scale`,
    `${p}.ln1.shift`,
    `${p}.ln2.scale`,
    `${p}.ln2.shift`,
  );
  return names;
}

function archiveNamesFor(role: Role, layer: number, cfg: ModelConfig): string[] {
  const p = `layer${layer}`;
  const heads = Array.from({ length: cfg.num_heads }, (_, h) => h);
  switch (role) {
    case 'qkv_weight':
      return heads.flatMap((h) => [`${p}.wq.h${h}`, `${p}.wk.h${h}`, `${p}.wv.h${h}`]);
    case 'qkv_bias':
      return heads.flatMap((h) => [`${p}.wq.h${h}.bias`, `${p}.wk.h${h}.bias`, `${p}.wv.h${h}.bias`]);
    case 'q_weight':
      return heads.map((h) => `${p}.wq.h${h}`);
    case 'k_weight':
      return heads.map((h) => `${p}.wk.h${h}`);
    case 'v_weight':
      return heads.map((h) => `${p}.wv.h${h}`);
    case 'q_bias':
      return heads.map((h) => `${p}.wq.h${h}.bias`);
    case 'k_bias':
      return heads.map((h) => `${p}.wk.h${h}.bias`);
    case 'v_bias':
      return heads.map((h) => `${p}.wv.h${h}.bias`);
    case 'proj_weight':
      return heads.map((h) => `${p}.wproj.h${h}`);
    case 'proj_bias':
      return [`${p}.wproj.bias`];
    case 'fc1_weight':
      return [`${p}.fc1`];
    case 'fc1_bias':
      return [`${p}.fc1.bias`];
    case 'fc2_weight':
      return [`${p}.fc2`];
    case 'fc2_bias':
      return [`${p}.fc2.bias`];
    case 'ln1_scale':
      return [`${p}.ln1.scale`];
    case 'ln1_shift':
      return [`${p}.ln1.shift`];
    case 'ln2_scale':
      return [`${p}.ln2.scale`];
    case 'ln2_shift':
      return [`${p}.ln2.shift`];
  }
}

function convert(
  role: Role,
  source: SourceTensor,
  sourceName: string,
  layer: number,
  cfg: ModelConfig,
  qkvAxis: 0 | 1,
): ToastTensor[] {
  const p = `layer${layer}`;
  const { embed_dim: d, head_dim: dk, num_heads: heads, mlp_dim: m } = cfg;

  const expectShape = (shape: number[]) => {
    if (source.shape.length !== shape.length || source.shape.some((s, i) => s !== shape[i])) {
      throw new Error(
        `${sourceName}: expected shape [${shape}] for role ${role}, got [${source.shape}]`,
      );
    }
  };

  switch (role) {
    case 'qkv_weight': {
      expectShape(qkvAxis === 0 ? [3 * d, d] : [d, 3 * d]);
      const out: ToastTensor[] = [];
      const parts = ['wq', 'wk', 'wv'];
      for (let part = 0; part < 3; part++) {
        for (let h = 0; h < heads; h++) {
          const data = new Float32Array(d * dk);
          for (let i = 0; i < d; i++) {
            for (let j = 0; j < dk; j++) {
              const outIdx = part * d + h * dk + j;
              // out-major source: row = output channel; in-major: column.
              data[i * dk + j] =
                qkvAxis === 0 ? source.values[outIdx * d + i] : source.values[i * 3 * d + outIdx];
            }
          }
          out.push({ name: `${p}.${parts[part]}.h${h}`, dims: [d, dk], data });
        }
      }
      return out;
    }
    case 'qkv_bias': {
      expectShape([3 * d]);
      const out: ToastTensor[] = [];
      const parts = ['wq', 'wk', 'wv'];
      for (let part = 0; part < 3; part++) {
        for (let h = 0; h < heads; h++) {
          const start = part * d + h * dk;
          out.push({
            name: `${p}.${parts[part]}.h${h}.bias`,
            dims: [dk],
            data: Float32Array.from(source.values.subarray(start, start + dk)),
          });
        }
      }
      return out;
    }
    case 'q_weight':
    case 'k_weight':
    case 'v_weight': {
      expectShape([d, d]);
      const label = { q_weight: 'wq', k_weight: 'wk', v_weight: 'wv' }[role];
      const out: ToastTensor[] = [];
      for (let h = 0; h < heads; h++) {
        const data = new Float32Array(d * dk);
        for (let i = 0; i < d; i++) {
          for (let j = 0; j < dk; j++) {
            data[i * dk + j] = source.values[(h * dk + j) * d + i];
          }
        }
        out.push({ name: `${p}.${label}.h${h}`, dims: [d, dk], data });
      }
      return out;
    }
    case 'q_bias':
    case 'k_bias':
    case 'v_bias': {
      expectShape([d]);
      const label = { q_bias: 'wq', k_bias: 'wk', v_bias: 'wv' }[role];
      const out: ToastTensor[] = [];
      for (let h = 0; h < heads; h++) {
        out.push({
          name: `${p}.${label}.h${h}.bias`,
          dims: [dk],
          data: Float32Array.from(source.values.subarray(h * dk, (h + 1) * dk)),
        });
      }
      return out;
    }
    case 'proj_weight': {
      expectShape([d, d]);
      const out: ToastTensor[] = [];
      for (let h = 0; h < heads; h++) {
        const data = new Float32Array(dk * d);
        for (let j = 0; j < dk; j++) {
          for (let o = 0; o < d; o++) {
            data[j * d + o] = source.values[o * d + (h * dk + j)];
          }
        }
        out.push({ name: `${p}.wproj.h${h}`, dims: [dk, d], data });
      }
      return out;
    }
    case 'proj_bias':
      expectShape([d]);
      return [{ name: `${p}.wproj.bias`, dims: [d], data: Float32Array.from(source.values) }];
    case 'fc1_weight':
      expectShape([m, d]);
      return [{ name: `${p}.fc1`, dims: [d, m], data: transpose(source.values, m, d) }];
    case 'fc1_bias':
      expectShape([m]);
      return [{ name: `${p}.fc1.bias`, dims: [m], data: Float32Array.from(source.values) }];
    case 'fc2_weight':
      expectShape([d, m]);
      return [{ name: `${p}.fc2`, dims: [m, d], data: transpose(source.values, d, m) }];
    case 'fc2_bias':
      expectShape([d]);
      return [{ name: `${p}.fc2.bias`, dims: [d], data: Float32Array.from(source.values) }];
    case 'ln1_scale':
    case 'ln1_shift':
    case 'ln2_scale':
    case 'ln2_shift': {
      expectShape([d]);
      const name = {
        ln1_scale: `${p}.ln1.scale`,
        ln1_shift: `${p}.ln1.shift`,
        ln2_scale: `${p}.ln2.scale`,
        ln2_shift: `${p}.ln2.shift`,
      }[role];
      return [{ name, dims: [d], data: Float32Array.from(source.values) }];
    }
  }
}

function transpose(values: Float64Array, rows: number, cols: number): Float32Array {
  const out = new Float32Array(rows * cols);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      out[c * rows + r] = values[r * cols + c];
    }
  }
  return out;
}
