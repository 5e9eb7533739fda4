/**
 * Name-map spec: which source tensors feed which archive tensors.
 *
 * Each rule maps a source-name pattern (with a `{layer}` placeholder) to a
 * role; roles carry the layout knowledge (fused-QKV splitting, transposes).
 * `qkv_split_axis` states which axis of a fused QKV tensor holds the 3*D
 * output channels (0 for out-major checkpoints, the default).
 */

import { ModelConfig, validateConfig } from './config.js';

export const ROLES = [
  'qkv_weight',
  'qkv_bias',
  'q_weight',
  'k_weight',
  'v_weight',
  'q_bias',
  'k_bias',
  'v_bias',
  'proj_weight',
  'proj_bias',
  'fc1_weight',
  'fc1_bias',
  'fc2_weight',
  'fc2_bias',
  'ln1_scale',
  'ln1_shift',
  'ln2_scale',
  'ln2_shift',
] as const;

export type Role = (typeof ROLES)[number];

export interface MapRule {
  source: string;
  role: Role;
}

export interface MapSpec {
  config: ModelConfig;
  qkv_split_axis: 0 | 1;
  rules: MapRule[];
}

export function parseMapSpec(text: string): MapSpec {
  const raw = JSON.parse(text);
  if (typeof raw !== 'object' || raw === null || !Array.isArray(raw.rules)) {
    throw new Error('map spec: expected {config, rules}');
  }
  const config = raw.config as ModelConfig;
  validateConfig(config);
  const axis = raw.qkv_split_axis ?? 0;
  if (axis !== 0 && axis !== 1) {
    throw new Error(`map spec: qkv_split_axis must be 0 or 1, got ${axis}`);
  }
  const seenRoles = new Set<string>();
  const rules: MapRule[] = [];
  for (const rule of raw.rules) {
    if (typeof rule.source !== 'string' || !ROLES.includes(rule.role)) {
      throw new Error(`map spec: bad rule ${JSON.stringify(rule)}`);
    }
    if (seenRoles.has(rule.role)) {
      throw new Error(`map spec: duplicate rule for role ${rule.role}`);
    }
    seenRoles.add(rule.role);
    rules.push({ source: rule.source, role: rule.role });
  }
  const hasFused = seenRoles.has('qkv_weight');
  const hasSplit = seenRoles.has('q_weight');
  if (hasFused && hasSplit) {
    throw new Error('map spec: fused and split QKV rules are mutually exclusive');
  }
  if (!hasFused && !hasSplit) {
    throw new Error('map spec: need qkv_weight or q/k/v_weight rules');
  }
  return { config, qkv_split_axis: axis, rules };
}

export function resolveSource(pattern: string, layer: number): string {
  return pattern.replaceAll('{layer}', String(layer));
}
