/** Model configuration emitted alongside an exported archive. */

export interface ModelConfig {
  num_layers: number;
  num_tokens: number;
  embed_dim: number;
  num_heads: number;
  head_dim: number;
  mlp_dim: number;
  has_cls: boolean;
}

export function validateConfig(cfg: ModelConfig): void {
  for (const key of ['num_layers', 'num_tokens', 'embed_dim', 'num_heads', 'head_dim', 'mlp_dim'] as const) {
    if (!Number.isInteger(cfg[key]) || cfg[key] < 1) {
      throw new Error(`config: ${key} must be a positive integer`);
    }
  }
  if (cfg.embed_dim !== cfg.num_heads * cfg.head_dim) {
    throw new Error(
      `config: embed_dim ${cfg.embed_dim} != num_heads ${cfg.num_heads} x head_dim ${cfg.head_dim}`,
    );
  }
}

/** Serialize with every head dimension still dense (d_k' = d_k). */
export function configJson(cfg: ModelConfig): string {
  validateConfig(cfg);
  const doc = {
    num_layers: cfg.num_layers,
    num_tokens: cfg.num_tokens,
    embed_dim: cfg.embed_dim,
    num_heads: cfg.num_heads,
    head_dim: cfg.head_dim,
    mlp_dim: cfg.mlp_dim,
    has_cls: cfg.has_cls,
    per_layer_head_dim: Array(cfg.num_layers).fill(cfg.head_dim),
  };
  return JSON.stringify(doc, null, 2) + '\n';
}
