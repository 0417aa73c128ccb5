/**
 * Model configurations and parameter accounting.
 *
 * Mirrors the consumer pipeline's model zoo: a decoder-only toy transformer
 * (token + position embeddings, pre-norm blocks, tied output head) and a
 * square relu MLP. Parameter counts cover every tensor that lands in the
 * weights file, norm gains and biases included.
 */

export type NanoGptConfig = {
  vocab: number;
  block: number;
  layers: number;
  heads: number;
  embed: number;
};

export type MlpConfig = {
  width: number;
  depth: number;
};

export type QuantParams = {
  /** fractional bits; values live on the 2^-f grid */
  f: number;
  /** lookup window bits the bundle is meant to be compiled with */
  B: number;
};

export const GPT_QUANT: QuantParams = { f: 7, B: 20 };
export const MLP_QUANT: QuantParams = { f: 7, B: 16 };

export function validateNanoGpt(cfg: NanoGptConfig): void {
  for (const [key, value] of Object.entries(cfg)) {
    if (!Number.isInteger(value) || value <= 0) {
      throw new Error(`nanogpt config: ${key} must be a positive integer, got ${value}`);
    }
  }
  if (cfg.embed % cfg.heads !== 0) {
    throw new Error(
      `nanogpt config: embed (${cfg.embed}) must be divisible by heads (${cfg.heads})`,
    );
  }
}

export function validateMlp(cfg: MlpConfig): void {
  for (const [key, value] of Object.entries(cfg)) {
    if (!Number.isInteger(value) || value <= 0) {
      throw new Error(`mlp config: ${key} must be a positive integer, got ${value}`);
    }
  }
}

export function nanogptParamCount(cfg: NanoGptConfig): number {
  const e = cfg.embed;
  const perLayer = 12 * e * e + 13 * e;
  return cfg.vocab * e + cfg.block * e + cfg.layers * perLayer + 2 * e;
}

export function mlpParamCount(cfg: MlpConfig): number {
  return cfg.depth * (cfg.width * cfg.width + cfg.width);
}

/** Widest square MLP of the given depth with at most `target` parameters. */
export function mlpWidthForParams(target: number, depth: number): number {
  let w = Math.max(1, Math.floor(Math.sqrt(target / depth)));
  while (mlpParamCount({ width: w + 1, depth }) <= target) w += 1;
  while (w > 1 && mlpParamCount({ width: w, depth }) > target) w -= 1;
  return w;
}
