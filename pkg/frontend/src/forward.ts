/**
 * Float reference forward passes (the golden-logit oracle).
 *
 * Real-number semantics matching the consumer pipeline's float evaluator:
 * rescale steps are the identity, dropout is disabled, masked attention
 * scores go to -Infinity so softmax zeroes them exactly, layernorm uses
 * eps = 2^-(2f), and the attention scale is the same rounded integer
 * constant the graph file carries (not the exact 1/sqrt(head_dim)).
 */

import { MlpConfig, NanoGptConfig } from './config.js';
import { attnScaleConst } from './graphText.js';
import { WeightMap } from './weights.js';

/** Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7. */
function erf(x: number): number {
  const sign = x < 0 ? -1 : 1;
  const ax = Math.abs(x);
  const t = 1 / (1 + 0.3275911 * ax);
  const poly =
    ((((1.061405429 * t - 1.453152027) * t + 1.421413741) * t - 0.284496736) * t +
      0.254829592) *
    t;
  return sign * (1 - poly * Math.exp(-ax * ax));
}

function gelu(x: number): number {
  return 0.5 * x * (1 + erf(x / Math.SQRT2));
}

/** In-place layernorm over the last axis of an (rows, width) matrix. */
function layernorm(
  x: Float64Array,
  rows: number,
  width: number,
  gamma: Float64Array,
  beta: Float64Array,
  eps: number,
): Float64Array {
  const out = new Float64Array(x.length);
  for (let r = 0; r < rows; r++) {
    const base = r * width;
    let mu = 0;
    for (let c = 0; c < width; c++) mu += x[base + c];
    mu /= width;
    let variance = 0;
    for (let c = 0; c < width; c++) {
      const d = x[base + c] - mu;
      variance += d * d;
    }
    variance /= width;
    const inv = 1 / Math.sqrt(variance + eps);
    for (let c = 0; c < width; c++) {
      out[base + c] = (x[base + c] - mu) * inv * gamma[c] + beta[c];
    }
  }
  return out;
}

/** y[r, o] = sum_i x[r, i] * w[o, i] + b[o]; weight rows are output channels. */
function linear(
  x: Float64Array,
  rows: number,
  inDim: number,
  w: Float64Array,
  b: Float64Array,
  outDim: number,
): Float64Array {
  const out = new Float64Array(rows * outDim);
  for (let r = 0; r < rows; r++) {
    for (let o = 0; o < outDim; o++) {
      let acc = 0;
      for (let i = 0; i < inDim; i++) acc += x[r * inDim + i] * w[o * inDim + i];
      out[r * outDim + o] = acc + b[o];
    }
  }
  return out;
}

function softmaxRow(row: Float64Array): void {
  let max = -Infinity;
  for (const v of row) if (v > max) max = v;
  let sum = 0;
  for (let i = 0; i < row.length; i++) {
    row[i] = Math.exp(row[i] - max);
    sum += row[i];
  }
  for (let i = 0; i < row.length; i++) row[i] /= sum;
}

function get(weights: WeightMap, name: string): Float64Array {
  const t = weights.get(name);
  if (!t) throw new Error(`missing weight tensor ${name}`);
  return t.data;
}

/** Returns logits as a flat (block, vocab) row-major array. */
export function nanogptForward(
  cfg: NanoGptConfig,
  weights: WeightMap,
  tokens: number[],
  f: number,
): Float64Array {
  const { vocab: v, block: t, heads: h, embed: e } = cfg;
  if (tokens.length !== t) throw new Error(`expected ${t} tokens, got ${tokens.length}`);
  for (const tok of tokens) {
    if (!Number.isInteger(tok) || tok < 0 || tok >= v) {
      throw new Error(`token ${tok} out of range [0, ${v})`);
    }
  }
  const d = e / h;
  const eps = 1 / 4 ** f;
  const scale = attnScaleConst(d, f) / 2 ** f;
  const wte = get(weights, 'wte');
  const wpe = get(weights, 'wpe');

  let x = new Float64Array(t * e);
  for (let r = 0; r < t; r++) {
    for (let c = 0; c < e; c++) x[r * e + c] = wte[tokens[r] * e + c] + wpe[r * e + c];
  }

  for (let layer = 0; layer < cfg.layers; layer++) {
    const p = `h${layer}`;
    const ln1 = layernorm(
      x, t, e, get(weights, `${p}.ln1.weight`), get(weights, `${p}.ln1.bias`), eps,
    );
    const q = linear(ln1, t, e, get(weights, `${p}.attn.q.weight`), get(weights, `${p}.attn.q.bias`), e);
    const k = linear(ln1, t, e, get(weights, `${p}.attn.k.weight`), get(weights, `${p}.attn.k.bias`), e);
    const vv = linear(ln1, t, e, get(weights, `${p}.attn.v.weight`), get(weights, `${p}.attn.v.bias`), e);

    const merged = new Float64Array(t * e);
    const row = new Float64Array(t);
    for (let head = 0; head < h; head++) {
      const off = head * d;
      for (let ti = 0; ti < t; ti++) {
        for (let si = 0; si < t; si++) {
          if (si > ti) {
            row[si] = -Infinity;
            continue;
          }
          let acc = 0;
          for (let di = 0; di < d; di++) acc += q[ti * e + off + di] * k[si * e + off + di];
          row[si] = acc * scale;
        }
        softmaxRow(row);
        for (let di = 0; di < d; di++) {
          let acc = 0;
          for (let si = 0; si <= ti; si++) acc += row[si] * vv[si * e + off + di];
          merged[ti * e + off + di] = acc;
        }
      }
    }
    const attnOut = linear(
      merged, t, e, get(weights, `${p}.attn.proj.weight`), get(weights, `${p}.attn.proj.bias`), e,
    );
    const res1 = new Float64Array(t * e);
    for (let i = 0; i < res1.length; i++) res1[i] = x[i] + attnOut[i];

    const ln2 = layernorm(
      res1, t, e, get(weights, `${p}.ln2.weight`), get(weights, `${p}.ln2.bias`), eps,
    );
    const fc = linear(ln2, t, e, get(weights, `${p}.mlp.fc.weight`), get(weights, `${p}.mlp.fc.bias`), 4 * e);
    for (let i = 0; i < fc.length; i++) fc[i] = gelu(fc[i]);
    const prj = linear(fc, t, 4 * e, get(weights, `${p}.mlp.proj.weight`), get(weights, `${p}.mlp.proj.bias`), e);
    x = new Float64Array(t * e);
    for (let i = 0; i < x.length; i++) x[i] = res1[i] + prj[i];
  }

  const lnf = layernorm(x, t, e, get(weights, 'lnf.weight'), get(weights, 'lnf.bias'), eps);
  const logits = new Float64Array(t * v);
  for (let ti = 0; ti < t; ti++) {
    for (let vi = 0; vi < v; vi++) {
      let acc = 0;
      for (let ei = 0; ei < e; ei++) acc += lnf[ti * e + ei] * wte[vi * e + ei];
      logits[ti * v + vi] = acc;
    }
  }
  return logits;
}

/** Returns the last relu activation as a flat (width,) array. */
export function mlpForward(cfg: MlpConfig, weights: WeightMap, inputs: number[]): Float64Array {
  const w = cfg.width;
  if (inputs.length !== w) throw new Error(`expected ${w} inputs, got ${inputs.length}`);
  let x: Float64Array = Float64Array.from(inputs);
  for (let i = 0; i < cfg.depth; i++) {
    const y = linear(x, 1, w, get(weights, `l${i}.weight`), get(weights, `l${i}.bias`), w);
    for (let j = 0; j < w; j++) y[j] = Math.max(y[j], 0);
    x = y;
  }
  return x;
}
