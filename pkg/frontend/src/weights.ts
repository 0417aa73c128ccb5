/**
 * Weight tensors: seeded initialization and the binary weights-file codec.
 *
 * File layout (all integers little-endian):
 *
 *   "GPWT"  u16 version=1  u32 tensor_count
 *   per tensor, names in ascending lexicographic order:
 *     u16 name_len, utf-8 name, u8 ndim, u32 dims[ndim], float32 data row-major
 *
 * The encoding is canonical (sorted names, no padding, no trailing bytes) so
 * equal tensor maps always produce byte-identical files; the consumer hashes
 * the file as part of its model commitment. Every generated value is snapped
 * to the 2^-f grid first, which makes the float32 storage exact.
 */

import { MlpConfig, NanoGptConfig } from './config.js';
import { SeededRng, snapToGrid } from './rng.js';

export type WeightTensor = {
  dims: number[];
  data: Float64Array;
};

export type WeightMap = Map<string, WeightTensor>;

const MAGIC = Buffer.from('GPWT', 'ascii');
const VERSION = 1;

function tensor(dims: number[], data: Float64Array): WeightTensor {
  const size = dims.reduce((a, b) => a * b, 1);
  if (data.length !== size) {
    throw new Error(`tensor data length ${data.length} != shape product ${size}`);
  }
  return { dims, data };
}

function snapped(dims: number[], values: Float64Array, f: number): WeightTensor {
  const out = new Float64Array(values.length);
  for (let i = 0; i < values.length; i++) out[i] = snapToGrid(values[i], f);
  return tensor(dims, out);
}

const ones = (n: number) => new Float64Array(n).fill(1);
const zeros = (n: number) => new Float64Array(n);

/**
 * Embeddings are drawn wider than the interior matrices on purpose: the tied
 * output head couples token-embedding quantization noise straight into the
 * logits, and a large position component dilutes that coupling while the
 * layernorms keep the residual stream in range.
 */
export function initNanogptWeights(cfg: NanoGptConfig, f: number, seed: number): WeightMap {
  const rng = new SeededRng(seed);
  const e = cfg.embed;
  const w: WeightMap = new Map();
  w.set('wte', snapped([cfg.vocab, e], rng.normals(cfg.vocab * e, 0.08), f));
  w.set('wpe', snapped([cfg.block, e], rng.normals(cfg.block * e, 0.25), f));
  for (let i = 0; i < cfg.layers; i++) {
    const p = `h${i}`;
    for (const nm of ['ln1', 'ln2']) {
      w.set(`${p}.${nm}.weight`, tensor([e], ones(e)));
      w.set(`${p}.${nm}.bias`, tensor([e], zeros(e)));
    }
    const linears: Array<[string, number, number]> = [
      ['attn.q', e, e],
      ['attn.k', e, e],
      ['attn.v', e, e],
      ['attn.proj', e, e],
      ['mlp.fc', 4 * e, e],
      ['mlp.proj', e, 4 * e],
    ];
    for (const [nm, rows, cols] of linears) {
      w.set(`${p}.${nm}.weight`, snapped([rows, cols], rng.normals(rows * cols, 0.02), f));
      w.set(`${p}.${nm}.bias`, tensor([rows], zeros(rows)));
    }
  }
  w.set('lnf.weight', tensor([e], ones(e)));
  w.set('lnf.bias', tensor([e], zeros(e)));
  return w;
}

export function initMlpWeights(cfg: MlpConfig, f: number, seed: number): WeightMap {
  const rng = new SeededRng(seed);
  const sigma = 0.5 / Math.sqrt(cfg.width);
  const w: WeightMap = new Map();
  for (let i = 0; i < cfg.depth; i++) {
    w.set(`l${i}.weight`, snapped([cfg.width, cfg.width], rng.normals(cfg.width * cfg.width, sigma), f));
    w.set(`l${i}.bias`, tensor([cfg.width], zeros(cfg.width)));
  }
  return w;
}

/** Same tensor names and shapes, every value zero. */
export function zeroWeights(weights: WeightMap): WeightMap {
  const out: WeightMap = new Map();
  for (const [name, t] of weights) {
    out.set(name, tensor(t.dims, zeros(t.data.length)));
  }
  return out;
}

export function weightCount(weights: WeightMap): number {
  let n = 0;
  for (const t of weights.values()) n += t.data.length;
  return n;
}

export function encodeWeights(weights: WeightMap): Buffer {
  const names = [...weights.keys()].sort();
  const parts: Buffer[] = [MAGIC];
  const head = Buffer.alloc(6);
  head.writeUInt16LE(VERSION, 0);
  head.writeUInt32LE(names.length, 2);
  parts.push(head);
  for (const name of names) {
    const t = weights.get(name)!;
    const nameBytes = Buffer.from(name, 'utf-8');
    const meta = Buffer.alloc(2 + 1 + 4 * t.dims.length);
    meta.writeUInt16LE(nameBytes.length, 0);
    let off = 2;
    meta.writeUInt8(t.dims.length, off);
    off += 1;
    for (const d of t.dims) {
      meta.writeUInt32LE(d, off);
      off += 4;
    }
    // meta holds name_len then ndim/dims; the name itself sits between them
    parts.push(meta.subarray(0, 2), nameBytes, meta.subarray(2));
    const data = Buffer.alloc(4 * t.data.length);
    for (let i = 0; i < t.data.length; i++) data.writeFloatLE(t.data[i], 4 * i);
    parts.push(data);
  }
  return Buffer.concat(parts);
}

/** Strict inverse of encodeWeights; rejects anything non-canonical. */
export function decodeWeights(buf: Buffer): WeightMap {
  let off = 0;
  const need = (n: number) => {
    if (off + n > buf.length) throw new Error('weights file truncated');
    const view = buf.subarray(off, off + n);
    off += n;
    return view;
  };
  if (!need(4).equals(MAGIC)) throw new Error('bad weights magic');
  const version = need(2).readUInt16LE(0);
  if (version !== VERSION) throw new Error(`unsupported weights version ${version}`);
  const count = need(4).readUInt32LE(0);
  const out: WeightMap = new Map();
  let prev = '';
  for (let i = 0; i < count; i++) {
    const nameLen = need(2).readUInt16LE(0);
    const name = need(nameLen).toString('utf-8');
    if (i > 0 && name <= prev) throw new Error('weights file not in canonical name order');
    prev = name;
    const ndim = need(1).readUInt8(0);
    const dims: number[] = [];
    for (let d = 0; d < ndim; d++) dims.push(need(4).readUInt32LE(0));
    const size = dims.reduce((a, b) => a * b, 1);
    const raw = need(4 * size);
    const data = new Float64Array(size);
    for (let j = 0; j < size; j++) data[j] = raw.readFloatLE(4 * j);
    out.set(name, tensor(dims, data));
  }
  if (off !== buf.length) throw new Error('trailing bytes after weights data');
  return out;
}
