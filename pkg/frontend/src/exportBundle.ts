/**
 * Bundle assembly: graph file + weights file + golden inputs/outputs +
 * manifest. A bundle is fully determined by (kind, config, seed, options),
 * and re-exporting with the same arguments is byte-identical, so the
 * weights-file digest doubles as the bundle identity.
 */

import { createHash } from 'node:crypto';
import { mkdirSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

import {
  GPT_QUANT,
  MLP_QUANT,
  MlpConfig,
  NanoGptConfig,
  QuantParams,
  validateMlp,
  validateNanoGpt,
} from './config.js';
import { mlpForward, nanogptForward } from './forward.js';
import { emitMlpGraph, emitNanogptGraph } from './graphText.js';
import { SeededRng } from './rng.js';
import {
  WeightMap,
  encodeWeights,
  initMlpWeights,
  initNanogptWeights,
  weightCount,
  zeroWeights,
} from './weights.js';

export const MANIFEST_VERSION = 1;
const GRAPH_FORMAT_VERSION = 1;
const WEIGHTS_FORMAT_VERSION = 1;

export type Manifest = {
  kind: 'nanogpt' | 'mlp';
  config: NanoGptConfig | MlpConfig;
  seed: number;
  quant: QuantParams;
  paramCount: number;
  prompts: number;
  zeroWeights: boolean;
  outputTensor: string;
  formats: { manifest: number; graph: number; weights: number };
  files: { graph: string; weights: string; inputs: string; golden: string };
  digests: { graph: string; weights: string };
};

/** Golden inputs/outputs hold one row per prompt, keyed by tensor name. */
export type ExportBundle = {
  manifest: Manifest;
  graphText: string;
  weightsBytes: Buffer;
  goldenInputs: Record<string, number[][]>;
  goldenOutputs: Record<string, number[][] | number[][][]>;
};

export type ExportOptions = {
  zeroWeights?: boolean;
  quant?: QuantParams;
  /** golden prompt count, default 8 */
  prompts?: number;
};

const sha256 = (data: Buffer | string) => createHash('sha256').update(data).digest('hex');

// golden inputs come from an offset stream so the zero-weights option does
// not disturb them
const inputRng = (seed: number) => new SeededRng(seed + 0x51f15e);

function assemble(
  kind: Manifest['kind'],
  config: NanoGptConfig | MlpConfig,
  seed: number,
  quant: QuantParams,
  zero: boolean,
  prompts: number,
  graphText: string,
  weights: WeightMap,
  goldenInputs: Record<string, number[][]>,
  goldenOutputs: Record<string, number[][] | number[][][]>,
  outputTensor: string,
): ExportBundle {
  const weightsBytes = encodeWeights(weights);
  const manifest: Manifest = {
    kind,
    config,
    seed,
    quant,
    paramCount: weightCount(weights),
    prompts,
    zeroWeights: zero,
    outputTensor,
    formats: {
      manifest: MANIFEST_VERSION,
      graph: GRAPH_FORMAT_VERSION,
      weights: WEIGHTS_FORMAT_VERSION,
    },
    files: {
      graph: 'model.graph',
      weights: 'model.gpwt',
      inputs: 'inputs.json',
      golden: 'golden.json',
    },
    digests: { graph: sha256(graphText), weights: sha256(weightsBytes) },
  };
  return { manifest, graphText, weightsBytes, goldenInputs, goldenOutputs };
}

export function exportNanogpt(
  cfg: NanoGptConfig,
  seed: number,
  opts: ExportOptions = {},
): ExportBundle {
  validateNanoGpt(cfg);
  const quant = opts.quant ?? GPT_QUANT;
  const prompts = opts.prompts ?? 8;
  let weights = initNanogptWeights(cfg, quant.f, seed);
  if (opts.zeroWeights) weights = zeroWeights(weights);

  const rng = inputRng(seed);
  const tok: number[][] = [];
  const logits: number[][][] = [];
  for (let p = 0; p < prompts; p++) {
    const tokens = Array.from({ length: cfg.block }, () => rng.int(cfg.vocab));
    const flat = nanogptForward(cfg, weights, tokens, quant.f);
    const rows: number[][] = [];
    for (let t = 0; t < cfg.block; t++) {
      rows.push(Array.from(flat.subarray(t * cfg.vocab, (t + 1) * cfg.vocab)));
    }
    tok.push(tokens);
    logits.push(rows);
  }
  return assemble(
    'nanogpt', cfg, seed, quant, !!opts.zeroWeights, prompts,
    emitNanogptGraph(cfg, quant.f), weights,
    { tok }, { logits }, 'logits',
  );
}

export function exportMlp(cfg: MlpConfig, seed: number, opts: ExportOptions = {}): ExportBundle {
  validateMlp(cfg);
  const quant = opts.quant ?? MLP_QUANT;
  const prompts = opts.prompts ?? 8;
  let weights = initMlpWeights(cfg, quant.f, seed);
  if (opts.zeroWeights) weights = zeroWeights(weights);

  const rng = inputRng(seed);
  const scale = 2 ** quant.f;
  const x: number[][] = [];
  const outs: number[][] = [];
  for (let p = 0; p < prompts; p++) {
    // inputs on the 2^-f grid in [-1, 1] so client-side quantization is exact
    const row = Array.from({ length: cfg.width }, () => (rng.int(2 * scale + 1) - scale) / scale);
    x.push(row);
    outs.push(Array.from(mlpForward(cfg, weights, row)));
  }
  const outputTensor = `l${cfg.depth - 1}.act`;
  return assemble(
    'mlp', cfg, seed, quant, !!opts.zeroWeights, prompts,
    emitMlpGraph(cfg), weights,
    { x }, { [outputTensor]: outs }, outputTensor,
  );
}

/** Write the five bundle files into outDir (created if missing). */
export function writeBundle(bundle: ExportBundle, outDir: string): string[] {
  mkdirSync(outDir, { recursive: true });
  const m = bundle.manifest;
  const entries: Array<[string, Buffer | string]> = [
    [m.files.graph, bundle.graphText],
    [m.files.weights, bundle.weightsBytes],
    [m.files.inputs, JSON.stringify(bundle.goldenInputs, null, 2) + '\n'],
    [m.files.golden, JSON.stringify(bundle.goldenOutputs) + '\n'],
    ['manifest.json', JSON.stringify(m, null, 2) + '\n'],
  ];
  const written: string[] = [];
  for (const [name, data] of entries) {
    const path = join(outDir, name);
    writeFileSync(path, data);
    written.push(path);
  }
  return written;
}
