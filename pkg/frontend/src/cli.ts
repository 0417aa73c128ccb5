/**
 * Bundle exporter command line.
 *
 *   node dist/cli.js --kind gpt --vocab 65 --block 16 --layers 2 --heads 4 \
 *       --embed 32 --seed 7 --out bundles/gpt-toy
 *   node dist/cli.js --kind mlp --params 200000 --depth 2 --out bundles/mlp-200k
 *
 * Flags mirror the config fields; --params sizes an MLP width to a parameter
 * budget instead of --width. --zero exports all-zero weights, --f/--B
 * override the per-kind quantization defaults.
 */

import { GPT_QUANT, MLP_QUANT, mlpWidthForParams } from './config.js';
import { ExportOptions, exportMlp, exportNanogpt, writeBundle } from './exportBundle.js';

type Args = Map<string, string | true>;

function parseArgs(argv: string[]): Args {
  const args: Args = new Map();
  for (let i = 0; i < argv.length; i++) {
    const token = argv[i];
    if (!token.startsWith('--')) throw new Error(`unexpected argument ${token}`);
    const key = token.slice(2);
    const next = argv[i + 1];
    if (next !== undefined && !next.startsWith('--')) {
      args.set(key, next);
      i++;
    } else {
      args.set(key, true);
    }
  }
  return args;
}

function intArg(args: Args, name: string, fallback?: number): number {
  const raw = args.get(name);
  if (raw === undefined) {
    if (fallback === undefined) throw new Error(`missing required flag --${name}`);
    return fallback;
  }
  const value = Number(raw);
  if (!Number.isInteger(value)) throw new Error(`--${name} expects an integer, got ${raw}`);
  return value;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
    const kind = args.get('kind');
    const out = args.get('out');
    if (kind !== 'gpt' && kind !== 'mlp') throw new Error('--kind must be gpt or mlp');
    if (typeof out !== 'string') throw new Error('missing required flag --out');

    const seed = intArg(args, 'seed', 7);
    const base = kind === 'gpt' ? GPT_QUANT : MLP_QUANT;
    const opts: ExportOptions = {
      zeroWeights: args.get('zero') === true,
      quant: { f: intArg(args, 'f', base.f), B: intArg(args, 'B', base.B) },
    };

    const bundle =
      kind === 'gpt'
        ? exportNanogpt(
            {
              vocab: intArg(args, 'vocab', 65),
              block: intArg(args, 'block', 16),
              layers: intArg(args, 'layers', 2),
              heads: intArg(args, 'heads', 4),
              embed: intArg(args, 'embed', 32),
            },
            seed,
            opts,
          )
        : exportMlp(
            {
              width: args.has('params')
                ? mlpWidthForParams(intArg(args, 'params'), intArg(args, 'depth', 2))
                : intArg(args, 'width'),
              depth: intArg(args, 'depth', 2),
            },
            seed,
            opts,
          );

    const written = writeBundle(bundle, out);
    const m = bundle.manifest;
    console.log(
      `exported ${m.kind} seed=${m.seed} params=${m.paramCount} ` +
        `weights=${m.digests.weights.slice(0, 16)}`,
    );
    for (const path of written) console.log(`  ${path}`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exitCode = main(process.argv.slice(2));
