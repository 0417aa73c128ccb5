export {
  GPT_QUANT,
  MLP_QUANT,
  mlpParamCount,
  mlpWidthForParams,
  nanogptParamCount,
  validateMlp,
  validateNanoGpt,
} from './config.js';
export type { MlpConfig, NanoGptConfig, QuantParams } from './config.js';
export { SeededRng, snapToGrid } from './rng.js';
export { attnScaleConst, emitMlpGraph, emitNanogptGraph } from './graphText.js';
export {
  decodeWeights,
  encodeWeights,
  initMlpWeights,
  initNanogptWeights,
  weightCount,
  zeroWeights,
} from './weights.js';
export type { WeightMap, WeightTensor } from './weights.js';
export { mlpForward, nanogptForward } from './forward.js';
export { exportMlp, exportNanogpt, writeBundle, MANIFEST_VERSION } from './exportBundle.js';
export type { ExportBundle, ExportOptions, Manifest } from './exportBundle.js';
