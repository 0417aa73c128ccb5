/**
 * Graph-file emitters.
 *
 * These produce the consumer pipeline's text format line for line: tensor
 * declarations first, then input/output markers, then const and node
 * statements in execution order. The emitted text for a given config is
 * intended to be byte-identical to what the consumer's own model builders
 * print, so bundles diff cleanly against locally built graphs.
 */

import { MlpConfig, NanoGptConfig, validateMlp, validateNanoGpt } from './config.js';

function roundHalfAway(x: number): number {
  return Math.floor(Math.abs(x) + 0.5) * (x >= 0 ? 1 : -1);
}

/** Integer scalar standing in for 1/sqrt(head_dim) at scale 2^f. */
export function attnScaleConst(headDim: number, f: number): number {
  return roundHalfAway(2 ** f / Math.sqrt(headDim));
}

class Lines {
  private readonly tensors: string[] = [];
  private readonly stmts: string[] = [];
  inputs: string[] = [];
  outputs: string[] = [];

  tensor(name: string, dtype: 'fix' | 'idx', dims: number[]): string {
    const tail = dims.length ? ' ' + dims.join(' ') : '';
    this.tensors.push(`tensor ${name} ${dtype}${tail}`);
    return name;
  }

  stmt(line: string): void {
    this.stmts.push(line);
  }

  render(): string {
    const all = [
      'version 1',
      ...this.tensors,
      ...this.inputs.map((n) => `input ${n}`),
      ...this.outputs.map((n) => `output ${n}`),
      ...this.stmts,
    ];
    return all.join('\n') + '\n';
  }
}

export function emitMlpGraph(cfg: MlpConfig): string {
  validateMlp(cfg);
  const w = cfg.width;
  const g = new Lines();
  g.tensor('x', 'fix', [w]);
  for (let i = 0; i < cfg.depth; i++) {
    const p = `l${i}`;
    g.tensor(`${p}.weight`, 'fix', [w, w]);
    g.tensor(`${p}.bias`, 'fix', [w]);
    for (const nm of ['mm', 'sc', 'out', 'act']) g.tensor(`${p}.${nm}`, 'fix', [w]);
  }
  g.inputs = ['x'];
  g.outputs = [`l${cfg.depth - 1}.act`];
  let prev = 'x';
  for (let i = 0; i < cfg.depth; i++) {
    const p = `l${i}`;
    g.stmt(`const ${p}.weight weight=${p}.weight`);
    g.stmt(`const ${p}.bias weight=${p}.bias`);
    g.stmt(`node ${p}.mm einsum spec=a,ba->b ${prev} ${p}.weight`);
    g.stmt(`node ${p}.sc rescale ${p}.mm`);
    g.stmt(`node ${p}.out add bcast=none ${p}.sc ${p}.bias`);
    g.stmt(`node ${p}.act relu ${p}.out`);
    prev = `${p}.act`;
  }
  return g.render();
}

export function emitNanogptGraph(cfg: NanoGptConfig, f: number): string {
  validateNanoGpt(cfg);
  const { vocab: v, block, layers, heads: h, embed: e } = cfg;
  const t = block;
  const d = e / h;
  const g = new Lines();

  g.tensor('tok', 'idx', [t]);
  g.tensor('wte', 'fix', [v, e]);
  g.tensor('wpe', 'fix', [block, e]);
  g.tensor('c_attn', 'fix', []);
  g.tensor('pos_rows', 'fix', [t, block]);
  g.tensor('tok_emb', 'fix', [t, e]);
  g.tensor('pos_emb', 'fix', [t, e]);
  g.tensor('x0', 'fix', [t, e]);

  const layerWeights: Array<[string, number[]]> = [
    ['ln1.weight', [e]],
    ['ln1.bias', [e]],
    ['ln2.weight', [e]],
    ['ln2.bias', [e]],
    ['attn.q.weight', [e, e]],
    ['attn.q.bias', [e]],
    ['attn.k.weight', [e, e]],
    ['attn.k.bias', [e]],
    ['attn.v.weight', [e, e]],
    ['attn.v.bias', [e]],
    ['attn.proj.weight', [e, e]],
    ['attn.proj.bias', [e]],
    ['mlp.fc.weight', [4 * e, e]],
    ['mlp.fc.bias', [4 * e]],
    ['mlp.proj.weight', [e, 4 * e]],
    ['mlp.proj.bias', [e]],
  ];

  for (let i = 0; i < layers; i++) {
    const p = `h${i}`;
    for (const [nm, dims] of layerWeights) g.tensor(`${p}.${nm}`, 'fix', dims);
    g.tensor(`${p}.ln1`, 'fix', [t, e]);
    for (const qkv of ['q', 'k', 'v']) {
      g.tensor(`${p}.attn.${qkv}.mm`, 'fix', [t, e]);
      g.tensor(`${p}.attn.${qkv}.sc`, 'fix', [t, e]);
      g.tensor(`${p}.attn.${qkv}.out`, 'fix', [t, e]);
      g.tensor(`${p}.attn.${qkv}h0`, 'fix', [t, h, d]);
      g.tensor(`${p}.attn.${qkv}h`, 'fix', [h, t, d]);
    }
    for (const nm of ['raw', 'sc1', 'scl', 'sc2', 'msk', 'att', 'atd']) {
      g.tensor(`${p}.attn.${nm}`, 'fix', [h, t, t]);
    }
    g.tensor(`${p}.attn.avr`, 'fix', [h, t, d]);
    g.tensor(`${p}.attn.avs`, 'fix', [h, t, d]);
    g.tensor(`${p}.attn.mrg0`, 'fix', [t, h, d]);
    g.tensor(`${p}.attn.mrg`, 'fix', [t, e]);
    for (const nm of ['mm', 'sc', 'out']) g.tensor(`${p}.attn.prj.${nm}`, 'fix', [t, e]);
    g.tensor(`${p}.attn.prd`, 'fix', [t, e]);
    g.tensor(`${p}.res1`, 'fix', [t, e]);
    g.tensor(`${p}.ln2`, 'fix', [t, e]);
    for (const nm of ['mm', 'sc', 'out']) g.tensor(`${p}.mlp.fc.${nm}`, 'fix', [t, 4 * e]);
    g.tensor(`${p}.mlp.act`, 'fix', [t, 4 * e]);
    for (const nm of ['mm', 'sc', 'out']) g.tensor(`${p}.mlp.prj.${nm}`, 'fix', [t, e]);
    g.tensor(`${p}.mlp.prd`, 'fix', [t, e]);
    g.tensor(`${p}.res2`, 'fix', [t, e]);
  }
  g.tensor('lnf.weight', 'fix', [e]);
  g.tensor('lnf.bias', 'fix', [e]);
  g.tensor('lnf', 'fix', [t, e]);
  g.tensor('logits', 'fix', [t, v]);

  g.inputs = ['tok'];
  g.outputs = ['logits'];

  g.stmt('const wte weight=wte');
  g.stmt('const wpe weight=wpe');
  g.stmt(`const c_attn scalar=${attnScaleConst(d, f)} scale=1`);
  g.stmt('const pos_rows eye');
  g.stmt('node tok_emb gather wte tok');
  g.stmt('node pos_emb einsum spec=ts,se->te pos_rows wpe');
  g.stmt('node x0 add bcast=none tok_emb pos_emb');

  let res = 'x0';
  for (let i = 0; i < layers; i++) {
    const p = `h${i}`;
    for (const [nm] of layerWeights) g.stmt(`const ${p}.${nm} weight=${p}.${nm}`);
    g.stmt(`node ${p}.ln1 layernorm ${res} ${p}.ln1.weight ${p}.ln1.bias`);
    for (const qkv of ['q', 'k', 'v']) {
      const a = `${p}.attn.${qkv}`;
      g.stmt(`node ${a}.mm einsum spec=ta,ba->tb ${p}.ln1 ${a}.weight`);
      g.stmt(`node ${a}.sc rescale ${a}.mm`);
      g.stmt(`node ${a}.out add bcast=last ${a}.sc ${a}.bias`);
      g.stmt(`node ${p}.attn.${qkv}h0 reshape dims=${t},${h},${d} ${a}.out`);
      g.stmt(`node ${p}.attn.${qkv}h transpose perm=1,0,2 ${p}.attn.${qkv}h0`);
    }
    const at = `${p}.attn`;
    g.stmt(`node ${at}.raw einsum spec=htd,hsd->hts ${at}.qh ${at}.kh`);
    g.stmt(`node ${at}.sc1 rescale ${at}.raw`);
    g.stmt(`node ${at}.scl mul bcast=scalar ${at}.sc1 c_attn`);
    g.stmt(`node ${at}.sc2 rescale ${at}.scl`);
    g.stmt(`node ${at}.msk maskfill mode=causal ${at}.sc2`);
    g.stmt(`node ${at}.att softmax ${at}.msk`);
    g.stmt(`node ${at}.atd dropout rate=0 ${at}.att`);
    g.stmt(`node ${at}.avr einsum spec=hts,hse->hte ${at}.atd ${at}.vh`);
    g.stmt(`node ${at}.avs rescale ${at}.avr`);
    g.stmt(`node ${at}.mrg0 transpose perm=1,0,2 ${at}.avs`);
    g.stmt(`node ${at}.mrg reshape dims=${t},${e} ${at}.mrg0`);
    g.stmt(`node ${at}.prj.mm einsum spec=ta,ba->tb ${at}.mrg ${at}.proj.weight`);
    g.stmt(`node ${at}.prj.sc rescale ${at}.prj.mm`);
    g.stmt(`node ${at}.prj.out add bcast=last ${at}.prj.sc ${at}.proj.bias`);
    g.stmt(`node ${at}.prd dropout rate=0 ${at}.prj.out`);
    g.stmt(`node ${p}.res1 add bcast=none ${res} ${at}.prd`);
    g.stmt(`node ${p}.ln2 layernorm ${p}.res1 ${p}.ln2.weight ${p}.ln2.bias`);
    const ml = `${p}.mlp`;
    g.stmt(`node ${ml}.fc.mm einsum spec=ta,ba->tb ${p}.ln2 ${ml}.fc.weight`);
    g.stmt(`node ${ml}.fc.sc rescale ${ml}.fc.mm`);
    g.stmt(`node ${ml}.fc.out add bcast=last ${ml}.fc.sc ${ml}.fc.bias`);
    g.stmt(`node ${ml}.act gelu ${ml}.fc.out`);
    g.stmt(`node ${ml}.prj.mm einsum spec=ta,ba->tb ${ml}.act ${ml}.proj.weight`);
    g.stmt(`node ${ml}.prj.sc rescale ${ml}.prj.mm`);
    g.stmt(`node ${ml}.prj.out add bcast=last ${ml}.prj.sc ${ml}.proj.bias`);
    g.stmt(`node ${ml}.prd dropout rate=0 ${ml}.prj.out`);
    g.stmt(`node ${p}.res2 add bcast=none ${p}.res1 ${ml}.prd`);
    res = `${p}.res2`;
  }
  g.stmt('const lnf.weight weight=lnf.weight');
  g.stmt('const lnf.bias weight=lnf.bias');
  g.stmt(`node lnf layernorm ${res} lnf.weight lnf.bias`);
  g.stmt('node logits einsum spec=te,ve->tv lnf wte');
  return g.render();
}
