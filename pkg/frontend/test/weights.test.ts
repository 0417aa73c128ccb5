import { describe, expect, test } from 'vitest';

import { mlpParamCount, nanogptParamCount } from '../src/config';
import {
  decodeWeights,
  encodeWeights,
  initMlpWeights,
  initNanogptWeights,
  weightCount,
  zeroWeights,
} from '../src/weights';

const GPT = { vocab: 65, block: 16, layers: 2, heads: 4, embed: 32 };

describe('weights file codec', () => {
  test('encode/decode round-trip preserves names, shapes, values', () => {
    const w = initMlpWeights({ width: 6, depth: 3 }, 7, 5);
    const back = decodeWeights(encodeWeights(w));
    expect([...back.keys()]).toEqual([...w.keys()].sort());
    for (const [name, t] of w) {
      const r = back.get(name)!;
      expect(r.dims).toEqual(t.dims);
      expect(Array.from(r.data)).toEqual(Array.from(t.data));
    }
  });

  test('encoding is canonical: insertion order does not matter', () => {
    const w = initMlpWeights({ width: 4, depth: 2 }, 7, 1);
    const shuffled = new Map([...w.entries()].reverse());
    expect(encodeWeights(shuffled).equals(encodeWeights(w))).toBe(true);
  });

  test('header carries magic, version, count', () => {
    const buf = encodeWeights(initMlpWeights({ width: 4, depth: 1 }, 7, 1));
    expect(buf.subarray(0, 4).toString('ascii')).toBe('GPWT');
    expect(buf.readUInt16LE(4)).toBe(1);
    expect(buf.readUInt32LE(6)).toBe(2); // l0.weight, l0.bias
  });

  test('rejects bad magic, trailing bytes, truncation, out-of-order names', () => {
    const good = encodeWeights(initMlpWeights({ width: 4, depth: 1 }, 7, 1));
    const badMagic = Buffer.from(good);
    badMagic.write('NOPE', 0, 'ascii');
    expect(() => decodeWeights(badMagic)).toThrow(/magic/);
    expect(() => decodeWeights(Buffer.concat([good, Buffer.from([0])]))).toThrow(/trailing/);
    expect(() => decodeWeights(good.subarray(0, good.length - 3))).toThrow(/truncated/);

    const w = initMlpWeights({ width: 4, depth: 1 }, 7, 1);
    const renamed = new Map(
      [...w.entries()].map(([name, t]) => [name === 'l0.bias' ? 'z.bias' : name, t] as const),
    );
    const buf = encodeWeights(renamed);
    // overwrite the sorted second name "z.bias" with one that sorts before "l0.weight"
    const idx = buf.indexOf(Buffer.from('z.bias', 'utf-8'));
    Buffer.from('a.bias', 'utf-8').copy(buf, idx);
    expect(() => decodeWeights(buf)).toThrow(/canonical/);
  });
});

describe('seeded initialization', () => {
  test('nanogpt tensor set matches the closed-form parameter count', () => {
    const w = initNanogptWeights(GPT, 7, 7);
    expect(weightCount(w)).toBe(nanogptParamCount(GPT));
    expect(w.size).toBe(4 + 16 * GPT.layers);
    expect(w.get('wte')!.dims).toEqual([65, 32]);
    expect(w.get('h1.mlp.fc.weight')!.dims).toEqual([128, 32]);
    expect(w.get('h1.mlp.proj.weight')!.dims).toEqual([32, 128]);
  });

  test('mlp tensor set matches the closed-form parameter count', () => {
    const cfg = { width: 10, depth: 4 };
    expect(weightCount(initMlpWeights(cfg, 7, 2))).toBe(mlpParamCount(cfg));
  });

  test('norm gains are exactly one, biases exactly zero', () => {
    const w = initNanogptWeights(GPT, 7, 3);
    expect(Array.from(w.get('lnf.weight')!.data).every((v) => v === 1)).toBe(true);
    expect(Array.from(w.get('h0.attn.q.bias')!.data).every((v) => v === 0)).toBe(true);
  });

  test('every generated value sits on the 2^-f grid and survives float32', () => {
    const w = initNanogptWeights(GPT, 7, 11);
    for (const t of w.values()) {
      for (const v of t.data) {
        expect(Number.isInteger(v * 128)).toBe(true);
        expect(Math.fround(v)).toBe(v); // float32 storage is lossless
      }
    }
  });

  test('zeroWeights keeps names and shapes, zeroes the data', () => {
    const w = initMlpWeights({ width: 5, depth: 2 }, 7, 9);
    const z = zeroWeights(w);
    expect([...z.keys()]).toEqual([...w.keys()]);
    for (const t of z.values()) expect(Array.from(t.data).every((v) => v === 0)).toBe(true);
  });
});
