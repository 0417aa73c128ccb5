import { describe, expect, test } from 'vitest';

import { attnScaleConst, emitMlpGraph, emitNanogptGraph } from '../src/graphText';

const GPT = { vocab: 65, block: 16, layers: 2, heads: 4, embed: 32 };

// frozen against the consumer pipeline's own builder output for width 4, depth 2
const MLP_4X2 = `version 1
tensor x fix 4
tensor l0.weight fix 4 4
tensor l0.bias fix 4
tensor l0.mm fix 4
tensor l0.sc fix 4
tensor l0.out fix 4
tensor l0.act fix 4
tensor l1.weight fix 4 4
tensor l1.bias fix 4
tensor l1.mm fix 4
tensor l1.sc fix 4
tensor l1.out fix 4
tensor l1.act fix 4
input x
output l1.act
const l0.weight weight=l0.weight
const l0.bias weight=l0.bias
node l0.mm einsum spec=a,ba->b x l0.weight
node l0.sc rescale l0.mm
node l0.out add bcast=none l0.sc l0.bias
node l0.act relu l0.out
const l1.weight weight=l1.weight
const l1.bias weight=l1.bias
node l1.mm einsum spec=a,ba->b l0.act l1.weight
node l1.sc rescale l1.mm
node l1.out add bcast=none l1.sc l1.bias
node l1.act relu l1.out
`;

function lines(text: string, prefix: string): string[] {
  return text.split('\n').filter((l) => l.startsWith(prefix));
}

describe('mlp graph emission', () => {
  test('matches the frozen reference text exactly', () => {
    expect(emitMlpGraph({ width: 4, depth: 2 })).toBe(MLP_4X2);
  });

  test('layers chain act -> next mm', () => {
    const text = emitMlpGraph({ width: 8, depth: 3 });
    expect(text).toContain('node l1.mm einsum spec=a,ba->b l0.act l1.weight');
    expect(text).toContain('node l2.mm einsum spec=a,ba->b l1.act l2.weight');
    expect(text).toContain('output l2.act');
  });
});

describe('nanogpt graph emission', () => {
  const text = emitNanogptGraph(GPT, 7);

  test('statement counts match the frozen toy-model goldens', () => {
    // regression values counted once for (65,16,2,4,32)
    expect(lines(text, 'node ').length).toBe(89);
    expect(lines(text, 'const ').length).toBe(38);
    expect(text.split('\n').length - 1).toBe(258); // trailing newline
  });

  test('node count scales as 42 per layer plus 5', () => {
    for (const layers of [1, 3]) {
      const t = emitNanogptGraph({ ...GPT, layers }, 7);
      expect(lines(t, 'node ').length).toBe(42 * layers + 5);
    }
  });

  test('carries the causal mask, tied head, and rounded attention scale', () => {
    expect(text).toContain('node h0.attn.msk maskfill mode=causal h0.attn.sc2');
    expect(text).toContain('node logits einsum spec=te,ve->tv lnf wte');
    expect(text).toContain('const c_attn scalar=45 scale=1');
    expect(text).toContain('const pos_rows eye');
    expect(text).toContain('tensor c_attn fix\n');
  });

  test('dropout nodes are emitted disabled', () => {
    for (const line of lines(text, 'node ').filter((l) => l.includes(' dropout '))) {
      expect(line).toContain('rate=0');
    }
    // attention weights, attention projection, and mlp projection per layer
    expect(lines(text, 'node ').filter((l) => l.includes(' dropout ')).length).toBe(6);
  });

  test('every tensor is declared before use', () => {
    const declared = new Set<string>();
    for (const line of text.trimEnd().split('\n')) {
      const tok = line.split(' ');
      if (tok[0] === 'tensor') declared.add(tok[1]);
      else if (tok[0] === 'node') {
        const refs = tok.slice(3).filter((t) => !t.includes('='));
        for (const r of refs) expect(declared.has(r), `${r} used before declaration`).toBe(true);
      }
    }
  });

  test('rejects an embed width the heads cannot split', () => {
    expect(() => emitNanogptGraph({ ...GPT, embed: 30 }, 7)).toThrow(/divisible/);
  });
});

describe('attention scale constant', () => {
  test('rounds 2^f / sqrt(head_dim) half away from zero', () => {
    expect(attnScaleConst(8, 7)).toBe(45); // 45.25 -> 45
    expect(attnScaleConst(16, 7)).toBe(32); // exact
    expect(attnScaleConst(4, 7)).toBe(64); // exact
  });
});
