import { describe, expect, test } from 'vitest';

import { SeededRng, snapToGrid } from '../src/rng';

describe('SeededRng', () => {
  test('same seed gives the same stream', () => {
    const a = new SeededRng(42);
    const b = new SeededRng(42);
    for (let i = 0; i < 100; i++) expect(a.next()).toBe(b.next());
  });

  test('different seeds diverge', () => {
    const a = new SeededRng(1);
    const b = new SeededRng(2);
    const same = Array.from({ length: 32 }, () => a.next() === b.next());
    expect(same.some((x) => !x)).toBe(true);
  });

  test('uniforms stay in [0, 1)', () => {
    const rng = new SeededRng(7);
    for (let i = 0; i < 1000; i++) {
      const u = rng.next();
      expect(u).toBeGreaterThanOrEqual(0);
      expect(u).toBeLessThan(1);
    }
  });

  test('int(bound) covers the range and stays inside it', () => {
    const rng = new SeededRng(3);
    const seen = new Set<number>();
    for (let i = 0; i < 2000; i++) {
      const v = rng.int(17);
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThan(17);
      seen.add(v);
    }
    expect(seen.size).toBe(17);
  });

  test('normal() has roughly the requested moments', () => {
    const rng = new SeededRng(123);
    const n = 20000;
    let sum = 0;
    let sumSq = 0;
    for (let i = 0; i < n; i++) {
      const z = rng.normal(0.5);
      sum += z;
      sumSq += z * z;
    }
    const mean = sum / n;
    const std = Math.sqrt(sumSq / n - mean * mean);
    expect(Math.abs(mean)).toBeLessThan(0.02);
    expect(Math.abs(std - 0.5)).toBeLessThan(0.02);
  });

  test('rejects bad seeds', () => {
    expect(() => new SeededRng(-1)).toThrow(/non-negative/);
    expect(() => new SeededRng(1.5)).toThrow(/integer/);
  });
});

describe('snapToGrid', () => {
  test('exact grid points pass through', () => {
    expect(snapToGrid(0.5, 7)).toBe(0.5);
    expect(snapToGrid(-3 / 128, 7)).toBe(-3 / 128);
  });

  test('halves round away from zero', () => {
    expect(snapToGrid(1.5 / 128, 7)).toBe(2 / 128);
    expect(snapToGrid(-1.5 / 128, 7)).toBe(-2 / 128);
  });

  test('result is always an integer multiple of the quantum', () => {
    const rng = new SeededRng(9);
    for (let i = 0; i < 500; i++) {
      const x = rng.normal(0.3);
      const snapped = snapToGrid(x, 7);
      expect(Number.isInteger(snapped * 128)).toBe(true);
      expect(Math.abs(snapped - x)).toBeLessThanOrEqual(0.5 / 128 + 1e-12);
    }
  });
});
