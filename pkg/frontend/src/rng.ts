/**
 * Seeded randomness and fixed-point grid snapping.
 *
 * The stream only has to be deterministic and well-mixed for test weights;
 * it deliberately does not reproduce any particular host-language RNG.
 */

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), a | 1);
    t = (t + Math.imul(t ^ (t >>> 7), t | 61)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class SeededRng {
  private readonly uniform: () => number;
  private spare: number | null = null;

  constructor(seed: number) {
    if (!Number.isInteger(seed) || seed < 0) {
      throw new Error(`seed must be a non-negative integer, got ${seed}`);
    }
    this.uniform = mulberry32(seed + 0x9e3779b9);
    // discard the first few outputs; tiny seeds start poorly mixed
    for (let i = 0; i < 8; i++) this.uniform();
  }

  /** uniform float in [0, 1) */
  next(): number {
    return this.uniform();
  }

  /** uniform integer in [0, bound) */
  int(bound: number): number {
    return Math.floor(this.uniform() * bound);
  }

  /** standard normal via Box-Muller, scaled by sigma */
  normal(sigma: number): number {
    if (this.spare !== null) {
      const z = this.spare;
      this.spare = null;
      return z * sigma;
    }
    let u1 = this.uniform();
    while (u1 === 0) u1 = this.uniform();
    const u2 = this.uniform();
    const r = Math.sqrt(-2 * Math.log(u1));
    this.spare = r * Math.sin(2 * Math.PI * u2);
    return r * Math.cos(2 * Math.PI * u2) * sigma;
  }

  normals(count: number, sigma: number): Float64Array {
    const out = new Float64Array(count);
    for (let i = 0; i < count; i++) out[i] = this.normal(sigma);
    return out;
  }
}

/** Round to the nearest multiple of 2^-f, halves away from zero. */
export function snapToGrid(x: number, f: number): number {
  const scale = 2 ** f;
  const q = Math.trunc(x * scale + (x >= 0 ? 0.5 : -0.5));
  return q / scale;
}
