"""Prime-field arithmetic and fixed-point quantization.

All circuit values live in GF(p) with p = 2**64 - 2**32 + 1. Signed integers are
embedded by the usual two's-complement-style convention: nonnegative v maps to v,
negative v maps to p + v. Real numbers are carried at a power-of-two scale 2**f
("fixed point"), and every nonlinearity is realized as a finite lookup table over
the signed window [-(2**(B-1) - 1), 2**(B-1) - 1].

Vectorized field ops work on numpy uint64 arrays using 32-bit limb products, so a
64x64 multiply never needs 128-bit intermediates. Scalar helpers use Python ints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

PRIME = (1 << 64) - (1 << 32) + 1
_P = np.uint64(PRIME)
_HALF = np.uint64(PRIME >> 1)
_M32 = np.uint64(0xFFFFFFFF)  # 2**32 - 1 == 2**64 mod p
_S32 = np.uint64(32)


class QuantError(ValueError):
    pass


def f_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a + b) mod p for uint64 arrays with a, b < p."""
    s = a + b
    # a+b >= 2**64 wrapped; 2**64 = 2**32 - 1 (mod p), and the adjusted sum
    # stays below 2**64 because a + b < 2p < 2**65.
    s = np.where(s < a, s + _M32, s)
    return np.where(s >= _P, s - _P, s)


def f_neg(a: np.ndarray) -> np.ndarray:
    return np.where(a == 0, a, _P - a)


def f_sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    # borrow: -2**64 = -(2**32 - 1) (mod p)
    return np.where(a < b, d - _M32, d)


def f_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a * b) mod p via 32-bit limbs and the identities 2**64 = 2**32 - 1, 2**96 = -1."""
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    lo = a_lo * b_lo
    m1 = a_lo * b_hi
    m2 = a_hi * b_lo
    hi = a_hi * b_hi
    mid = m1 + m2
    carry_mid = (mid < m1).astype(np.uint64)
    n_lo = lo + (mid << _S32)
    c1 = (n_lo < lo).astype(np.uint64)
    # exact high word of the 128-bit product; provably < 2**64 for a, b < p
    n_hi = hi + (mid >> _S32) + (carry_mid << _S32) + c1
    h_lo = n_hi & _M32
    h_hi = n_hi >> _S32
    t = (h_lo << _S32) - h_lo
    r = n_lo - h_hi
    r = np.where(n_lo < h_hi, r - _M32, r)
    r = np.where(r >= _P, r - _P, r)
    return f_add(r, t)


def f_inv_int(a: int) -> int:
    if a % PRIME == 0:
        raise ZeroDivisionError("no inverse of 0")
    return pow(a, PRIME - 2, PRIME)


def encode_int(v: int) -> int:
    """Embed a signed integer, |v| < p/2, into the field."""
    if not -(PRIME // 2) < v < PRIME // 2:
        raise QuantError(f"signed value out of field window: {v}")
    return v % PRIME


def decode_int(u: int) -> int:
    u %= PRIME
    return u - PRIME if u > PRIME // 2 else u


def encode_array(v: np.ndarray) -> np.ndarray:
    """int64 signed -> uint64 field elements."""
    v = np.asarray(v, dtype=np.int64)
    neg = v < 0
    out = v.astype(np.uint64)
    return np.where(neg, out + _P, out)  # wrap-add: p + v computed mod 2**64 equals p - |v|


def decode_array(u: np.ndarray) -> np.ndarray:
    """uint64 field elements -> int64 signed (values must lie in the signed window)."""
    u = np.asarray(u, dtype=np.uint64)
    big = u > _HALF
    return np.where(big, (u - _P).astype(np.int64), u.astype(np.int64))


@dataclass(frozen=True)
class QuantConfig:
    """Fixed-point parameters: scale 2**scale_bits, lookup window of lookup_bits bits."""

    scale_bits: int = 7
    lookup_bits: int = 16

    def __post_init__(self) -> None:
        if self.lookup_bits > 20:
            raise QuantError(f"lookup_bits {self.lookup_bits} > 20 is not table-able here")
        if not 2 <= self.scale_bits <= self.lookup_bits - 2:
            raise QuantError(
                f"need 2 <= scale_bits <= lookup_bits - 2, got f={self.scale_bits} B={self.lookup_bits}"
            )

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    @property
    def range_min(self) -> int:
        return -(1 << (self.lookup_bits - 1)) + 1

    @property
    def range_max(self) -> int:
        return (1 << (self.lookup_bits - 1)) - 1

    @property
    def mask_value(self) -> int:
        """Most negative representable value; used to blank causal attention cells."""
        return self.range_min

    @property
    def table_rows(self) -> int:
        return (1 << self.lookup_bits) - 1

    def key(self) -> tuple[int, int]:
        return (self.scale_bits, self.lookup_bits)


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def quantize(x: float, cfg: QuantConfig) -> int:
    """Real -> signed fixed-point integer at scale 2**f, round half away from zero."""
    q = round_half_away(float(x) * cfg.scale)
    if not cfg.range_min <= q <= cfg.range_max:
        raise QuantError(f"{x} quantizes to {q}, outside [{cfg.range_min}, {cfg.range_max}]")
    return q


def dequantize(q: int, cfg: QuantConfig) -> float:
    return q / cfg.scale


def round_to_grid(x: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """Scale and round half away from zero, without any window check."""
    x = np.asarray(x, dtype=np.float64)
    return np.trunc(x * cfg.scale + np.copysign(0.5, x)).astype(np.int64)


def quantize_array(x: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    q = round_to_grid(x, cfg)
    if q.size and (q.min() < cfg.range_min or q.max() > cfg.range_max):
        raise QuantError("tensor quantizes outside the lookup window")
    return q


def dequantize_array(q: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / cfg.scale


def rescale_down(v: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """Integer divide by 2**f, round half away from zero. Exact integer arithmetic."""
    v = np.asarray(v, dtype=np.int64)
    h = 1 << (cfg.scale_bits - 1)
    mag = (np.abs(v) + h) >> cfg.scale_bits
    return np.where(v < 0, -mag, mag)


# Lookup tables ------------------------------------------------------------

LOOKUP_FUNCTIONS = ("relu", "gelu", "exp", "recip", "rsqrt", "rescale_div")

# Input interpretation per function: value = q / 2**(f * in_scale_mul), except
# rescale_div which treats q as a raw integer to divide. rsqrt reads the
# mean-of-squares output, which arrives at scale 2**(2f) by construction.
IN_SCALE_MUL = {"relu": 1, "gelu": 1, "exp": 1, "recip": 1, "rsqrt": 2, "rescale_div": 0}


def gelu_exact(x: float) -> float:
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


@dataclass(frozen=True)
class LookupTable:
    """Total map over every signed integer in the lookup window.

    inputs are the consecutive integers range_min..range_max; outputs are the
    quantized function values, clamped back into the same window.
    """

    fn: str
    cfg: QuantConfig
    inputs: np.ndarray  # int64, ascending, len == cfg.table_rows
    outputs: np.ndarray  # int64, inside the window

    def output_for(self, q: np.ndarray) -> np.ndarray:
        """Table image of already-in-window signed inputs."""
        q = np.asarray(q, dtype=np.int64)
        if q.size and (q.min() < self.cfg.range_min or q.max() > self.cfg.range_max):
            raise QuantError(f"lookup input outside window for {self.fn}")
        return self.outputs[q - self.cfg.range_min]

    def encoded_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return encode_array(self.inputs), encode_array(self.outputs)


def _clamp_round(y: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    # round half away from zero in float, clamp to the window before the int cast
    # (exp/recip can exceed int64 in float form)
    r = np.trunc(y + np.copysign(0.5, y))
    r = np.clip(r, float(cfg.range_min), float(cfg.range_max))
    return r.astype(np.int64)


def _table_outputs(fn: str, q: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    scale = float(cfg.scale)
    if fn == "relu":
        return np.maximum(q, 0)
    if fn == "rescale_div":
        return np.clip(rescale_down(q, cfg), cfg.range_min, cfg.range_max)
    if fn == "gelu":
        x = q / scale
        y = 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))
        return _clamp_round(y * scale, cfg)
    if fn == "exp":
        with np.errstate(over="ignore"):
            y = np.exp(q / scale) * scale
        y = np.where(np.isfinite(y), y, float(cfg.range_max))
        return _clamp_round(y, cfg)
    if fn == "recip":
        nz = q != 0
        y = scale * scale / np.where(nz, q, 1).astype(np.float64)
        out = _clamp_round(y, cfg)
        out[~nz] = cfg.range_max  # 1/0 escapes to the window max
        return out
    if fn == "rsqrt":
        pos = q > 0
        y = (scale * scale) / np.sqrt(np.where(pos, q, 1).astype(np.float64))
        out = _clamp_round(y, cfg)
        out[~pos] = cfg.range_max  # rsqrt of a nonpositive variance escapes to max
        return out
    raise QuantError(f"unknown lookup function {fn!r}")


@lru_cache(maxsize=64)
def _build_lookup_cached(fn: str, f: int, b: int) -> LookupTable:
    cfg = QuantConfig(f, b)
    q = np.arange(cfg.range_min, cfg.range_max + 1, dtype=np.int64)
    out = _table_outputs(fn, q, cfg)
    q.setflags(write=False)
    out.setflags(write=False)
    return LookupTable(fn=fn, cfg=cfg, inputs=q, outputs=out)


def build_lookup(fn: str, cfg: QuantConfig) -> LookupTable:
    if fn not in LOOKUP_FUNCTIONS:
        raise QuantError(f"unknown lookup function {fn!r}")
    return _build_lookup_cached(fn, cfg.scale_bits, cfg.lookup_bits)


def saturate(v: np.ndarray, cfg: QuantConfig) -> tuple[np.ndarray, int]:
    """Clamp to the lookup window; returns (clamped, number of clamped elements)."""
    v = np.asarray(v, dtype=np.int64)
    clipped = np.clip(v, cfg.range_min, cfg.range_max)
    return clipped, int(np.count_nonzero(clipped != v))
