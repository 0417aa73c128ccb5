"""Graph evaluators.

`evaluate` runs the quantized integer semantics on int64 arrays and returns a
full per-tensor trace (the witness generator replays it into matrix cells).
Composite softmax/layernorm nodes evaluate through the exact same table-based
arithmetic their lowered chains use, which is what makes the lowering
equivalence test meaningful.

`evaluate_float` runs real-number semantics (true exp/erf/inverse-sqrt, masked
scores at -inf) and is the fidelity reference. Rescale is the identity there;
scalar constants divide by their declared scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .field import (
    QuantConfig,
    build_lookup,
    quantize_array,
    round_half_away,
    round_to_grid,
    saturate,
)
from .graph import Graph, GraphError, Node

_GUARD = 2**62  # any intermediate beyond this means the graph is mis-scaled


@dataclass
class EvalResult:
    tensors: dict[str, np.ndarray]
    saturations: dict[str, int] = field(default_factory=dict)

    @property
    def total_saturated(self) -> int:
        return sum(self.saturations.values())

    def outputs(self, g: Graph) -> dict[str, np.ndarray]:
        return {o: self.tensors[o] for o in g.outputs}


def broadcast_operand(a: np.ndarray, b: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none" or mode == "scalar":
        return b
    if mode == "keep":
        return b[..., None]
    if mode == "last":
        return b
    raise GraphError(f"unknown bcast mode {mode!r}")


def causal_mask_indices(shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    t, s = shape[-2], shape[-1]
    return np.triu_indices(t, k=1, m=s)


def _check(name: str, arr: np.ndarray) -> np.ndarray:
    if arr.size and int(np.abs(arr).max()) >= _GUARD:
        raise GraphError(f"overflow at node {name}: intermediate exceeds guard")
    return arr


def _table_apply(fn: str, cfg: QuantConfig, x: np.ndarray) -> tuple[np.ndarray, int]:
    clamped, n_sat = saturate(x, cfg)
    table = build_lookup(fn, cfg)
    return table.outputs[clamped - cfg.range_min], n_sat


def _quantized_softmax(x: np.ndarray, cfg: QuantConfig) -> tuple[np.ndarray, int]:
    e, s1 = _table_apply("exp", cfg, x)
    den = e.sum(axis=-1)
    r, s2 = _table_apply("recip", cfg, den)
    prod = e * r[..., None]
    y, s3 = _table_apply("rescale_div", cfg, prod)
    return y, s1 + s2 + s3


def _quantized_layernorm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, cfg: QuantConfig
) -> tuple[np.ndarray, int]:
    n = x.shape[-1]
    c_n = int(round_half_away(cfg.scale / n))
    sat = 0

    def resc(v: np.ndarray) -> np.ndarray:
        nonlocal sat
        out, k = _table_apply("rescale_div", cfg, v)
        sat += k
        return out

    mu = resc(x.sum(axis=-1) * c_n)
    d = x - mu[..., None]
    va = resc((d * d).sum(axis=-1) * c_n)
    iv, k = _table_apply("rsqrt", cfg, va + 1)
    sat += k
    nd = resc(d * iv[..., None])
    gs = resc(nd * gamma)
    return gs + beta, sat


def evaluate(
    g: Graph,
    cfg: QuantConfig,
    weights: dict[str, np.ndarray],
    inputs: dict[str, np.ndarray],
) -> EvalResult:
    """Quantized forward pass. fix inputs are float arrays quantized here,
    idx inputs are integer arrays taken as-is."""
    vals: dict[str, np.ndarray] = {}
    sats: dict[str, int] = {}
    for name in g.inputs:
        decl = g.tensors[name]
        arr = np.asarray(inputs[name])
        if tuple(arr.shape) != decl.shape:
            raise GraphError(f"input {name!r}: shape {arr.shape}, declared {decl.shape}")
        if decl.dtype == "idx":
            vals[name] = arr.astype(np.int64)
        else:
            clamped, n_sat = saturate(round_to_grid(arr, cfg), cfg)
            if n_sat:
                sats[name] = n_sat
            vals[name] = clamped

    for n in g.nodes:
        vals[n.name] = _check(n.name, _eval_node(n, g, cfg, weights, vals, sats))
    return EvalResult(tensors=vals, saturations=sats)


def _eval_node(
    n: Node,
    g: Graph,
    cfg: QuantConfig,
    weights: dict[str, np.ndarray],
    vals: dict[str, np.ndarray],
    sats: dict[str, int],
) -> np.ndarray:
    op = n.op
    ins = [vals[i] for i in n.inputs]

    if op == "const":
        kind = n.attr("kind")
        shape = g.shape(n.name)
        if kind == "weight":
            w = weights[n.attr("weight")]
            if tuple(w.shape) != shape:
                raise GraphError(f"weight {n.attr('weight')!r}: shape {w.shape} vs {shape}")
            return quantize_array(np.asarray(w, dtype=np.float64), cfg)
        if kind == "eye":
            return np.eye(shape[1], dtype=np.int64)[: shape[0]]
        return np.asarray(n.attr("value"), dtype=np.int64)
    if op == "einsum":
        return np.einsum(n.attr("spec"), *ins)
    if op in ("add", "sub", "mul"):
        b = broadcast_operand(ins[0], ins[1], n.attr("bcast", "none"))
        return ins[0] + b if op == "add" else ins[0] - b if op == "sub" else ins[0] * b
    if op == "gather":
        table, idx = ins
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise GraphError(f"gather index out of range at node {n.name}")
        return table[idx]
    if op == "nonlinear":
        out, k = _table_apply(n.attr("fn"), cfg, ins[0])
        sats[n.name] = k
        return out
    if op == "rescale":
        out, k = _table_apply("rescale_div", cfg, ins[0])
        sats[n.name] = k
        return out
    if op == "maskfill":
        out = ins[0].copy()
        rows, cols = causal_mask_indices(out.shape)
        out[..., rows, cols] = cfg.mask_value
        return out
    if op == "reshape":
        return ins[0].reshape(n.attr("dims"))
    if op == "transpose":
        return ins[0].transpose(n.attr("perm"))
    if op == "concat":
        return np.concatenate(ins, axis=n.attr("axis"))
    if op == "softmax":
        out, k = _quantized_softmax(ins[0], cfg)
        sats[n.name] = k
        return out
    if op == "layernorm":
        out, k = _quantized_layernorm(ins[0], ins[1], ins[2], cfg)
        sats[n.name] = k
        return out
    if op == "dropout":
        return ins[0]
    raise GraphError(f"unknown op {op!r} at node {n.name}")


# Float reference -----------------------------------------------------------


def evaluate_float(
    g: Graph,
    cfg: QuantConfig,
    weights: dict[str, np.ndarray],
    inputs: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """Real-number reference semantics on float64. Masked positions go to -inf
    so reference softmax zeroes them exactly."""
    vals: dict[str, np.ndarray] = {}
    erf = np.vectorize(math.erf)
    for name in g.inputs:
        arr = np.asarray(inputs[name])
        vals[name] = arr.astype(np.int64) if g.dtype(name) == "idx" else arr.astype(np.float64)

    for n in g.nodes:
        ins = [vals[i] for i in n.inputs]
        op = n.op
        if op == "const":
            kind = n.attr("kind")
            shape = g.shape(n.name)
            if kind == "weight":
                vals[n.name] = np.asarray(weights[n.attr("weight")], dtype=np.float64)
            elif kind == "eye":
                vals[n.name] = np.eye(shape[1])[: shape[0]]
            else:
                vals[n.name] = np.float64(n.attr("value")) / float(cfg.scale ** n.attr("scale"))
        elif op == "einsum":
            vals[n.name] = np.einsum(n.attr("spec"), *ins)
        elif op in ("add", "sub", "mul"):
            b = broadcast_operand(ins[0], ins[1], n.attr("bcast", "none"))
            vals[n.name] = ins[0] + b if op == "add" else ins[0] - b if op == "sub" else ins[0] * b
        elif op == "gather":
            vals[n.name] = ins[0][ins[1]]
        elif op == "nonlinear":
            fn = n.attr("fn")
            x = ins[0]
            if fn == "relu":
                vals[n.name] = np.maximum(x, 0.0)
            elif fn == "gelu":
                vals[n.name] = 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))
            elif fn == "exp":
                vals[n.name] = np.exp(x)
            elif fn == "recip":
                vals[n.name] = 1.0 / x
            else:  # rsqrt
                vals[n.name] = 1.0 / np.sqrt(x)
        elif op == "rescale":
            vals[n.name] = ins[0]
        elif op == "maskfill":
            out = ins[0].copy()
            rows, cols = causal_mask_indices(out.shape)
            out[..., rows, cols] = -np.inf
            vals[n.name] = out
        elif op == "reshape":
            vals[n.name] = ins[0].reshape(n.attr("dims"))
        elif op == "transpose":
            vals[n.name] = ins[0].transpose(n.attr("perm"))
        elif op == "concat":
            vals[n.name] = np.concatenate(ins, axis=n.attr("axis"))
        elif op == "softmax":
            x = ins[0]
            x = x - x.max(axis=-1, keepdims=True)
            e = np.exp(x)
            vals[n.name] = e / e.sum(axis=-1, keepdims=True)
        elif op == "layernorm":
            x, gamma, beta = ins
            mu = x.mean(axis=-1, keepdims=True)
            var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
            eps = 1.0 / float(cfg.scale**2)
            vals[n.name] = (x - mu) / np.sqrt(var + eps) * gamma + beta
        elif op == "dropout":
            vals[n.name] = ins[0]
        else:
            raise GraphError(f"unknown op {op!r} at node {n.name}")
    return vals
