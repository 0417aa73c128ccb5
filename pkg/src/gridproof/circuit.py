"""Plonkish cell matrix: layout, witness generation, constraint checking.

Layout model.  Each advice segment contributes three advice columns
(a, b, c) of ``n_rows`` cells.  Weight tensors occupy dedicated committed
columns packed column-major; public inputs and outputs live in instance
cells; structural constants (0, 1, index ranges, the attention mask fill
value) share one fixed column whose contents the verifier recomputes from
the graph text.

Gate set (selector code -> polynomial on row r, all mod the field prime):

    mul   a*b - c
    mac   c[r-1] + a*b - c
    sum   c[r-1] + a - c
    add   a + b - c
    sub   a - b - c
    bool  c*(c - 1)

Reduction chains place one step per row.  A multiply-accumulate chain opens
with ``mul``; a plain sum chain opens with a gate-free row whose a cell is
copy-bound to its own c cell.  Lookup rows carry no gate: the pair (a, c)
must appear in the function's table.  Copy constraints wire every operand
cell to the cell that owns the value (its "home").  Wiring ops (reshape,
transpose, concat, maskfill) are views resolved at copy time and occupy no
rows; masked positions resolve to the fixed mask-value cell.

Embedding gathers expand per token into: one q_bool row per table row (the
one-hot cells), a sum chain bound to the constant 1, an index chain against
a fixed 0..V-1 column bound to the public index cell, and one
multiply-accumulate chain per embedding coordinate.  Every one-hot cell is
load-bearing: a flip violates its bool gate, the sum bind, or the index
bind.

``compile_graph`` only counts and places; no cell values are touched until
``gen_witness``.  With a row cap, chains that no longer fit in the current
segment spill into a fresh set of advice columns and filling continues; a
chain longer than the cap cannot be placed at all ("region does not fit").
An explicit cap fixes the committed height exactly (padding included);
without one the height is the smallest power of two covering the assigned
rows.  Padding rows are zero and their selector code disables every gate.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .field import (
    LOOKUP_FUNCTIONS,
    QuantConfig,
    next_pow2,
    build_lookup,
    decode_array,
    encode_array,
    f_add,
    f_mul,
    f_sub,
)
from .graph import Graph, Node, parse_einsum_spec
from .lowering import infer_scales, reduce_graph
from .evaluate import evaluate

GATE_NONE, GATE_MUL, GATE_MAC, GATE_SUM, GATE_ADD, GATE_SUB, GATE_BOOL = range(7)
GATE_NAMES = ("none", "mul", "mac", "sum", "add", "sub", "bool")
_ELEM_GATES = {"add": GATE_ADD, "sub": GATE_SUB, "mul": GATE_MUL}
_LOOKUP_CODE = {fn: i for i, fn in enumerate(LOOKUP_FUNCTIONS)}

_ACC_GUARD = 1 << 62


class CircuitError(ValueError):
    pass


def _numel(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape, dtype=np.int64)) if shape else 1


def _coords(idx: np.ndarray, shape: tuple[int, ...]) -> list[np.ndarray]:
    if not shape:
        return []
    return list(np.unravel_index(idx, shape))


def _strides(shape: tuple[int, ...]) -> tuple[int, ...]:
    st, acc = [0] * len(shape), 1
    for i in range(len(shape) - 1, -1, -1):
        st[i] = acc
        acc *= shape[i]
    return tuple(st)


# Run specs ------------------------------------------------------------------


@dataclass(frozen=True)
class RunSpec:
    """One uniform block of chains emitted for a node.

    mac2 and sum1 runs address their operands through affine index maps:
    chain q enumerates the output elements row-major, position l enumerates
    the contracted elements row-major, and the flat source index is
    dot(out_strides, coords(q)) + dot(con_strides, coords(l)).
    """

    tag: str  # mac2 | sum1 | elem | lookup | bool
    n_chains: int
    chain_len: int
    op1: str = ""
    op2: str = ""
    o1_out: tuple[int, ...] = ()
    o1_con: tuple[int, ...] = ()
    o2_out: tuple[int, ...] = ()
    o2_con: tuple[int, ...] = ()
    out_shape: tuple[int, ...] = ()
    con_shape: tuple[int, ...] = ()
    gate: int = GATE_NONE  # elem runs
    lhs: str = ""
    rhs: str = ""
    bcast: str = "none"
    fn: str = ""  # lookup runs
    src: str = ""
    bind: Optional[tuple] = None  # ("const", v) | ("tensor", name): chain-end c copy target
    out_tensor: str = ""  # tensor homed at this run's c cells ("" = none)

    @property
    def rows(self) -> int:
        return self.n_chains * self.chain_len


def _run_counts(run: RunSpec) -> dict[str, int]:
    c, l = run.n_chains, run.chain_len
    bind = c if run.bind is not None else 0
    if run.tag == "mac2":
        return dict(rows=c * l, gates=c * l, lookups=0, copies=2 * c * l + bind, used=3 * c * l)
    if run.tag == "sum1":
        return dict(rows=c * l, gates=c * (l - 1), lookups=0, copies=c * l + c + bind, used=2 * c * l)
    if run.tag == "elem":
        return dict(rows=c, gates=c, lookups=0, copies=2 * c + bind, used=3 * c)
    if run.tag == "lookup":
        return dict(rows=c, gates=0, lookups=c, copies=c + bind, used=2 * c)
    if run.tag == "bool":
        return dict(rows=c, gates=c, lookups=0, copies=0, used=c)
    raise CircuitError(f"unknown run tag {run.tag}")


def _einsum_runs(g: Graph, node: Node) -> list[RunSpec]:
    terms, out_letters, contracted = parse_einsum_spec(node.attr("spec"), len(node.inputs))
    dims: dict[str, int] = {}
    for term, inp in zip(terms, node.inputs):
        for letter, d in zip(term, g.shape(inp)):
            dims[letter] = d
    out_shape = tuple(dims[l] for l in out_letters)
    con_shape = tuple(dims[l] for l in contracted)

    def maps(term: str, inp: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
        st = _strides(g.shape(inp))
        pos = {l: st[i] for i, l in enumerate(term)}
        o_out = tuple(pos.get(l, 0) for l in out_letters)
        o_con = tuple(pos.get(l, 0) for l in contracted)
        return o_out, o_con

    o1_out, o1_con = maps(terms[0], node.inputs[0])
    if len(terms) == 2:
        o2_out, o2_con = maps(terms[1], node.inputs[1])
        return [RunSpec(
            "mac2", _numel(out_shape), max(_numel(con_shape), 1),
            op1=node.inputs[0], op2=node.inputs[1],
            o1_out=o1_out, o1_con=o1_con, o2_out=o2_out, o2_con=o2_con,
            out_shape=out_shape, con_shape=con_shape, out_tensor=node.name,
        )]
    return [RunSpec(
        "sum1", _numel(out_shape), max(_numel(con_shape), 1),
        op1=node.inputs[0], o1_out=o1_out, o1_con=o1_con,
        out_shape=out_shape, con_shape=con_shape, out_tensor=node.name,
    )]


def node_runs(g: Graph, node: Node) -> list[RunSpec]:
    """Chain layout for one reduced node.  Wiring ops and consts emit none."""
    op = node.op
    if op == "einsum":
        return _einsum_runs(g, node)
    if op in ("add", "sub", "mul"):
        shape = g.shape(node.name)
        return [RunSpec(
            "elem", _numel(shape), 1, gate=_ELEM_GATES[op],
            lhs=node.inputs[0], rhs=node.inputs[1],
            bcast=node.attr("bcast", "none"), out_shape=shape, out_tensor=node.name,
        )]
    if op == "nonlinear" or op == "rescale":
        fn = node.attr("fn") if op == "nonlinear" else "rescale_div"
        return [RunSpec(
            "lookup", _numel(g.shape(node.name)), 1, fn=fn,
            src=node.inputs[0], out_tensor=node.name,
        )]
    if op == "gather":
        table, idx = node.inputs
        v, e = g.shape(table)
        t = g.shape(idx)[0]
        oh = f"{node.name}:onehot"
        ar = f"{node.name}:arange"
        return [
            RunSpec("bool", t * v, 1, out_shape=(t, v), out_tensor=oh),
            # each one-hot row sums to exactly 1
            RunSpec("sum1", t, v, op1=oh, o1_out=(v,), o1_con=(1,),
                    out_shape=(t,), con_shape=(v,), bind=("const", 1)),
            # sum_v onehot[t,v]*v must equal the public index cell
            RunSpec("mac2", t, v, op1=oh, op2=ar,
                    o1_out=(v,), o1_con=(1,), o2_out=(0,), o2_con=(1,),
                    out_shape=(t,), con_shape=(v,), bind=("tensor", idx)),
            # selected table row: onehot (t,v) x table (v,e) -> (t,e)
            RunSpec("mac2", t * e, v, op1=oh, op2=table,
                    o1_out=(v, 0), o1_con=(1,), o2_out=(0, 1), o2_con=(e,),
                    out_shape=(t, e), con_shape=(v,), out_tensor=node.name),
        ]
    return []


# Homes ----------------------------------------------------------------------


class RunHome:
    """Tensor homed at a run's chain-end c cells."""

    def __init__(self, chain_len: int):
        self.chain_len = chain_len
        self.chain0s: np.ndarray = np.zeros(0, np.int64)
        self.segs: np.ndarray = np.zeros(0, np.int64)
        self.rows: np.ndarray = np.zeros(0, np.int64)

    def attach(self, placements: list["Placement"]) -> None:
        self.chain0s = np.array([p.chain0 for p in placements], np.int64)
        self.segs = np.array([p.seg for p in placements], np.int64)
        self.rows = np.array([p.row for p in placements], np.int64)

    def ids(self, idx: np.ndarray, cm: "CircuitMatrix") -> np.ndarray:
        j = np.searchsorted(self.chain0s, idx, side="right") - 1
        row = self.rows[j] + (idx - self.chain0s[j] + 1) * self.chain_len - 1
        return (self.segs[j] * 3 + 2) * cm.n_rows + row


class IoHome:
    def __init__(self, off: int):
        self.off = off

    def ids(self, idx: np.ndarray, cm: "CircuitMatrix") -> np.ndarray:
        return cm.io_base + self.off + idx


class WeightHome:
    def __init__(self, off: int):
        self.off = off

    def ids(self, idx: np.ndarray, cm: "CircuitMatrix") -> np.ndarray:
        return cm.weight_base + self.off + idx


class ConstHome:
    """Scalar constant: every element resolves to one fixed cell."""

    def __init__(self, value: int):
        self.value = value

    def ids(self, idx: np.ndarray, cm: "CircuitMatrix") -> np.ndarray:
        return np.full(np.shape(idx), cm.const_cell(self.value), np.int64)


class EyeHome:
    def __init__(self, shape: tuple[int, int]):
        self.shape = shape

    def ids(self, idx: np.ndarray, cm: "CircuitMatrix") -> np.ndarray:
        cols = self.shape[1]
        on_diag = (idx // cols) == (idx % cols)
        return np.where(on_diag, cm.const_cell(1), cm.const_cell(0))


class ArangeHome:
    """Pseudo-tensor 0..n-1 living in the fixed column (gather index chains)."""

    def __init__(self, n: int):
        self.n = n

    def ids(self, idx: np.ndarray, cm: "CircuitMatrix") -> np.ndarray:
        return cm.const_cells(np.asarray(idx, np.int64))


class ViewHome:
    """reshape / transpose / concat / maskfill: index transform, then delegate."""

    def __init__(self, node: Node, g: Graph, mask_value: int = 0):
        self.op = node.op
        self.srcs = node.inputs
        self.mask_value = mask_value
        if self.op == "transpose":
            self.in_shape = g.shape(node.inputs[0])
            self.perm = node.attr("perm")
            self.out_shape = tuple(self.in_shape[p] for p in self.perm)
        elif self.op == "concat":
            self.axis = node.attr("axis")
            self.out_shape = g.shape(node.name)
            sizes = [g.shape(s)[self.axis] for s in node.inputs]
            self.bounds = np.cumsum([0] + sizes)
            self.part_shapes = [g.shape(s) for s in node.inputs]
        elif self.op == "maskfill":
            self.out_shape = g.shape(node.name)

    def ids(self, idx: np.ndarray, cm: "CircuitMatrix") -> np.ndarray:
        idx = np.asarray(idx, np.int64)
        if self.op == "reshape":
            return cm.homes[self.srcs[0]].ids(idx, cm)
        if self.op == "transpose":
            oc = _coords(idx, self.out_shape)
            ic = [None] * len(self.perm)
            for j, p in enumerate(self.perm):
                ic[p] = oc[j]
            flat = np.ravel_multi_index(ic, self.in_shape)
            return cm.homes[self.srcs[0]].ids(flat, cm)
        if self.op == "maskfill":
            t, s = self.out_shape[-2], self.out_shape[-1]
            r = (idx // s) % t
            c = idx % s
            inner = cm.homes[self.srcs[0]].ids(idx, cm)
            return np.where(c > r, cm.const_cell(self.mask_value), inner)
        # concat
        oc = _coords(idx, self.out_shape)
        ax = oc[self.axis]
        part = np.searchsorted(self.bounds, ax, side="right") - 1
        out = np.empty(idx.shape, np.int64)
        for p, src in enumerate(self.srcs):
            m = part == p
            if not m.any():
                continue
            pc = [c[m] for c in oc]
            pc[self.axis] = pc[self.axis] - self.bounds[p]
            flat = np.ravel_multi_index(pc, self.part_shapes[p])
            out[m] = cm.homes[src].ids(flat, cm)
        return out


# Layout ---------------------------------------------------------------------


@dataclass(frozen=True)
class Placement:
    node_idx: int
    run_idx: int
    chain0: int
    n_chains: int
    seg: int
    row: int

    def rows_spanned(self, chain_len: int) -> int:
        return self.n_chains * chain_len


@dataclass
class Counts:
    gates: int = 0
    lookups: int = 0
    copies: int = 0
    used_cells: int = 0
    rows_assigned: int = 0
    by_op: dict = dc_field(default_factory=dict)

    @property
    def constraints(self) -> int:
        return self.gates + self.lookups + self.copies


@dataclass
class CircuitMatrix:
    graph: Graph
    cfg: QuantConfig
    row_cap: Optional[int]
    n_rows: int
    n_segments: int
    runs_by_node: list  # [(node, [RunSpec, ...]), ...]
    placements: list  # [Placement] in layout order
    homes: dict
    scales: dict
    weight_map: dict  # weight node name -> flat offset
    total_weights: int
    io_map: dict  # tensor -> flat offset
    io_len: int
    const_values: np.ndarray  # sorted signed int64
    counts: Counts
    out_binds: list  # [(tensor, io offset)] output home -> instance copies
    _seg_index: list = dc_field(default_factory=list)  # per seg: (row starts, placements)
    _tables: dict = dc_field(default_factory=dict)

    # id spaces: advice cells first, then weights, io, constants
    @property
    def weight_base(self) -> int:
        return 3 * self.n_segments * self.n_rows

    @property
    def io_base(self) -> int:
        # weight columns are committed padded to full height
        return self.weight_base + self.n_weight_cols * self.n_rows

    @property
    def const_base(self) -> int:
        return self.io_base + self.io_len

    @property
    def n_weight_cols(self) -> int:
        return -(-self.total_weights // self.n_rows) if self.total_weights else 0

    @property
    def n_instance_cols(self) -> int:
        return -(-self.io_len // self.n_rows) if self.io_len else 0

    @property
    def constraints(self) -> int:
        return self.counts.constraints

    @property
    def params(self) -> int:
        return self.total_weights

    @property
    def ratio(self) -> float:
        if self.total_weights == 0:
            raise CircuitError("constraint/parameter ratio undefined: N = 0")
        return self.counts.constraints / self.total_weights

    def const_cell(self, value: int) -> int:
        pos = int(np.searchsorted(self.const_values, value))
        if pos >= len(self.const_values) or self.const_values[pos] != value:
            raise CircuitError(f"constant {value} not in fixed column")
        return self.const_base + pos

    def const_cells(self, values: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.const_values, values)
        if (pos >= len(self.const_values)).any() or (self.const_values[pos] != values).any():
            raise CircuitError("constant missing from fixed column")
        return self.const_base + pos

    def tensor_cell_ids(self, name: str) -> np.ndarray:
        """Global cell ids holding each element of a tensor, row-major."""
        n = _numel(self.graph.shape(name))
        return self.homes[name].ids(np.arange(n, dtype=np.int64), self)

    def lookup_table(self, fn: str):
        if fn not in self._tables:
            self._tables[fn] = build_lookup(fn, self.cfg)
        return self._tables[fn]

    def run_of(self, pl: Placement) -> RunSpec:
        return self.runs_by_node[pl.node_idx][1][pl.run_idx]

    def placement_at(self, seg: int, row: int) -> Optional[Placement]:
        starts, pls = self._seg_index[seg]
        i = bisect_right(starts, row) - 1
        if i < 0:
            return None
        pl = pls[i]
        if row < pl.row + pl.rows_spanned(self.run_of(pl).chain_len):
            return pl
        return None


def compile_graph(g: Graph, cfg: QuantConfig, row_cap: Optional[int] = None) -> CircuitMatrix:
    """Place every reduced node into the cell matrix and count constraints.

    Counting only: no witness values are produced here.  Composite graphs
    are reduced first (no-op when already reduced).
    """
    g = reduce_graph(g, cfg)
    scales = infer_scales(g)
    if row_cap is not None:
        if row_cap < 4 or row_cap & (row_cap - 1):
            raise CircuitError(f"row cap must be a power of two >= 4, got {row_cap}")

    runs_by_node = [(n, node_runs(g, n)) for n in g.nodes]

    # fixed-column constants
    const_set = {0, 1}
    for n in g.nodes:
        if n.op == "maskfill":
            const_set.add(cfg.mask_value)
        elif n.op == "gather":
            const_set.update(range(g.shape(n.inputs[0])[0]))
        elif n.op == "const" and n.attr("kind") == "scalar":
            const_set.add(n.attr("value"))
    const_values = np.array(sorted(const_set), np.int64)

    # weight region, graph order, flattened row-major
    weight_map: dict[str, int] = {}
    w_off = 0
    for n in g.nodes:
        if n.op == "const" and n.attr("kind") == "weight":
            weight_map[n.name] = w_off
            w_off += _numel(g.shape(n.name))

    # instance region: inputs then outputs
    io_map: dict[str, int] = {}
    io_off = 0
    for name in list(g.inputs) + list(g.outputs):
        io_map[name] = io_off
        io_off += _numel(g.shape(name))

    # place chains first-fit in node order; chains are atomic
    placements: list[Placement] = []
    seg, row = 0, 0
    counts = Counts()
    run_placements: dict[tuple[int, int], list[Placement]] = {}
    for ni, (node, runs) in enumerate(runs_by_node):
        for ri, run in enumerate(runs):
            ln = run.chain_len
            if row_cap is not None and ln > row_cap:
                raise CircuitError(
                    f"region does not fit: node {node.name} needs a contiguous "
                    f"chain of {ln} rows but the row cap is {row_cap}"
                )
            left, c0 = run.n_chains, 0
            while left:
                fit = left if row_cap is None else (row_cap - row) // ln
                if fit == 0:
                    seg += 1
                    row = 0
                    continue
                take = min(left, fit)
                pl = Placement(ni, ri, c0, take, seg, row)
                placements.append(pl)
                run_placements.setdefault((ni, ri), []).append(pl)
                row += take * ln
                left -= take
                c0 += take
            rc = _run_counts(run)
            counts.gates += rc["gates"]
            counts.lookups += rc["lookups"]
            counts.copies += rc["copies"]
            counts.used_cells += rc["used"]
            counts.rows_assigned += rc["rows"]
            agg = counts.by_op.setdefault(node.op, dict(rows=0, gates=0, lookups=0, copies=0))
            agg["rows"] += rc["rows"]
            agg["gates"] += rc["gates"]
            agg["lookups"] += rc["lookups"]
            agg["copies"] += rc["copies"]

    n_segments = seg + 1
    if row_cap is not None:
        # an explicit cap fixes the committed height exactly, even when it
        # exceeds what the regions need: padding rows are still committed
        n_rows = row_cap
    else:
        n_rows = next_pow2(max(counts.rows_assigned, 4))

    # homes
    homes: dict[str, object] = {}
    for name in g.inputs:
        homes[name] = IoHome(io_map[name])
    for ni, (node, runs) in enumerate(runs_by_node):
        if node.op == "const":
            kind = node.attr("kind")
            if kind == "weight":
                homes[node.name] = WeightHome(weight_map[node.name])
            elif kind == "eye":
                homes[node.name] = EyeHome(g.shape(node.name))
            else:
                homes[node.name] = ConstHome(node.attr("value"))
        elif node.op in ("reshape", "transpose", "concat"):
            homes[node.name] = ViewHome(node, g)
        elif node.op == "maskfill":
            homes[node.name] = ViewHome(node, g, mask_value=cfg.mask_value)
        else:
            for ri, run in enumerate(runs):
                if not run.out_tensor:
                    continue
                h = RunHome(run.chain_len)
                h.attach(run_placements[(ni, ri)])
                homes[run.out_tensor] = h
            if node.op == "gather":
                homes[f"{node.name}:arange"] = ArangeHome(g.shape(node.inputs[0])[0])

    # instance copies binding each output's home cells to the io region
    out_binds = [(name, io_map[name]) for name in g.outputs]
    for name in g.outputs:
        counts.copies += _numel(g.shape(name))

    # per-segment interval index for row -> placement resolution
    seg_index: list[tuple[list[int], list[Placement]]] = [([], []) for _ in range(n_segments)]
    for pl in placements:
        seg_index[pl.seg][0].append(pl.row)
        seg_index[pl.seg][1].append(pl)

    return CircuitMatrix(
        graph=g, cfg=cfg, row_cap=row_cap, n_rows=n_rows, n_segments=n_segments,
        runs_by_node=runs_by_node, placements=placements, homes=homes, scales=scales,
        weight_map=weight_map, total_weights=w_off, io_map=io_map, io_len=io_off,
        const_values=const_values, counts=counts, out_binds=out_binds,
        _seg_index=seg_index,
    )


# Witness --------------------------------------------------------------------


@dataclass
class Witness:
    """Full private assignment: advice segments, weight columns, io, constants.

    All cells are field-encoded uint64.  The fixed column is included for
    convenience but is public (derivable from the graph), and the io vector
    is the public instance; private bytes are advice + weight columns.
    """

    advice: list  # per segment: (3, n_rows) uint64
    weight_cols: np.ndarray  # (W, n_rows) uint64
    io: np.ndarray  # (io_len,) uint64
    const_col: np.ndarray  # uint64
    n_rows: int
    saturations: dict
    warnings: list
    _flat: Optional[np.ndarray] = None

    def flat(self) -> np.ndarray:
        if self._flat is None:
            parts = [np.vstack(self.advice).ravel()] if self.advice else []
            parts += [self.weight_cols.ravel(), self.io, self.const_col]
            self._flat = np.concatenate(parts)
        return self._flat

    def value_at(self, ids: np.ndarray) -> np.ndarray:
        return self.flat()[np.asarray(ids, np.int64)]

    @property
    def private_bytes(self) -> int:
        return 8 * (3 * len(self.advice) * self.n_rows + self.weight_cols.size)

    @property
    def total_bytes(self) -> int:
        return self.private_bytes + 8 * self.io.size


def _mac_sources(run: RunSpec, pl: Placement) -> tuple[np.ndarray, np.ndarray]:
    """Flat source indices (n_chains, L) into op1/op2 for a mac2/sum1 slice."""
    q = np.arange(pl.chain0, pl.chain0 + pl.n_chains, dtype=np.int64)
    l = np.arange(run.chain_len, dtype=np.int64)
    oc = _coords(q, run.out_shape)
    cc = _coords(l, run.con_shape)

    def flat(o_out: tuple, o_con: tuple) -> np.ndarray:
        base = np.zeros(q.shape, np.int64)
        for st, c in zip(o_out, oc):
            if st:
                base = base + st * c
        pos = np.zeros(l.shape, np.int64)
        for st, c in zip(o_con, cc):
            if st:
                pos = pos + st * c
        return base[:, None] + pos[None, :]

    a = flat(run.o1_out, run.o1_con)
    b = flat(run.o2_out, run.o2_con) if run.tag == "mac2" else np.zeros_like(a)
    return a, b


def _elem_rhs_index(run: RunSpec, i: np.ndarray, rhs_numel: int) -> np.ndarray:
    if run.bcast == "scalar":
        return np.zeros_like(i)
    if run.bcast == "keep":
        return i // run.out_shape[-1]
    if run.bcast == "last":
        return i % rhs_numel
    return i


def _guard(arr: np.ndarray) -> None:
    if arr.size and max(arr.max(), -arr.min()) >= _ACC_GUARD:
        raise CircuitError("accumulator overflow while building witness")


def gen_witness(cm: CircuitMatrix, weights: dict, inputs: dict) -> Witness:
    """Evaluate the graph and scatter the trace into matrix cells."""
    g, cfg = cm.graph, cm.cfg
    res = evaluate(g, cfg, weights, inputs)
    trace = dict(res.tensors)
    warnings = []
    if res.total_saturated:
        warnings.append(
            f"{res.total_saturated} cell(s) saturated to the window edge; "
            "lookup rows reading them will not verify"
        )

    for node in g.nodes:
        if node.op == "gather":
            v = g.shape(node.inputs[0])[0]
            idxv = trace[node.inputs[1]]
            oh = np.zeros((idxv.shape[0], v), np.int64)
            oh[np.arange(idxv.shape[0]), idxv] = 1
            trace[f"{node.name}:onehot"] = oh
            trace[f"{node.name}:arange"] = np.arange(v, dtype=np.int64)

    n = cm.n_rows
    advice = [np.zeros((3, n), np.uint64) for _ in range(cm.n_segments)]

    for pl in cm.placements:
        run = cm.run_of(pl)
        r0 = pl.row
        span = pl.rows_spanned(run.chain_len)
        a_col, b_col, c_col = advice[pl.seg]
        if run.tag in ("mac2", "sum1"):
            ai, bi = _mac_sources(run, pl)
            a = trace[run.op1].reshape(-1)[ai]
            if run.tag == "mac2":
                b = trace[run.op2].reshape(-1)[bi]
                prod = a * b
                _guard(prod)
                c = np.cumsum(prod, axis=1)
            else:
                b = np.zeros_like(a)
                c = np.cumsum(a, axis=1)
            _guard(c)
            a_col[r0:r0 + span] = encode_array(a.ravel())
            b_col[r0:r0 + span] = encode_array(b.ravel())
            c_col[r0:r0 + span] = encode_array(c.ravel())
        elif run.tag == "elem":
            i = np.arange(pl.chain0, pl.chain0 + pl.n_chains, dtype=np.int64)
            a = trace[run.lhs].reshape(-1)[i]
            rhs = trace[run.rhs].reshape(-1)
            b = rhs[_elem_rhs_index(run, i, rhs.size)]
            c = a + b if run.gate == GATE_ADD else a - b if run.gate == GATE_SUB else a * b
            _guard(c)
            a_col[r0:r0 + span] = encode_array(a)
            b_col[r0:r0 + span] = encode_array(b)
            c_col[r0:r0 + span] = encode_array(c)
        elif run.tag == "lookup":
            i = np.arange(pl.chain0, pl.chain0 + pl.n_chains, dtype=np.int64)
            a_col[r0:r0 + span] = encode_array(trace[run.src].reshape(-1)[i])
            c_col[r0:r0 + span] = encode_array(trace[run.out_tensor].reshape(-1)[i])
        elif run.tag == "bool":
            i = np.arange(pl.chain0, pl.chain0 + pl.n_chains, dtype=np.int64)
            c_col[r0:r0 + span] = encode_array(trace[run.out_tensor].reshape(-1)[i])

    w_flat = np.zeros(cm.n_weight_cols * n, np.int64)
    for node_name, off in cm.weight_map.items():
        vals = trace[node_name].reshape(-1)
        w_flat[off:off + vals.size] = vals
    weight_cols = encode_array(w_flat).reshape(cm.n_weight_cols, n)

    io = np.zeros(cm.io_len, np.int64)
    for name in list(g.inputs) + list(g.outputs):
        off = cm.io_map[name]
        vals = trace[name].reshape(-1)
        io[off:off + vals.size] = vals

    return Witness(
        advice=advice, weight_cols=weight_cols, io=encode_array(io),
        const_col=encode_array(cm.const_values.copy()), n_rows=n,
        saturations=dict(res.saturations), warnings=warnings,
    )


# Selector codes and structural masks -----------------------------------------


def selector_codes(cm: CircuitMatrix) -> tuple[list, list]:
    """Per segment: gate code array and lookup fn code array (-1 = none)."""
    gates = [np.zeros(cm.n_rows, np.int8) for _ in range(cm.n_segments)]
    lookups = [np.full(cm.n_rows, -1, np.int8) for _ in range(cm.n_segments)]
    for pl in cm.placements:
        run = cm.run_of(pl)
        r0, span = pl.row, pl.rows_spanned(run.chain_len)
        gseg = gates[pl.seg]
        if run.tag == "mac2":
            gseg[r0:r0 + span] = GATE_MAC
            gseg[r0:r0 + span:run.chain_len] = GATE_MUL
        elif run.tag == "sum1":
            gseg[r0:r0 + span] = GATE_SUM
            gseg[r0:r0 + span:run.chain_len] = GATE_NONE  # init row: a copy-bound to c
        elif run.tag == "elem":
            gseg[r0:r0 + span] = run.gate
        elif run.tag == "bool":
            gseg[r0:r0 + span] = GATE_BOOL
        else:
            lookups[pl.seg][r0:r0 + span] = _LOOKUP_CODE[run.fn]
    return gates, lookups


def used_cell_mask(cm: CircuitMatrix) -> list:
    """Per segment (3, n_rows) bool mask of load-bearing advice cells."""
    masks = [np.zeros((3, cm.n_rows), bool) for _ in range(cm.n_segments)]
    for pl in cm.placements:
        run = cm.run_of(pl)
        r0, span = pl.row, pl.rows_spanned(run.chain_len)
        m = masks[pl.seg]
        if run.tag in ("mac2", "elem"):
            m[:, r0:r0 + span] = True
        elif run.tag == "sum1":
            m[0, r0:r0 + span] = True
            m[2, r0:r0 + span] = True
        elif run.tag == "lookup":
            m[0, r0:r0 + span] = True
            m[2, r0:r0 + span] = True
        else:  # bool
            m[2, r0:r0 + span] = True
    return masks


# Constraint checking ---------------------------------------------------------


@dataclass
class CheckReport:
    ok: bool
    kind: str = "none"  # gate-violation | lookup-violation | copy-violation
    detail: str = ""


def _check_gates(cm: CircuitMatrix, wit: Witness) -> Optional[CheckReport]:
    gates, _ = selector_codes(cm)
    one = np.uint64(1)
    for s in range(cm.n_segments):
        a, b, c = wit.advice[s]
        cp = np.zeros_like(c)
        cp[1:] = c[:-1]
        codes = gates[s]
        fails = np.zeros(cm.n_rows, bool)
        for code, expr in (
            (GATE_MUL, lambda i: f_mul(a[i], b[i]) != c[i]),
            (GATE_MAC, lambda i: f_add(cp[i], f_mul(a[i], b[i])) != c[i]),
            (GATE_SUM, lambda i: f_add(cp[i], a[i]) != c[i]),
            (GATE_ADD, lambda i: f_add(a[i], b[i]) != c[i]),
            (GATE_SUB, lambda i: f_sub(a[i], b[i]) != c[i]),
            (GATE_BOOL, lambda i: f_mul(c[i], f_sub(c[i], one)) != 0),
        ):
            i = np.flatnonzero(codes == code)
            if i.size:
                fails[i[expr(i)]] = True
        bad = np.flatnonzero(fails)
        if bad.size:
            r = int(bad[0])
            name = GATE_NAMES[codes[r]]
            return CheckReport(False, "gate-violation", f"segment {s} row {r} gate {name}")
    return None


def _check_lookups(cm: CircuitMatrix, wit: Witness) -> Optional[CheckReport]:
    cfg = cm.cfg
    for pl in cm.placements:
        run = cm.run_of(pl)
        if run.tag != "lookup":
            continue
        r0, span = pl.row, pl.rows_spanned(1)
        a = decode_array(wit.advice[pl.seg][0, r0:r0 + span])
        c = decode_array(wit.advice[pl.seg][2, r0:r0 + span])
        table = cm.lookup_table(run.fn)
        oob = (a < cfg.range_min) | (a > cfg.range_max)
        expect = table.outputs[np.clip(a, cfg.range_min, cfg.range_max) - cfg.range_min]
        bad = np.flatnonzero(oob | (expect != c))
        if bad.size:
            r = r0 + int(bad[0])
            return CheckReport(
                False, "lookup-violation",
                f"segment {pl.seg} row {r} fn {run.fn}: (input, output) pair not in table",
            )
    return None


def _placement_copies(cm: CircuitMatrix, pl: Placement) -> list:
    """Copy constraints for one placement: (own cell ids, source cell ids, label)."""
    run = cm.run_of(pl)
    n, base = cm.n_rows, pl.seg * 3
    r0 = pl.row
    span = pl.rows_spanned(run.chain_len)
    rows = np.arange(r0, r0 + span, dtype=np.int64)
    out: list = []

    def own(col: int, rr: np.ndarray) -> np.ndarray:
        return (base + col) * n + rr

    if run.tag in ("mac2", "sum1"):
        ai, bi = _mac_sources(run, pl)
        out.append((own(0, rows), cm.homes[run.op1].ids(ai.ravel(), cm), "a operand"))
        if run.tag == "mac2":
            out.append((own(1, rows), cm.homes[run.op2].ids(bi.ravel(), cm), "b operand"))
        else:
            init = rows[::run.chain_len]
            out.append((own(2, init), own(0, init), "sum chain init"))
        if run.bind is not None:
            ends = rows[run.chain_len - 1::run.chain_len]
            q = np.arange(pl.chain0, pl.chain0 + pl.n_chains, dtype=np.int64)
            if run.bind[0] == "const":
                tgt = np.full(q.shape, cm.const_cell(run.bind[1]), np.int64)
            else:
                tgt = cm.homes[run.bind[1]].ids(q, cm)
            out.append((own(2, ends), tgt, "chain-end bind"))
    elif run.tag == "elem":
        i = np.arange(pl.chain0, pl.chain0 + pl.n_chains, dtype=np.int64)
        rhs_n = _numel(cm.graph.shape(run.rhs))
        out.append((own(0, rows), cm.homes[run.lhs].ids(i, cm), "a operand"))
        out.append((own(1, rows), cm.homes[run.rhs].ids(_elem_rhs_index(run, i, rhs_n), cm), "b operand"))
    elif run.tag == "lookup":
        i = np.arange(pl.chain0, pl.chain0 + pl.n_chains, dtype=np.int64)
        out.append((own(0, rows), cm.homes[run.src].ids(i, cm), "lookup input"))
    return out


def _check_copies(cm: CircuitMatrix, wit: Witness) -> Optional[CheckReport]:
    flat = wit.flat()
    for pl in cm.placements:
        for own_ids, src_ids, label in _placement_copies(cm, pl):
            bad = np.flatnonzero(flat[own_ids] != flat[src_ids])
            if bad.size:
                node = cm.runs_by_node[pl.node_idx][0].name
                return CheckReport(
                    False, "copy-violation",
                    f"node {node} ({label}) cell {int(own_ids[bad[0]])} != source",
                )
    for name, off in cm.out_binds:
        ids = cm.tensor_cell_ids(name)
        io_ids = cm.io_base + off + np.arange(ids.size)
        bad = np.flatnonzero(flat[ids] != flat[io_ids])
        if bad.size:
            return CheckReport(
                False, "copy-violation",
                f"output {name} element {int(bad[0])} != instance cell",
            )
    return None


def satisfies_all(cm: CircuitMatrix, wit: Witness) -> CheckReport:
    """Check every gate, lookup and copy constraint; report the first failure.

    Scan order is gates, then lookups, then copies, each in layout order.
    """
    for check in (_check_gates, _check_lookups, _check_copies):
        rep = check(cm, wit)
        if rep is not None:
            return rep
    return CheckReport(True)


# Row metadata for spot checks -------------------------------------------------


@dataclass
class RowSpec:
    """Constraints touching one row, for sampled verification."""

    gate: int = GATE_NONE
    lookup_fn: str = ""
    uses_prev_c: bool = False
    copies: list = dc_field(default_factory=list)  # (own id, src id, label)


def row_spec(cm: CircuitMatrix, seg: int, row: int) -> RowSpec:
    pl = cm.placement_at(seg, row)
    spec = RowSpec()
    if pl is None:
        return spec
    run = cm.run_of(pl)
    n, base = cm.n_rows, seg * 3
    off = row - pl.row
    pos = off % run.chain_len
    chain = pl.chain0 + off // run.chain_len
    own_a = (base + 0) * n + row
    own_b = (base + 1) * n + row
    own_c = (base + 2) * n + row

    if run.tag in ("mac2", "sum1"):
        sub = Placement(pl.node_idx, pl.run_idx, chain, 1, seg, row - pos)
        ai, bi = _mac_sources(run, sub)
        spec.copies.append((own_a, int(cm.homes[run.op1].ids(ai[0, pos:pos + 1], cm)[0]), "a operand"))
        if run.tag == "mac2":
            spec.gate = GATE_MUL if pos == 0 else GATE_MAC
            spec.copies.append((own_b, int(cm.homes[run.op2].ids(bi[0, pos:pos + 1], cm)[0]), "b operand"))
        else:
            spec.gate = GATE_NONE if pos == 0 else GATE_SUM
            if pos == 0:
                spec.copies.append((own_c, own_a, "sum chain init"))
        spec.uses_prev_c = spec.gate in (GATE_MAC, GATE_SUM)
        if run.bind is not None and pos == run.chain_len - 1:
            if run.bind[0] == "const":
                tgt = cm.const_cell(run.bind[1])
            else:
                tgt = int(cm.homes[run.bind[1]].ids(np.array([chain], np.int64), cm)[0])
            spec.copies.append((own_c, tgt, "chain-end bind"))
    elif run.tag == "elem":
        spec.gate = run.gate
        i = np.array([chain], np.int64)
        rhs_n = _numel(cm.graph.shape(run.rhs))
        spec.copies.append((own_a, int(cm.homes[run.lhs].ids(i, cm)[0]), "a operand"))
        spec.copies.append((own_b, int(cm.homes[run.rhs].ids(_elem_rhs_index(run, i, rhs_n), cm)[0]), "b operand"))
    elif run.tag == "lookup":
        spec.lookup_fn = run.fn
        i = np.array([chain], np.int64)
        spec.copies.append((own_a, int(cm.homes[run.src].ids(i, cm)[0]), "lookup input"))
    else:
        spec.gate = GATE_BOOL
    return spec


# Profiling --------------------------------------------------------------------


def profile_report(cm: CircuitMatrix, name: str = "circuit") -> str:
    """Structured text summary of the compiled matrix."""
    c = cm.counts
    try:
        ratio = f"{cm.ratio:.2f}"
    except CircuitError:
        ratio = "undefined (N = 0)"
    cols = 3 * cm.n_segments + cm.n_weight_cols + cm.n_instance_cols + 1
    lines = [
        f"circuit profile: {name}",
        f"  quantization        f={cm.cfg.scale_bits} window={cm.cfg.lookup_bits} bits",
        f"  rows assigned       {c.rows_assigned}",
        f"  rows committed      {cm.n_rows} x {cm.n_segments} segment(s)",
        f"  columns             {cols} (advice {3 * cm.n_segments}, weight {cm.n_weight_cols}, "
        f"instance {cm.n_instance_cols}, fixed 1)",
        f"  constraints M       {c.constraints}",
        f"    gate rows         {c.gates}",
        f"    lookups           {c.lookups}",
        f"    copies            {c.copies}",
        f"  params N            {cm.total_weights}",
        f"  M / N               {ratio}",
        "  per-op rows         "
        + " ".join(f"{op}={d['rows']}" for op, d in sorted(cm.counts.by_op.items())),
    ]
    return "\n".join(lines)
