"""Composite-op lowering and the fixed-point scale checker.

`reduce_graph` rewrites softmax/layernorm into reduced-op chains, drops
rate-0 dropout nodes, and leaves already-reduced graphs unchanged, so it is
idempotent. All emitted intermediates are named '<node>:<step>' to stay clear
of user tensor names.

Softmax over the last axis, row x of length s (all values at scale 2**f):

    exp -> row-sum -> recip -> mul(keep) -> rescale

There is no max-subtraction pass; the exponential lookup window has to absorb
the raw scores. Layernorm uses the mean trick round(2**f/n) as a scalar
multiplier, keeps the variance at scale 2**(2f) so the inverse-sqrt lookup can
read it at that scale, and adds an epsilon of one raw unit at 2**(2f).
"""

from __future__ import annotations

import string

from .field import QuantConfig, round_half_away
from .graph import (
    COMPOSITE_OPS,
    Graph,
    GraphError,
    Node,
    TensorDecl,
    infer_shape,
    make_attrs,
    parse_einsum_spec,
)


def _sum_last_spec(rank: int) -> str:
    letters = string.ascii_lowercase[:rank]
    return f"{letters}->{letters[:-1]}"


class _Builder:
    def __init__(self, tensors: dict[str, TensorDecl]):
        self.tensors = dict(tensors)
        self.new_nodes: list[Node] = []

    def emit(self, name: str, op: str, inputs: tuple[str, ...], **attrs) -> str:
        node = Node(name, op, inputs, make_attrs(**attrs))
        decls = [self.tensors[i] for i in inputs]
        shape = infer_shape(op, node, decls)
        if name in self.tensors:
            raise GraphError(f"redefined tensor {name!r} during lowering")
        self.tensors[name] = TensorDecl(name, "fix", shape)
        self.new_nodes.append(node)
        return name

    def const_scalar(self, name: str, value: int, scale: int) -> str:
        self.tensors[name] = TensorDecl(name, "fix", ())
        self.new_nodes.append(Node(name, "const", (), make_attrs(kind="scalar", value=value, scale=scale)))
        return name


def _lower_softmax(b: _Builder, n: Node) -> str:
    x = n.inputs[0]
    rank = len(b.tensors[x].shape)
    e = b.emit(f"{n.name}:exp", "nonlinear", (x,), fn="exp")
    if rank == 1:
        s = b.emit(f"{n.name}:den", "einsum", (e,), spec="a->")
        r = b.emit(f"{n.name}:inv", "nonlinear", (s,), fn="recip")
        p = b.emit(f"{n.name}:prod", "mul", (e, r), bcast="scalar")
    else:
        s = b.emit(f"{n.name}:den", "einsum", (e,), spec=_sum_last_spec(rank))
        r = b.emit(f"{n.name}:inv", "nonlinear", (s,), fn="recip")
        p = b.emit(f"{n.name}:prod", "mul", (e, r), bcast="keep")
    return p  # caller rescales into the node's own name


def _lower_layernorm(b: _Builder, n: Node, cfg: QuantConfig) -> None:
    x, gamma, beta = n.inputs
    rank = len(b.tensors[x].shape)
    width = b.tensors[x].shape[-1]
    c_n = b.const_scalar(f"{n.name}:cn", int(round_half_away(cfg.scale / width)), 1)
    eps = b.const_scalar(f"{n.name}:eps", 1, 2)
    spec = "a->" if rank == 1 else _sum_last_spec(rank)
    mode = "scalar" if rank == 1 else "keep"

    s = b.emit(f"{n.name}:sum", "einsum", (x,), spec=spec)
    m1 = b.emit(f"{n.name}:mraw", "mul", (s, c_n), bcast="scalar")
    mu = b.emit(f"{n.name}:mean", "rescale", (m1,))
    d = b.emit(f"{n.name}:dev", "sub", (x, mu), bcast=mode)
    d2 = b.emit(f"{n.name}:dev2", "mul", (d, d), bcast="none")
    s2 = b.emit(f"{n.name}:vsum", "einsum", (d2,), spec=spec)
    v1 = b.emit(f"{n.name}:vraw", "mul", (s2, c_n), bcast="scalar")
    va = b.emit(f"{n.name}:var", "rescale", (v1,))
    ve = b.emit(f"{n.name}:vare", "add", (va, eps), bcast="scalar")
    iv = b.emit(f"{n.name}:isd", "nonlinear", (ve,), fn="rsqrt")
    n1 = b.emit(f"{n.name}:nraw", "mul", (d, iv), bcast=mode)
    nd = b.emit(f"{n.name}:norm", "rescale", (n1,))
    g1 = b.emit(f"{n.name}:graw", "mul", (nd, gamma), bcast="last")
    gs = b.emit(f"{n.name}:gsc", "rescale", (g1,))
    b.emit(n.name, "add", (gs, beta), bcast="last")


def reduce_graph(g: Graph, cfg: QuantConfig) -> Graph:
    """Rewrite composites into reduced ops. Idempotent."""
    if not any(n.op in COMPOSITE_OPS for n in g.nodes):
        return g

    b = _Builder({k: v for k, v in g.tensors.items()})
    alias: dict[str, str] = {}
    b.new_nodes = []
    out_nodes: list[Node] = []

    for n in g.nodes:
        ins = tuple(alias.get(i, i) for i in n.inputs)
        if n.op == "dropout":  # rate 0: plain identity, drop the node
            alias[n.name] = ins[0]
            b.tensors.pop(n.name, None)
            continue
        if n.op == "softmax":
            b.new_nodes = []
            saved = b.tensors.pop(n.name)
            prod = _lower_softmax(b, Node(n.name, n.op, ins, n.attrs))
            b.tensors[n.name] = saved
            b.new_nodes.append(Node(n.name, "rescale", (prod,)))
            out_nodes.extend(b.new_nodes)
            continue
        if n.op == "layernorm":
            b.new_nodes = []
            saved = b.tensors.pop(n.name)
            del saved
            _lower_layernorm(b, Node(n.name, n.op, ins, n.attrs), cfg)
            out_nodes.extend(b.new_nodes)
            continue
        if ins != n.inputs:
            n = Node(n.name, n.op, ins, n.attrs)
        out_nodes.append(n)
        b.tensors.setdefault(n.name, g.tensors[n.name])

    outputs = tuple(alias.get(o, o) for o in g.outputs)
    live = {t.name for t in b.tensors.values()}
    for o in outputs:
        if o not in live:
            raise GraphError(f"output {o!r} lost during lowering")
    return Graph(tensors=b.tensors, inputs=g.inputs, outputs=outputs, nodes=tuple(out_nodes), version=g.version)


# Scale checking ------------------------------------------------------------

SCALE_UNITS = (0, 1, 2, 3)  # tensor scales are 2**(f*u) for u in this set


def infer_scales(g: Graph) -> dict[str, int]:
    """Per-tensor scale exponents (units of the base fraction bits).

    Raises GraphError when a node would read operands at the wrong scale or
    push a product past 2**(3f). Graphs must be reduced first.
    """
    scales: dict[str, int] = {}
    for i in g.inputs:
        scales[i] = 1 if g.dtype(i) == "fix" else 0  # idx inputs carry raw ids

    def unit(name: str, node: str) -> int:
        if name not in scales:
            raise GraphError(f"scale error at node {node}: {name!r} has no scale")
        return scales[name]

    for n in g.nodes:
        if n.op == "const":
            kind = n.attr("kind")
            if kind == "weight":
                scales[n.name] = 1
            elif kind == "eye":
                scales[n.name] = 0
            else:
                scales[n.name] = n.attr("scale")
            continue
        if n.op in COMPOSITE_OPS:
            raise GraphError(f"scale error at node {n.name}: composite op, reduce first")
        if n.op == "einsum":
            _, _, _ = parse_einsum_spec(n.attr("spec"), len(n.inputs))
            u = sum(unit(i, n.name) for i in n.inputs)
        elif n.op == "mul":
            u = unit(n.inputs[0], n.name) + unit(n.inputs[1], n.name)
        elif n.op in ("add", "sub"):
            a, bb = (unit(i, n.name) for i in n.inputs)
            if a != bb:
                raise GraphError(f"scale error at node {n.name}: add/sub operands at {a} vs {bb}")
            u = a
        elif n.op == "gather":
            u = unit(n.inputs[0], n.name)
        elif n.op == "nonlinear":
            want = 2 if n.attr("fn") == "rsqrt" else 1
            got = unit(n.inputs[0], n.name)
            if got != want:
                raise GraphError(
                    f"scale error at node {n.name}: {n.attr('fn')} reads scale {want}, got {got}"
                )
            u = 1
        elif n.op == "rescale":
            got = unit(n.inputs[0], n.name)
            if got < 2:
                raise GraphError(f"scale error at node {n.name}: rescale from scale {got}")
            u = got - 1
        elif n.op == "maskfill":
            got = unit(n.inputs[0], n.name)
            if got != 1:
                raise GraphError(f"scale error at node {n.name}: maskfill reads scale 1, got {got}")
            u = 1
        else:  # wiring
            u = unit(n.inputs[0], n.name)
            if n.op == "concat":
                for i in n.inputs[1:]:
                    if unit(i, n.name) != u:
                        raise GraphError(f"scale error at node {n.name}: concat scale mismatch")
        if u not in SCALE_UNITS:
            raise GraphError(f"scale error at node {n.name}: scale exponent {u} out of range")
        scales[n.name] = u
    return scales
