"""Inference-graph IR and its line-oriented text format.

A graph file is UTF-8 text, one statement per line, '#' starts a comment:

    version 1
    tensor <name> <idx|fix> [d0 d1 ...]     # dtype and shape; scalars have no dims
    input <name>
    output <name>
    const <name> weight=<weight_name>       # weight-file-backed constant
    const <name> scalar=<int> scale=<0|1|2> # literal integer at scale 2**(f*scale)
    const <name> eye                        # leading rows of an identity matrix
    node <out> <op> [key=value ...] <in1> [in2 ...]

Tensors are declared before use; every tensor is an input or is produced by
exactly one const/node statement appearing before its first use, so a parsed file
is a DAG in statement order. 'fix' tensors hold fixed-point integers, 'idx'
tensors hold raw indices (token ids).

Arithmetic ops on the reduced set: einsum (spec=...), add, sub, mul (elementwise,
with an explicit bcast= mode), gather, relu/gelu/exp/recip/rsqrt (lookup
nonlinearities), rescale, maskfill (mode=causal), and wiring-only reshape
(dims=...), transpose (perm=...), concat (axis=...). Composite ops matmul,
softmax, layernorm and dropout (rate=0) also parse; matmul is normalized to
einsum immediately, the rest lower in `gridproof.lowering.reduce_graph`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

NONLINEAR_FNS = ("relu", "gelu", "exp", "recip", "rsqrt")
WIRING_OPS = ("reshape", "transpose", "concat")
REDUCED_OPS = (
    "const",
    "einsum",
    "add",
    "sub",
    "mul",
    "gather",
    "nonlinear",
    "rescale",
    "maskfill",
) + WIRING_OPS
COMPOSITE_OPS = ("softmax", "layernorm", "dropout")
BCAST_MODES = ("none", "scalar", "keep", "last")

FORMAT_VERSION = 1


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class TensorDecl:
    name: str
    dtype: str  # 'idx' | 'fix'
    shape: tuple[int, ...]


@dataclass(frozen=True)
class Node:
    name: str  # output tensor
    op: str
    inputs: tuple[str, ...]
    attrs: tuple[tuple[str, object], ...] = ()

    def attr(self, key: str, default=None):
        for k, v in self.attrs:
            if k == key:
                return v
        return default


def make_attrs(**kw) -> tuple[tuple[str, object], ...]:
    return tuple(sorted((k, v) for k, v in kw.items() if v is not None))


@dataclass
class Graph:
    tensors: dict[str, TensorDecl]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    nodes: tuple[Node, ...]
    version: int = FORMAT_VERSION

    def node_map(self) -> dict[str, Node]:
        return {n.name: n for n in self.nodes}

    def shape(self, name: str) -> tuple[int, ...]:
        return self.tensors[name].shape

    def dtype(self, name: str) -> str:
        return self.tensors[name].dtype

    def weight_names(self) -> tuple[str, ...]:
        out = []
        for n in self.nodes:
            if n.op == "const" and n.attr("kind") == "weight":
                out.append(n.attr("weight"))
        return tuple(out)


# Shape rules ---------------------------------------------------------------


def parse_einsum_spec(spec: str, n_inputs: int) -> tuple[list[str], str, list[str]]:
    """Returns (operand index strings, output string, contracted letters)."""
    if "->" not in spec:
        raise GraphError(f"unsupported einsum {spec!r}: missing '->'")
    lhs, out = spec.split("->", 1)
    ops = lhs.split(",")
    if len(ops) != n_inputs or len(ops) not in (1, 2):
        raise GraphError(f"unsupported einsum {spec!r}: need 1 or 2 operands")
    for term in ops + [out]:
        if not all(c.isalpha() and c.islower() for c in term):
            raise GraphError(f"unsupported einsum {spec!r}: bad index letters")
    for term in ops:
        if len(set(term)) != len(term):
            raise GraphError(f"unsupported einsum {spec!r}: repeated letter in one operand")
    seen = set("".join(ops))
    if not set(out) <= seen:
        raise GraphError(f"unsupported einsum {spec!r}: output letter not on any operand")
    if len(set(out)) != len(out):
        raise GraphError(f"unsupported einsum {spec!r}: repeated output letter")
    contracted = sorted(seen - set(out))
    if len(ops) == 2:
        for c in contracted:
            if not all(c in t for t in ops):
                raise GraphError(
                    f"unsupported einsum {spec!r}: contracted letter {c!r} must be on both operands"
                )
    return ops, out, contracted


def einsum_output_shape(spec: str, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    ops, out, _ = parse_einsum_spec(spec, len(in_shapes))
    dims: dict[str, int] = {}
    for term, shp in zip(ops, in_shapes):
        if len(term) != len(shp):
            raise GraphError(f"einsum {spec!r}: rank mismatch for operand shaped {shp}")
        for c, d in zip(term, shp):
            if dims.setdefault(c, d) != d:
                raise GraphError(f"einsum {spec!r}: dim mismatch on index {c!r}")
    return tuple(dims[c] for c in out)


def broadcast_shape_ok(a: tuple[int, ...], b: tuple[int, ...], mode: str) -> bool:
    if mode == "none":
        return a == b
    if mode == "scalar":
        return b == ()
    if mode == "keep":  # b indexes the leading dims, broadcast over the last
        return len(a) >= 1 and b == a[:-1]
    if mode == "last":  # b is a suffix of a
        return 0 < len(b) <= len(a) and b == a[-len(b) :]
    raise GraphError(f"unknown bcast mode {mode!r}")


def infer_shape(op: str, node: Node, in_decls: list[TensorDecl]) -> tuple[int, ...]:
    shapes = [d.shape for d in in_decls]
    if op == "einsum":
        return einsum_output_shape(node.attr("spec", ""), shapes)
    if op in ("add", "sub", "mul"):
        mode = node.attr("bcast", "none")
        if len(shapes) != 2 or not broadcast_shape_ok(shapes[0], shapes[1], mode):
            raise GraphError(
                f"shape error at node {node.name}: {op} {shapes} with bcast={mode}"
            )
        return shapes[0]
    if op == "gather":
        if len(shapes) != 2 or len(shapes[0]) != 2 or len(shapes[1]) != 1:
            raise GraphError(f"shape error at node {node.name}: gather wants (V,E) and (T,)")
        if in_decls[1].dtype != "idx":
            raise GraphError(f"shape error at node {node.name}: gather index must be idx dtype")
        return (shapes[1][0], shapes[0][1])
    if op in ("nonlinear", "rescale"):
        if len(shapes) != 1:
            raise GraphError(f"shape error at node {node.name}: unary op")
        return shapes[0]
    if op == "maskfill":
        if len(shapes) != 1 or len(shapes[0]) < 2:
            raise GraphError(f"shape error at node {node.name}: maskfill wants rank >= 2")
        return shapes[0]
    if op == "reshape":
        dims = node.attr("dims")
        if dims is None or len(shapes) != 1:
            raise GraphError(f"shape error at node {node.name}: reshape needs dims=")
        import math

        if math.prod(dims) != math.prod(shapes[0]):
            raise GraphError(f"shape error at node {node.name}: reshape size mismatch")
        return tuple(dims)
    if op == "transpose":
        perm = node.attr("perm")
        if perm is None or len(shapes) != 1 or sorted(perm) != list(range(len(shapes[0]))):
            raise GraphError(f"shape error at node {node.name}: bad transpose perm")
        return tuple(shapes[0][p] for p in perm)
    if op == "concat":
        axis = node.attr("axis")
        if axis is None or len(shapes) < 2:
            raise GraphError(f"shape error at node {node.name}: concat wants axis= and >=2 inputs")
        base = list(shapes[0])
        if not 0 <= axis < len(base):
            raise GraphError(f"shape error at node {node.name}: concat axis out of range")
        total = 0
        for s in shapes:
            if len(s) != len(base) or any(
                i != axis and s[i] != base[i] for i in range(len(base))
            ):
                raise GraphError(f"shape error at node {node.name}: concat shape mismatch")
            total += s[axis]
        base[axis] = total
        return tuple(base)
    if op == "softmax":
        if len(shapes) != 1 or len(shapes[0]) < 1:
            raise GraphError(f"shape error at node {node.name}: softmax is unary")
        return shapes[0]
    if op == "layernorm":
        if len(shapes) != 3 or len(shapes[0]) < 1:
            raise GraphError(f"shape error at node {node.name}: layernorm wants (x, gamma, beta)")
        e = shapes[0][-1]
        if shapes[1] != (e,) or shapes[2] != (e,):
            raise GraphError(f"shape error at node {node.name}: affine params must be ({e},)")
        return shapes[0]
    if op == "dropout":
        if len(shapes) != 1:
            raise GraphError(f"shape error at node {node.name}: dropout is unary")
        if node.attr("rate", 0) != 0:
            raise GraphError(f"unsupported composite at node {node.name}: dropout rate != 0")
        return shapes[0]
    raise GraphError(f"unknown op {op!r} at node {node.name}")


def node_output_dtype(op: str, in_decls: list[TensorDecl]) -> str:
    if op in WIRING_OPS:
        return in_decls[0].dtype
    return "fix"


# Parser --------------------------------------------------------------------

_INT_ATTRS = {"axis", "scale", "rate", "value"}
_INT_TUPLE_ATTRS = {"dims", "perm"}
_STR_ATTRS = {"spec", "mode", "bcast", "fn", "weight", "kind"}


def _parse_attr(tok: str, where: str) -> tuple[str, object]:
    if "=" not in tok:
        raise GraphError(f"bad attribute {tok!r} {where}")
    k, v = tok.split("=", 1)
    if k in _INT_TUPLE_ATTRS:
        try:
            return k, tuple(int(x) for x in v.split(","))
        except ValueError:
            raise GraphError(f"bad attribute {tok!r} {where}") from None
    if k in _INT_ATTRS or k == "scalar":
        try:
            return k, int(v)
        except ValueError:
            raise GraphError(f"bad attribute {tok!r} {where}") from None
    if k in _STR_ATTRS:
        return k, v
    raise GraphError(f"unknown attribute key {k!r} {where}")


def parse_graph(text: str) -> Graph:
    tensors: dict[str, TensorDecl] = {}
    declared_shapes: dict[str, tuple[int, ...]] = {}
    inputs: list[str] = []
    outputs: list[str] = []
    nodes: list[Node] = []
    produced: set[str] = set()
    version = None

    def decl(name: str, where: str) -> TensorDecl:
        if name not in tensors:
            raise GraphError(f"undefined tensor {name!r} {where}")
        return tensors[name]

    def ready(name: str, where: str) -> TensorDecl:
        d = decl(name, where)
        if name not in produced and name not in inputs:
            raise GraphError(f"not a DAG: {name!r} used before it is produced {where}")
        return d

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"(line {lineno})"
        toks = line.split()
        kw = toks[0]

        if kw == "version":
            if len(toks) != 2 or not toks[1].isdigit():
                raise GraphError(f"bad version line {where}")
            version = int(toks[1])
            if version != FORMAT_VERSION:
                raise GraphError(f"unsupported format version {version} {where}")

        elif kw == "tensor":
            if len(toks) < 3 or toks[2] not in ("idx", "fix"):
                raise GraphError(f"bad tensor line {where}")
            name, dtype = toks[1], toks[2]
            if name in tensors:
                raise GraphError(f"redefined tensor {name!r} {where}")
            try:
                shape = tuple(int(x) for x in toks[3:])
            except ValueError:
                raise GraphError(f"bad tensor shape {where}") from None
            if any(d <= 0 for d in shape):
                raise GraphError(f"bad tensor shape {where}")
            tensors[name] = TensorDecl(name, dtype, shape)
            declared_shapes[name] = shape

        elif kw == "input":
            if len(toks) != 2:
                raise GraphError(f"bad input line {where}")
            decl(toks[1], where)
            if toks[1] in inputs:
                raise GraphError(f"duplicate input {toks[1]!r} {where}")
            inputs.append(toks[1])

        elif kw == "output":
            if len(toks) != 2:
                raise GraphError(f"bad output line {where}")
            decl(toks[1], where)
            outputs.append(toks[1])

        elif kw == "const":
            if len(toks) < 3:
                raise GraphError(f"bad const line {where}")
            name = toks[1]
            d = decl(name, where)
            if name in produced or name in inputs:
                raise GraphError(f"redefined tensor {name!r} {where}")
            if toks[2] == "eye":
                attrs = make_attrs(kind="eye")
                if len(d.shape) != 2 or d.shape[0] > d.shape[1]:
                    raise GraphError(f"shape error at node {name}: eye wants rows <= cols {where}")
            else:
                pairs = dict(_parse_attr(t, where) for t in toks[2:])
                if "weight" in pairs:
                    attrs = make_attrs(kind="weight", weight=pairs["weight"])
                elif "scalar" in pairs:
                    scale = pairs.get("scale", 1)
                    if scale not in (0, 1, 2):
                        raise GraphError(f"bad const scale {where}")
                    if d.shape != ():
                        raise GraphError(f"shape error at node {name}: scalar const {where}")
                    attrs = make_attrs(kind="scalar", value=pairs["scalar"], scale=scale)
                else:
                    raise GraphError(f"bad const line {where}")
            nodes.append(Node(name, "const", (), attrs))
            produced.add(name)

        elif kw == "node":
            if len(toks) < 4:
                raise GraphError(f"bad node line {where}")
            name, op = toks[1], toks[2]
            d = decl(name, where)
            if name in produced or name in inputs:
                raise GraphError(f"redefined tensor {name!r} {where}")
            attr_toks = [t for t in toks[3:] if "=" in t]
            in_toks = [t for t in toks[3:] if "=" not in t]
            attrs = dict(_parse_attr(t, where) for t in attr_toks)
            in_decls = [ready(t, where) for t in in_toks]

            if op == "matmul":  # sugar: normalized to einsum at parse time
                if len(in_decls) != 2 or len(in_decls[0].shape) != 2 or len(in_decls[1].shape) != 2:
                    raise GraphError(f"shape error at node {name}: matmul wants two rank-2 tensors")
                op, attrs = "einsum", {"spec": "ij,jk->ik"}
            if op in NONLINEAR_FNS:
                attrs["fn"] = op
                op = "nonlinear"
            if op == "maskfill" and attrs.get("mode", "causal") != "causal":
                raise GraphError(f"unknown maskfill mode {where}")
            if op not in REDUCED_OPS + COMPOSITE_OPS or op in ("const",):
                raise GraphError(f"unknown op {op!r} {where}")
            if op != "gather":
                for t, dd in zip(in_toks, in_decls):
                    if dd.dtype == "idx" and op not in WIRING_OPS:
                        raise GraphError(
                            f"shape error at node {name}: idx tensor {t!r} in arithmetic op"
                        )

            node = Node(name, op, tuple(in_toks), make_attrs(**attrs))
            got = infer_shape(op, node, in_decls)
            if declared_shapes.get(name) is not None and got != declared_shapes[name]:
                raise GraphError(
                    f"shape error at node {name}: declared {declared_shapes[name]}, inferred {got}"
                )
            want_dtype = node_output_dtype(op, in_decls)
            if tensors[name].dtype != want_dtype:
                raise GraphError(
                    f"shape error at node {name}: dtype should be {want_dtype}"
                )
            nodes.append(node)
            produced.add(name)

        else:
            raise GraphError(f"unknown statement {kw!r} {where}")

    if version is None:
        raise GraphError("missing version line")
    if not outputs:
        raise GraphError("graph declares no outputs")
    for o in outputs:
        if o not in produced and o not in inputs:
            raise GraphError(f"output {o!r} is never produced")
    for i in inputs:
        if tensors[i].shape == ():
            raise GraphError(f"input {i!r} must have a shape")
    return Graph(tensors=tensors, inputs=tuple(inputs), outputs=tuple(outputs), nodes=tuple(nodes))


# Writer --------------------------------------------------------------------


def _attr_str(k: str, v: object) -> str:
    if isinstance(v, tuple):
        return f"{k}={','.join(str(x) for x in v)}"
    return f"{k}={v}"


def graph_to_text(g: Graph) -> str:
    lines = [f"version {g.version}"]
    for t in g.tensors.values():
        dims = " ".join(str(d) for d in t.shape)
        lines.append(f"tensor {t.name} {t.dtype} {dims}".rstrip())
    for i in g.inputs:
        lines.append(f"input {i}")
    for o in g.outputs:
        lines.append(f"output {o}")
    for n in g.nodes:
        if n.op == "const":
            kind = n.attr("kind")
            if kind == "weight":
                lines.append(f"const {n.name} weight={n.attr('weight')}")
            elif kind == "eye":
                lines.append(f"const {n.name} eye")
            else:
                lines.append(f"const {n.name} scalar={n.attr('value')} scale={n.attr('scale')}")
            continue
        op = n.op
        attrs = [(k, v) for k, v in n.attrs if k != "fn"]
        if op == "nonlinear":
            op = n.attr("fn")
        parts = [f"node {n.name} {op}"]
        parts += [_attr_str(k, v) for k, v in attrs]
        parts += list(n.inputs)
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
