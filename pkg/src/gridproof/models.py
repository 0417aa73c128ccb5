"""Model zoo: a small GPT-style decoder and plain ReLU MLP stacks, plus the
weights file format and the model commitment digest.

Graphs are built with composite softmax/layernorm/dropout nodes so the same
file round-trips through the text format before lowering. Weight matrices use
the [out, in] convention, applied as einsum 'ta,ba->tb'.

Init discipline: every drawn weight is snapped onto the 2**-f grid so the
quantized model and the float reference share identical parameters, and
embedding scales are kept small enough that residual-stream variance stays
inside the layernorm window envelope (var < 2**(B-1) / 2**(3f)).
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .field import QuantConfig, encode_array, next_pow2, quantize_array, round_half_away
from .merkle import MerkleTree
from .graph import Graph, Node, TensorDecl, infer_shape, make_attrs


@dataclass(frozen=True)
class NanoGptConfig:
    vocab: int = 65
    block: int = 4  # context length; also the position-table height
    n_layer: int = 2
    n_head: int = 4
    n_embd: int = 32

    def __post_init__(self):
        if self.n_embd % self.n_head:
            raise ValueError("n_embd must divide evenly into heads")

    @property
    def head_dim(self) -> int:
        return self.n_embd // self.n_head


@dataclass(frozen=True)
class MlpConfig:
    width: int
    depth: int  # number of (linear, rescale, bias, relu) layers


def nanogpt_param_count(cfg: NanoGptConfig) -> int:
    e = cfg.n_embd
    per_layer = 12 * e * e + 13 * e  # qkv+proj (4e^2+4e), mlp (8e^2+5e), two norms (4e)
    return cfg.vocab * e + cfg.block * e + cfg.n_layer * per_layer + 2 * e


def mlp_param_count(cfg: MlpConfig) -> int:
    return cfg.depth * (cfg.width * cfg.width + cfg.width)


def mlp_width_for_params(target: int, depth: int) -> int:
    """Widest square MLP of the given depth with at most `target` parameters."""
    w = int((target / depth) ** 0.5)
    while mlp_param_count(MlpConfig(w + 1, depth)) <= target:
        w += 1
    while w > 1 and mlp_param_count(MlpConfig(w, depth)) > target:
        w -= 1
    return w


# Graph builder -------------------------------------------------------------


class _GB:
    def __init__(self):
        self.tensors: dict[str, TensorDecl] = {}
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.nodes: list[Node] = []

    def input(self, name: str, dtype: str, shape: tuple[int, ...]) -> str:
        self.tensors[name] = TensorDecl(name, dtype, shape)
        self.inputs.append(name)
        return name

    def const_weight(self, name: str, shape: tuple[int, ...]) -> str:
        self.tensors[name] = TensorDecl(name, "fix", shape)
        self.nodes.append(Node(name, "const", (), make_attrs(kind="weight", weight=name)))
        return name

    def const_scalar(self, name: str, value: int, scale: int) -> str:
        self.tensors[name] = TensorDecl(name, "fix", ())
        self.nodes.append(Node(name, "const", (), make_attrs(kind="scalar", value=value, scale=scale)))
        return name

    def const_eye(self, name: str, rows: int, cols: int) -> str:
        self.tensors[name] = TensorDecl(name, "fix", (rows, cols))
        self.nodes.append(Node(name, "const", (), make_attrs(kind="eye")))
        return name

    def op(self, name: str, op: str, *inputs: str, **attrs) -> str:
        node = Node(name, op, tuple(inputs), make_attrs(**attrs))
        decls = [self.tensors[i] for i in inputs]
        shape = infer_shape(op, node, decls)
        dtype = decls[0].dtype if op in ("reshape", "transpose", "concat") else "fix"
        self.tensors[name] = TensorDecl(name, dtype, shape)
        self.nodes.append(node)
        return name

    def graph(self, outputs: list[str]) -> Graph:
        return Graph(
            tensors=self.tensors,
            inputs=tuple(self.inputs),
            outputs=tuple(outputs),
            nodes=tuple(self.nodes),
        )


def _linear(b: _GB, prefix: str, x: str, weight: str, bias: str) -> str:
    spec = "ta,ba->tb" if len(b.tensors[x].shape) == 2 else "a,ba->b"
    mode = "none" if len(b.tensors[x].shape) == 1 else "last"
    mm = b.op(f"{prefix}.mm", "einsum", x, weight, spec=spec)
    sc = b.op(f"{prefix}.sc", "rescale", mm)
    return b.op(f"{prefix}.out", "add", sc, bias, bcast=mode)


def build_nanogpt_graph(cfg: NanoGptConfig, quant: QuantConfig) -> Graph:
    t, e, h, d = cfg.block, cfg.n_embd, cfg.n_head, cfg.head_dim
    b = _GB()
    tok = b.input("tok", "idx", (t,))
    wte = b.const_weight("wte", (cfg.vocab, e))
    wpe = b.const_weight("wpe", (cfg.block, e))
    c_attn = b.const_scalar("c_attn", int(round_half_away(quant.scale / math.sqrt(d))), 1)

    pos_rows = b.const_eye("pos_rows", t, cfg.block)
    tok_emb = b.op("tok_emb", "gather", wte, tok)
    pos_emb = b.op("pos_emb", "einsum", pos_rows, wpe, spec="ts,se->te")
    x = b.op("x0", "add", tok_emb, pos_emb, bcast="none")

    for i in range(cfg.n_layer):
        p = f"h{i}"
        for nm in ("ln1", "ln2"):
            b.const_weight(f"{p}.{nm}.weight", (e,))
            b.const_weight(f"{p}.{nm}.bias", (e,))
        for nm in ("attn.q", "attn.k", "attn.v", "attn.proj"):
            b.const_weight(f"{p}.{nm}.weight", (e, e))
            b.const_weight(f"{p}.{nm}.bias", (e,))
        b.const_weight(f"{p}.mlp.fc.weight", (4 * e, e))
        b.const_weight(f"{p}.mlp.fc.bias", (4 * e,))
        b.const_weight(f"{p}.mlp.proj.weight", (e, 4 * e))
        b.const_weight(f"{p}.mlp.proj.bias", (e,))

        ln1 = b.op(f"{p}.ln1", "layernorm", x, f"{p}.ln1.weight", f"{p}.ln1.bias")
        heads = {}
        for nm in ("q", "k", "v"):
            lin = _linear(b, f"{p}.attn.{nm}", ln1, f"{p}.attn.{nm}.weight", f"{p}.attn.{nm}.bias")
            split = b.op(f"{p}.attn.{nm}h0", "reshape", lin, dims=(t, h, d))
            heads[nm] = b.op(f"{p}.attn.{nm}h", "transpose", split, perm=(1, 0, 2))
        raw = b.op(f"{p}.attn.raw", "einsum", heads["q"], heads["k"], spec="htd,hsd->hts")
        sc1 = b.op(f"{p}.attn.sc1", "rescale", raw)
        scl = b.op(f"{p}.attn.scl", "mul", sc1, "c_attn", bcast="scalar")
        sc2 = b.op(f"{p}.attn.sc2", "rescale", scl)
        msk = b.op(f"{p}.attn.msk", "maskfill", sc2, mode="causal")
        att = b.op(f"{p}.attn.att", "softmax", msk)
        atd = b.op(f"{p}.attn.atd", "dropout", att, rate=0)
        avr = b.op(f"{p}.attn.avr", "einsum", atd, heads["v"], spec="hts,hse->hte")
        avs = b.op(f"{p}.attn.avs", "rescale", avr)
        mrg0 = b.op(f"{p}.attn.mrg0", "transpose", avs, perm=(1, 0, 2))
        mrg = b.op(f"{p}.attn.mrg", "reshape", mrg0, dims=(t, e))
        prj = _linear(b, f"{p}.attn.prj", mrg, f"{p}.attn.proj.weight", f"{p}.attn.proj.bias")
        prd = b.op(f"{p}.attn.prd", "dropout", prj, rate=0)
        x = b.op(f"{p}.res1", "add", x, prd, bcast="none")

        ln2 = b.op(f"{p}.ln2", "layernorm", x, f"{p}.ln2.weight", f"{p}.ln2.bias")
        fc = _linear(b, f"{p}.mlp.fc", ln2, f"{p}.mlp.fc.weight", f"{p}.mlp.fc.bias")
        act = b.op(f"{p}.mlp.act", "nonlinear", fc, fn="gelu")
        mp = _linear(b, f"{p}.mlp.prj", act, f"{p}.mlp.proj.weight", f"{p}.mlp.proj.bias")
        mpd = b.op(f"{p}.mlp.prd", "dropout", mp, rate=0)
        x = b.op(f"{p}.res2", "add", x, mpd, bcast="none")

    b.const_weight("lnf.weight", (e,))
    b.const_weight("lnf.bias", (e,))
    lnf = b.op("lnf", "layernorm", x, "lnf.weight", "lnf.bias")
    logits = b.op("logits", "einsum", lnf, wte, spec="te,ve->tv")  # tied head
    return b.graph([logits])


def build_mlp_graph(cfg: MlpConfig) -> Graph:
    b = _GB()
    x = b.input("x", "fix", (cfg.width,))
    for i in range(cfg.depth):
        w = b.const_weight(f"l{i}.weight", (cfg.width, cfg.width))
        bias = b.const_weight(f"l{i}.bias", (cfg.width,))
        lin = _linear(b, f"l{i}", x, w, bias)
        x = b.op(f"l{i}.act", "nonlinear", lin, fn="relu")
    return b.graph([x])


# Weight init ---------------------------------------------------------------


def snap_to_grid(arr: np.ndarray, quant: QuantConfig) -> np.ndarray:
    q = np.trunc(arr * quant.scale + np.copysign(0.5, arr))
    return (q / quant.scale).astype(np.float64)


def init_nanogpt_weights(
    cfg: NanoGptConfig, quant: QuantConfig, seed: int
) -> dict[str, np.ndarray]:
    # Position rows are drawn wide on purpose: the tied output head couples
    # token-embedding noise straight into the logits, and a large non-tied
    # component in the residual stream dilutes that coupling. Keep combined
    # residual variance under the layernorm window envelope.
    rng = np.random.default_rng(seed)
    e = cfg.n_embd
    out: dict[str, np.ndarray] = {}
    out["wte"] = rng.normal(0.0, 0.08, (cfg.vocab, e))
    out["wpe"] = rng.normal(0.0, 0.25, (cfg.block, e))
    for i in range(cfg.n_layer):
        p = f"h{i}"
        for nm in ("ln1", "ln2"):
            out[f"{p}.{nm}.weight"] = np.ones(e)
            out[f"{p}.{nm}.bias"] = np.zeros(e)
        for nm, shape in (
            ("attn.q", (e, e)),
            ("attn.k", (e, e)),
            ("attn.v", (e, e)),
            ("attn.proj", (e, e)),
            ("mlp.fc", (4 * e, e)),
            ("mlp.proj", (e, 4 * e)),
        ):
            out[f"{p}.{nm}.weight"] = rng.normal(0.0, 0.02, shape)
            out[f"{p}.{nm}.bias"] = np.zeros(shape[0])
    out["lnf.weight"] = np.ones(e)
    out["lnf.bias"] = np.zeros(e)
    return {k: snap_to_grid(v, quant) for k, v in out.items()}


def init_mlp_weights(cfg: MlpConfig, quant: QuantConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    sigma = 0.5 / math.sqrt(cfg.width)
    out: dict[str, np.ndarray] = {}
    for i in range(cfg.depth):
        out[f"l{i}.weight"] = rng.normal(0.0, sigma, (cfg.width, cfg.width))
        out[f"l{i}.bias"] = np.zeros(cfg.width)
    return {k: snap_to_grid(v, quant) for k, v in out.items()}


# Weights file format --------------------------------------------------------

_WEIGHTS_MAGIC = b"GPWT"
_WEIGHTS_VERSION = 1


def weights_to_bytes(weights: dict[str, np.ndarray]) -> bytes:
    """Canonical serialization: magic, version, count, then tensors in
    lexicographic name order as (name, shape, float32 row-major LE)."""
    parts = [_WEIGHTS_MAGIC, struct.pack("<HI", _WEIGHTS_VERSION, len(weights))]
    for name in sorted(weights):
        arr = np.asarray(weights[name], dtype="<f4")  # tobytes() emits row-major
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def weights_from_bytes(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != _WEIGHTS_MAGIC:
        raise ValueError("not a weights file")
    ver, count = struct.unpack_from("<HI", blob, 4)
    if ver != _WEIGHTS_VERSION:
        raise ValueError(f"unsupported weights version {ver}")
    off = 10
    out: dict[str, np.ndarray] = {}
    prev = None
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        if prev is not None and name <= prev:
            raise ValueError("weights file is not in canonical name order")
        prev = name
        out[name] = arr.astype(np.float64)
    if off != len(blob):
        raise ValueError("trailing bytes in weights file")
    return out


def write_weights(path, weights: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(weights_to_bytes(weights))


def read_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return weights_from_bytes(f.read())


def weight_tree(values: np.ndarray, quant: QuantConfig) -> MerkleTree:
    """Merkle tree over one tensor's encoded grid values, 4 cells per leaf."""
    q = quantize_array(np.asarray(values, dtype=np.float64), quant).reshape(-1)
    enc = encode_array(q)
    n_leaves = next_pow2(-(-max(enc.size, 1) // 4))
    buf = np.zeros(n_leaves * 4, np.uint64)
    buf[: enc.size] = enc
    return MerkleTree.from_cells(buf.reshape(n_leaves, 4))


def weight_trees(weights: dict[str, np.ndarray], quant: QuantConfig) -> dict[str, MerkleTree]:
    return {name: weight_tree(w, quant) for name, w in weights.items()}


def commitment_from_roots(graph_text: str, roots: dict[str, bytes], quant: QuantConfig) -> bytes:
    """Model digest from per-tensor roots; what a verifier can recompute."""
    h = hashlib.sha256()
    h.update(b"GPMC1")
    h.update(hashlib.sha256(graph_text.encode()).digest())
    h.update(struct.pack("<BB", quant.scale_bits, quant.lookup_bits))
    h.update(struct.pack("<I", len(roots)))
    for name in sorted(roots):
        nb = name.encode()
        h.update(struct.pack("<H", len(nb)))
        h.update(nb)
        h.update(roots[name])
    return h.digest()


def model_commitment(graph_text: str, weights: dict[str, np.ndarray], quant: QuantConfig) -> bytes:
    """Binding digest over the model: graph text, weight tensor roots, quant config.

    Committing per-tensor Merkle roots (rather than raw bytes) lets a proof
    open individual weight cells against the same digest the client holds.
    """
    roots = {name: weight_tree(w, quant).root for name, w in weights.items()}
    return commitment_from_roots(graph_text, roots, quant)
