"""Commit-and-spot-check argument over the compiled cell matrix.

Prove: commit every advice segment with a Merkle tree over row-group leaves,
derive k distinct challenge rows from a hash transcript (commitment, circuit
geometry, public io, advice roots), then open each challenged row: its leaf,
the previous leaf when the row's gate reads c[r-1] across a leaf boundary,
and the weight-tree leaves backing any weight-cell copy on that row.

Verify: recompute the model digest from the proof's weight roots and the
graph text, re-derive the challenge rows, check every Merkle multiproof,
then re-check each opened row's gate, lookup and copy constraints.  Copies
whose partner is a weight cell are always checkable (weight leaves ride
along and are bound to the model commitment); io and constant partners are
public; advice partners are checked only when the partner's leaf happens to
be in the opened set, which is what keeps proofs small - cheating there is
caught by row sampling, not by partner openings.

Failure reasons, in check order: malformed, commitment-mismatch,
transcript-mismatch (openings do not cover the derived rows), merkle-path,
gate-violation, lookup-violation, copy-violation.  A verified honest run
reports "none".

Not zero-knowledge: openings reveal the touched cells (weights included).
The argument provides integrity binding only.
"""

from __future__ import annotations

import hashlib
import struct
from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .field import PRIME, encode_array, next_pow2
from .merkle import MerkleTree, leaf_bytes, verify_multiproof
from .models import commitment_from_roots
from .circuit import (
    GATE_ADD,
    GATE_BOOL,
    GATE_MAC,
    GATE_MUL,
    GATE_NONE,
    GATE_SUB,
    GATE_SUM,
    CircuitMatrix,
    Witness,
    row_spec,
    satisfies_all,
)

PROOF_MAGIC = b"GPRF"
PROOF_VERSION = 1
DEFAULT_K = 30


class ProofError(ValueError):
    pass


def leaf_rows(n_rows: int) -> int:
    """Rows per advice Merkle leaf: 8, or the whole height for tiny circuits."""
    return min(8, n_rows)


# Transcript -------------------------------------------------------------------


class Transcript:
    """SHA-256 chaining transcript; every absorb folds label and data into state."""

    def __init__(self) -> None:
        self.state = hashlib.sha256(b"gridproof-fs-v1").digest()

    def absorb(self, label: bytes, data: bytes) -> None:
        h = hashlib.sha256()
        h.update(self.state)
        h.update(struct.pack("<H", len(label)))
        h.update(label)
        h.update(struct.pack("<Q", len(data)))
        h.update(data)
        self.state = h.digest()


def derive_rows(state: bytes, total: int, k: int) -> list[int]:
    """k distinct uniform rows in [0, total) via counter-mode expansion.

    Rejection sampling keeps the draw unbiased; k >= total means full open.
    """
    if k >= total:
        return list(range(total))
    rows: list[int] = []
    seen: set[int] = set()
    threshold = (1 << 64) // total * total
    ctr = 0
    while len(rows) < k:
        block = hashlib.sha256(state + struct.pack("<Q", ctr)).digest()
        ctr += 1
        for off in range(0, 32, 8):
            u = int.from_bytes(block[off:off + 8], "little")
            if u >= threshold:
                continue
            r = u % total
            if r not in seen:
                seen.add(r)
                rows.append(r)
                if len(rows) == k:
                    break
    return sorted(rows)


def _run_transcript(proof: "Proof") -> list[int]:
    t = Transcript()
    t.absorb(b"commitment", proof.commitment)
    t.absorb(b"geometry", struct.pack(
        "<IIII", proof.n_rows, proof.n_segments, proof.k, proof.row_cap or 0))
    t.absorb(b"io", proof.io.tobytes())
    for root in proof.advice_roots:
        t.absorb(b"advice-root", root)
    return derive_rows(t.state, proof.n_segments * proof.n_rows, proof.k)


# Proof container ----------------------------------------------------------------


@dataclass
class Proof:
    scale_bits: int
    lookup_bits: int
    n_rows: int
    n_segments: int
    k: int
    row_cap: Optional[int]
    commitment: bytes
    io: np.ndarray  # uint64, the public instance vector
    weight_roots: dict  # name -> 32-byte root
    advice_roots: list  # per segment
    advice_openings: list  # per segment: dict[leaf_idx -> bytes]
    advice_nodes: list  # per segment: list[bytes]
    weight_openings: dict  # name -> dict[leaf_idx -> bytes]
    weight_nodes: dict  # name -> list[bytes]

    def to_bytes(self) -> bytes:
        out = [PROOF_MAGIC, struct.pack(
            "<BBBIIII", PROOF_VERSION, self.scale_bits, self.lookup_bits,
            self.n_rows, self.n_segments, self.k, self.row_cap or 0)]
        out.append(self.commitment)
        out.append(struct.pack("<I", self.io.size))
        out.append(np.ascontiguousarray(self.io, dtype="<u8").tobytes())
        out.append(struct.pack("<H", len(self.weight_roots)))
        for name in sorted(self.weight_roots):
            nb = name.encode()
            out.append(struct.pack("<H", len(nb)))
            out.append(nb)
            out.append(self.weight_roots[name])
        for root in self.advice_roots:
            out.append(root)
        lw = 24 * leaf_rows(self.n_rows)
        for s in range(self.n_segments):
            opens = self.advice_openings[s]
            out.append(struct.pack("<I", len(opens)))
            for idx in sorted(opens):
                blob = opens[idx]
                assert len(blob) == lw
                out.append(struct.pack("<I", idx))
                out.append(blob)
            nodes = self.advice_nodes[s]
            out.append(struct.pack("<I", len(nodes)))
            out.extend(nodes)
        opened_tensors = sorted(n for n in self.weight_openings if self.weight_openings[n])
        out.append(struct.pack("<H", len(opened_tensors)))
        for name in opened_tensors:
            nb = name.encode()
            out.append(struct.pack("<H", len(nb)))
            out.append(nb)
            opens = self.weight_openings[name]
            out.append(struct.pack("<I", len(opens)))
            for idx in sorted(opens):
                out.append(struct.pack("<I", idx))
                out.append(opens[idx])
            nodes = self.weight_nodes[name]
            out.append(struct.pack("<I", len(nodes)))
            out.extend(nodes)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Proof":
        view = memoryview(blob)
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(view):
                raise ProofError("truncated proof")
            out = bytes(view[pos:pos + n])
            pos += n
            return out

        if take(4) != PROOF_MAGIC:
            raise ProofError("bad magic")
        ver, f, b, n_rows, n_segments, k, cap = struct.unpack("<BBBIIII", take(19))
        if ver != PROOF_VERSION:
            raise ProofError(f"unsupported proof version {ver}")
        if n_rows <= 0 or n_segments <= 0 or n_segments > 1 << 20:
            raise ProofError("bad geometry")
        commitment = take(32)
        (io_len,) = struct.unpack("<I", take(4))
        io = np.frombuffer(take(8 * io_len), dtype="<u8").astype(np.uint64)
        (n_wt,) = struct.unpack("<H", take(2))
        weight_roots = {}
        for _ in range(n_wt):
            (ln,) = struct.unpack("<H", take(2))
            name = take(ln).decode()
            weight_roots[name] = take(32)
        advice_roots = [take(32) for _ in range(n_segments)]
        lw = 24 * leaf_rows(n_rows)
        advice_openings, advice_nodes = [], []
        for _ in range(n_segments):
            (cnt,) = struct.unpack("<I", take(4))
            opens = {}
            for _ in range(cnt):
                (idx,) = struct.unpack("<I", take(4))
                opens[idx] = take(lw)
            (nn,) = struct.unpack("<I", take(4))
            advice_openings.append(opens)
            advice_nodes.append([take(32) for _ in range(nn)])
        (n_wo,) = struct.unpack("<H", take(2))
        weight_openings: dict = {}
        weight_nodes: dict = {}
        for _ in range(n_wo):
            (ln,) = struct.unpack("<H", take(2))
            name = take(ln).decode()
            (cnt,) = struct.unpack("<I", take(4))
            opens = {}
            for _ in range(cnt):
                (idx,) = struct.unpack("<I", take(4))
                opens[idx] = take(32)
            (nn,) = struct.unpack("<I", take(4))
            weight_openings[name] = opens
            weight_nodes[name] = [take(32) for _ in range(nn)]
        if pos != len(view):
            raise ProofError("trailing bytes")
        return cls(
            scale_bits=f, lookup_bits=b, n_rows=n_rows, n_segments=n_segments,
            k=k, row_cap=cap or None, commitment=commitment, io=io,
            weight_roots=weight_roots, advice_roots=advice_roots,
            advice_openings=advice_openings, advice_nodes=advice_nodes,
            weight_openings=weight_openings, weight_nodes=weight_nodes,
        )


# Weight region helpers -----------------------------------------------------------


def _weight_index(cm: CircuitMatrix) -> list:
    idx = getattr(cm, "_weight_locate", None)
    if idx is None:
        idx = [(off, name) for name, off in cm.weight_map.items()]
        idx.sort()
        cm._weight_locate = idx
    return idx


def locate_weight(cm: CircuitMatrix, off: int) -> tuple[str, int]:
    idx = _weight_index(cm)
    i = bisect_right(idx, (off + 1,)) - 1
    base, name = idx[i]
    return name, off - base


def weight_tensor_leaves(cm: CircuitMatrix, name: str) -> int:
    numel = int(np.prod(cm.graph.shape(name), dtype=np.int64))
    return next_pow2(-(-max(numel, 1) // 4))


def witness_weight_trees(cm: CircuitMatrix, wit: Witness) -> dict:
    """Per-tensor trees over the witness's own weight cells (4 cells/leaf)."""
    flat = wit.weight_cols.ravel()
    trees = {}
    for name, off in cm.weight_map.items():
        numel = int(np.prod(cm.graph.shape(name), dtype=np.int64))
        n_leaves = weight_tensor_leaves(cm, name)
        buf = np.zeros(n_leaves * 4, np.uint64)
        buf[:numel] = flat[off:off + numel]
        trees[name] = MerkleTree.from_cells(buf.reshape(n_leaves, 4))
    return trees


def _output_bind_map(cm: CircuitMatrix) -> tuple[dict, list]:
    """(advice cell id -> io cell id) for outputs, plus public-public binds."""
    cached = getattr(cm, "_out_bind_cache", None)
    if cached is not None:
        return cached
    advice_span = cm.weight_base
    bind_map: dict[int, int] = {}
    public: list[tuple[int, int]] = []
    for name, off in cm.out_binds:
        ids = cm.tensor_cell_ids(name)
        io_ids = cm.io_base + off + np.arange(ids.size, dtype=np.int64)
        adv = ids < advice_span
        for own, io_id in zip(ids[adv].tolist(), io_ids[adv].tolist()):
            bind_map[own] = io_id
        for own, io_id in zip(ids[~adv].tolist(), io_ids[~adv].tolist()):
            public.append((own, io_id))
    cm._out_bind_cache = (bind_map, public)
    return bind_map, public


# Prove ----------------------------------------------------------------------------


def _advice_leaves(seg_cells: np.ndarray, lr: int) -> np.ndarray:
    # (3, n) -> (n/lr, 3*lr); leaf cell order is row-major (row, then a,b,c)
    n = seg_cells.shape[1]
    return np.ascontiguousarray(seg_cells.T).reshape(n // lr, 3 * lr)


def _needed_openings(cm: CircuitMatrix, rows: list) -> tuple[list, dict, dict]:
    """Advice leaves per segment and weight leaves per tensor for these rows.

    Also returns the row specs keyed by global row so callers do not derive
    them twice; spec derivation is the most expensive per-row step.
    """
    lr = leaf_rows(cm.n_rows)
    adv_need = [set() for _ in range(cm.n_segments)]
    wt_need: dict[str, set] = {}
    specs: dict[int, object] = {}
    for glob in rows:
        seg, row = divmod(glob, cm.n_rows)
        adv_need[seg].add(row // lr)
        spec = specs[glob] = row_spec(cm, seg, row)
        if spec.uses_prev_c and row % lr == 0:
            adv_need[seg].add(row // lr - 1)
        for _own, src, _label in spec.copies:
            if cm.weight_base <= src < cm.io_base:
                name, local = locate_weight(cm, src - cm.weight_base)
                wt_need.setdefault(name, set()).add(local // 4)
    return adv_need, wt_need, specs


def prove(
    cm: CircuitMatrix,
    wit: Witness,
    graph_text: str,
    k: int = DEFAULT_K,
    weight_trees: Optional[dict] = None,
    allow_unsatisfied: bool = False,
) -> Proof:
    """Commit the witness and open k transcript-derived rows.

    Refuses witnesses that fail the constraint system unless
    allow_unsatisfied is set (corruption studies set it on purpose).
    """
    if not allow_unsatisfied:
        rep = satisfies_all(cm, wit)
        if not rep.ok:
            raise ProofError(f"witness does not satisfy the circuit: {rep.kind} ({rep.detail})")
    if k < 1:
        raise ProofError("k must be >= 1")

    lr = leaf_rows(cm.n_rows)
    trees = weight_trees if weight_trees is not None else witness_weight_trees(cm, wit)
    roots = {name: t.root for name, t in trees.items()}
    commitment = commitment_from_roots(graph_text, roots, cm.cfg)

    adv_trees = [MerkleTree.from_cells(_advice_leaves(seg, lr)) for seg in wit.advice]
    proof = Proof(
        scale_bits=cm.cfg.scale_bits, lookup_bits=cm.cfg.lookup_bits,
        n_rows=cm.n_rows, n_segments=cm.n_segments,
        k=min(k, cm.n_segments * cm.n_rows), row_cap=cm.row_cap,
        commitment=commitment, io=wit.io.copy(),
        weight_roots=roots, advice_roots=[t.root for t in adv_trees],
        advice_openings=[{} for _ in range(cm.n_segments)],
        advice_nodes=[[] for _ in range(cm.n_segments)],
        weight_openings={}, weight_nodes={},
    )
    rows = _run_transcript(proof)
    adv_need, wt_need, _ = _needed_openings(cm, rows)

    for s in range(cm.n_segments):
        if not adv_need[s]:
            continue
        leaves = _advice_leaves(wit.advice[s], lr)
        idxs = sorted(adv_need[s])
        proof.advice_openings[s] = {i: leaf_bytes(leaves[i]) for i in idxs}
        proof.advice_nodes[s] = adv_trees[s].multiproof(idxs)
    for name, need in wt_need.items():
        idxs = sorted(need)
        tree = trees[name]
        n_leaves = tree.n_leaves
        flat = wit.weight_cols.ravel()
        off = cm.weight_map[name]
        numel = int(np.prod(cm.graph.shape(name), dtype=np.int64))
        buf = np.zeros(n_leaves * 4, np.uint64)
        buf[:numel] = flat[off:off + numel]
        leaves = buf.reshape(n_leaves, 4)
        proof.weight_openings[name] = {i: leaf_bytes(leaves[i]) for i in idxs}
        proof.weight_nodes[name] = tree.multiproof(idxs)
    return proof


# Verify ----------------------------------------------------------------------------


@dataclass
class VerifyResult:
    ok: bool
    reason: str = "none"
    detail: str = ""
    rows_checked: int = 0


def _gate_holds(code: int, a: int, b: int, c: int, c_prev: int) -> bool:
    if code == GATE_MUL:
        return (a * b - c) % PRIME == 0
    if code == GATE_MAC:
        return (c_prev + a * b - c) % PRIME == 0
    if code == GATE_SUM:
        return (c_prev + a - c) % PRIME == 0
    if code == GATE_ADD:
        return (a + b - c) % PRIME == 0
    if code == GATE_SUB:
        return (a - b - c) % PRIME == 0
    if code == GATE_BOOL:
        return c * (c - 1) % PRIME == 0
    return True


def _decode(v: int) -> int:
    return v - PRIME if v > PRIME // 2 else v


class _OpenedCells:
    """Cell accessor over the proof's openings plus public io/const data."""

    def __init__(self, cm: CircuitMatrix, proof: Proof):
        self.cm = cm
        self.proof = proof
        self.lr = leaf_rows(cm.n_rows)
        self.const_enc = encode_array(cm.const_values.copy())

    def advice(self, seg: int, col: int, row: int) -> Optional[int]:
        blob = self.proof.advice_openings[seg].get(row // self.lr)
        if blob is None:
            return None
        cell = (row % self.lr) * 3 + col
        return int.from_bytes(blob[cell * 8:cell * 8 + 8], "little")

    def value(self, cell_id: int) -> Optional[int]:
        cm = self.cm
        if cell_id < cm.weight_base:
            sid, row = divmod(cell_id, cm.n_rows)
            return self.advice(sid // 3, sid % 3, row)
        if cell_id < cm.io_base:
            name, local = locate_weight(cm, cell_id - cm.weight_base)
            blob = self.proof.weight_openings.get(name, {}).get(local // 4)
            if blob is None:
                return None
            p = local % 4
            return int.from_bytes(blob[p * 8:p * 8 + 8], "little")
        if cell_id < cm.const_base:
            return int(self.proof.io[cell_id - cm.io_base])
        return int(self.const_enc[cell_id - cm.const_base])


def verify(
    proof,
    cm: CircuitMatrix,
    graph_text: str,
    expected_commitment: bytes,
    min_k: int = 1,
) -> VerifyResult:
    """Check a proof against a compiled circuit and a published commitment."""
    if isinstance(proof, (bytes, bytearray)):
        try:
            proof = Proof.from_bytes(bytes(proof))
        except ProofError as e:
            return VerifyResult(False, "malformed", str(e))

    # commitment first: a swapped model must surface as commitment-mismatch
    # even when its circuit geometry also differs
    recomputed = commitment_from_roots(graph_text, proof.weight_roots, cm.cfg)
    if recomputed != proof.commitment or recomputed != expected_commitment:
        return VerifyResult(False, "commitment-mismatch",
                            "weight roots and graph do not hash to the published commitment")
    if set(proof.weight_roots) != set(cm.weight_map):
        return VerifyResult(False, "commitment-mismatch", "weight tensor set mismatch")

    if (proof.n_rows != cm.n_rows or proof.n_segments != cm.n_segments
            or proof.scale_bits != cm.cfg.scale_bits
            or proof.lookup_bits != cm.cfg.lookup_bits
            or proof.row_cap != cm.row_cap
            or proof.io.size != cm.io_len):
        return VerifyResult(False, "malformed", "geometry or quantization mismatch with circuit")
    if proof.k < min_k:
        return VerifyResult(False, "malformed", f"k={proof.k} below verifier minimum {min_k}")

    rows = _run_transcript(proof)
    lr = leaf_rows(cm.n_rows)

    # coverage: every derived row must be opened where the checks need it
    adv_need, wt_need, specs = _needed_openings(cm, rows)
    for s in range(cm.n_segments):
        missing = adv_need[s] - set(proof.advice_openings[s])
        if missing:
            return VerifyResult(False, "transcript-mismatch",
                                f"advice leaf {min(missing)} of segment {s} not opened")
    for name, need in wt_need.items():
        missing = need - set(proof.weight_openings.get(name, {}))
        if missing:
            return VerifyResult(False, "transcript-mismatch",
                                f"weight leaf {min(missing)} of {name} not opened")

    for s in range(cm.n_segments):
        opens = proof.advice_openings[s]
        if not opens:
            continue
        if not verify_multiproof(proof.advice_roots[s], cm.n_rows // lr,
                                 opens, proof.advice_nodes[s]):
            return VerifyResult(False, "merkle-path", f"advice segment {s}")
    for name, opens in proof.weight_openings.items():
        if not opens:
            continue
        if name not in cm.weight_map:
            return VerifyResult(False, "merkle-path", f"unknown weight tensor {name}")
        if not verify_multiproof(proof.weight_roots[name], weight_tensor_leaves(cm, name),
                                 opens, proof.weight_nodes[name]):
            return VerifyResult(False, "merkle-path", f"weight tensor {name}")

    cells = _OpenedCells(cm, proof)
    bind_map, public_binds = _output_bind_map(cm)
    cfg = cm.cfg
    for glob in rows:
        seg, row = divmod(glob, cm.n_rows)
        spec = specs[glob]
        a = cells.advice(seg, 0, row)
        b = cells.advice(seg, 1, row)
        c = cells.advice(seg, 2, row)
        c_prev = 0
        if spec.uses_prev_c:
            c_prev = cells.advice(seg, 2, row - 1)
            if c_prev is None:
                return VerifyResult(False, "transcript-mismatch",
                                    f"previous-row cell missing for segment {seg} row {row}")
        if spec.gate != GATE_NONE and not _gate_holds(spec.gate, a, b, c, c_prev):
            return VerifyResult(False, "gate-violation",
                                f"segment {seg} row {row}", rows_checked=len(rows))
        if spec.lookup_fn:
            a_s = _decode(a)
            table = cm.lookup_table(spec.lookup_fn)
            if not (cfg.range_min <= a_s <= cfg.range_max):
                return VerifyResult(False, "lookup-violation",
                                    f"segment {seg} row {row} fn {spec.lookup_fn}: input outside window")
            expect = int(table.outputs[a_s - cfg.range_min]) % PRIME
            if expect != c:
                return VerifyResult(False, "lookup-violation",
                                    f"segment {seg} row {row} fn {spec.lookup_fn}")
        for own_id, src_id, label in spec.copies:
            own_val = cells.value(own_id)
            src_val = cells.value(src_id)
            if src_val is None:
                if src_id < cm.weight_base:
                    continue  # advice partner outside the opened set
                return VerifyResult(False, "transcript-mismatch",
                                    f"partner opening missing ({label})")
            if own_val != src_val:
                return VerifyResult(False, "copy-violation",
                                    f"segment {seg} row {row}: {label}")
        own_c_id = (seg * 3 + 2) * cm.n_rows + row
        if own_c_id in bind_map:
            if c != int(proof.io[bind_map[own_c_id] - cm.io_base]):
                return VerifyResult(False, "copy-violation",
                                    f"segment {seg} row {row}: output != public instance")

    for own_id, io_id in public_binds:
        if cells.value(own_id) != int(proof.io[io_id - cm.io_base]):
            return VerifyResult(False, "copy-violation", "public output binding")

    return VerifyResult(True, "none", rows_checked=len(rows))
