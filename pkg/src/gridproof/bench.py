"""Benchmark harness for compiled circuits and the spot-check argument.

A suite is a plain text file, one model per line.  ``#`` starts a comment,
blank lines are skipped::

    gpt vocab=65 block=4 layers=2 heads=4 embed=32 f=7 B=20 seed=7 label=toy
    mlp width=64 depth=10 cap=4096 mode=compile

``mode=compile`` stops after compilation (geometry and counts only);
``mode=prove`` (the default) also generates a witness, proves, and
verifies, timing each step.  A config that fails keeps its slot in the
output: the error text lands in the record and the suite keeps going.

Peak prover memory is reported as a deterministic estimate computed from
the circuit geometry alone (see ``prove_memory_estimate``).  Process-level
measurements are unusable for comparing configs inside one run because the
allocator high-water mark only ratchets up, so the estimate is the primary
column; an optional tracemalloc measurement rides along for calibration.
"""

from __future__ import annotations

import statistics
import time
import tracemalloc
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .argument import leaf_rows, prove, verify
from .circuit import CircuitMatrix, compile_graph, gen_witness
from .field import QuantConfig, next_pow2
from .graph import graph_to_text
from .models import (
    MlpConfig,
    NanoGptConfig,
    build_mlp_graph,
    build_nanogpt_graph,
    init_mlp_weights,
    init_nanogpt_weights,
    mlp_param_count,
    model_commitment,
    nanogpt_param_count,
    weight_trees,
)


class SuiteError(ValueError):
    pass


# CPython object overheads used by the memory model: a 32-byte digest costs
# sys.getsizeof(bytes) = 65, a list slot 8 more.
_DIGEST_OBJ = 73
_BYTES_HEADER = 41  # bytes object header + list slot


def prove_memory_estimate(cm: CircuitMatrix) -> int:
    """Deterministic model of the prover's peak allocation, in bytes.

    Counts the dominant resident pieces: the witness matrix (advice, weight,
    i/o and constant cells at 8 bytes each), the advice and weight Merkle
    trees, and the largest transient leaf buffer built while hashing one
    segment.  Monotone in both committed area and row count, which is what
    makes it useful for comparing row caps.
    """
    n, s = cm.n_rows, cm.n_segments
    lr = leaf_rows(n)
    wcols = -(-cm.total_weights // n) if cm.total_weights else 0
    cells = n * (3 * s + wcols) + cm.io_len + len(cm.const_values)
    adv_leaves = s * (n // lr)
    wt_leaves = 0
    for name in cm.weight_map:
        numel = 1
        for d in cm.graph.shape(name):
            numel *= d
        wt_leaves += next_pow2(max(1, -(-numel // 4)))
    tree_nodes = 2 * (adv_leaves + wt_leaves)
    leaf_buf = (24 * lr + _BYTES_HEADER) * (n // lr)
    return 8 * cells + _DIGEST_OBJ * tree_nodes + leaf_buf


@dataclass(frozen=True)
class BenchSpec:
    """One suite line: a model, its quantization, and how to exercise it."""

    label: str
    kind: str  # "gpt" | "mlp"
    params: dict
    quant: QuantConfig
    seed: int = 7
    k: int = 30
    row_cap: Optional[int] = None
    mode: str = "prove"  # "prove" | "compile"


@dataclass
class BenchRecord:
    label: str
    kind: str = ""
    n_params: int = 0
    m_constraints: int = 0
    ratio: float = 0.0
    n_rows: int = 0
    n_segments: int = 0
    n_cols: int = 0  # 3 advice per segment + weight columns + i/o + constants
    compile_s: float = 0.0
    witness_s: float = 0.0
    prove_s: float = 0.0
    verify_s: float = 0.0
    proof_bytes: int = 0
    witness_bytes: int = 0
    peak_mem_est: int = 0
    peak_mem_traced: int = 0
    error: str = ""


_GPT_KEYS = {"vocab": 65, "block": 4, "layers": 2, "heads": 4, "embed": 32}
_MLP_KEYS = {"width": 32, "depth": 2}


def _default_label(kind: str, params: dict, cap: Optional[int]) -> str:
    if kind == "gpt":
        lab = "gpt-v{vocab}b{block}l{layers}h{heads}e{embed}".format(**params)
    else:
        lab = "mlp-{width}x{depth}".format(**params)
    return f"{lab}-c{cap}" if cap else lab


def parse_suite(text: str) -> list[BenchSpec]:
    """Parse a suite file into specs; raises SuiteError with the line number."""
    specs: list[BenchSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        if kind not in ("gpt", "mlp"):
            raise SuiteError(f"line {lineno}: unknown model kind {kind!r}")
        defaults = _GPT_KEYS if kind == "gpt" else _MLP_KEYS
        params = dict(defaults)
        f, bits, seed, k, cap, label, mode = 7, 16, 7, 30, None, None, "prove"
        for tok in parts[1:]:
            if "=" not in tok:
                raise SuiteError(f"line {lineno}: expected key=value, got {tok!r}")
            key, val = tok.split("=", 1)
            try:
                if key in defaults:
                    params[key] = int(val)
                elif key == "f":
                    f = int(val)
                elif key == "B":
                    bits = int(val)
                elif key == "seed":
                    seed = int(val)
                elif key == "k":
                    k = int(val)
                elif key == "cap":
                    cap = int(val)
                elif key == "label":
                    label = val
                elif key == "mode":
                    if val not in ("prove", "compile"):
                        raise SuiteError(f"line {lineno}: mode must be prove|compile")
                    mode = val
                else:
                    raise SuiteError(f"line {lineno}: unknown key {key!r} for {kind}")
            except ValueError as exc:
                if isinstance(exc, SuiteError):
                    raise
                raise SuiteError(f"line {lineno}: bad value for {key}: {val!r}") from None
        try:
            quant = QuantConfig(f, bits)
        except Exception as exc:
            raise SuiteError(f"line {lineno}: {exc}") from exc
        if label is None:
            label = _default_label(kind, params, cap)
        specs.append(BenchSpec(label, kind, params, quant, seed, k, cap, mode))
    return specs


def _build(spec: BenchSpec):
    """Graph, weights, input dict, and parameter count for a spec."""
    rng = np.random.default_rng(spec.seed + 1)
    if spec.kind == "gpt":
        mc = NanoGptConfig(
            vocab=spec.params["vocab"],
            block=spec.params["block"],
            n_layer=spec.params["layers"],
            n_head=spec.params["heads"],
            n_embd=spec.params["embed"],
        )
        g = build_nanogpt_graph(mc, spec.quant)
        w = init_nanogpt_weights(mc, spec.quant, spec.seed)
        inputs = {"tok": rng.integers(0, mc.vocab, mc.block, dtype=np.int64)}
        n_params = nanogpt_param_count(mc)
    else:
        mc = MlpConfig(width=spec.params["width"], depth=spec.params["depth"])
        g = build_mlp_graph(mc)
        w = init_mlp_weights(mc, spec.quant, spec.seed)
        inputs = {"x": rng.normal(0.0, 0.5, mc.width)}
        n_params = mlp_param_count(mc)
    return g, w, inputs, n_params


def run_spec(spec: BenchSpec, repeat: int = 1, traced_mem: bool = False) -> BenchRecord:
    """Run one spec; any failure is captured in the record's error field."""
    try:
        return _run_spec(spec, repeat, traced_mem)
    except Exception as exc:  # bench must survive any bad config
        return BenchRecord(label=spec.label, kind=spec.kind, error=f"{type(exc).__name__}: {exc}")


def _run_spec(spec: BenchSpec, repeat: int, traced_mem: bool) -> BenchRecord:
    g, w, inputs, n_params = _build(spec)
    gt = graph_to_text(g)

    t0 = time.perf_counter()
    cm = compile_graph(g, spec.quant, row_cap=spec.row_cap)
    compile_s = time.perf_counter() - t0

    wcols = -(-cm.total_weights // cm.n_rows) if cm.total_weights else 0
    rec = BenchRecord(
        label=spec.label,
        kind=spec.kind,
        n_params=n_params,
        m_constraints=cm.constraints,
        ratio=cm.ratio if n_params else 0.0,
        n_rows=cm.n_rows,
        n_segments=cm.n_segments,
        n_cols=3 * cm.n_segments + wcols + 2,
        compile_s=compile_s,
        peak_mem_est=prove_memory_estimate(cm),
    )
    if spec.mode == "compile":
        return rec

    trees = weight_trees(w, spec.quant)
    commitment = model_commitment(gt, w, spec.quant)
    wit_times, prove_times, verify_times = [], [], []
    pb = b""
    for _ in range(max(1, repeat)):
        t0 = time.perf_counter()
        wit = gen_witness(cm, w, inputs)
        t1 = time.perf_counter()
        proof = prove(cm, wit, gt, k=spec.k, weight_trees=trees)
        t2 = time.perf_counter()
        pb = proof.to_bytes()
        t3 = time.perf_counter()
        res = verify(pb, cm, gt, expected_commitment=commitment)
        t4 = time.perf_counter()
        if not res.ok:
            raise RuntimeError(f"honest proof rejected: {res.reason} {res.detail}")
        wit_times.append(t1 - t0)
        prove_times.append(t2 - t1)
        verify_times.append(t4 - t3)

    rec.witness_s = statistics.median(wit_times)
    rec.prove_s = statistics.median(prove_times)
    rec.verify_s = statistics.median(verify_times)
    rec.proof_bytes = len(pb)
    rec.witness_bytes = wit.private_bytes

    if traced_mem:
        tracemalloc.start()
        wit = gen_witness(cm, w, inputs)
        prove(cm, wit, gt, k=spec.k, weight_trees=trees)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        rec.peak_mem_traced = peak
    return rec


def run_suite(
    specs: list[BenchSpec],
    repeat: int = 1,
    traced_mem: bool = False,
    progress: Optional[Callable[[BenchRecord], None]] = None,
) -> list[BenchRecord]:
    records = []
    for spec in specs:
        rec = run_spec(spec, repeat=repeat, traced_mem=traced_mem)
        records.append(rec)
        if progress is not None:
            progress(rec)
    return records


_COLUMNS = [
    ("label", "config label"),
    ("kind", "model family (gpt|mlp)"),
    ("n_params", "trainable parameter count N"),
    ("m_constraints", "constraint count M (gates + lookups + copies)"),
    ("ratio", "M / N"),
    ("n_rows", "committed rows per segment (power of two)"),
    ("n_segments", "advice segment count"),
    ("n_cols", "committed columns: 3 advice per segment + weight + i/o + const"),
    ("compile_s", "compile wall time, seconds"),
    ("witness_s", "witness generation wall time, seconds (median)"),
    ("prove_s", "commit + open wall time, seconds (median)"),
    ("verify_s", "verify wall time, seconds (median)"),
    ("proof_bytes", "serialized proof size"),
    ("witness_bytes", "private witness cells, bytes"),
    ("peak_mem_est", "deterministic prover peak-memory estimate, bytes"),
    ("peak_mem_traced", "tracemalloc peak for one prove, bytes (0 if not traced)"),
    ("error", "failure text; empty on success"),
]


def records_to_tsv(records: list[BenchRecord]) -> str:
    """Tab-separated dump with a documented header; one row per record."""
    lines = ["# gridproof bench records, tab-separated"]
    for name, doc in _COLUMNS:
        lines.append(f"# {name}: {doc}")
    lines.append("\t".join(name for name, _ in _COLUMNS))
    for r in records:
        vals = []
        for name, _ in _COLUMNS:
            v = getattr(r, name)
            if isinstance(v, float):
                vals.append(f"{v:.6g}")
            else:
                vals.append(str(v))
        lines.append("\t".join(vals))
    return "\n".join(lines) + "\n"


def _fmt_bytes(n: int) -> str:
    if n >= 1 << 20:
        return f"{n / (1 << 20):.1f}M"
    if n >= 1 << 10:
        return f"{n / (1 << 10):.1f}K"
    return str(n)


def format_table(records: list[BenchRecord]) -> str:
    """Aligned human-readable summary table."""
    heads = ["label", "N", "M", "M/N", "rows", "seg", "cols",
             "wit ms", "prove ms", "verify ms", "proof", "peak mem", "status"]
    rows = [heads]
    for r in records:
        if r.error:
            status = r.error if len(r.error) <= 40 else r.error[:37] + "..."
        else:
            status = "ok" if r.prove_s else "compiled"
        rows.append([
            r.label,
            str(r.n_params),
            str(r.m_constraints),
            f"{r.ratio:.2f}" if r.n_params else "-",
            str(r.n_rows),
            str(r.n_segments),
            str(r.n_cols),
            f"{r.witness_s * 1e3:.1f}" if r.prove_s else "-",
            f"{r.prove_s * 1e3:.1f}" if r.prove_s else "-",
            f"{r.verify_s * 1e3:.2f}" if r.prove_s else "-",
            _fmt_bytes(r.proof_bytes) if r.proof_bytes else "-",
            _fmt_bytes(r.peak_mem_est),
            status,
        ])
    if len(rows) == 1:
        rows.append(["(no records)"] + [""] * (len(heads) - 1))
    widths = [max(len(row[i]) for row in rows) for i in range(len(heads))]
    out = []
    for row in rows:
        out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(out) + "\n"


# ready-made suites; also shipped as files under scripts/suites/
BUILTIN_SUITES = {
    "embed-sweep": "\n".join(
        f"gpt vocab=65 block=4 layers=2 heads=4 embed={e} B=20 mode=compile label=embed-{e}"
        for e in (32, 48, 64)
    ),
    "layer-sweep": "\n".join(
        f"gpt vocab=65 block=4 layers={l} heads=4 embed=32 B=20 mode=compile label=layers-{l}"
        for l in (2, 4, 6)
    ),
    "rowcap-sweep": "\n".join(
        f"mlp width=64 depth=10 B=16 cap={1 << e} label=cap-2^{e}"
        for e in range(10, 17)
    ),
    "matched-pair": (
        "gpt vocab=65 block=32 layers=2 heads=4 embed=48 B=20 mode=compile label=gpt-61k\n"
        "mlp width=173 depth=2 B=16 mode=compile label=mlp-60k"
    ),
}
