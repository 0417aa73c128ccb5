"""Command line entry points.

Verbs mirror the library surface: compile and profile inspect circuit
geometry, commit and publish handle the registry, prove and verify move
binary proof files, serve and query speak the TCP protocol, bench runs
suite files.  Inputs are JSON files mapping tensor name to nested lists;
proofs are opaque binary files.  Every verb exits 0 on success and 1 on
failure with a one-line reason on stderr (verify and query also report
the rejection class on stdout, since a clean rejection is their job, not
a crash).
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

import numpy as np

from . import bench as bench_mod
from .argument import DEFAULT_K, ProofError, prove, verify
from .circuit import CircuitError, compile_graph, gen_witness, profile_report
from .field import QuantConfig, QuantError
from .graph import GraphError, parse_graph
from .models import model_commitment, read_weights, weight_trees
from .protocol import (
    ModelBundle,
    ProtocolError,
    RegistryError,
    client_query,
    decode_outputs,
    load_record,
    publish,
    start_server,
)


def _quant_arg(text: str) -> QuantConfig:
    try:
        f, b = text.split(",")
        return QuantConfig(int(f), int(b))
    except QuantError:
        raise
    except Exception:
        raise argparse.ArgumentTypeError(f"--quant wants f,B (e.g. 7,16), got {text!r}")


def _addr_arg(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"--addr wants host:port, got {text!r}")
    return host, int(port)


def _read_graph(path: str) -> str:
    with open(path) as f:
        return f.read()


def _read_inputs(path: str) -> dict:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ProtocolError("inputs file must be a JSON object {tensor: values}")
    return {name: np.asarray(vals) for name, vals in data.items()}


def _compile_from_args(args):
    gt = _read_graph(args.graph)
    cm = compile_graph(parse_graph(gt), args.quant, row_cap=args.rows)
    return gt, cm


# verbs -------------------------------------------------------------------


def cmd_compile(args) -> int:
    _, cm = _compile_from_args(args)
    c = cm.counts
    print(f"rows          {cm.n_rows}")
    print(f"segments      {cm.n_segments}")
    print(f"rows assigned {c.rows_assigned}")
    print(f"gates         {c.gates}")
    print(f"lookups       {c.lookups}")
    print(f"copies        {c.copies}")
    print(f"constraints M {c.constraints}")
    print(f"weights N     {cm.total_weights}")
    if cm.total_weights:
        print(f"ratio M/N     {cm.ratio:.3f}")
    return 0


def cmd_profile(args) -> int:
    _, cm = _compile_from_args(args)
    print(profile_report(cm, name=args.graph))
    return 0


def cmd_commit(args) -> int:
    gt = _read_graph(args.graph)
    weights = read_weights(args.weights)
    digest = model_commitment(gt, weights, args.quant)
    print(digest.hex())
    if args.verbose:
        for name, tree in sorted(weight_trees(weights, args.quant).items()):
            print(f"  {name} {tree.root.hex()}")
    return 0


def _bundle_from_args(args) -> ModelBundle:
    return ModelBundle(
        model_id=args.model,
        graph_text=_read_graph(args.graph),
        weights=read_weights(args.weights),
        quant=args.quant,
        row_cap=args.rows,
    )


def cmd_publish(args) -> int:
    record = publish(args.registry, _bundle_from_args(args))
    print(f"published {record['model']} {record['commitment'][:16]} "
          f"rows={record['geometry']['n_rows']} segments={record['geometry']['n_segments']}")
    return 0


def cmd_prove(args) -> int:
    gt, cm = _compile_from_args(args)
    weights = read_weights(args.weights)
    inputs = _read_inputs(args.inputs)
    wit = gen_witness(cm, weights, inputs)
    for warning in wit.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    proof = prove(cm, wit, gt, k=args.k)
    blob = proof.to_bytes()
    with open(args.out, "wb") as f:
        f.write(blob)
    outputs = decode_outputs(cm, proof.io)
    leaves_opened = sum(len(seg) for seg in proof.advice_openings)
    print(json.dumps({"proof_bytes": len(blob), "leaves_opened": leaves_opened,
                      "outputs": outputs}))
    return 0


def cmd_verify(args) -> int:
    if args.registry and args.model:
        record = load_record(args.registry, args.model)
        gt = record["graph"]
        quant = QuantConfig(record["quant"]["f"], record["quant"]["B"])
        cm = compile_graph(parse_graph(gt), quant, row_cap=record["row_cap"])
        expected = bytes.fromhex(record["commitment"])
    elif args.graph and args.commitment:
        gt, cm = _compile_from_args(args)
        expected = bytes.fromhex(args.commitment)
    else:
        print("error: need either --registry with --model, or --graph with --commitment",
              file=sys.stderr)
        return 2
    with open(args.proof, "rb") as f:
        blob = f.read()
    res = verify(blob, cm, gt, expected_commitment=expected,
                 min_k=min(args.k, cm.n_segments * cm.n_rows))
    if res.ok:
        print(f"accepted rows={res.rows_checked}")
        return 0
    print(f"rejected {res.reason}: {res.detail}")
    return 1


def cmd_serve(args) -> int:
    bundle = _bundle_from_args(args)
    impostor: Optional[ModelBundle] = None
    if args.impostor_weights:
        # demo/test mode: answer with a different model under the same id
        impostor = ModelBundle(args.model, bundle.graph_text,
                               read_weights(args.impostor_weights), args.quant, args.rows)
    host, port = args.addr
    server, thread, port = start_server({bundle.model_id: bundle}, host, port,
                                        impostor=impostor)
    mode = " (impostor mode)" if impostor else ""
    print(f"serving {bundle.model_id} on {host}:{port}{mode}", flush=True)
    try:
        thread.join()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_query(args) -> int:
    inputs = _read_inputs(args.inputs)
    report = client_query(args.addr, args.model, inputs, args.registry, k=args.k)
    if report.accepted:
        payload = {"accepted": True, "verify_seconds": round(report.verify_seconds, 6),
                   "proof_bytes": report.proof_bytes, "outputs": report.outputs}
        text = json.dumps(payload)
        if args.out:
            with open(args.out, "w") as f:
                f.write(text + "\n")
        print(text)
        return 0
    print(f"rejected {report.reason}: {report.detail}")
    return 1


def cmd_bench(args) -> int:
    if args.suite in bench_mod.BUILTIN_SUITES:
        text = bench_mod.BUILTIN_SUITES[args.suite]
    else:
        with open(args.suite) as f:
            text = f.read()
    specs = bench_mod.parse_suite(text)
    records = bench_mod.run_suite(
        specs, repeat=args.repeat, traced_mem=args.traced_mem,
        progress=lambda r: print(f"  done {r.label}" + (f"  [{r.error}]" if r.error else ""),
                                 file=sys.stderr, flush=True) if args.verbose else None)
    print(bench_mod.format_table(records), end="")
    if args.out:
        with open(args.out, "w") as f:
            f.write(bench_mod.records_to_tsv(records))
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


# parser ------------------------------------------------------------------


def _add_quant(p, required=False):
    p.add_argument("--quant", type=_quant_arg, default=QuantConfig(7, 16), required=required,
                   help="fixed-point parameters f,B (default 7,16)")


def _add_geometry(p):
    p.add_argument("--graph", help="graph description file")
    p.add_argument("--rows", type=int, default=None, help="row cap (power of two)")
    _add_quant(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridproof",
                                 description="verifiable quantized inference toolkit")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("compile", help="place a graph and print constraint counts")
    _add_geometry(p)
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("profile", help="per-op cost breakdown for a graph")
    _add_geometry(p)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("commit", help="print the model commitment digest")
    p.add_argument("--graph", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--verbose", action="store_true", help="also print per-tensor roots")
    _add_quant(p)
    p.set_defaults(fn=cmd_commit)

    p = sub.add_parser("publish", help="append a commitment record to a registry")
    p.add_argument("--model", required=True, help="model id")
    p.add_argument("--graph", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--rows", type=int, default=None)
    _add_quant(p)
    p.set_defaults(fn=cmd_publish)

    p = sub.add_parser("prove", help="run the model and write a proof file")
    p.add_argument("--weights", required=True)
    p.add_argument("--inputs", required=True, help="JSON file {tensor: values}")
    p.add_argument("--out", required=True, help="proof output path")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    _add_geometry(p)
    p.set_defaults(fn=cmd_prove)

    p = sub.add_parser("verify", help="check a proof file; exit 0 accept, 1 reject")
    p.add_argument("--proof", required=True)
    p.add_argument("--commitment", help="expected commitment digest, hex")
    p.add_argument("--registry", help="take graph and digest from this registry")
    p.add_argument("--model", help="model id to look up in --registry")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    _add_geometry(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("serve", help="answer inference requests over TCP")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--addr", type=_addr_arg, default=("127.0.0.1", 0))
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--impostor-weights",
                   help="serve these weights instead while claiming --model (adversarial test)")
    _add_quant(p)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("query", help="query a server and verify the answer")
    p.add_argument("--model", required=True)
    p.add_argument("--addr", type=_addr_arg, required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--out", help="write accepted outputs JSON here")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("bench", help="run a benchmark suite file")
    p.add_argument("--suite", required=True,
                   help=f"suite file or one of: {', '.join(sorted(bench_mod.BUILTIN_SUITES))}")
    p.add_argument("--out", help="write TSV records here")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--traced-mem", action="store_true",
                   help="also measure one prove with tracemalloc (slower)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (GraphError, CircuitError, QuantError, ProofError, ProtocolError,
            RegistryError, bench_mod.SuiteError, OSError, json.JSONDecodeError,
            KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
