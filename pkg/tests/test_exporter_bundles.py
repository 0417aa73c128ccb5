"""Cross-checks exported model bundles against the quantized pipeline.

Bundles come from the separate exporter package under frontend/ (generate
with `cd frontend && npm run bundles`). Each bundle directory holds a graph
file, a weights file, golden inputs, golden float outputs, and a manifest;
this suite consumes only those files. Skips entirely when none exist.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from gridproof.argument import prove, verify
from gridproof.circuit import compile_graph, gen_witness
from gridproof.field import QuantConfig
from gridproof.graph import graph_to_text, parse_graph
from gridproof.models import (
    MlpConfig,
    NanoGptConfig,
    build_mlp_graph,
    build_nanogpt_graph,
    model_commitment,
    weight_trees,
    weights_from_bytes,
)
from gridproof.protocol import decode_outputs

BUNDLE_ROOT = Path(__file__).resolve().parent.parent / "frontend" / "bundles"
MANIFESTS = sorted(BUNDLE_ROOT.glob("*/manifest.json")) if BUNDLE_ROOT.is_dir() else []

pytestmark = pytest.mark.skipif(not MANIFESTS, reason="no exported bundles present")

# node count of the (65,16,2,4,32) toy, counted once with parse_graph
TOY_GPT_PARSE_NODES = 127


@pytest.fixture(scope="module", params=MANIFESTS, ids=lambda p: p.parent.name)
def bundle(request):
    root = request.param.parent
    man = json.loads(request.param.read_text())
    files = man["files"]
    b = {
        "manifest": man,
        "graph_text": (root / files["graph"]).read_text(),
        "weights_bytes": (root / files["weights"]).read_bytes(),
        "inputs": json.loads((root / files["inputs"]).read_text()),
        "golden": json.loads((root / files["golden"]).read_text()),
        "quant": QuantConfig(man["quant"]["f"], man["quant"]["B"]),
    }
    b["graph"] = parse_graph(b["graph_text"])
    b["weights"] = weights_from_bytes(b["weights_bytes"])
    b["cm"] = compile_graph(b["graph"], b["quant"])
    return b


def test_weights_file_parses_to_manifest_count(bundle):
    total = sum(int(v.size) for v in bundle["weights"].values())
    assert total == bundle["manifest"]["paramCount"]


def test_manifest_digests_bind_the_files(bundle):
    man = bundle["manifest"]
    assert hashlib.sha256(bundle["weights_bytes"]).hexdigest() == man["digests"]["weights"]
    assert hashlib.sha256(bundle["graph_text"].encode()).hexdigest() == man["digests"]["graph"]


def test_graph_matches_builtin_builder(bundle):
    man = bundle["manifest"]
    cfg = man["config"]
    if man["kind"] == "nanogpt":
        g = build_nanogpt_graph(
            NanoGptConfig(cfg["vocab"], cfg["block"], cfg["layers"], cfg["heads"], cfg["embed"]),
            bundle["quant"],
        )
    else:
        g = build_mlp_graph(MlpConfig(cfg["width"], cfg["depth"]))
    assert bundle["graph_text"] == graph_to_text(g)


def test_toy_gpt_node_count_golden(bundle):
    man = bundle["manifest"]
    if man["kind"] != "nanogpt" or man["config"] != {
        "vocab": 65, "block": 16, "layers": 2, "heads": 4, "embed": 32,
    }:
        pytest.skip("golden applies to the standard toy transformer only")
    assert len(bundle["graph"].nodes) == TOY_GPT_PARSE_NODES


def test_golden_fidelity(bundle):
    man = bundle["manifest"]
    out_name = man["outputTensor"]
    (in_name, prompts), = bundle["inputs"].items()
    golden = np.asarray(bundle["golden"][out_name])
    assert len(prompts) == man["prompts"] == golden.shape[0]

    max_err = 0.0
    argmax_hits = 0
    for i, prompt in enumerate(prompts):
        wit = gen_witness(bundle["cm"], bundle["weights"], {in_name: np.asarray(prompt)})
        assert sum(wit.saturations.values()) == 0
        got = np.asarray(decode_outputs(bundle["cm"], wit.io)[out_name])
        max_err = max(max_err, float(np.abs(got - golden[i]).max()))
        if man["kind"] == "nanogpt":
            argmax_hits += int(got[-1].argmax() == golden[i][-1].argmax())

    assert max_err <= 2.0**-4, f"max abs error {max_err:.5f}"
    if man["kind"] == "nanogpt":
        assert argmax_hits / len(prompts) >= 0.95


def test_bundle_proves_and_verifies(bundle):
    cm, weights, gt = bundle["cm"], bundle["weights"], bundle["graph_text"]
    trees = weight_trees(weights, bundle["quant"])
    commitment = model_commitment(gt, weights, bundle["quant"])
    (in_name, prompts), = bundle["inputs"].items()
    wit = gen_witness(cm, weights, {in_name: np.asarray(prompts[0])})
    blob = prove(cm, wit, gt, k=30, weight_trees=trees).to_bytes()
    res = verify(blob, cm, gt, expected_commitment=commitment)
    assert res.ok and res.reason == "none"
