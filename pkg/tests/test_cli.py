"""CLI verbs exercised in-process through main()."""

import json

import numpy as np
import pytest

from gridproof.cli import main
from gridproof.field import QuantConfig
from gridproof.graph import graph_to_text
from gridproof.models import MlpConfig, build_mlp_graph, init_mlp_weights, write_weights
from gridproof.protocol import ModelBundle, start_server


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    mc = MlpConfig(16, 2)
    q = QuantConfig(7, 16)
    g = build_mlp_graph(mc)
    (d / "mlp.graph").write_text(graph_to_text(g))
    write_weights(d / "mlp.gpwt", init_mlp_weights(mc, q, seed=5))
    write_weights(d / "evil.gpwt", init_mlp_weights(mc, q, seed=99))
    rng = np.random.default_rng(1)
    (d / "in.json").write_text(json.dumps({"x": rng.normal(0, 0.5, 16).tolist()}))
    return d


def test_compile_prints_counts(workdir, capsys):
    assert main(["compile", "--graph", str(workdir / "mlp.graph"), "--quant", "7,16"]) == 0
    out = capsys.readouterr().out
    assert "constraints M 1776" in out
    assert "rows          1024" in out


def test_compile_bad_graph_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.graph"
    bad.write_text("tensor x fix 4\nnode y frobnicate x\noutput y\n")
    assert main(["compile", "--graph", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err


def test_profile_mentions_ratio(workdir, capsys):
    assert main(["profile", "--graph", str(workdir / "mlp.graph")]) == 0
    assert "M / N" in capsys.readouterr().out


def test_commit_prints_digest(workdir, capsys):
    assert main(["commit", "--graph", str(workdir / "mlp.graph"),
                 "--weights", str(workdir / "mlp.gpwt")]) == 0
    digest = capsys.readouterr().out.strip()
    assert len(digest) == 64
    int(digest, 16)


def test_prove_verify_round_trip(workdir, capsys):
    proof = workdir / "proof.bin"
    reg = workdir / "reg.jsonl"
    assert main(["publish", "--model", "m", "--graph", str(workdir / "mlp.graph"),
                 "--weights", str(workdir / "mlp.gpwt"), "--registry", str(reg)]) == 0
    assert main(["prove", "--graph", str(workdir / "mlp.graph"),
                 "--weights", str(workdir / "mlp.gpwt"),
                 "--inputs", str(workdir / "in.json"), "--out", str(proof)]) == 0
    line = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert line["proof_bytes"] == proof.stat().st_size
    assert "l1.act" in line["outputs"]

    assert main(["verify", "--proof", str(proof), "--registry", str(reg),
                 "--model", "m"]) == 0
    assert "accepted" in capsys.readouterr().out


def test_verify_rejects_wrong_weights(workdir, capsys):
    proof = workdir / "evil.bin"
    reg = workdir / "reg2.jsonl"
    assert main(["publish", "--model", "m", "--graph", str(workdir / "mlp.graph"),
                 "--weights", str(workdir / "mlp.gpwt"), "--registry", str(reg)]) == 0
    assert main(["prove", "--graph", str(workdir / "mlp.graph"),
                 "--weights", str(workdir / "evil.gpwt"),
                 "--inputs", str(workdir / "in.json"), "--out", str(proof)]) == 0
    capsys.readouterr()
    assert main(["verify", "--proof", str(proof), "--registry", str(reg),
                 "--model", "m"]) == 1
    assert "commitment-mismatch" in capsys.readouterr().out


def test_verify_requires_a_commitment_source(workdir, capsys):
    assert main(["verify", "--proof", str(workdir / "proof.bin")]) == 2


def test_query_against_live_server(workdir, capsys):
    q = QuantConfig(7, 16)
    bundle = ModelBundle("m", (workdir / "mlp.graph").read_text(),
                         init_mlp_weights(MlpConfig(16, 2), q, seed=5), q)
    reg = workdir / "reg3.jsonl"
    assert main(["publish", "--model", "m", "--graph", str(workdir / "mlp.graph"),
                 "--weights", str(workdir / "mlp.gpwt"), "--registry", str(reg)]) == 0
    srv, _, port = start_server({"m": bundle})
    try:
        capsys.readouterr()
        code = main(["query", "--model", "m", "--addr", f"127.0.0.1:{port}",
                     "--registry", str(reg), "--inputs", str(workdir / "in.json"),
                     "--out", str(workdir / "outs.json")])
    finally:
        srv.shutdown()
    assert code == 0
    reply = json.loads(capsys.readouterr().out)
    assert reply["accepted"] is True
    assert json.loads((workdir / "outs.json").read_text())["outputs"] == reply["outputs"]


def test_bench_empty_suite_exits_zero(tmp_path, capsys):
    suite = tmp_path / "empty.suite"
    suite.write_text("# nothing here\n\n")
    assert main(["bench", "--suite", str(suite)]) == 0
    assert "(no records)" in capsys.readouterr().out


def test_bench_records_failures_and_continues(tmp_path, capsys):
    suite = tmp_path / "mixed.suite"
    suite.write_text(
        "mlp width=16 depth=2 label=ok\n"
        "mlp width=16 depth=2 cap=8 label=doomed\n"  # chain cannot fit
    )
    out = tmp_path / "records.tsv"
    assert main(["bench", "--suite", str(suite), "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "ok" in table and "doomed" in table and "region does not fit" in table
    rows = [l for l in out.read_text().splitlines() if l and not l.startswith("#")]
    assert len(rows) == 3  # header + 2 records


def test_bench_bad_suite_line_exits_one(tmp_path, capsys):
    suite = tmp_path / "bad.suite"
    suite.write_text("gpt vocab=sixty-five\n")
    assert main(["bench", "--suite", str(suite)]) == 1
    assert "error:" in capsys.readouterr().err


def test_bench_builtin_suite_name(capsys):
    assert main(["bench", "--suite", "matched-pair"]) == 0
    out = capsys.readouterr().out
    assert "gpt-61k" in out and "mlp-60k" in out
