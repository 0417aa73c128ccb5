"""Registry, server, and client behavior over a real TCP loopback."""

import base64
import json
import socket
import statistics
import struct
import threading

import numpy as np
import pytest

from gridproof.argument import Proof, _run_transcript, leaf_rows
from gridproof.field import QuantConfig
from gridproof.graph import graph_to_text
from gridproof.models import (
    MlpConfig,
    build_mlp_graph,
    init_mlp_weights,
    weights_to_bytes,
)
from gridproof.protocol import (
    ModelBundle,
    QueryReport,
    RegistryError,
    client_query,
    decode_outputs,
    encode_inputs,
    load_record,
    load_registry,
    make_record,
    publish,
    recv_message,
    send_message,
    start_server,
)

QUANT = QuantConfig(7, 16)
MODEL_ID = "mlp-16x2"


def _mlp_bundle(width: int, depth: int, seed: int, model_id: str = MODEL_ID) -> ModelBundle:
    mc = MlpConfig(width, depth)
    g = build_mlp_graph(mc)
    return ModelBundle(model_id, graph_to_text(g), init_mlp_weights(mc, QUANT, seed), QUANT)


@pytest.fixture(scope="module")
def bundle():
    return _mlp_bundle(16, 2, seed=5)


@pytest.fixture(scope="module")
def registry(tmp_path_factory, bundle):
    path = str(tmp_path_factory.mktemp("reg") / "registry.jsonl")
    publish(path, bundle)
    return path


@pytest.fixture(scope="module")
def server(bundle):
    srv, thread, port = start_server({bundle.model_id: bundle})
    yield ("127.0.0.1", port)
    srv.shutdown()


@pytest.fixture(scope="module")
def inputs():
    rng = np.random.default_rng(11)
    return {"x": rng.normal(0.0, 0.5, 16)}


def _shim_server(reply_fn):
    """Tiny one-thread TCP server whose reply is computed by reply_fn(msg).

    reply_fn returns a dict to send as JSON, raw bytes to send verbatim, or
    None to close without answering.  Used to fake misbehaving servers.
    """
    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(8)

    def run():
        while True:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            with conn:
                try:
                    msg = recv_message(conn)
                    reply = reply_fn(msg)
                    if isinstance(reply, dict):
                        send_message(conn, reply)
                    elif reply is not None:
                        conn.sendall(reply)
                except Exception:
                    pass

    threading.Thread(target=run, daemon=True).start()
    return srv, ("127.0.0.1", srv.getsockname()[1])


# Registry ----------------------------------------------------------------


class TestRegistry:
    def test_record_fields(self, bundle):
        rec = make_record(bundle)
        assert rec["model"] == MODEL_ID
        assert len(bytes.fromhex(rec["commitment"])) == 32
        assert rec["quant"] == {"f": 7, "B": 16}
        assert rec["geometry"]["n_rows"] == bundle.cm.n_rows
        assert set(rec["weight_roots"]) == set(bundle.weights)
        assert rec["graph"] == bundle.graph_text

    def test_publish_and_load(self, registry, bundle):
        rec = load_record(registry, MODEL_ID)
        assert rec["commitment"] == bundle.commitment.hex()

    def test_republish_same_digest_is_idempotent(self, registry, bundle):
        before = open(registry).read()
        publish(registry, bundle)
        assert open(registry).read() == before

    def test_conflicting_republish_rejected(self, registry):
        other = _mlp_bundle(16, 2, seed=99)  # same id, different weights
        with pytest.raises(RegistryError, match="different digest"):
            publish(registry, other)
        # the original record is untouched
        assert load_record(registry, MODEL_ID)["commitment"] != other.commitment.hex()

    def test_registry_keeps_first_record(self, tmp_path):
        path = str(tmp_path / "reg.jsonl")
        a = _mlp_bundle(16, 2, seed=5)
        publish(path, a)
        # a hand-appended conflicting line must not shadow the first record
        rogue = make_record(_mlp_bundle(16, 2, seed=99))
        with open(path, "a") as f:
            f.write(json.dumps(rogue) + "\n")
        assert load_registry(path)[MODEL_ID]["commitment"] == a.commitment.hex()

    def test_unknown_model_raises(self, registry):
        with pytest.raises(RegistryError, match="not in registry"):
            load_record(registry, "ghost")


# io encoding -------------------------------------------------------------


class TestIoCodec:
    def test_inputs_round_trip_through_witness_io(self, bundle, inputs):
        from gridproof.circuit import gen_witness

        wit = gen_witness(bundle.cm, bundle.weights, inputs)
        sent = encode_inputs(bundle.cm, inputs)
        n_in = 16
        assert sent[:n_in].tolist() == wit.io[:n_in].tolist()

    def test_decode_outputs_shapes_and_scale(self, bundle, inputs):
        from gridproof.circuit import gen_witness

        wit = gen_witness(bundle.cm, bundle.weights, inputs)
        outs = decode_outputs(bundle.cm, wit.io)
        assert set(outs) == set(bundle.cm.graph.outputs)
        for name, vals in outs.items():
            arr = np.asarray(vals)
            assert arr.shape == bundle.cm.graph.shape(name)
            # dequantized values live on the fixed-point grid
            assert np.all(np.abs(arr) < 1 << 10)


# Honest serving ----------------------------------------------------------


class TestHonestServing:
    def test_query_accepted(self, server, registry, inputs):
        rep = client_query(server, MODEL_ID, inputs, registry)
        assert rep.accepted, (rep.reason, rep.detail)
        assert rep.reason == "none"
        assert rep.outputs is not None and "l1.act" in rep.outputs
        assert rep.proof_bytes > 0
        assert rep.verify_seconds > 0

    def test_soak_twenty_requests(self, server, registry):
        rng = np.random.default_rng(3)
        client_query(server, MODEL_ID, {"x": rng.normal(0.0, 0.5, 16)}, registry)  # warm
        reports: list[QueryReport] = []
        for _ in range(20):
            rep = client_query(server, MODEL_ID, {"x": rng.normal(0.0, 0.5, 16)}, registry)
            reports.append(rep)
        assert sum(r.accepted for r in reports) == 20
        times = [r.verify_seconds for r in reports]
        # Drift means the later half got systematically slower; medians shrug
        # off one-off scheduler or GC spikes that max() would trip on.
        early = statistics.median(times[:10])
        late = statistics.median(times[10:])
        assert late < 2 * early + 0.05, f"verify times drifted: {times}"

    def test_concurrent_queries_all_verify(self, server, registry):
        rng = np.random.default_rng(4)
        payloads = [{"x": rng.normal(0.0, 0.5, 16)} for _ in range(6)]
        results: list = [None] * len(payloads)

        def worker(i):
            results[i] = client_query(server, MODEL_ID, payloads[i], registry)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(len(payloads))]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r.accepted for r in results)

    def test_unknown_model_is_protocol_error(self, server, registry, bundle):
        # publish a second record so the registry lookup succeeds while the
        # server still has no such bundle
        ghost = _mlp_bundle(16, 2, seed=5, model_id="ghost")
        publish(registry, ghost)
        rep = client_query(server, "ghost", {"x": np.zeros(16)}, registry)
        assert not rep.accepted
        assert rep.reason == "protocol-error"
        assert "unknown model" in rep.detail


# Rejections --------------------------------------------------------------


class TestRejections:
    def test_impostor_weights_rejected(self, registry, inputs):
        impostor = _mlp_bundle(16, 2, seed=99)
        srv, _, port = start_server({MODEL_ID: impostor})
        try:
            rep = client_query(("127.0.0.1", port), MODEL_ID, inputs, registry)
        finally:
            srv.shutdown()
        assert not rep.accepted
        assert rep.reason == "commitment-mismatch"

    def test_impostor_architecture_rejected(self, registry, inputs):
        # same input shape, different architecture, answering under the same id
        impostor = _mlp_bundle(16, 3, seed=5)
        srv, _, port = start_server({MODEL_ID: impostor})
        try:
            rep = client_query(("127.0.0.1", port), MODEL_ID, inputs, registry)
        finally:
            srv.shutdown()
        assert not rep.accepted
        assert rep.reason == "commitment-mismatch"

    def test_truncated_proof_is_malformed(self, bundle, registry, inputs):
        def reply(msg):
            arrays = {n: np.asarray(v) for n, v in msg["inputs"].items()}
            outputs, pb = bundle.prove_request(arrays, int(msg["k"]))
            return {"kind": "result", "model": msg["model"], "outputs": outputs,
                    "proof": base64.b64encode(pb[:-40]).decode()}

        srv, addr = _shim_server(reply)
        try:
            rep = client_query(addr, MODEL_ID, inputs, registry)
        finally:
            srv.close()
        assert not rep.accepted
        assert rep.reason == "malformed"

    def test_doctored_plaintext_outputs_rejected(self, bundle, registry, inputs):
        def reply(msg):
            arrays = {n: np.asarray(v) for n, v in msg["inputs"].items()}
            outputs, pb = bundle.prove_request(arrays, int(msg["k"]))
            outputs["l1.act"][0] += 1.0
            return {"kind": "result", "model": msg["model"], "outputs": outputs,
                    "proof": base64.b64encode(pb).decode()}

        srv, addr = _shim_server(reply)
        try:
            rep = client_query(addr, MODEL_ID, inputs, registry)
        finally:
            srv.close()
        assert not rep.accepted
        assert rep.reason == "io-mismatch"
        assert "plaintext" in rep.detail

    def test_swapped_input_region_rejected(self, bundle, registry, inputs):
        def reply(msg):
            other = {"x": np.linspace(-1.0, 1.0, 16)}  # not what the client sent
            outputs, pb = bundle.prove_request(other, int(msg["k"]))
            return {"kind": "result", "model": msg["model"], "outputs": outputs,
                    "proof": base64.b64encode(pb).decode()}

        srv, addr = _shim_server(reply)
        try:
            rep = client_query(addr, MODEL_ID, inputs, registry)
        finally:
            srv.close()
        assert not rep.accepted
        assert rep.reason == "io-mismatch"
        assert "input region" in rep.detail

    def test_unreachable_server_is_network_error(self, registry, inputs):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()  # nothing listens here now
        rep = client_query(("127.0.0.1", port), MODEL_ID, inputs, registry, timeout=2.0)
        assert not rep.accepted
        assert rep.reason == "network-error"

    def test_garbage_reply_is_protocol_error(self, registry, inputs):
        def reply(msg):
            blob = b"ha! not json"
            return struct.pack("<I", len(blob)) + blob

        srv, addr = _shim_server(reply)
        try:
            rep = client_query(addr, MODEL_ID, inputs, registry)
        finally:
            srv.close()
        assert not rep.accepted
        assert rep.reason == "protocol-error"

    def test_error_kind_reply_is_protocol_error(self, registry, inputs):
        srv, addr = _shim_server(lambda msg: {"kind": "error", "error": "proving pool on fire"})
        try:
            rep = client_query(addr, MODEL_ID, inputs, registry)
        finally:
            srv.close()
        assert rep.reason == "protocol-error"
        assert "on fire" in rep.detail


# Wire-level invariants ----------------------------------------------------


def _raw_exchange(addr, payload: dict) -> tuple[bytes, dict]:
    """Send one request, return (all raw reply bytes, parsed reply)."""
    with socket.create_connection(addr, timeout=30) as sock:
        send_message(sock, payload)
        header = b""
        while len(header) < 4:
            header += sock.recv(4 - len(header))
        (length,) = struct.unpack("<I", header)
        body = b""
        while len(body) < length:
            chunk = sock.recv(length - len(body))
            if not chunk:
                break
            body += chunk
    return header + body, json.loads(body.decode())


class TestWireInvariants:
    def test_no_weight_bytes_on_the_wire(self, bundle, server, inputs):
        raw, reply = _raw_exchange(server, {
            "kind": "infer", "model": MODEL_ID,
            "inputs": {n: np.asarray(v).tolist() for n, v in inputs.items()}, "k": 30})
        traffic = raw + base64.b64decode(reply["proof"])
        blob = weights_to_bytes(bundle.weights)
        # scan distinctive 32-byte windows of the canonical weights file;
        # constant runs (e.g. zero padding) are skipped as non-identifying
        hits = 0
        for off in range(0, len(blob) - 32, 16):
            window = blob[off:off + 32]
            if len(set(window)) < 8:
                continue
            if traffic.find(window) != -1:
                hits += 1
        assert hits == 0

    def test_transcript_binds_openings_to_request(self, bundle, server, registry, inputs):
        # the challenge rows recomputed from public data alone must all be
        # covered by the proof's openings: bait-and-switch on io or roots
        # would land on unopened rows
        raw, reply = _raw_exchange(server, {
            "kind": "infer", "model": MODEL_ID,
            "inputs": {n: np.asarray(v).tolist() for n, v in inputs.items()}, "k": 30})
        proof = Proof.from_bytes(base64.b64decode(reply["proof"]))
        record = load_record(registry, MODEL_ID)
        assert proof.commitment == bytes.fromhex(record["commitment"])

        rows = _run_transcript(proof)
        lr = leaf_rows(proof.n_rows)
        for row in rows:
            seg, local = divmod(row, proof.n_rows)
            assert local // lr in proof.advice_openings[seg]

        # and the io region embeds exactly the inputs we sent
        sent = encode_inputs(bundle.cm, inputs)
        assert proof.io[:16].tolist() == sent[:16].tolist()

    def test_different_inputs_draw_different_rows(self, bundle):
        from gridproof.argument import prove
        from gridproof.circuit import gen_witness

        rng = np.random.default_rng(8)
        rows = []
        for _ in range(2):
            wit = gen_witness(bundle.cm, bundle.weights, {"x": rng.normal(0.0, 0.5, 16)})
            pf = prove(bundle.cm, wit, bundle.graph_text, weight_trees=bundle.trees)
            rows.append(_run_transcript(pf))
        assert rows[0] != rows[1]
