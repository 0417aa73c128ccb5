"""Serving protocol: commitment registry, TCP prove-on-request server, client.

The flow has four stages. An operator publishes a model's commitment record
to an append-only registry file. A client sends input data to the server.
The server runs the quantized forward pass, builds a witness, and answers
with the outputs plus a spot-check proof. The client re-derives everything
it can locally - commitment, circuit geometry, challenge rows, public io -
and accepts only if the proof verifies against the registry record.

Weights never travel over the wire; the client needs only the graph text
and the published digest. Wire messages are length-prefixed JSON, proofs
ride along base64-encoded.
"""

from __future__ import annotations

import base64
import fcntl
import hashlib
import json
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .field import QuantConfig, decode_array, encode_array, quantize_array
from .graph import Graph, parse_graph
from .lowering import infer_scales, reduce_graph
from .circuit import CircuitMatrix, compile_graph, gen_witness
from .models import model_commitment, weight_trees
from .argument import Proof, ProofError, prove, verify

MAX_MESSAGE = 1 << 26  # 64 MiB frame guard
DEFAULT_PORT = 9621


class ProtocolError(ValueError):
    pass


class RegistryError(ValueError):
    pass


# Model bundle -----------------------------------------------------------------


@dataclass
class ModelBundle:
    """Everything the server needs to answer for one model id."""

    model_id: str
    graph_text: str
    weights: dict
    quant: QuantConfig
    row_cap: Optional[int] = None
    _cm: Optional[CircuitMatrix] = field(default=None, repr=False)
    _trees: Optional[dict] = field(default=None, repr=False)

    @property
    def cm(self) -> CircuitMatrix:
        if self._cm is None:
            self._cm = compile_graph(parse_graph(self.graph_text), self.quant, self.row_cap)
        return self._cm

    @property
    def trees(self) -> dict:
        if self._trees is None:
            self._trees = weight_trees(self.weights, self.quant)
        return self._trees

    @property
    def commitment(self) -> bytes:
        return model_commitment(self.graph_text, self.weights, self.quant)

    def prove_request(self, inputs: dict, k: int) -> tuple[dict, bytes]:
        """Run the quantized forward pass and prove it; returns (outputs, proof)."""
        wit = gen_witness(self.cm, self.weights, inputs)
        proof = prove(self.cm, wit, self.graph_text, k=k, weight_trees=self.trees)
        return decode_outputs(self.cm, proof.io), proof.to_bytes()


def _io_scales(cm: CircuitMatrix) -> dict:
    scales = infer_scales(reduce_graph(cm.graph, cm.cfg))
    return scales


def encode_inputs(cm: CircuitMatrix, inputs: dict) -> np.ndarray:
    """The exact input-region cells gen_witness would produce, from raw values."""
    g = cm.graph
    cells = np.zeros(cm.io_len, np.uint64)
    for name in g.inputs:
        off = cm.io_map[name]
        vals = np.asarray(inputs[name])
        if g.dtype(name) == "idx":
            grid = vals.astype(np.int64).reshape(-1)
        else:
            grid = quantize_array(vals.astype(np.float64), cm.cfg).reshape(-1)
        cells[off:off + grid.size] = encode_array(grid)
    return cells


def decode_outputs(cm: CircuitMatrix, io: np.ndarray) -> dict:
    """Dequantized output tensors out of a public io vector."""
    scales = _io_scales(cm)
    out = {}
    for name in cm.graph.outputs:
        off = cm.io_map[name]
        shape = cm.graph.shape(name)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        grid = decode_array(io[off:off + n]).reshape(shape)
        out[name] = (grid / float(cm.cfg.scale ** scales[name])).tolist()
    return out


# Registry ---------------------------------------------------------------------


def _geometry_digest(cm: CircuitMatrix) -> str:
    desc = (f"rows={cm.n_rows} segments={cm.n_segments} cap={cm.row_cap or 0} "
            f"f={cm.cfg.scale_bits} B={cm.cfg.lookup_bits} io={cm.io_len}")
    return hashlib.sha256(desc.encode()).hexdigest()


def make_record(bundle: ModelBundle) -> dict:
    cm = bundle.cm
    return {
        "model": bundle.model_id,
        "commitment": bundle.commitment.hex(),
        "quant": {"f": bundle.quant.scale_bits, "B": bundle.quant.lookup_bits},
        "row_cap": bundle.row_cap,
        "geometry": {"n_rows": cm.n_rows, "n_segments": cm.n_segments, "io_len": cm.io_len},
        "geometry_digest": _geometry_digest(cm),
        "weight_roots": {n: t.root.hex() for n, t in bundle.trees.items()},
        "graph": bundle.graph_text,
        "published_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def publish(registry_path: str, bundle: ModelBundle) -> dict:
    """Append the bundle's record; same id with a different digest is refused."""
    record = make_record(bundle)
    with open(registry_path, "a+") as f:
        fcntl.flock(f.fileno(), fcntl.LOCK_EX)
        try:
            f.seek(0)
            for line in f:
                line = line.strip()
                if not line:
                    continue
                prior = json.loads(line)
                if prior["model"] != record["model"]:
                    continue
                if prior["commitment"] == record["commitment"]:
                    return prior  # idempotent republish
                raise RegistryError(
                    f"model {record['model']!r} already published with a different digest")
            f.write(json.dumps(record, separators=(",", ":")) + "\n")
            f.flush()
        finally:
            fcntl.flock(f.fileno(), fcntl.LOCK_UN)
    return record


def load_registry(registry_path: str) -> dict:
    """model id -> first published record."""
    records: dict[str, dict] = {}
    with open(registry_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records.setdefault(rec["model"], rec)
    return records


def load_record(registry_path: str, model_id: str) -> dict:
    records = load_registry(registry_path)
    if model_id not in records:
        raise RegistryError(f"model {model_id!r} not in registry")
    return records[model_id]


# Wire format ------------------------------------------------------------------


def send_message(sock: socket.socket, payload: dict) -> None:
    blob = json.dumps(payload, separators=(",", ":")).encode()
    if len(blob) > MAX_MESSAGE:
        raise ProtocolError("message too large")
    sock.sendall(struct.pack("<I", len(blob)) + blob)


def recv_message(sock: socket.socket) -> dict:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack("<I", header)
    if length > MAX_MESSAGE:
        raise ProtocolError("message too large")
    return json.loads(_recv_exact(sock, length).decode())


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed mid-message")
        buf.extend(chunk)
    return bytes(buf)


# Server -----------------------------------------------------------------------


class InferenceServer(socketserver.ThreadingTCPServer):
    """Answers inference requests with outputs plus proof.

    Connections are handled concurrently but proving is serialized through a
    lock, so requests effectively queue. `impostor` silently substitutes a
    different bundle while still answering under the requested model id; it
    exists so tests can show the client catching a model swap.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, bundles: dict, impostor: Optional[ModelBundle] = None):
        self.bundles = bundles
        self.impostor = impostor
        self.prove_lock = threading.Lock()
        super().__init__(addr, _Handler)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        try:
            msg = recv_message(self.request)
        except (ProtocolError, json.JSONDecodeError):
            return
        try:
            reply = self._dispatch(msg)
        except ProtocolError as e:
            reply = {"kind": "error", "error": str(e)}
        except Exception as e:  # defensive: never kill the worker silently
            reply = {"kind": "error", "error": f"internal error: {e}"}
        try:
            send_message(self.request, reply)
        except OSError:
            pass

    def _dispatch(self, msg: dict) -> dict:
        if msg.get("kind") != "infer":
            raise ProtocolError(f"unknown request kind {msg.get('kind')!r}")
        model_id = msg.get("model")
        server: InferenceServer = self.server
        if model_id not in server.bundles:
            raise ProtocolError(f"unknown model {model_id!r}")
        bundle = server.impostor or server.bundles[model_id]
        inputs = msg.get("inputs")
        if not isinstance(inputs, dict):
            raise ProtocolError("missing inputs")
        k = int(msg.get("k", 30))
        if k < 1:
            raise ProtocolError("k must be >= 1")
        try:
            arrays = {n: np.asarray(v) for n, v in inputs.items()}
            with server.prove_lock:
                outputs, proof_bytes = bundle.prove_request(arrays, k)
        except (KeyError, ValueError, ProofError) as e:
            raise ProtocolError(f"bad request: {e}") from None
        return {
            "kind": "result",
            "model": model_id,
            "outputs": outputs,
            "proof": base64.b64encode(proof_bytes).decode(),
        }


def start_server(bundles: dict, host: str = "127.0.0.1", port: int = 0,
                 impostor: Optional[ModelBundle] = None) -> tuple:
    """Background server for tests and the CLI; returns (server, thread, port)."""
    server = InferenceServer((host, port), bundles, impostor=impostor)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread, server.server_address[1]


# Client -----------------------------------------------------------------------


@dataclass
class QueryReport:
    accepted: bool
    reason: str  # "none" when accepted, else the rejection class
    detail: str = ""
    outputs: Optional[dict] = None
    verify_seconds: float = 0.0
    proof_bytes: int = 0


def client_query(addr: tuple, model_id: str, inputs: dict,
                 registry_path: str, k: int = 30,
                 timeout: float = 60.0) -> QueryReport:
    """Ask the server for an inference and verify the answer locally.

    The verdict never trusts server-sent plaintext: outputs are re-read from
    the proof's public io and the input region is matched against what we
    actually sent.
    """
    record = load_record(registry_path, model_id)
    try:
        with socket.create_connection(addr, timeout=timeout) as sock:
            send_message(sock, {"kind": "infer", "model": model_id,
                                "inputs": {n: np.asarray(v).tolist() for n, v in inputs.items()},
                                "k": k})
            try:
                reply = recv_message(sock)
            except json.JSONDecodeError as e:
                return QueryReport(False, "protocol-error", f"undecodable reply: {e}")
    except (OSError, ProtocolError) as e:
        return QueryReport(False, "network-error", str(e))

    if reply.get("kind") == "error":
        return QueryReport(False, "protocol-error", reply.get("error", ""))
    if reply.get("kind") != "result":
        return QueryReport(False, "protocol-error", f"unexpected reply kind {reply.get('kind')!r}")

    try:
        proof_blob = base64.b64decode(reply["proof"])
    except (KeyError, ValueError):
        return QueryReport(False, "protocol-error", "response carries no parseable proof")

    cm = compile_graph(parse_graph(record["graph"]),
                       QuantConfig(record["quant"]["f"], record["quant"]["B"]),
                       record["row_cap"])
    expected = bytes.fromhex(record["commitment"])
    t0 = time.perf_counter()
    res = verify(proof_blob, cm, record["graph"], expected, min_k=min(
        k, cm.n_segments * cm.n_rows))
    elapsed = time.perf_counter() - t0
    if not res.ok:
        return QueryReport(False, res.reason, res.detail,
                           verify_seconds=elapsed, proof_bytes=len(proof_blob))

    proof = Proof.from_bytes(proof_blob)
    sent = encode_inputs(cm, {n: np.asarray(v) for n, v in inputs.items()})
    n_in = sum(int(np.prod(cm.graph.shape(n), dtype=np.int64)) for n in cm.graph.inputs)
    if proof.io[:n_in].tolist() != sent[:n_in].tolist():
        return QueryReport(False, "io-mismatch", "proof input region differs from the request",
                           verify_seconds=elapsed, proof_bytes=len(proof_blob))

    outputs = decode_outputs(cm, proof.io)
    claimed = reply.get("outputs")
    if claimed is not None and not _outputs_match(outputs, claimed):
        return QueryReport(False, "io-mismatch", "server plaintext outputs differ from the proof",
                           verify_seconds=elapsed, proof_bytes=len(proof_blob))
    return QueryReport(True, "none", outputs=outputs,
                       verify_seconds=elapsed, proof_bytes=len(proof_blob))


def _outputs_match(a: dict, b: dict) -> bool:
    if set(a) != set(b):
        return False
    for name in a:
        if not np.allclose(np.asarray(a[name], dtype=np.float64),
                           np.asarray(b[name], dtype=np.float64), atol=0, rtol=0):
            return False
    return True
