"""Untrusted application server: storage, scheduling and the attack harness.

The host stores only ciphertexts and public metadata (collection names,
schemas, counts).  For a query it forwards the token and the relevant
encrypted collections to the trusted core, compiles the expression into
the operator plan, schedules the operator calls in the plan's canonical
order, and returns the finalized envelope.  `handle_query_adversarial`
runs the same pipeline with a mutated schedule, modelling a compromised
server that invokes the boundary arbitrarily.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from . import crypto
from .boundary import BoundaryClient, CoreBoundary
from .core import TrustedCore, ResponseEnvelope
from .documents import collection_id
from .errors import (
    ArgumentError,
    AttestationError,
    IntegrityError,
    NotFoundError,
    QShieldError,
)
from .query import Invocation, compile_query, plan_invocations

DEFAULT_CHUNK_SIZE = 128

_TRUSTED_SOURCES = (
    "core.py",
    "crypto.py",
    "documents.py",
    "encoding.py",
    "errors.py",
    "pairing.py",
    "policy.py",
    "sharing.py",
)


def measurement() -> bytes:
    """Digest of the trusted-core build artifact (its source modules)."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for name in _TRUSTED_SOURCES:
        h.update(name.encode())
        h.update((root / name).read_bytes())
    return h.digest()


@dataclass(frozen=True)
class QueryRequest:
    q: str
    tk: bytes


@dataclass(frozen=True)
class ChannelHandle:
    """Owner/broker side of an established channel to the trusted core."""

    channel_key: bytes
    kem_blob: bytes


class EncryptedStore:
    """Directory-per-collection ciphertext store.

    Layout: <root>/<cid>/manifest.json plus numbered chunk files, each a
    JSON array of {"did", "ct"} entries holding at most chunk_size
    documents, mirroring the collection chunking rule.
    """

    def __init__(self, root: str | Path, chunk_size: int = DEFAULT_CHUNK_SIZE):
        if chunk_size < 1:
            raise ArgumentError("chunk size must be positive")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.chunk_size = chunk_size
        self._lock = threading.Lock()
        self._did_index: dict[str, set[str]] = {}

    def _dir(self, cid: str) -> Path:
        return self.root / cid

    def _manifest_path(self, cid: str) -> Path:
        return self._dir(cid) / "manifest.json"

    def _chunk_path(self, cid: str, index: int) -> Path:
        return self._dir(cid) / f"chunk_{index:04d}.json"

    def _read_manifest(self, cid: str) -> dict:
        path = self._manifest_path(cid)
        if not path.exists():
            raise NotFoundError(f"no collection with id {cid[:16]}...")
        return json.loads(path.read_text())

    def _write_manifest(self, cid: str, manifest: dict) -> None:
        self._manifest_path(cid).write_text(json.dumps(manifest, indent=1))

    def create_collection(self, name: str, schema: set[str] | list[str]) -> str:
        with self._lock:
            cid = collection_id(name)
            if self._manifest_path(cid).exists():
                raise ArgumentError(f"collection {name!r} already exists")
            self._dir(cid).mkdir(parents=True, exist_ok=True)
            self._write_manifest(
                cid,
                {
                    "cid": cid,
                    "name": name,
                    "schema": sorted(schema),
                    "count": 0,
                    "chunk_size": self.chunk_size,
                    "files": [],
                },
            )
            return cid

    def store(self, cid: str, did: str, ct_msg: bytes) -> dict:
        """Append one encrypted document; idempotent on an identical pair."""
        if hashlib.sha256(ct_msg).hexdigest() != did:
            raise IntegrityError("document id does not match H(ct)")
        with self._lock:
            manifest = self._read_manifest(cid)
            if cid not in self._did_index:
                self._did_index[cid] = {
                    e["did"] for e in self._iter_entries(cid, manifest)
                }
            if did in self._did_index[cid]:
                return {"stored": False, "count": manifest["count"]}
            files = manifest["files"]
            if files and files[-1]["count"] < manifest["chunk_size"]:
                index = files[-1]["index"]
                chunk = json.loads(self._chunk_path(cid, index).read_text())
                files[-1]["count"] += 1
            else:
                index = len(files) + 1
                chunk = []
                files.append({"index": index, "count": 1})
            chunk.append({"did": did, "ct": base64.b64encode(ct_msg).decode("ascii")})
            self._chunk_path(cid, index).write_text(json.dumps(chunk))
            manifest["count"] += 1
            self._write_manifest(cid, manifest)
            self._did_index[cid].add(did)
            return {"stored": True, "count": manifest["count"]}

    def _iter_entries(self, cid: str, manifest: dict):
        for f in manifest["files"]:
            for entry in json.loads(self._chunk_path(cid, f["index"]).read_text()):
                yield entry

    def retrieve(self, cid: str) -> list[tuple[str, bytes]]:
        with self._lock:
            manifest = self._read_manifest(cid)
            return [
                (e["did"], base64.b64decode(e["ct"]))
                for e in self._iter_entries(cid, manifest)
            ]

    def exists(self, cid: str) -> bool:
        return self._manifest_path(cid).exists()

    def catalog(self) -> dict[str, set[str]]:
        """Public metadata for the planner: collection name -> schema."""
        with self._lock:
            out: dict[str, set[str]] = {}
            for mf in self.root.glob("*/manifest.json"):
                manifest = json.loads(mf.read_text())
                out[manifest["name"]] = set(manifest["schema"])
            return out


class HostService:
    """Application server wiring the store to one trusted core."""

    def __init__(self, store: EncryptedStore, core: TrustedCore | None = None):
        self.store = store
        self.core = core or TrustedCore()
        self._boundary = CoreBoundary(self.core)
        self.enclave = BoundaryClient(self._boundary.handle)
        self.pke_pub, self.sig_pub = self.enclave.init()
        self._query_lock = threading.Lock()

    # -- setup-time operations ---------------------------------------------

    def report_measurement(self) -> bytes:
        return measurement()

    def attest_and_channel(self, party: str, transcript: dict) -> ChannelHandle:
        """Simulated attestation followed by channel-key establishment.

        Verifies the artifact measurement against the caller's expected
        value, then encapsulates a fresh channel key to the core's public
        encryption key.  The kem_blob must accompany the next provision
        call so the core can derive the same key.
        """
        expected = transcript.get("expected_measurement")
        if expected is None:
            raise ArgumentError("transcript must carry expected_measurement")
        actual = self.report_measurement()
        if bytes.fromhex(expected) != actual:
            raise AttestationError(
                f"measurement mismatch for {party}: core artifact is not the "
                "expected build"
            )
        channel_key = os.urandom(crypto.KEY_BYTES)
        kem_blob = crypto.PKEPublicKey(self.pke_pub).encrypt(channel_key)
        return ChannelHandle(channel_key, kem_blob)

    def provision(self, kem_blob: bytes, payload: bytes) -> bytes:
        return self.enclave.provision(kem_blob, payload)

    def update_policy(self, op_frame: bytes) -> bytes:
        return self.enclave.update_policy(op_frame)

    # -- query path ----------------------------------------------------------

    def _gather(self, sources: list[str]) -> dict[str, list[bytes]]:
        ct: dict[str, list[bytes]] = {}
        for name in sources:
            cid = collection_id(name)
            if not self.store.exists(cid):
                raise NotFoundError(f"collection {name!r} is not stored here")
            ct[cid] = [blob for _, blob in self.store.retrieve(cid)]
        return ct

    def _compile(self, q: str):
        catalog = self.store.catalog()
        return compile_query(q, catalog)

    def handle_query(self, req: QueryRequest) -> ResponseEnvelope:
        """Honest scheduling: unlock, run the plan in canonical order, finalize."""
        return self._run(req, mutate=None)

    def handle_query_adversarial(
        self, req: QueryRequest, script: dict | None
    ) -> ResponseEnvelope:
        """Scheduling under an invocation-mutation script.

        The script rewrites the canonical call list before execution; the
        possible outcomes are a trusted-core error or an envelope whose
        trace will not audit against the query.  An empty script behaves
        exactly like handle_query.
        """
        return self._run(req, mutate=script or None)

    def _run(self, req: QueryRequest, mutate: dict | None) -> ResponseEnvelope:
        plan = self._compile(req.q)
        sources = [
            n.params["collection"] for n in plan.nodes if n.op_name == "source"
        ]
        calls = list(plan_invocations(plan))
        if mutate:
            calls = apply_script(calls, mutate)
        with self._query_lock:
            ct = self._gather(sources)
            s0 = self.enclave.unlock(req.tk, ct)
            try:
                created: list[int] = []
                for call in calls:
                    input_ids = []
                    for kind, ref in call.inputs:
                        if kind == "unlock":
                            input_ids.append(s0)
                        elif kind == "abs":
                            input_ids.append(ref)
                        else:
                            # forward references (possible after reordering) map
                            # to an id the core cannot know yet
                            input_ids.append(
                                created[ref] if ref < len(created) else 2**31
                            )
                    created.append(
                        self.enclave.exec_operator(call.f_name, call.f_params, input_ids)
                    )
                final = created[-1] if created else s0
                return self.enclave.finalize(final)
            except QShieldError:
                # release the single-session core: finalize whatever exists and
                # discard the envelope, so the failed run cannot wedge the next
                try:
                    self.enclave.finalize(s0)
                except QShieldError:
                    pass
                raise


def apply_script(
    calls: list[Invocation], script: dict
) -> list[Invocation]:
    """Rewrite the canonical invocation list per one mutation description.

    Kinds: reorder {i, j}, drop {i}, duplicate {i}, insert {position,
    f_name, f_params, inputs}, substitute_params {i, f_params},
    foreign_state {i, s_id} (points an input at an absolute state id).
    """
    kind = script.get("kind", "none")
    calls = list(calls)
    if kind == "none":
        return calls
    if kind == "reorder":
        i, j = script["i"], script["j"]
        calls[i], calls[j] = calls[j], calls[i]
        return calls
    if kind == "drop":
        del calls[script["i"]]
        return calls
    if kind == "duplicate":
        calls.insert(script["i"], calls[script["i"]])
        return calls
    if kind == "insert":
        call = Invocation(
            script["f_name"],
            script.get("f_params", {}),
            tuple(tuple(x) for x in script.get("inputs", ())),
        )
        calls.insert(script["position"], call)
        return calls
    if kind == "substitute_params":
        old = calls[script["i"]]
        calls[script["i"]] = Invocation(old.f_name, script["f_params"], old.inputs)
        return calls
    if kind == "foreign_state":
        old = calls[script["i"]]
        inputs = (("abs", script["s_id"]),) + old.inputs[1:]
        calls[script["i"]] = Invocation(old.f_name, old.f_params, inputs)
        return calls
    raise ArgumentError(f"unknown mutation kind {kind!r}")
