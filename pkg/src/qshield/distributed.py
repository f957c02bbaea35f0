"""Distributed execution: a broker core delegating operators to workers.

A worker is a single-operator trusted component serving all users; the
broker is the owner's dedicated core.  The broker keeps everything
stateful (token burning, the state machine, budget accounting, trace
recording, finalization) and ships each operator's inputs to a matching
worker over an AEAD channel keyed by a common communication key that was
distributed after the broker attested every worker in the pool.  Workers
are stateless between calls; state payloads only ever exist in plaintext
inside the broker and worker boundaries.

Because the broker reuses the standalone state machine and workers run
the same operator semantics, the trace (and hence the trust proof) comes
out identical to stand-alone execution on the same inputs.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass
from typing import Any

from . import crypto
from .core import TrustedCore, decode_payload, encode_payload
from .crypto import Ciphertext
from .documents import AttrRef, Collection, Predicate
from .documents import aggregate as op_aggregate
from .documents import join as op_join
from .documents import project as op_project
from .documents import select as op_select
from .encoding import canonical_json, from_json
from .errors import AttestationError, ChannelError, IntegrityError, StateError
from .host import measurement


@dataclass(frozen=True)
class WorkerDescriptor:
    worker_id: str
    node_id: str
    op_name: str


class Worker:
    """One enclave implementing a single computational operator."""

    def __init__(self, worker_id: str, node_id: str, op_name: str):
        self.descriptor = WorkerDescriptor(worker_id, node_id, op_name)
        self._pke_pub, self._pke_priv = crypto.pke_keygen()
        self._channel_key: bytes | None = None

    @property
    def op_name(self) -> str:
        return self.descriptor.op_name

    def report_measurement(self) -> bytes:
        return measurement()

    def public_key(self) -> bytes:
        return self._pke_pub.raw

    def install_channel(self, kem_blob: bytes) -> None:
        key = self._pke_priv.decrypt(kem_blob)
        if len(key) != crypto.KEY_BYTES:
            raise ChannelError("worker channel key has the wrong length")
        self._channel_key = key

    def serve(self, job_frame: bytes) -> bytes:
        """Decrypt one job, run the operator, return the encrypted new payload."""
        if self._channel_key is None:
            raise ChannelError("worker has no channel key installed")
        body = crypto.aead_decrypt(self._channel_key, Ciphertext.from_bytes(job_frame))
        job = from_json(body)
        f_name = job["f_name"]
        if f_name != self.op_name:
            raise StateError(
                f"worker {self.descriptor.worker_id} implements {self.op_name}, "
                f"got {f_name}"
            )
        inputs = []
        for encoded, bind in zip(job["inputs"], job["bind_names"]):
            value = decode_payload(bytes.fromhex(encoded))
            if bind is not None and isinstance(value, Collection):
                value = Collection(value.cid, value.schema, value.docs, name=bind)
            inputs.append(value)
        params = job["f_params"]
        if f_name == "projection":
            result = op_project(inputs[0], params["attrs"])
        elif f_name == "selection":
            result = op_select(inputs[0], Predicate.from_param(params["predicate"]))
        elif f_name == "aggregation":
            result = op_aggregate(inputs[0], params["func"], params["attr"])
        else:
            on = params["on"]
            pred = Predicate(
                AttrRef(on["left"]["collection"], on["left"]["attr"]),
                "=",
                AttrRef(on["right"]["collection"], on["right"]["attr"]),
            )
            result = op_join(inputs[0], inputs[1], pred)
        return crypto.aead_encrypt(
            self._channel_key, encode_payload(result)
        ).to_bytes()


class Broker(TrustedCore):
    """Owner-dedicated core that schedules attested workers for computation.

    Inherits the whole session state machine; only the operator
    application is overridden to round-robin each call to a worker
    implementing that operator, over the common secure channel.
    """

    def __init__(self):
        super().__init__()
        self._workers: dict[str, list[Worker]] = {}
        self._dispatch_log: list[tuple[str, str]] = []
        self._comm_key: bytes | None = None
        self._rr: dict[str, Any] = {}

    def attest_workers(self, workers: list[Worker], expected_measurement: bytes) -> None:
        """Validate every worker's artifact, then distribute a common key.

        Any mismatch aborts before a channel key or state payload reaches
        the pool.
        """
        for worker in workers:
            if worker.report_measurement() != expected_measurement:
                raise AttestationError(
                    f"worker {worker.descriptor.worker_id} failed attestation"
                )
        self._comm_key = os.urandom(crypto.KEY_BYTES)
        pool: dict[str, list[Worker]] = {}
        for worker in workers:
            kem = crypto.PKEPublicKey(worker.public_key()).encrypt(self._comm_key)
            worker.install_channel(kem)
            pool.setdefault(worker.op_name, []).append(worker)
        self._workers = pool
        self._rr = {op: itertools.cycle(ws) for op, ws in pool.items()}
        self._dispatch_log.clear()

    def dispatch_log(self) -> list[tuple[str, str]]:
        """(worker_id, f_name) pairs in execution order; outside the proof."""
        return list(self._dispatch_log)

    def _apply(self, f_name: str, f_params: dict[str, Any], inputs: list[Any]) -> Any:
        if f_name not in self._workers:
            raise StateError(f"no attested worker implements {f_name}")
        for value in inputs:
            if not isinstance(value, Collection):
                raise StateError(f"{f_name} requires collection-valued input states")
        worker = next(self._rr[f_name])
        job = {
            "f_name": f_name,
            "f_params": f_params,
            "inputs": [encode_payload(v).hex() for v in inputs],
            "bind_names": [
                v.name if isinstance(v, Collection) else None for v in inputs
            ],
        }
        frame = crypto.aead_encrypt(self._comm_key, canonical_json(job)).to_bytes()
        try:
            result_frame = worker.serve(frame)
            result_bytes = crypto.aead_decrypt(
                self._comm_key, Ciphertext.from_bytes(result_frame)
            )
        except IntegrityError as exc:
            raise ChannelError(f"worker channel failure: {exc}") from exc
        self._dispatch_log.append((worker.descriptor.worker_id, f_name))
        result = decode_payload(result_bytes)
        # the canonical payload encoding drops logical names; restore the
        # name-preserving behavior of the unary operators for later predicates
        if (
            isinstance(result, Collection)
            and f_name in ("projection", "selection")
            and isinstance(inputs[0], Collection)
        ):
            result = Collection(
                result.cid, result.schema, result.docs, name=inputs[0].name
            )
        return result


def default_worker_pool() -> list[Worker]:
    """The running example's placement: five workers across three nodes."""
    return [
        Worker("E1", "N1", "selection"),
        Worker("E2", "N2", "projection"),
        Worker("E3", "N2", "projection"),
        Worker("E4", "N3", "join"),
        Worker("E5", "N1", "aggregation"),
    ]
