"""Trusted core: the isolated component holding shares, policy and sessions.

Models the enclave side of the framework.  The core is provisioned once
with the enclave share and the access policy over an authenticated
channel, then serves queries as a finite state machine: `unlock` burns a
single-use token into the initial state S_0 holding the authorized
plaintext collections, each `exec_operator` call consumes one unit of the
session's endurance budget and appends a state, and `finalize` encrypts
the final payload for the user and emits a signed execution trace (the
trust proof) covering every state.

Nothing secret crosses the boundary: returned values are ciphertexts,
state ids, or trace records carrying only operator metadata and payload
digests.  All entry points serialize on an internal lock, matching the
one-logical-actor model.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass
from typing import Any

from . import crypto, sharing
from .crypto import Ciphertext
from .documents import (
    AttrRef,
    Collection,
    Document,
    Predicate,
    collection_id,
)
from .documents import aggregate as op_aggregate
from .documents import join as op_join
from .documents import project as op_project
from .documents import select as op_select
from .encoding import canonical_json, sorted_deep
from .errors import (
    ArgumentError,
    ChannelError,
    EncodingError,
    EnduranceError,
    IntegrityError,
    NotFoundError,
    ReplayError,
    StateError,
    TokenError,
)
from .policy import Policy
from .query import OPERATOR_NAMES

TOKEN_BODY_LEN = len(sharing.USERSHARE_MAGIC) + 4 + 193 + 8 + 8

_ACK_PREFIX = b"policy-ack:"


# ---------------------------------------------------------------------------
# Payload encodings shared with the client side
# ---------------------------------------------------------------------------

def encode_payload(s_db: Any) -> bytes:
    """Canonical bytes of a state payload; used for digests and result AEAD."""
    if isinstance(s_db, dict):
        return canonical_json(
            {
                "kind": "collections",
                "items": {cid: coll.to_file_obj() for cid, coll in s_db.items()},
            }
        )
    if isinstance(s_db, Collection):
        return canonical_json({"kind": "collection", "value": s_db.to_file_obj()})
    return canonical_json({"kind": "scalar", "value": s_db})


def payload_digest(s_db: Any) -> str:
    return crypto.sha256(encode_payload(s_db)).hex()


def decode_payload(data: bytes) -> Any:
    """Inverse of encode_payload; names are not part of the encoding."""
    obj = json.loads(data.decode("utf-8"))
    kind = obj.get("kind")
    if kind == "collections":
        return {
            cid: Collection.from_file_obj(item) for cid, item in obj["items"].items()
        }
    if kind == "collection":
        return Collection.from_file_obj(obj["value"])
    if kind == "scalar":
        return obj["value"]
    raise ArgumentError(f"unknown payload kind {kind!r}")


def encode_token_body(share: sharing.UserShare, omega: int, counter: int) -> bytes:
    if omega < 0 or counter < 0:
        raise ArgumentError("endurance and counter must be non-negative")
    return share.to_file_bytes() + struct.pack(">QQ", omega, counter)


def decode_token_body(body: bytes) -> tuple[sharing.UserShare, int, int]:
    if len(body) != TOKEN_BODY_LEN:
        raise TokenError("token body has the wrong length")
    share = sharing.UserShare.from_file_bytes(body[:-16])
    omega, counter = struct.unpack(">QQ", body[-16:])
    return share, omega, counter


# ---------------------------------------------------------------------------
# State machine records
# ---------------------------------------------------------------------------

@dataclass
class QueryState:
    s_id: int
    p_states: tuple[int, ...]
    func: dict[str, Any]
    s_db: Any
    w: int

    def trace_record(self) -> dict[str, Any]:
        """Trust-proof record; fields in the fixed canonical order."""
        return {
            "s_id": self.s_id,
            "p_states": list(self.p_states),
            "func": {
                "f_name": self.func["f_name"],
                "f_params": sorted_deep(self.func["f_params"]),
            },
            "s_db_digest": payload_digest(self.s_db),
            "w": self.w,
        }


@dataclass
class _Session:
    states: dict[int, QueryState]
    budget: int
    user_key: bytearray
    trace_records: list[dict[str, Any]]
    finalized: bool = False


@dataclass(frozen=True)
class ResponseEnvelope:
    """Encrypted result plus the signed execution trace."""

    result: Ciphertext
    tp: bytes
    sig: bytes

    def to_bytes(self) -> bytes:
        result_bytes = self.result.to_bytes()
        return b"".join(
            len(part).to_bytes(4, "big") + part
            for part in (self.tp, self.sig, result_bytes)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ResponseEnvelope":
        parts = []
        off = 0
        for _ in range(3):
            if off + 4 > len(data):
                raise ArgumentError("truncated response envelope")
            n = int.from_bytes(data[off : off + 4], "big")
            off += 4
            parts.append(data[off : off + n])
            off += n
        if off != len(data):
            raise ArgumentError("trailing bytes in response envelope")
        return cls(Ciphertext.from_bytes(parts[2]), parts[0], parts[1])


def encode_trace(records: list[dict[str, Any]]) -> bytes:
    """Canonical trust-proof bytes: records sorted by s_id, fixed field order."""
    ordered = sorted(records, key=lambda r: r["s_id"])
    return json.dumps(ordered, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


# ---------------------------------------------------------------------------
# The core
# ---------------------------------------------------------------------------

class TrustedCore:
    def __init__(self):
        self._lock = threading.RLock()
        self._pke_priv: crypto.PKEPrivateKey | None = None
        self._sig_priv: crypto.SigningKey | None = None
        self._sk_a: sharing.EnclaveShare | None = None
        self._pol: Policy | None = None
        self._channel_key: bytes | None = None
        self._replay_floor = -1
        self._session: _Session | None = None

    # -- lifecycle ----------------------------------------------------------

    def init(self, security_bits: int = 128) -> tuple[bytes, bytes]:
        """Generate the key pairs inside the boundary; return the public halves."""
        with self._lock:
            if self._pke_priv is not None:
                raise StateError("core is already initialized")
            pke_pub, self._pke_priv = crypto.pke_keygen()
            sig_pub, self._sig_priv = crypto.sig_keygen()
            return pke_pub.raw, sig_pub.raw

    def provision(self, channel_blob: bytes, payload: bytes) -> bytes:
        """Install the enclave share and policy delivered over the channel.

        `channel_blob` encapsulates a fresh channel key under the core's
        public encryption key; `payload` is the AEAD-protected pair
        (enclave share, policy).  The share is immutable once set; a
        re-provision replaces the policy and the channel key only.
        Returns an ack proving possession of the channel key.
        """
        with self._lock:
            self._require_init()
            try:
                channel_key = self._pke_priv.decrypt(channel_blob)
            except TokenError as exc:
                raise ChannelError(f"channel establishment failed: {exc}") from exc
            if len(channel_key) != crypto.KEY_BYTES:
                raise ChannelError("channel key has the wrong length")
            try:
                body = crypto.aead_decrypt(channel_key, Ciphertext.from_bytes(payload))
            except (IntegrityError, ArgumentError) as exc:
                raise ChannelError("provision payload failed authentication") from exc
            obj = json.loads(body.decode("utf-8"))
            share_blob = bytes.fromhex(obj["enclave_share"])
            pol = Policy.from_json(obj["policy"])
            sk_a = decode_enclave_share(share_blob)
            if self._sk_a is None:
                self._sk_a = sk_a
            self._pol = pol
            self._channel_key = channel_key
            return self._policy_ack()

    def update_policy(self, op_frame: bytes) -> bytes:
        """Apply one add/remove/modify, authenticated under the channel key."""
        with self._lock:
            if self._channel_key is None:
                raise ChannelError("no provisioned channel")
            try:
                body = crypto.aead_decrypt(
                    self._channel_key, Ciphertext.from_bytes(op_frame)
                )
            except (IntegrityError, ArgumentError) as exc:
                raise ChannelError("policy update failed authentication") from exc
            obj = json.loads(body.decode("utf-8"))
            op, uid = obj["op"], obj["uid"]
            if op == "add":
                self._pol.add(uid, set(obj["cids"]))
            elif op == "remove":
                self._pol.remove(uid)
            elif op == "modify":
                self._pol.modify(uid, set(obj["cids"]))
            else:
                raise ArgumentError(f"unknown policy operation {op!r}")
            return self._policy_ack()

    def _policy_ack(self) -> bytes:
        digest = crypto.sha256(self._pol.digest_material()).hex()
        return crypto.aead_encrypt(
            self._channel_key, _ACK_PREFIX + digest.encode("ascii")
        ).to_bytes()

    # -- query session ------------------------------------------------------

    def unlock(self, tk: bytes, ct: dict[str, list[bytes]]) -> int:
        """Open a query session: burn the token, recover authorized data as S_0."""
        with self._lock:
            self._require_init()
            if self._sk_a is None or self._pol is None:
                raise StateError("core is not provisioned")
            if self._session is not None and not self._session.finalized:
                raise StateError("a query session is already in progress")
            try:
                body = self._pke_priv.decrypt(tk)
                share, omega, counter = decode_token_body(body)
            except EncodingError as exc:
                raise TokenError(f"malformed token share: {exc}") from exc
            if counter <= self._replay_floor:
                raise ReplayError(
                    f"token counter {counter} not above floor {self._replay_floor}",
                    floor=self._replay_floor,
                )
            self._replay_floor = counter
            ct_map = {
                cid: [Ciphertext.from_bytes(c) for c in blobs]
                for cid, blobs in ct.items()
            }
            recovered = sharing.decrypt(self._pol, self._sk_a, share, ct_map)
            collections: dict[str, Collection] = {}
            for cid, blobs in recovered.items():
                docs = tuple(Document.from_json(b) for b in blobs)
                schema = frozenset(docs[0].names()) if docs else frozenset()
                collections[cid] = Collection(cid, schema, docs)
            user_key = bytearray(share.data_key())
            state = QueryState(
                s_id=0,
                p_states=(),
                func={"f_name": "unlock", "f_params": {}},
                s_db=collections,
                w=omega,
            )
            self._session = _Session(
                states={0: state},
                budget=omega,
                user_key=user_key,
                trace_records=[state.trace_record()],
            )
            return 0

    def exec_operator(
        self, f_name: str, f_params: dict[str, Any], input_s_ids: list[int]
    ) -> int:
        """Run one relational operator over existing states, spending one budget unit."""
        with self._lock:
            session = self._require_session()
            if f_name not in OPERATOR_NAMES:
                raise ArgumentError(f"unknown operator {f_name!r}")
            if session.budget <= 0:
                raise EnduranceError("endurance budget exhausted for this session")
            missing = [s for s in input_s_ids if s not in session.states]
            if missing:
                raise StateError(f"unknown state ids {missing}")
            arity = 2 if f_name == "join" else 1
            if len(input_s_ids) != arity:
                raise StateError(
                    f"{f_name} takes {arity} input state(s), got {len(input_s_ids)}"
                )
            inputs = [
                self._resolve_input(session, s_id, f_name, f_params, position)
                for position, s_id in enumerate(input_s_ids)
            ]
            result = self._apply(f_name, f_params, inputs)
            session.budget -= 1
            s_id = max(session.states) + 1
            state = QueryState(
                s_id=s_id,
                p_states=tuple(input_s_ids),
                func={"f_name": f_name, "f_params": f_params},
                s_db=result,
                w=session.budget,
            )
            session.states[s_id] = state
            session.trace_records.append(state.trace_record())
            return s_id

    def finalize(self, final_s_id: int) -> ResponseEnvelope:
        """Encrypt the final payload for the user and sign the full trace."""
        with self._lock:
            session = self._require_session()
            if final_s_id not in session.states:
                raise StateError(f"unknown state id {final_s_id}")
            result_bytes = encode_payload(session.states[final_s_id].s_db)
            result_ct = crypto.aead_encrypt(session.user_key, result_bytes)
            tp = encode_trace(session.trace_records)
            sig = self._sig_priv.sign(tp)
            session.budget = 0
            for state in session.states.values():
                state.s_db = None
            crypto.wipe(session.user_key)
            session.finalized = True
            return ResponseEnvelope(result_ct, tp, sig)

    # -- internals ----------------------------------------------------------

    def _require_init(self) -> None:
        if self._pke_priv is None:
            raise StateError("core is not initialized")

    def _require_session(self) -> _Session:
        self._require_init()
        if self._session is None:
            raise StateError("no query session; unlock first")
        if self._session.finalized:
            raise StateError("session already finalized")
        return self._session

    def _resolve_input(
        self,
        session: _Session,
        s_id: int,
        f_name: str,
        f_params: dict[str, Any],
        position: int,
    ) -> Any:
        payload = session.states[s_id].s_db
        if s_id != 0:
            return payload
        # S_0 holds the full authorized map; pick the collection the
        # operator names and rebind its public name for predicate use
        if f_name == "join":
            side = "left" if position == 0 else "right"
            name = f_params.get("on", {}).get(side, {}).get("collection")
        else:
            name = f_params.get("collection")
        if not name:
            raise StateError(
                f"{f_name} over the initial state must name its collection"
            )
        cid = collection_id(name)
        if cid not in payload:
            raise NotFoundError(f"collection {name!r} is not part of this session")
        coll = payload[cid]
        return Collection(coll.cid, coll.schema, coll.docs, name=name)

    def _apply(self, f_name: str, f_params: dict[str, Any], inputs: list[Any]) -> Any:
        for value in inputs:
            if not isinstance(value, Collection):
                raise StateError(f"{f_name} requires collection-valued input states")
        if f_name == "projection":
            return op_project(inputs[0], f_params["attrs"])
        if f_name == "selection":
            return op_select(inputs[0], Predicate.from_param(f_params["predicate"]))
        if f_name == "aggregation":
            return op_aggregate(inputs[0], f_params["func"], f_params["attr"])
        on = f_params["on"]
        pred = Predicate(
            AttrRef(on["left"]["collection"], on["left"]["attr"]),
            "=",
            AttrRef(on["right"]["collection"], on["right"]["attr"]),
        )
        return op_join(inputs[0], inputs[1], pred)


def encode_enclave_share(share: sharing.EnclaveShare) -> bytes:
    out = bytearray(share.n.to_bytes(4, "big"))
    for pt in share.u:
        out += pt.encode()
    out += share.blind.encode()
    return bytes(out)


def decode_enclave_share(data: bytes) -> sharing.EnclaveShare:
    from .pairing import GT_BYTES, POINT_BYTES, G1Point, GTElement, in_subgroup

    n = int.from_bytes(data[:4], "big")
    expect = 4 + n * POINT_BYTES + GT_BYTES
    if len(data) != expect:
        raise ArgumentError(f"enclave share blob length {len(data)} != {expect}")
    off = 4
    u = []
    for _ in range(n):
        pt = G1Point.decode(data[off : off + POINT_BYTES])
        if pt.is_identity or not in_subgroup(pt):
            raise ArgumentError("enclave share point invalid")
        u.append(pt)
        off += POINT_BYTES
    blind = GTElement.decode(data[off:])
    return sharing.EnclaveShare(tuple(u), blind)
