"""Data-owner and data-user workflows: key ceremony, upload, tokens, audit.

The owner generates the share set, registers users into the access
policy, provisions the trusted core over an attested channel, and
encrypts documents for upload.  A user mints single-use query tokens
(carrying their share, the query's endurance budget and a monotonically
increasing counter), opens responses with the key derived from their
share, and audits the signed execution trace against the plan they
re-derive from their own query text.

Share handoff from owner to user is modelled as a local file exchange;
both sides compile queries with the same deterministic planner, which is
what makes the audit comparison meaningful.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field
from pathlib import Path

from . import crypto, sharing
from .core import (
    ResponseEnvelope,
    decode_payload,
    encode_enclave_share,
    encode_token_body,
)
from .crypto import Ciphertext, VerifyKey
from .documents import Document, collection_id
from .encoding import canonical_json, from_json, sorted_deep
from .errors import (
    ArgumentError,
    AuditError,
    ChannelError,
    NotFoundError,
    SchemaError,
)
from .host import HostService, QueryRequest, measurement
from .policy import Policy
from .query import compile_query, compute_endurance, plan_invocations

_ACK_PREFIX = b"policy-ack:"


# ---------------------------------------------------------------------------
# Owner side
# ---------------------------------------------------------------------------

@dataclass
class OwnerContext:
    share_set: sharing.ShareSet
    pol: Policy
    expected_measurement: bytes | None = None
    channel_key: bytes | None = None
    registered: dict[int, str] = field(default_factory=dict)
    collections: dict[str, str] = field(default_factory=dict)  # name -> cid
    schemas: dict[str, set[str]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.share_set.n

    def catalog(self) -> dict[str, set[str]]:
        return {name: set(schema) for name, schema in self.schemas.items()}


def owner_setup(security_bits: int, n: int) -> OwnerContext:
    """Run the share ceremony for at most n users; policy starts empty."""
    return OwnerContext(share_set=sharing.setup(security_bits, n), pol=Policy())


def register_user(ctx: OwnerContext, index: int) -> str:
    """Assign share #index to a user: uid is the hash of that share.

    The new policy entry starts with no collection ids.  If the core is
    already provisioned, follow with owner_update_policy to push it.
    """
    if not 1 <= index <= ctx.n:
        raise ArgumentError(f"user index {index} outside 1..{ctx.n}")
    share = ctx.share_set.user_shares[index - 1]
    uid = share.uid()
    ctx.pol.add(uid, frozenset())
    ctx.registered[index] = uid
    return uid


def owner_provision(ctx: OwnerContext, host: HostService) -> str:
    """Attest the core, establish the channel, deliver the share and policy.

    Returns the acknowledged policy digest after checking it matches the
    owner's copy.  The expected measurement defaults to one computed from
    the owner's own copy of the artifact.
    """
    expected = ctx.expected_measurement or measurement()
    channel = host.attest_and_channel(
        "owner", {"expected_measurement": expected.hex()}
    )
    ctx.channel_key = channel.channel_key
    body = canonical_json(
        {
            "enclave_share": encode_enclave_share(ctx.share_set.enclave_share).hex(),
            "policy": ctx.pol.to_json(),
        }
    )
    payload = crypto.aead_encrypt(ctx.channel_key, body).to_bytes()
    ack = host.provision(channel.kem_blob, payload)
    return _verify_ack(ctx, ack, ctx.pol)


def _verify_ack(ctx: OwnerContext, ack: bytes, pol: Policy) -> str:
    plain = crypto.aead_decrypt(ctx.channel_key, Ciphertext.from_bytes(ack))
    if not plain.startswith(_ACK_PREFIX):
        raise ChannelError("malformed policy ack")
    digest = plain[len(_ACK_PREFIX) :].decode("ascii")
    expected = crypto.sha256(pol.digest_material()).hex()
    if digest != expected:
        raise ChannelError("core acknowledged a different policy than expected")
    return digest


def owner_update_policy(
    ctx: OwnerContext,
    host: HostService,
    op: str,
    uid: str,
    cids: set[str] | None = None,
) -> str:
    """Push one policy change and commit locally once the core acks it."""
    if ctx.channel_key is None:
        raise ChannelError("provision the core before updating policy")
    candidate = ctx.pol.copy()
    if op == "add":
        candidate.add(uid, cids or set())
    elif op == "remove":
        candidate.remove(uid)
    elif op == "modify":
        candidate.modify(uid, cids or set())
    else:
        raise ArgumentError(f"unknown policy operation {op!r}")
    frame = crypto.aead_encrypt(
        ctx.channel_key,
        canonical_json({"op": op, "uid": uid, "cids": sorted(cids or set())}),
    ).to_bytes()
    ack = host.update_policy(frame)
    digest = _verify_ack(ctx, ack, candidate)
    ctx.pol = candidate
    return digest


def owner_upload(
    ctx: OwnerContext,
    host: HostService,
    doc: Document | dict,
    cid: str | None = None,
    name: str | None = None,
    users: list[int] | None = None,
) -> tuple[str, bytes, str]:
    """Encrypt one document and upload it; returns (did, ct, cid).

    Without a cid a fresh collection is created (named, or auto-named),
    access is granted to the listed registered users, and the resulting
    policy change is pushed to the core when a channel exists.
    """
    if not isinstance(doc, Document):
        doc = Document(doc)
    if cid is not None:
        known = {c: n for n, c in ctx.collections.items()}
        if cid not in known:
            raise NotFoundError(f"unknown collection id {cid[:16]}...")
        name = known[cid]
        if set(doc.names()) != ctx.schemas[name]:
            raise SchemaError(
                f"document attributes do not match collection {name!r} schema"
            )
    else:
        name = name or f"coll-{secrets.token_hex(6)}"
        if name in ctx.collections:
            raise ArgumentError(f"collection {name!r} already exists")
        cid = collection_id(name)
        host.store.create_collection(name, set(doc.names()))
        ctx.collections[name] = cid
        ctx.schemas[name] = set(doc.names())
        for index in users or []:
            if index not in ctx.registered:
                raise ArgumentError(f"user {index} is not registered")
            uid = ctx.registered[index]
            granted = (ctx.pol.entries.get(uid) or frozenset()) | {cid}
            if ctx.channel_key is not None:
                op = "modify" if uid in ctx.pol.entries else "add"
                owner_update_policy(ctx, host, op, uid, set(granted))
            else:
                ctx.pol.add(uid, granted)
    ct = sharing.encrypt(ctx.share_set.sk, doc.to_json()).to_bytes()
    did = crypto.sha256(ct).hex()
    host.store.store(cid, did, ct)
    return did, ct, cid


def save_user_share(path: str | Path, share: sharing.UserShare) -> None:
    Path(path).write_bytes(share.to_file_bytes())


def load_user_share(path: str | Path) -> sharing.UserShare:
    return sharing.UserShare.from_file_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# User side
# ---------------------------------------------------------------------------

@dataclass
class UserContext:
    share: sharing.UserShare
    core_pke_pub: bytes
    core_sig_pub: bytes
    catalog: dict[str, set[str]]
    counter: int = -1  # last used; the first token carries 0

    def uid(self) -> str:
        return self.share.uid()


def user_make_token(ctx: UserContext, q: str) -> QueryRequest:
    """Mint the request for q: the token binds share, budget and counter.

    The budget is derived from the user's own compilation of q; a parse
    or planning failure leaves the counter untouched.
    """
    plan = compile_query(q, ctx.catalog)
    omega = compute_endurance(plan)
    c = ctx.counter + 1
    body = encode_token_body(ctx.share, omega, c)
    tk = crypto.PKEPublicKey(ctx.core_pke_pub).encrypt(body)
    ctx.counter = c
    return QueryRequest(q, tk)


@dataclass(frozen=True)
class AuditCheck:
    name: str
    ok: bool
    detail: str


@dataclass(frozen=True)
class AuditReport:
    verdict: str
    checks: tuple[AuditCheck, ...]

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    @property
    def failed_check(self) -> str | None:
        for check in self.checks:
            if not check.ok:
                return check.name
        return None

    def to_json(self) -> str:
        return canonical_json(
            {
                "verdict": self.verdict,
                "checks": [
                    {"name": c.name, "pass": c.ok, "detail": c.detail}
                    for c in self.checks
                ],
            }
        ).decode("utf-8")


def audit_proof(
    q: str,
    env: ResponseEnvelope,
    verify_key: VerifyKey,
    result_bytes: bytes,
    catalog: dict[str, set[str]],
) -> AuditReport:
    """Audit the trust proof against the user's own compilation of q.

    Four checks, stopping at the first failure: the trace signature, the
    structural match between the trace and the canonical operator
    schedule (names, parameters and parent edges), the budget descending
    by exactly one per state from the derived endurance to zero, and the
    final state digest binding the decrypted result to the trace.
    """
    checks: list[AuditCheck] = []

    def fail(name: str, detail: str) -> AuditReport:
        checks.append(AuditCheck(name, False, detail))
        return AuditReport("FAIL", tuple(checks))

    def ok(name: str, detail: str = "") -> None:
        checks.append(AuditCheck(name, True, detail))

    if not verify_key.verify(env.sig, env.tp):
        return fail("signature", "trust proof signature does not verify")
    ok("signature")

    plan = compile_query(q, catalog)
    invocations = plan_invocations(plan)
    omega = len(invocations)
    try:
        records = from_json(env.tp)
        assert isinstance(records, list) and records
    except Exception:
        return fail("structure", "trust proof is not a record list")

    if len(records) != omega + 1:
        return fail(
            "structure",
            f"trace has {len(records)} states, expected {omega + 1}",
        )
    first = records[0]
    if (
        first.get("s_id") != 0
        or first.get("p_states")
        or first.get("func", {}).get("f_name") != "unlock"
    ):
        return fail("structure", "initial state is not a bare unlock")
    for k, inv in enumerate(invocations):
        rec = records[k + 1]
        if rec.get("s_id") != k + 1:
            return fail("structure", f"state {k + 1} has id {rec.get('s_id')}")
        func = rec.get("func", {})
        if func.get("f_name") != inv.f_name:
            return fail(
                "structure",
                f"state {k + 1} ran {func.get('f_name')}, expected {inv.f_name}",
            )
        if sorted_deep(func.get("f_params")) != sorted_deep(inv.f_params):
            return fail("structure", f"state {k + 1} parameters differ from the plan")
        expected_parents = [
            0 if kind == "unlock" else ref + 1 for kind, ref in inv.inputs
        ]
        if list(rec.get("p_states", [])) != expected_parents:
            return fail(
                "structure",
                f"state {k + 1} parents {rec.get('p_states')} != {expected_parents}",
            )
    ok("structure", f"{omega} operator states match the derived plan")

    if first.get("w") != omega:
        return fail("budget", f"initial budget {first.get('w')} != derived {omega}")
    for k in range(1, len(records)):
        if records[k].get("w") != omega - k:
            return fail(
                "budget",
                f"state {k} budget {records[k].get('w')} != {omega - k}",
            )
    if records[-1].get("w") != 0:
        return fail("budget", "final state leaves budget unspent")
    ok("budget", f"descends {omega} -> 0")

    digest = crypto.sha256(result_bytes).hex()
    if records[-1].get("s_db_digest") != digest:
        return fail("digest", "decrypted result does not match the final state digest")
    ok("digest")
    return AuditReport("PASS", tuple(checks))


def user_open_response(
    ctx: UserContext, req: QueryRequest, env: ResponseEnvelope
):
    """Decrypt the result with the share-derived key and audit the proof.

    Raises IntegrityError if the result fails authentication (nothing is
    returned) and AuditError if the trust proof signature is invalid;
    otherwise returns (payload, AuditReport) and leaves non-signature
    audit failures to the caller via the report verdict.
    """
    result_bytes = crypto.aead_decrypt(ctx.share.data_key(), env.result)
    report = audit_proof(
        req.q,
        env,
        verify_key=VerifyKey(ctx.core_sig_pub),
        result_bytes=result_bytes,
        catalog=ctx.catalog,
    )
    if report.failed_check == "signature":
        raise AuditError("trust proof signature is invalid")
    return decode_payload(result_bytes), report


def make_user_context(
    ctx: OwnerContext, index: int, host: HostService
) -> UserContext:
    """Owner-side convenience: hand share #index plus public parameters over."""
    if not 1 <= index <= ctx.n:
        raise ArgumentError(f"user index {index} outside 1..{ctx.n}")
    return UserContext(
        share=ctx.share_set.user_shares[index - 1],
        core_pke_pub=host.pke_pub,
        core_sig_pub=host.sig_pub,
        catalog=ctx.catalog(),
    )


def user_query(ctx: UserContext, host: HostService, q: str):
    """Mint, send, decrypt and audit in one step.

    The core keeps a single replay floor for all users, so a context that
    has minted fewer tokens than its peers can be rejected once; in that
    case the counter resyncs to the reported floor and the query is
    retried with a fresh token.  Counters never repeat or decrease.
    """
    from .errors import ReplayError

    req = user_make_token(ctx, q)
    try:
        env = host.handle_query(req)
    except ReplayError as exc:
        if exc.floor is None or exc.floor < ctx.counter:
            raise
        ctx.counter = exc.floor
        req = user_make_token(ctx, q)
        env = host.handle_query(req)
    result, report = user_open_response(ctx, req, env)
    return result, report, req, env
