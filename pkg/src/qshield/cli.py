"""Command-line surface for the owner, user and server roles.

State lives in a workspace directory (default ./qshield-ws, overridable
with --workspace or the QSHIELD_STORE environment variable): the
encrypted store, the owner's secrets, per-user share files and token
counters.  The trusted core itself is never persisted (sealing is out of
scope), so there are two ways to run:

  * local mode: each command bootstraps a fresh core from the owner file
    and the on-disk store, provisioning it before use.  Replay floors
    reset per invocation; `user query` mints and spends its token inside
    one process.
  * server mode (`server start`, then --server HOST:PORT on commands):
    one long-lived core keeps its replay floor and policy across
    requests, and clients speak the service verbs over TCP.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import client as ck
from . import crypto, sharing
from .core import ResponseEnvelope
from .crypto import VerifyKey
from .documents import Collection, Document, Predicate, AttrRef, Literal
from .documents import aggregate as op_aggregate
from .documents import join as op_join
from .documents import project as op_project
from .documents import select as op_select
from .errors import NotFoundError, QShieldError
from .host import EncryptedStore, HostService
from .policy import Policy
from .service import SocketServiceClient, serve_forever

DEFAULT_WORKSPACE = "qshield-ws"


# ---------------------------------------------------------------------------
# Workspace persistence
# ---------------------------------------------------------------------------

class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def store_dir(self) -> Path:
        return self.root / "store"

    def owner_path(self) -> Path:
        return self.root / "owner.json"

    def share_path(self, index: int) -> Path:
        return self.root / f"user_{index}.share"

    def user_state_path(self, index: int) -> Path:
        return self.root / f"user_{index}.json"

    def core_keys_path(self) -> Path:
        return self.root / "core_keys.json"

    def save_owner(self, ctx: ck.OwnerContext) -> None:
        blob = {
            "sk": ctx.share_set.sk.key.hex(),
            "share_set": ctx.share_set.export().hex(),
            "pol": ctx.pol.to_json(),
            "registered": {str(k): v for k, v in ctx.registered.items()},
            "collections": ctx.collections,
            "schemas": {k: sorted(v) for k, v in ctx.schemas.items()},
        }
        path = self.owner_path()
        path.write_text(json.dumps(blob, indent=1))
        path.chmod(0o600)

    def load_owner(self) -> ck.OwnerContext:
        path = self.owner_path()
        if not path.exists():
            raise NotFoundError(f"no owner state at {path}; run `owner setup` first")
        blob = json.loads(path.read_text())
        sk_a, shares = sharing.ShareSet.import_shares(bytes.fromhex(blob["share_set"]))
        share_set = sharing.ShareSet(
            sharing.SymmetricKey(bytes.fromhex(blob["sk"])), sk_a, shares
        )
        return ck.OwnerContext(
            share_set=share_set,
            pol=Policy.from_json(blob["pol"]),
            registered={int(k): v for k, v in blob["registered"].items()},
            collections=dict(blob["collections"]),
            schemas={k: set(v) for k, v in blob["schemas"].items()},
        )

    def load_share(self, index: int) -> sharing.UserShare:
        path = self.share_path(index)
        if not path.exists():
            raise NotFoundError(f"no share file at {path}")
        return sharing.UserShare.from_file_bytes(path.read_bytes())

    def load_counter(self, index: int) -> int:
        path = self.user_state_path(index)
        if not path.exists():
            return -1
        return json.loads(path.read_text())["counter"]

    def save_counter(self, index: int, counter: int) -> None:
        self.user_state_path(index).write_text(json.dumps({"counter": counter}))

    def save_core_keys(self, pke_pub: bytes, sig_pub: bytes) -> None:
        self.core_keys_path().write_text(
            json.dumps({"pke_pub": pke_pub.hex(), "sig_pub": sig_pub.hex()})
        )

    def load_core_keys(self) -> tuple[bytes, bytes]:
        path = self.core_keys_path()
        if not path.exists():
            raise NotFoundError("no recorded core keys; run a server/bootstrap first")
        blob = json.loads(path.read_text())
        return bytes.fromhex(blob["pke_pub"]), bytes.fromhex(blob["sig_pub"])


def _bootstrap(ws: Workspace) -> tuple[HostService, ck.OwnerContext]:
    """Local mode: fresh core over the persistent store, provisioned."""
    host = HostService(EncryptedStore(ws.store_dir))
    owner = ws.load_owner()
    ck.owner_provision(owner, host)
    ws.save_core_keys(host.pke_pub, host.sig_pub)
    return host, owner


def _load_docs(path: str) -> list[Document]:
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict) and "docs" in obj:
        obj = obj["docs"]
    if isinstance(obj, dict):
        obj = [obj]
    return [Document(d) for d in obj]


def _emit(args, payload: dict, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload, indent=None, separators=(",", ":"), sort_keys=True))
    else:
        print(human if human is not None else json.dumps(payload, indent=2))


def _result_view(result) -> object:
    if isinstance(result, Collection):
        return result.to_file_obj()
    if isinstance(result, dict):
        return {cid: coll.to_file_obj() for cid, coll in result.items()}
    return result


# ---------------------------------------------------------------------------
# owner commands
# ---------------------------------------------------------------------------

def cmd_owner_setup(ws: Workspace, args) -> int:
    ctx = ck.owner_setup(args.security, args.users)
    share_files = []
    for i in range(1, args.users + 1):
        ck.register_user(ctx, i)
        path = ws.share_path(i)
        path.write_bytes(ctx.share_set.user_shares[i - 1].to_file_bytes())
        path.chmod(0o600)
        ws.save_counter(i, -1)
        share_files.append(str(path))
    ws.save_owner(ctx)
    _emit(
        args,
        {"users": args.users, "share_files": share_files},
        f"share ceremony complete: {args.users} user share file(s) under {ws.root}",
    )
    return 0


def cmd_owner_upload(ws: Workspace, args) -> int:
    host, owner = _bootstrap(ws)
    docs = _load_docs(args.file)
    grant = [int(x) for x in args.grant.split(",")] if args.grant else []
    count = 0
    cid = owner.collections.get(args.collection)
    for doc in docs:
        if cid is None:
            _, _, cid = ck.owner_upload(
                owner, host, doc, name=args.collection, users=grant
            )
        else:
            ck.owner_upload(owner, host, doc, cid=cid)
        count += 1
    ws.save_owner(owner)
    _emit(
        args,
        {"collection": args.collection, "cid": cid, "documents": count},
        f"uploaded {count} document(s) to {args.collection} ({cid[:16]}...)",
    )
    return 0


def cmd_owner_policy(ws: Workspace, args) -> int:
    host, owner = _bootstrap(ws)
    index = int(args.user)
    uid = owner.registered.get(index)
    if uid is None:
        raise NotFoundError(f"user {index} is not registered")
    cids = set()
    for name in (args.cids.split(",") if args.cids else []):
        if name not in owner.collections:
            raise NotFoundError(f"unknown collection {name!r}")
        cids.add(owner.collections[name])
    digest = ck.owner_update_policy(owner, host, args.op, uid, cids)
    ws.save_owner(owner)
    _emit(
        args,
        {"op": args.op, "uid": uid, "pol_digest": digest},
        f"policy {args.op} for user {index} acked (digest {digest[:16]}...)",
    )
    return 0


def cmd_owner_provision(ws: Workspace, args) -> int:
    if args.server:
        client = _service_client(args.server)
        owner = ws.load_owner()
        info = client.attest()
        from .host import measurement

        if bytes.fromhex(info["measurement"]) != measurement():
            raise QShieldError("remote measurement does not match local artifact")
        channel_key = os.urandom(crypto.KEY_BYTES)
        kem = crypto.PKEPublicKey(bytes.fromhex(info["pke_pub"])).encrypt(channel_key)
        owner.channel_key = channel_key
        from .core import encode_enclave_share
        from .encoding import canonical_json

        body = canonical_json(
            {
                "enclave_share": encode_enclave_share(
                    owner.share_set.enclave_share
                ).hex(),
                "policy": owner.pol.to_json(),
            }
        )
        ack = client.provision(
            kem, crypto.aead_encrypt(channel_key, body).to_bytes()
        )
        digest = ck._verify_ack(owner, ack, owner.pol)
        ws.save_core_keys(
            bytes.fromhex(info["pke_pub"]), bytes.fromhex(info["sig_pub"])
        )
        _emit(args, {"pol_digest": digest}, f"remote core provisioned ({digest[:16]}...)")
        return 0
    host, _ = _bootstrap(ws)
    _emit(
        args,
        {"measurement": host.report_measurement().hex()},
        "local core bootstrapped and provisioned (ephemeral)",
    )
    return 0


# ---------------------------------------------------------------------------
# user commands
# ---------------------------------------------------------------------------

def _service_client(spec: str) -> SocketServiceClient:
    host, _, port = spec.partition(":")
    return SocketServiceClient(host or "127.0.0.1", int(port or 7443))


def _user_context_local(ws: Workspace, index: int, host: HostService) -> ck.UserContext:
    return ck.UserContext(
        share=ws.load_share(index),
        core_pke_pub=host.pke_pub,
        core_sig_pub=host.sig_pub,
        catalog=host.store.catalog(),
        counter=ws.load_counter(index),
    )


def cmd_user_token(ws: Workspace, args) -> int:
    index = int(args.index)
    if args.server:
        client = _service_client(args.server)
        info = client.attest()
        ctx = ck.UserContext(
            share=ws.load_share(index),
            core_pke_pub=bytes.fromhex(info["pke_pub"]),
            core_sig_pub=bytes.fromhex(info["sig_pub"]),
            catalog=client.catalog(),
            counter=ws.load_counter(index),
        )
    else:
        host, _ = _bootstrap(ws)
        ctx = _user_context_local(ws, index, host)
    req = ck.user_make_token(ctx, args.expr)
    ws.save_counter(index, ctx.counter)
    blob = {"q": req.q, "tk": req.tk.hex()}
    if args.out:
        Path(args.out).write_text(json.dumps(blob))
    _emit(
        args,
        {"counter": ctx.counter, "token_bytes": len(req.tk), "out": args.out},
        f"token minted (counter {ctx.counter}, {len(req.tk)} bytes)"
        + (f" -> {args.out}" if args.out else ""),
    )
    return 0


def cmd_user_query(ws: Workspace, args) -> int:
    index = int(args.index)
    if args.server:
        client = _service_client(args.server)
        info = client.attest()
        ctx = ck.UserContext(
            share=ws.load_share(index),
            core_pke_pub=bytes.fromhex(info["pke_pub"]),
            core_sig_pub=bytes.fromhex(info["sig_pub"]),
            catalog=client.catalog(),
            counter=ws.load_counter(index),
        )
        req = ck.user_make_token(ctx, args.expr)
        try:
            env = client.query(req.q, req.tk)
        except QShieldError as exc:
            floor = getattr(exc, "floor", None)
            if floor is None or floor < ctx.counter:
                raise
            ctx.counter = floor
            req = ck.user_make_token(ctx, args.expr)
            env = client.query(req.q, req.tk)
        result, report = ck.user_open_response(ctx, req, env)
    else:
        host, _ = _bootstrap(ws)
        ctx = _user_context_local(ws, index, host)
        result, report, req, env = ck.user_query(ctx, host, args.expr)
    ws.save_counter(index, ctx.counter)
    if args.save_envelope:
        Path(args.save_envelope).write_bytes(env.to_bytes())
    if args.save_request:
        Path(args.save_request).write_text(json.dumps({"q": req.q, "tk": req.tk.hex()}))
    _emit(
        args,
        {
            "result": _result_view(result),
            "verdict": report.verdict,
            "checks": [
                {"name": c.name, "pass": c.ok, "detail": c.detail} for c in report.checks
            ],
        },
        f"result: {_result_view(result)}\naudit: {report.verdict}",
    )
    return 0 if report.passed else 1


def cmd_user_audit(ws: Workspace, args) -> int:
    index = int(args.index)
    share = ws.load_share(index)
    req_blob = json.loads(Path(args.request).read_text())
    env = ResponseEnvelope.from_bytes(Path(args.envelope).read_bytes())
    _, sig_pub = ws.load_core_keys()
    result_bytes = crypto.aead_decrypt(share.data_key(), env.result)
    if args.server:
        catalog = _service_client(args.server).catalog()
    else:
        catalog = EncryptedStore(ws.store_dir).catalog()
    report = ck.audit_proof(
        req_blob["q"],
        env,
        verify_key=VerifyKey(sig_pub),
        result_bytes=result_bytes,
        catalog=catalog,
    )
    _emit(args, json.loads(report.to_json()), f"audit: {report.verdict}")
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# server commands
# ---------------------------------------------------------------------------

def cmd_server_start(ws: Workspace, args) -> int:
    host = HostService(EncryptedStore(ws.store_dir))
    if ws.owner_path().exists():
        owner = ws.load_owner()
        ck.owner_provision(owner, host)
        ws.save_core_keys(host.pke_pub, host.sig_pub)
        state = "provisioned"
    else:
        state = "awaiting provision"
    print(f"serving on 127.0.0.1:{args.port} ({state}); ctrl-c to stop", flush=True)
    try:
        serve_forever(host, args.port)
    except KeyboardInterrupt:
        pass
    return 0


def cmd_server_attack(ws: Workspace, args) -> int:
    host, owner = _bootstrap(ws)
    script = json.loads(Path(args.script).read_text())
    index = int(args.index)
    ctx = _user_context_local(ws, index, host)
    req = ck.user_make_token(ctx, args.expr)
    ws.save_counter(index, ctx.counter)
    try:
        env = host.handle_query_adversarial(req, script)
    except QShieldError as exc:
        _emit(
            args,
            {"outcome": "core-error", "error": type(exc).__name__, "message": str(exc)},
            f"attack stopped by the core: {type(exc).__name__}: {exc}",
        )
        return 0
    result_bytes = crypto.aead_decrypt(ctx.share.data_key(), env.result)
    report = ck.audit_proof(
        req.q,
        env,
        verify_key=VerifyKey(ctx.core_sig_pub),
        result_bytes=result_bytes,
        catalog=ctx.catalog,
    )
    detected = not report.passed or script.get("kind", "none") == "none"
    _emit(
        args,
        {"outcome": "envelope", "verdict": report.verdict, "detected": detected},
        f"attack produced an envelope; audit says {report.verdict}",
    )
    return 0 if detected else 1


# ---------------------------------------------------------------------------
# bench commands
# ---------------------------------------------------------------------------

def _sample_collection(name: str, n: int) -> Collection:
    docs = [
        {"A1": i, "A3": i % 17, "A4": (i * 7) % 1000, "A5": f"tag{i % 5}"}
        for i in range(n)
    ]
    return Collection.build(name, docs)


def _time_ms(fn, repeat: int = 3) -> float:
    best = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        dt = (time.perf_counter() - t0) * 1000
        best = dt if best is None else min(best, dt)
    return best


def cmd_bench_operators(ws: Workspace, args) -> int:
    sizes = [int(x) for x in args.docs.split(",")]
    print("operator,docs,ms")
    for n in sizes:
        c = _sample_collection("B", n)
        pred = Predicate(AttrRef(None, "A1"), "<=", Literal(n // 2))
        print(f"projection,{n},{_time_ms(lambda: op_project(c, ['A3', 'A4'])):.3f}")
        print(f"selection,{n},{_time_ms(lambda: op_select(c, pred)):.3f}")
        print(f"aggregation,{n},{_time_ms(lambda: op_aggregate(c, 'sum', 'A4')):.3f}")
    for n in [int(x) for x in args.join_docs.split(",")]:
        c1 = _sample_collection("BL", n)
        c2 = _sample_collection("BR", n)
        jp = Predicate(AttrRef("BL", "A3"), "=", AttrRef("BR", "A3"))
        print(f"join,{n},{_time_ms(lambda: op_join(c1, c2, jp), repeat=1):.3f}")
    return 0


def cmd_bench_decrypt(ws: Workspace, args) -> int:
    share_set = sharing.setup(128, 1)
    share = share_set.user_shares[0]
    pol = Policy()
    pol.add(share.uid(), {"bench"})
    print("bytes,ms")
    for size in [int(x) for x in args.sizes.split(",")]:
        ct = sharing.encrypt(share_set.sk, os.urandom(size))
        ms = _time_ms(
            lambda: sharing.decrypt(pol, share_set.enclave_share, share, {"bench": [ct]})
        )
        print(f"{size},{ms:.3f}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qshield",
        description="secure SQL-like queries over encrypted outsourced data",
    )
    parser.add_argument(
        "--workspace",
        default=os.environ.get("QSHIELD_STORE", DEFAULT_WORKSPACE),
        help="state directory (env QSHIELD_STORE overrides the default)",
    )
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="role", required=True)

    owner = sub.add_parser("owner").add_subparsers(dest="command", required=True)
    p = owner.add_parser("setup")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--security", type=int, default=128)
    p.set_defaults(fn=cmd_owner_setup)
    p = owner.add_parser("upload")
    p.add_argument("--collection", required=True)
    p.add_argument("--file", required=True)
    p.add_argument("--grant", default="", help="comma-separated user indexes")
    p.set_defaults(fn=cmd_owner_upload)
    p = owner.add_parser("policy")
    p.add_argument("--op", choices=["add", "remove", "modify"], required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--cids", default="", help="comma-separated collection names")
    p.set_defaults(fn=cmd_owner_policy)
    p = owner.add_parser("provision")
    p.add_argument("--server", default="")
    p.set_defaults(fn=cmd_owner_provision)

    user = sub.add_parser("user").add_subparsers(dest="command", required=True)
    p = user.add_parser("token")
    p.add_argument("--index", required=True)
    p.add_argument("--expr", required=True)
    p.add_argument("--out", default="")
    p.add_argument("--server", default="")
    p.set_defaults(fn=cmd_user_token)
    p = user.add_parser("query")
    p.add_argument("--index", default="1")
    p.add_argument("--expr", required=True)
    p.add_argument("--server", default="")
    p.add_argument("--save-envelope", default="")
    p.add_argument("--save-request", default="")
    p.set_defaults(fn=cmd_user_query)
    p = user.add_parser("audit")
    p.add_argument("--index", default="1")
    p.add_argument("--request", required=True)
    p.add_argument("--envelope", required=True)
    p.add_argument("--server", default="")
    p.set_defaults(fn=cmd_user_audit)

    server = sub.add_parser("server").add_subparsers(dest="command", required=True)
    p = server.add_parser("start")
    p.add_argument("--port", type=int, default=7443)
    p.set_defaults(fn=cmd_server_start)
    p = server.add_parser("attack")
    p.add_argument("--script", required=True)
    p.add_argument("--index", default="1")
    p.add_argument(
        "--expr",
        default="SELECT SUM(A4) FROM C1 JOIN C2 ON C1.A3 = C2.A3 WHERE C1.A1 <= 10",
    )
    p.set_defaults(fn=cmd_server_attack)

    bench = sub.add_parser("bench").add_subparsers(dest="command", required=True)
    p = bench.add_parser("operators")
    p.add_argument("--docs", default="1000,5000,10000")
    p.add_argument("--join-docs", default="100,300,1000")
    p.set_defaults(fn=cmd_bench_operators)
    p = bench.add_parser("decrypt")
    p.add_argument("--sizes", default="1,10,100,1000,10000,100000")
    p.set_defaults(fn=cmd_bench_decrypt)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    ws = Workspace(args.workspace)
    try:
        return args.fn(ws, args)
    except QShieldError as exc:
        message = {"error": type(exc).__name__, "message": str(exc)}
        if args.json:
            print(json.dumps(message), file=sys.stderr)
        else:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
