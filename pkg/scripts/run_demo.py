#!/usr/bin/env python3
"""End-to-end walkthrough: ceremony, upload, query, audit, and attacks.

Runs the whole protocol stack in one process against a temp directory,
in both stand-alone and broker/worker mode, then replays a few host
attacks to show the detection surface.  Prints each step; exits nonzero
if any expectation fails.
"""

import random
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from qshield import client as ck
from qshield import crypto
from qshield.crypto import VerifyKey
from qshield.distributed import Broker, default_worker_pool
from qshield.errors import QShieldError
from qshield.host import EncryptedStore, HostService, measurement

QUERY = "SELECT SUM(A4) FROM C1 JOIN C2 ON C1.A3 = C2.A3 WHERE C1.A1 <= 10"


def seed(host, owner, docs1, docs2):
    for i in (1, 2):
        ck.register_user(owner, i)
    ck.owner_provision(owner, host)
    for name, docs, grant in (("C1", docs1, [1, 2]), ("C2", docs2, [1])):
        _, _, cid = ck.owner_upload(owner, host, docs[0], name=name, users=grant)
        for doc in docs[1:]:
            ck.owner_upload(owner, host, doc, cid=cid)


def main() -> int:
    rnd = random.Random(2024)
    docs1 = [
        {"A1": rnd.randrange(0, 40), "A3": rnd.randrange(0, 6), "A5": f"rec{i}"}
        for i in range(200)
    ]
    docs2 = [
        {"A2": f"name{i}", "A3": rnd.randrange(0, 6), "A4": rnd.randrange(-50, 150)}
        for i in range(150)
    ]
    oracle = sum(
        d2["A4"]
        for d1 in docs1
        if d1["A1"] <= 10
        for d2 in docs2
        if d1["A3"] == d2["A3"]
    )

    with tempfile.TemporaryDirectory() as tmp:
        print("== stand-alone mode ==")
        host = HostService(EncryptedStore(Path(tmp) / "solo"))
        owner = ck.owner_setup(128, 2)
        t0 = time.perf_counter()
        seed(host, owner, docs1, docs2)
        print(f"provisioned + uploaded 350 documents in {time.perf_counter()-t0:.2f}s")

        alice = ck.make_user_context(owner, 1, host)
        t0 = time.perf_counter()
        result, report, req, env = ck.user_query(alice, host, QUERY)
        print(
            f"query answered in {time.perf_counter()-t0:.2f}s: "
            f"SUM = {result} (oracle {oracle}), audit {report.verdict}"
        )
        assert result == oracle and report.passed

        bob = ck.make_user_context(owner, 2, host)
        try:
            ck.user_query(bob, host, "SELECT A4 FROM C2")
            print("bob read C2?!")
            return 1
        except QShieldError as exc:
            print(f"bob blocked from C2: {type(exc).__name__}")

        print("\n== broker/worker mode ==")
        broker = Broker()
        broker.attest_workers(default_worker_pool(), measurement())
        dhost = HostService(EncryptedStore(Path(tmp) / "dist"), core=broker)
        downer = ck.owner_setup(128, 2)
        seed(dhost, downer, docs1, docs2)
        duser = ck.make_user_context(downer, 1, dhost)
        dresult, dreport, _, denv = ck.user_query(duser, dhost, QUERY)
        print(f"distributed SUM = {dresult}, audit {dreport.verdict}")
        print("worker dispatch:", broker.dispatch_log())
        assert dresult == oracle
        assert denv.tp == env.tp, "trace should be identical across modes"
        print("trust proof identical across modes")

        print("\n== host attacks ==")
        attacks = [
            ("6th operator beyond the budget", {"kind": "duplicate", "i": 4}),
            ("weakened selection literal", {
                "kind": "substitute_params",
                "i": 0,
                "f_params": {
                    "collection": "C1",
                    "predicate": {
                        "lhs": {"collection": "C1", "attr": "A1"},
                        "op": "<=",
                        "rhs": {"literal": 999},
                    },
                },
            }),
            ("reordered projections", {"kind": "reorder", "i": 1, "j": 2}),
            ("dropped join", {"kind": "drop", "i": 3}),
        ]
        from qshield.errors import ReplayError

        for label, script in attacks:
            areq = ck.user_make_token(alice, QUERY)
            try:
                try:
                    aenv = host.handle_query_adversarial(areq, script)
                except ReplayError as exc:
                    # another context advanced the shared floor; resync once
                    alice.counter = exc.floor
                    areq = ck.user_make_token(alice, QUERY)
                    aenv = host.handle_query_adversarial(areq, script)
            except QShieldError as exc:
                print(f"{label}: stopped by the core ({type(exc).__name__})")
                continue
            blob = crypto.aead_decrypt(alice.share.data_key(), aenv.result)
            rep = ck.audit_proof(
                areq.q,
                aenv,
                verify_key=VerifyKey(alice.core_sig_pub),
                result_bytes=blob,
                catalog=alice.catalog,
            )
            print(f"{label}: envelope produced, audit {rep.verdict} ({rep.failed_check})")
            assert not rep.passed

        print("\nall demo expectations held")
    return 0


if __name__ == "__main__":
    sys.exit(main())
