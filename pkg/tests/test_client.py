"""Owner and user workflows, token discipline and the audit algorithm."""

import json

import pytest

from qshield import client as ck
from qshield import crypto
from qshield.core import ResponseEnvelope
from qshield.crypto import Ciphertext, VerifyKey
from qshield.errors import (
    ArgumentError,
    AuditError,
    ChannelError,
    IntegrityError,
    NotFoundError,
    QuerySyntaxError,
    SchemaError,
)
from qshield.host import EncryptedStore, HostService
from conftest import SUM_JOIN_QUERY, build_deployment, sum_join_oracle


class TestOwnerCeremony:
    def test_setup_produces_n_shares(self):
        owner = ck.owner_setup(128, 4)
        assert owner.n == 4
        assert owner.pol.entries == {}

    def test_register_assigns_share_hash_uid(self):
        owner = ck.owner_setup(128, 2)
        uid = ck.register_user(owner, 1)
        assert uid == owner.share_set.user_shares[0].uid()
        assert owner.pol.entries[uid] == frozenset()

    def test_register_out_of_range(self):
        owner = ck.owner_setup(128, 2)
        with pytest.raises(ArgumentError):
            ck.register_user(owner, 3)

    def test_setup_zero_users_propagates(self):
        with pytest.raises(ArgumentError):
            ck.owner_setup(128, 0)

    def test_provision_ack_digest(self, tmp_path):
        host = HostService(EncryptedStore(tmp_path / "store"))
        owner = ck.owner_setup(128, 1)
        ck.register_user(owner, 1)
        digest = ck.owner_provision(owner, host)
        assert digest == crypto.sha256(owner.pol.digest_material()).hex()


class TestOwnerUpload:
    def test_new_collection_fires_policy_update(self, tmp_path):
        dep = build_deployment(tmp_path, n_docs1=2, n_docs2=2)
        before = dep.owner.pol.entries[dep.owner.registered[1]]
        did, ct, cid = ck.owner_upload(
            dep.owner, dep.host, {"B1": 5}, name="C3", users=[1]
        )
        after = dep.owner.pol.entries[dep.owner.registered[1]]
        assert cid in after and cid not in before
        assert crypto.sha256(ct).hex() == did

    def test_upload_to_existing(self, tmp_path):
        dep = build_deployment(tmp_path, n_docs1=2, n_docs2=2)
        did, ct, cid = ck.owner_upload(
            dep.owner, dep.host, {"A1": 9, "A3": 1, "A5": "new"}, cid=dep.cids["C1"]
        )
        assert cid == dep.cids["C1"]
        assert (did, ct) in dep.host.store.retrieve(cid)

    def test_unknown_cid(self, tmp_path):
        dep = build_deployment(tmp_path, n_docs1=2, n_docs2=2)
        with pytest.raises(NotFoundError):
            ck.owner_upload(dep.owner, dep.host, {"A1": 1}, cid="ff" * 32)

    def test_schema_mismatch_rejected(self, tmp_path):
        dep = build_deployment(tmp_path, n_docs1=2, n_docs2=2)
        with pytest.raises(SchemaError):
            ck.owner_upload(dep.owner, dep.host, {"WRONG": 1}, cid=dep.cids["C1"])


class TestPolicyOps:
    def test_ack_mismatch_detected(self, tmp_path):
        dep = build_deployment(tmp_path, n_docs1=2, n_docs2=2)
        uid = dep.owner.registered[2]
        # corrupt the local mirror so the core acks a different digest
        dep.owner.pol.entries["deadbeef"] = frozenset({"x"})
        with pytest.raises(ChannelError):
            ck.owner_update_policy(dep.owner, dep.host, "remove", uid)

    def test_remove_then_query_denied(self, tmp_path):
        dep = build_deployment(tmp_path, n_docs1=3, n_docs2=2)
        user = dep.users[1]
        ck.user_query(user, dep.host, "SELECT A1 FROM C1")
        ck.owner_update_policy(dep.owner, dep.host, "remove", user.uid())
        from qshield.errors import AuthorizationError

        with pytest.raises(AuthorizationError):
            ck.user_query(user, dep.host, "SELECT A1 FROM C1")


class TestTokens:
    def test_example_token_embeds_budget_five(self, deployment):
        user = deployment.users[1]
        req = ck.user_make_token(user, SUM_JOIN_QUERY)
        core = deployment.host.core
        share, omega, counter = __import__(
            "qshield.core", fromlist=["decode_token_body"]
        ).decode_token_body(core._pke_priv.decrypt(req.tk))
        assert omega == 5
        assert counter == 0
        assert share == user.share

    def test_counters_advance_per_token(self, deployment):
        user = deployment.users[1]
        ck.user_make_token(user, "SELECT A1 FROM C1")
        ck.user_make_token(user, "SELECT A1 FROM C1")
        assert user.counter == 1

    def test_counters_never_repeat(self, deployment):
        user = deployment.users[1]
        seen = set()
        for _ in range(10):
            ck.user_make_token(user, "SELECT A1 FROM C1")
            assert user.counter not in seen
            seen.add(user.counter)

    def test_malformed_query_consumes_nothing(self, deployment):
        user = deployment.users[1]
        with pytest.raises(QuerySyntaxError):
            ck.user_make_token(user, "SELECT FROM nowhere")
        assert user.counter == -1

    def test_replay_resync_helper(self, deployment):
        ck.user_query(deployment.users[1], deployment.host, "SELECT A1 FROM C1")
        result, report, _, _ = ck.user_query(
            deployment.users[2], deployment.host, "SELECT A1 FROM C1"
        )
        assert report.verdict == "PASS"
        assert deployment.users[2].counter > 0


class TestOpenResponse:
    def test_honest_round_trip(self, deployment):
        user = deployment.users[1]
        req = ck.user_make_token(user, SUM_JOIN_QUERY)
        env = deployment.host.handle_query(req)
        result, report = ck.user_open_response(user, req, env)
        assert result == sum_join_oracle(deployment.docs1, deployment.docs2)
        assert report.verdict == "PASS"
        assert [c.name for c in report.checks] == [
            "signature",
            "structure",
            "budget",
            "digest",
        ]

    def test_bit_flipped_result_withheld(self, deployment):
        user = deployment.users[1]
        req = ck.user_make_token(user, SUM_JOIN_QUERY)
        env = deployment.host.handle_query(req)
        body = bytearray(env.result.body)
        body[0] ^= 1
        evil = ResponseEnvelope(
            Ciphertext(env.result.nonce, bytes(body)), env.tp, env.sig
        )
        with pytest.raises(IntegrityError):
            ck.user_open_response(user, req, evil)

    def test_bit_flipped_proof_raises(self, deployment):
        user = deployment.users[1]
        req = ck.user_make_token(user, SUM_JOIN_QUERY)
        env = deployment.host.handle_query(req)
        tp = bytearray(env.tp)
        tp[10] ^= 1
        evil = ResponseEnvelope(env.result, bytes(tp), env.sig)
        with pytest.raises(AuditError):
            ck.user_open_response(user, req, evil)

    def test_audit_report_json_shape(self, deployment):
        user = deployment.users[1]
        result, report, _, _ = ck.user_query(
            user, deployment.host, "SELECT A1 FROM C1"
        )
        blob = json.loads(report.to_json())
        assert blob["verdict"] == "PASS"
        assert {c["name"] for c in blob["checks"]} >= {"signature", "structure"}
        assert all(set(c) == {"name", "pass", "detail"} for c in blob["checks"])


class TestAuditAlgorithm:
    def _envelope(self, deployment, q=SUM_JOIN_QUERY):
        user = deployment.users[1]
        req = ck.user_make_token(user, q)
        env = deployment.host.handle_query(req)
        result_bytes = crypto.aead_decrypt(user.share.data_key(), env.result)
        return user, req, env, result_bytes

    def _audit(self, user, q, env, result_bytes):
        return ck.audit_proof(
            q,
            env,
            verify_key=VerifyKey(user.core_sig_pub),
            result_bytes=result_bytes,
            catalog=user.catalog,
        )

    def test_wrong_query_fails_structure(self, deployment):
        user, req, env, result_bytes = self._envelope(deployment)
        report = self._audit(user, "SELECT A1 FROM C1", env, result_bytes)
        assert report.verdict == "FAIL" and report.failed_check == "structure"

    def test_foreign_result_fails_digest(self, deployment):
        user, req, env, result_bytes = self._envelope(deployment)
        report = self._audit(user, req.q, env, result_bytes + b" ")
        assert report.verdict == "FAIL" and report.failed_check == "digest"

    def test_trace_not_json_fails_structure(self, deployment):
        user, req, env, result_bytes = self._envelope(deployment)
        # re-sign garbage with the true key to isolate the structure check
        core = deployment.host.core
        tp = b"\x00 not json"
        evil = ResponseEnvelope(env.result, tp, core._sig_priv.sign(tp))
        report = self._audit(user, req.q, evil, result_bytes)
        assert report.failed_check == "structure"

    def test_budget_check_catches_rewritten_w(self, deployment):
        user, req, env, result_bytes = self._envelope(deployment)
        core = deployment.host.core
        records = json.loads(env.tp)
        for r in records:
            r["w"] = max(r["w"], 1)
        from qshield.core import encode_trace

        tp = encode_trace(records)
        evil = ResponseEnvelope(env.result, tp, core._sig_priv.sign(tp))
        report = self._audit(user, req.q, evil, result_bytes)
        assert report.failed_check == "budget"

    def test_share_file_handoff(self, tmp_path, deployment):
        share = deployment.users[1].share
        path = tmp_path / "alice.share"
        ck.save_user_share(path, share)
        assert ck.load_user_share(path) == share
