"""The two-level secret sharing scheme: reconstruction, filtering, formats."""

import pytest

from qshield import crypto, sharing
from qshield.errors import (
    ArgumentError,
    AuthorizationError,
    ConfigurationError,
    ContextError,
    EncodingError,
    IntegrityError,
)
from qshield.pairing import GroupContext, pairing
from qshield.policy import Policy


@pytest.fixture(scope="module")
def shares4():
    return sharing.setup(128, 4)


class TestSetup:
    def test_minimal_n_reconstructs(self):
        ss = sharing.setup(128, 1)
        assert sharing.reconstruct_key(ss.enclave_share, ss.user_shares[0]) == ss.sk

    def test_sixteen_shares_reconstruct_against_master_oracle(self):
        # independent oracle: recompute H(e(g,g)^m) straight from the exponent
        ss, master = sharing._setup_with_master(128, 16)
        ctx = GroupContext.default()
        oracle = crypto.sha256((ctx.egg ** master.m).encode())
        assert ss.sk.key == oracle
        for share in ss.user_shares:
            assert sharing.reconstruct_key(ss.enclave_share, share).key == oracle

    def test_share_algebra_matches_master_secret(self):
        ss, master = sharing._setup_with_master(128, 2)
        ctx = GroupContext.default()
        order = int(ctx.p)
        for i, share in enumerate(ss.user_shares):
            e_uv = pairing(ss.enclave_share.u[i], share.v)
            assert e_uv == ctx.egg ** ((2 * master.r + master.m) % order)
        assert ss.enclave_share.blind == ctx.egg ** ((master.r + master.m) % order)

    def test_zero_users_rejected(self):
        with pytest.raises(ArgumentError):
            sharing.setup(128, 0)

    def test_unsupported_security_level(self):
        with pytest.raises(ConfigurationError):
            sharing.setup(80, 1)

    def test_distinct_exponents(self):
        _, master = sharing._setup_with_master(128, 8)
        assert len(set(master.t)) == 8
        assert 0 not in master.t
        assert master.r != 0 and master.m != 0

    def test_independent_runs_differ(self):
        a = sharing.setup(128, 1)
        b = sharing.setup(128, 1)
        assert a.sk != b.sk
        assert a.user_shares[0].v != b.user_shares[0].v


class TestReconstruct:
    def test_all_shares_give_setup_key(self, shares4):
        for share in shares4.user_shares:
            assert sharing.reconstruct_key(shares4.enclave_share, share) == shares4.sk

    def test_index_out_of_range(self, shares4):
        rogue = sharing.UserShare(5, shares4.user_shares[0].v)
        with pytest.raises(ArgumentError):
            sharing.reconstruct_key(shares4.enclave_share, rogue)

    def test_context_mismatch(self, shares4):
        foreign = sharing.UserShare(1, shares4.user_shares[0].v, curve="OTHER")
        with pytest.raises(ContextError):
            sharing.reconstruct_key(shares4.enclave_share, foreign)

    def test_cross_setup_key_fails_aead(self, shares4):
        other = sharing.setup(128, 4)
        ct = sharing.encrypt(shares4.sk, b"sensitive")
        wrong = sharing.reconstruct_key(shares4.enclave_share, other.user_shares[0])
        assert wrong != shares4.sk
        with pytest.raises(IntegrityError):
            crypto.aead_decrypt(wrong.key, ct)

    def test_user_share_collusion_yields_wrong_key(self):
        # pairing two user shares lands on (2r+m)^2/(t_i t_j), not m
        for _ in range(100):
            ss = sharing.setup(128, 2)
            v1, v2 = ss.user_shares[0].v, ss.user_shares[1].v
            colluded = crypto.sha256(pairing(v1, v2).encode())
            assert colluded != ss.sk.key


class TestEncryptDecrypt:
    def test_round_trip(self, shares4):
        ct = sharing.encrypt(shares4.sk, b"hello")
        assert crypto.aead_decrypt(shares4.sk.key, ct) == b"hello"

    def test_nonce_freshness(self, shares4):
        a = sharing.encrypt(shares4.sk, b"same message")
        b = sharing.encrypt(shares4.sk, b"same message")
        assert a.to_bytes() != b.to_bytes()
        assert crypto.aead_decrypt(shares4.sk.key, a) == crypto.aead_decrypt(
            shares4.sk.key, b
        )

    def test_empty_message_rejected(self, shares4):
        with pytest.raises(ArgumentError):
            sharing.encrypt(shares4.sk, b"")

    def test_policy_filters_unauthorized(self, shares4):
        pol = Policy()
        pol.add(shares4.user_shares[0].uid(), {"cid1"})
        ct = {
            "cid1": [sharing.encrypt(shares4.sk, b"allowed")],
            "cid2": [sharing.encrypt(shares4.sk, b"forbidden")],
        }
        out = sharing.decrypt(pol, shares4.enclave_share, shares4.user_shares[0], ct)
        assert out == {"cid1": [b"allowed"]}

    def test_empty_grant_gives_empty_result(self, shares4):
        pol = Policy()
        pol.add(shares4.user_shares[1].uid(), frozenset())
        ct = {"cid1": [sharing.encrypt(shares4.sk, b"data")]}
        out = sharing.decrypt(pol, shares4.enclave_share, shares4.user_shares[1], ct)
        assert out == {}

    def test_unknown_uid_rejected(self, shares4):
        pol = Policy()
        ct = {"cid1": [sharing.encrypt(shares4.sk, b"data")]}
        with pytest.raises(AuthorizationError):
            sharing.decrypt(pol, shares4.enclave_share, shares4.user_shares[0], ct)

    def test_tampered_ciphertext(self, shares4):
        pol = Policy()
        pol.add(shares4.user_shares[0].uid(), {"cid1"})
        ct = sharing.encrypt(shares4.sk, b"data")
        evil = crypto.Ciphertext(ct.nonce, bytes([ct.body[0] ^ 1]) + ct.body[1:])
        with pytest.raises(IntegrityError):
            sharing.decrypt(
                pol, shares4.enclave_share, shares4.user_shares[0], {"cid1": [evil]}
            )

    def test_order_independent(self, shares4):
        pol = Policy()
        pol.add(shares4.user_shares[0].uid(), {"a", "b"})
        ct_a = sharing.encrypt(shares4.sk, b"doc a")
        ct_b = sharing.encrypt(shares4.sk, b"doc b")
        fwd = sharing.decrypt(
            pol, shares4.enclave_share, shares4.user_shares[0], {"a": [ct_a], "b": [ct_b]}
        )
        rev = sharing.decrypt(
            pol, shares4.enclave_share, shares4.user_shares[0], {"b": [ct_b], "a": [ct_a]}
        )
        assert fwd == rev

    def test_empty_ct_rejected(self, shares4):
        pol = Policy()
        pol.add(shares4.user_shares[0].uid(), {"cid1"})
        with pytest.raises(ArgumentError):
            sharing.decrypt(pol, shares4.enclave_share, shares4.user_shares[0], {})


class TestFormats:
    def test_share_set_export_round_trip(self, shares4):
        blob = shares4.export()
        assert blob[:5] == b"QSHD1"
        assert int.from_bytes(blob[5:9], "big") == 4
        sk_a, user_shares = sharing.ShareSet.import_shares(blob)
        assert sk_a == shares4.enclave_share
        assert user_shares == shares4.user_shares

    def test_share_set_import_rejects_bad_magic(self, shares4):
        blob = bytearray(shares4.export())
        blob[0] ^= 0xFF
        with pytest.raises(EncodingError):
            sharing.ShareSet.import_shares(bytes(blob))

    def test_share_set_import_rejects_truncation(self, shares4):
        with pytest.raises(EncodingError):
            sharing.ShareSet.import_shares(shares4.export()[:-1])

    def test_user_share_file_round_trip(self, shares4):
        share = shares4.user_shares[2]
        blob = share.to_file_bytes()
        assert blob[:5] == b"QSHU1"
        assert sharing.UserShare.from_file_bytes(blob) == share

    def test_user_share_file_rejects_corruption(self, shares4):
        blob = bytearray(shares4.user_shares[0].to_file_bytes())
        blob[20] ^= 0x55
        with pytest.raises(EncodingError):
            sharing.UserShare.from_file_bytes(bytes(blob))

    def test_uid_and_data_key_are_domain_separated(self, shares4):
        share = shares4.user_shares[0]
        assert share.uid() != share.data_key().hex()
        assert share.uid() == crypto.sha256(share.v.encode()).hex()

    def test_uid_deterministic(self, shares4):
        share = shares4.user_shares[0]
        assert share.uid() == sharing.UserShare(1, share.v).uid()
