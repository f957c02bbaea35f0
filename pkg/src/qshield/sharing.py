"""Two-level secret sharing over the bilinear group.

The owner runs setup once: it draws exponents r, m and per-user t_i,
derives the data key sk = H(e(g,g)^m), and splits decryption capability
into an enclave share

    sk_a = ({g^t_1, ..., g^t_n}, e(g,g)^(r+m))

and one share per user

    sk_b_i = g^((2r+m)/t_i).

Neither side can recover sk alone: pairing u_i with v_i gives
e(g,g)^(2r+m), and blind^2 / e(u_i, v_i) = e(g,g)^(2(r+m)-(2r+m)) =
e(g,g)^m, so exactly the combination of one enclave share and one user
share reconstructs the key.  Pairing two user shares lands on
e(g,g)^((2r+m)^2 / (t_i t_j)), which is unrelated to m.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass

from . import crypto
from .crypto import Ciphertext
from .errors import (
    ArgumentError,
    AuthorizationError,
    ConfigurationError,
    ContextError,
    EncodingError,
)
from .pairing import (
    GT_BYTES,
    POINT_BYTES,
    G1Point,
    GroupContext,
    GTElement,
    g1_mul_gen,
    in_subgroup,
)
from .policy import Policy

CURVE_TAG = "QS1536-v1"

SHARESET_MAGIC = b"QSHD1"
USERSHARE_MAGIC = b"QSHU1"


@dataclass(frozen=True)
class MasterSecret:
    """Setup-time exponents; retained only by test hooks, never exported."""

    r: int
    m: int
    t: tuple[int, ...]


@dataclass(frozen=True)
class EnclaveShare:
    u: tuple[G1Point, ...]
    blind: GTElement
    curve: str = CURVE_TAG

    @property
    def n(self) -> int:
        return len(self.u)


@dataclass(frozen=True)
class UserShare:
    index: int
    v: G1Point
    curve: str = CURVE_TAG

    def uid(self) -> str:
        """Policy identifier: hex SHA-256 of the canonical share encoding."""
        return crypto.sha256(self.v.encode()).hex()

    def data_key(self) -> bytes:
        """256-bit AEAD key for result protection, domain-separated from uid()."""
        return crypto.sha256(b"data-key:" + self.v.encode())

    def to_file_bytes(self) -> bytes:
        return USERSHARE_MAGIC + self.index.to_bytes(4, "big") + self.v.encode()

    @classmethod
    def from_file_bytes(cls, data: bytes) -> "UserShare":
        if len(data) != len(USERSHARE_MAGIC) + 4 + POINT_BYTES:
            raise EncodingError("bad user share file length")
        if data[:5] != USERSHARE_MAGIC:
            raise EncodingError("bad user share magic")
        index = int.from_bytes(data[5:9], "big")
        v = G1Point.decode(data[9:])
        if not in_subgroup(v) or v.is_identity:
            raise EncodingError("user share point not in the prime-order subgroup")
        return cls(index, v)


@dataclass(frozen=True)
class SymmetricKey:
    key: bytes

    def __post_init__(self):
        if len(self.key) != 32:
            raise ArgumentError("symmetric key must be 256 bits")

    def __repr__(self) -> str:  # never print key material
        return "SymmetricKey(<256-bit>)"


@dataclass(frozen=True)
class ShareSet:
    sk: SymmetricKey
    enclave_share: EnclaveShare
    user_shares: tuple[UserShare, ...]

    @property
    def n(self) -> int:
        return len(self.user_shares)

    def export(self) -> bytes:
        """Versioned binary: magic, n, enclave share elements, indexed user shares."""
        out = bytearray(SHARESET_MAGIC)
        out += self.n.to_bytes(4, "big")
        for pt in self.enclave_share.u:
            out += pt.encode()
        out += self.enclave_share.blind.encode()
        for share in self.user_shares:
            out += share.index.to_bytes(4, "big")
            out += share.v.encode()
        return bytes(out)

    @classmethod
    def import_shares(cls, data: bytes) -> tuple[EnclaveShare, tuple[UserShare, ...]]:
        """Parse an export; sk itself is never serialized, so it is not returned."""
        if data[:5] != SHARESET_MAGIC:
            raise EncodingError("bad share set magic")
        off = 5
        n = int.from_bytes(data[off : off + 4], "big")
        off += 4
        expect = off + n * POINT_BYTES + GT_BYTES + n * (4 + POINT_BYTES)
        if len(data) != expect:
            raise EncodingError(f"share set length {len(data)} != expected {expect}")
        u = []
        for _ in range(n):
            pt = G1Point.decode(data[off : off + POINT_BYTES])
            if pt.is_identity or not in_subgroup(pt):
                raise EncodingError("enclave share point invalid")
            u.append(pt)
            off += POINT_BYTES
        blind = GTElement.decode(data[off : off + GT_BYTES])
        off += GT_BYTES
        shares = []
        for _ in range(n):
            idx = int.from_bytes(data[off : off + 4], "big")
            off += 4
            v = G1Point.decode(data[off : off + POINT_BYTES])
            off += POINT_BYTES
            if v.is_identity or not in_subgroup(v):
                raise EncodingError("user share point invalid")
            shares.append(UserShare(idx, v))
        return EnclaveShare(tuple(u), blind), tuple(shares)


def _derive_key(element: GTElement) -> SymmetricKey:
    return SymmetricKey(crypto.sha256(element.encode()))


def setup(security_bits: int, n: int) -> ShareSet:
    """Generate the data key and both share levels for n users."""
    shares, _ = _setup_with_master(security_bits, n)
    return shares


def _setup_with_master(security_bits: int, n: int) -> tuple[ShareSet, MasterSecret]:
    """Setup variant that also returns the exponents, for white-box tests."""
    if n < 1:
        raise ArgumentError(f"user count must be positive, got {n}")
    try:
        ctx = GroupContext.default(security_bits)
    except ContextError as exc:
        raise ConfigurationError(str(exc)) from exc
    order = int(ctx.p)

    def draw() -> int:
        while True:
            k = secrets.randbelow(order)
            if k != 0:
                return k

    while True:
        r = draw()
        m = draw()
        if (2 * r + m) % order != 0 and (r + m) % order != 0:
            break
    t: list[int] = []
    seen: set[int] = set()
    while len(t) < n:
        ti = draw()
        if ti not in seen:
            seen.add(ti)
            t.append(ti)

    u = tuple(g1_mul_gen(ti) for ti in t)
    blind = ctx.egg ** (r + m)
    enclave_share = EnclaveShare(u, blind)
    two_r_m = (2 * r + m) % order
    user_shares = tuple(
        UserShare(i + 1, g1_mul_gen(two_r_m * pow(ti, -1, order) % order))
        for i, ti in enumerate(t)
    )
    sk = _derive_key(ctx.egg ** m)
    return ShareSet(sk, enclave_share, user_shares), MasterSecret(r, m, tuple(t))


def encrypt(sk: SymmetricKey, msg: bytes) -> Ciphertext:
    """AEAD-encrypt one message under the data key; nonce is fresh per call."""
    if not msg:
        raise ArgumentError("message must be nonempty")
    return crypto.aead_encrypt(sk.key, msg)


def reconstruct_key(sk_a: EnclaveShare, sk_b: UserShare) -> SymmetricKey:
    """Combine one enclave share and one user share back into the data key."""
    if sk_a.curve != sk_b.curve:
        raise ContextError(f"share contexts differ: {sk_a.curve} vs {sk_b.curve}")
    if not 1 <= sk_b.index <= sk_a.n:
        raise ArgumentError(f"share index {sk_b.index} outside 1..{sk_a.n}")
    ctx = GroupContext.default()
    e_uv = ctx.pairing(sk_a.u[sk_b.index - 1], sk_b.v)
    secret = sk_a.blind * sk_a.blind * e_uv.inverse()
    return _derive_key(secret)


def decrypt(
    pol: Policy,
    sk_a: EnclaveShare,
    sk_b: UserShare,
    ct: dict[str, list[Ciphertext]],
) -> dict[str, list[bytes]]:
    """Reconstruct sk, decrypt, and keep only the collections pol authorizes.

    Returns {cid: [plaintext, ...]} for exactly the cids that both appear
    in `ct` and are granted to the requesting user.  The reconstructed key
    is wiped from the working buffer before returning; the AEAD layer may
    still have made transient copies, which Python cannot scrub.
    """
    if not ct:
        raise ArgumentError("ciphertext map must be nonempty")
    entry = pol.lookup(sk_b.uid())
    if entry is None:
        raise AuthorizationError("user share is not present in the access policy")
    key_buf = bytearray(reconstruct_key(sk_a, sk_b).key)
    try:
        out: dict[str, list[bytes]] = {}
        for cid in sorted(ct.keys()):
            if cid not in entry:
                continue
            out[cid] = [crypto.aead_decrypt(key_buf, c) for c in ct[cid]]
        return out
    finally:
        crypto.wipe(key_buf)
