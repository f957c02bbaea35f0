"""Conventional crypto building blocks: AEAD, hybrid PKE, signatures, hashing.

Thin wrappers over the `cryptography` package pinned to one algorithm
each: AES-256-GCM for authenticated encryption, X25519 + HKDF-SHA256 +
AES-256-GCM for public-key encryption (KEM/DEM hybrid), Ed25519 for
signatures, SHA-256 as the collision-resistant hash.  All are standard
constructions at the 128-bit level.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import ArgumentError, IntegrityError, TokenError

NONCE_BYTES = 12
KEY_BYTES = 32


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hkdf(secret: bytes, info: bytes, length: int = KEY_BYTES) -> bytes:
    return HKDF(algorithm=SHA256(), length=length, salt=None, info=info).derive(secret)


@dataclass(frozen=True)
class Ciphertext:
    """AEAD ciphertext: fresh nonce, body and the appended 16-byte tag."""

    nonce: bytes
    body: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if len(data) < NONCE_BYTES + 16:
            raise ArgumentError("ciphertext too short")
        return cls(data[:NONCE_BYTES], data[NONCE_BYTES:])


def aead_encrypt(key: bytes, plaintext: bytes, aad: bytes = b"") -> Ciphertext:
    if len(key) != KEY_BYTES:
        raise ArgumentError(f"AEAD key must be {KEY_BYTES} bytes")
    nonce = os.urandom(NONCE_BYTES)
    body = AESGCM(bytes(key)).encrypt(nonce, plaintext, aad or None)
    return Ciphertext(nonce, body)


def aead_decrypt(key: bytes, ct: Ciphertext, aad: bytes = b"") -> bytes:
    if len(key) != KEY_BYTES:
        raise ArgumentError(f"AEAD key must be {KEY_BYTES} bytes")
    try:
        return AESGCM(bytes(key)).decrypt(ct.nonce, ct.body, aad or None)
    except InvalidTag as exc:
        raise IntegrityError("AEAD authentication failed") from exc


# ---------------------------------------------------------------------------
# Hybrid public-key encryption (X25519 KEM + AES-GCM DEM)
# ---------------------------------------------------------------------------

_PKE_INFO = b"qshield-pke-v1"


class PKEPrivateKey:
    def __init__(self, raw: X25519PrivateKey | None = None):
        self._key = raw or X25519PrivateKey.generate()

    def public_key(self) -> "PKEPublicKey":
        return PKEPublicKey(self._key.public_key().public_bytes_raw())

    def decrypt(self, blob: bytes) -> bytes:
        """Open an encapsulation produced by PKEPublicKey.encrypt."""
        if len(blob) < 32 + NONCE_BYTES + 16:
            raise TokenError("PKE ciphertext too short")
        eph_pub, ct = blob[:32], Ciphertext.from_bytes(blob[32:])
        try:
            shared = self._key.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        except ValueError as exc:
            raise TokenError("bad ephemeral public key") from exc
        key = hkdf(shared + eph_pub, _PKE_INFO)
        try:
            return aead_decrypt(key, ct)
        except IntegrityError as exc:
            raise TokenError("PKE decryption failed") from exc


@dataclass(frozen=True)
class PKEPublicKey:
    raw: bytes

    def encrypt(self, plaintext: bytes) -> bytes:
        eph = X25519PrivateKey.generate()
        eph_pub = eph.public_key().public_bytes_raw()
        shared = eph.exchange(X25519PublicKey.from_public_bytes(self.raw))
        key = hkdf(shared + eph_pub, _PKE_INFO)
        return eph_pub + aead_encrypt(key, plaintext).to_bytes()


def pke_keygen() -> tuple[PKEPublicKey, PKEPrivateKey]:
    priv = PKEPrivateKey()
    return priv.public_key(), priv


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------

class SigningKey:
    def __init__(self, raw: Ed25519PrivateKey | None = None):
        self._key = raw or Ed25519PrivateKey.generate()

    def verify_key(self) -> "VerifyKey":
        return VerifyKey(self._key.public_key().public_bytes_raw())

    def sign(self, message: bytes) -> bytes:
        return self._key.sign(message)


@dataclass(frozen=True)
class VerifyKey:
    raw: bytes

    def verify(self, signature: bytes, message: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(self.raw).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False


def sig_keygen() -> tuple[VerifyKey, SigningKey]:
    priv = SigningKey()
    return priv.verify_key(), priv


def wipe(buf: bytearray) -> None:
    """Best-effort zeroization of key material held in a bytearray."""
    for i in range(len(buf)):
        buf[i] = 0
