"""Symmetric bilinear pairing over a fixed supersingular curve.

The group is the order-r subgroup of E(F_q): y^2 = x^3 + x with
q = 3 (mod 4), which is supersingular with #E(F_q) = q + 1.  The
distortion map (x, y) -> (-x, iy) into E(F_q^2) makes the reduced Tate
pairing symmetric: e(aP, bP) = e(P, P)^(ab) for points of the prime
order r.  Pairing values live in the order-r subgroup of F_q^2, which
we write as a + bi with i^2 = -1.

Parameters are fixed (see scripts/gen_curve_params.py): r is a sparse
256-bit prime, q a 1536-bit prime with q + 1 = COFACTOR * r.  Rho on the
curve side and NFS in F_q^2 (3072 bits) both cost >= 2^128, the usual
128-bit equivalence.

All arithmetic uses gmpy2.mpz.  Field internals stay module-private;
the public surface is G1Point, GTElement, pairing() and GroupContext.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from functools import lru_cache

import gmpy2
from gmpy2 import mpz

from .errors import ContextError, EncodingError

# generated by scripts/gen_curve_params.py
FIELD_MODULUS = mpz(
    "9c6e0d81d59f6dbd5fb18ee936533e0f7567fc5e863d4785d5c98020b41038a3"
    "30554e304b914d6405278a7638825f10500e997c938f4a4e8146310dbbbd2132"
    "63b9eef61d42a30aa4a057c7996f87f3d28e633dfdff97d00ec8ded623a02ffa"
    "49747f90e1c71ea4eeec0e8c98f469677738cb66fa9924c5073448af19051bc3"
    "b467285836e9839a5433e72f0602ca97db6848bf11c09025f113bbaa5b59cb43"
    "af27b1003b52d9a57f5cc44026e07f0fa4d43782182097ff33a2c245b843a8bb",
    16,
)
GROUP_ORDER = mpz("800000000000000000000000000000000000000000000000000000000000005f", 16)
COFACTOR = (FIELD_MODULUS + 1) // GROUP_ORDER
GEN_X = mpz(
    "8c810dfe42855158aa5faae925aca19b696acba8cfcfced1b85582ce826a2e4c"
    "f659fa73c1c4ff03da19693f6f99c5a2a769b8e335073d928f7bb9f00292ff27"
    "3778674709c31ce2ad242872add432503ec360226e5fcb24bd8a85914d3eabbc"
    "4951e57bf2bf4c1152353e82c4f1f13a77be271f0c5ab69d49d395750316c98e"
    "98911cd6b77005e2d1c7ba97c0045af6a3dd0daadb8a4d1af48d5ee5a0de5f47"
    "fa0a9fa2991c07ceccc0955ec468dd2d6f3c8534198d094404ea54311748f1d8",
    16,
)
GEN_Y = mpz(
    "3d7a03d6cb637b2b95c41c9aee54acfd02083f7cd3df800fc72286eb915cb0a3"
    "47e712c305abff5f820a47f3bb6cead485aa5c509d7bcf8689018802407698cf"
    "7782ec1dfd10a6eac5cb88ff3fe3a9aad82620272a0e366372de0ffdf871a3f8"
    "5ab472977ac85340fbf21d8315307399bbfa57cdd6d4ec4b261472d96fe4557b"
    "ef541e171d40a446e8ad845d85a2135c847e6862c6de5688ae93d218cc4bb1c1"
    "1b40857321e772b72eb60793c7c40c6c36515a02f5555c36e1d616f5ebfd31cf",
    16,
)

_Q = FIELD_MODULUS
_FIELD_BYTES = 192  # 1536 bits

POINT_BYTES = 1 + _FIELD_BYTES
GT_BYTES = 2 * _FIELD_BYTES


# ---------------------------------------------------------------------------
# F_q^2 helpers (a + bi, i^2 = -1), plain tuples in hot paths
# ---------------------------------------------------------------------------

def _f2_mul(a, b, c, d):
    ac = a * c % _Q
    bd = b * d % _Q
    return (ac - bd) % _Q, ((a + b) * (c + d) - ac - bd) % _Q


def _f2_sqr(a, b):
    return (a + b) * (a - b) % _Q, 2 * a * b % _Q


def _f2_inv(a, b):
    n = gmpy2.invert((a * a + b * b) % _Q, _Q)
    return a * n % _Q, -b * n % _Q


def _f2_unitary_sqr(a, b):
    # valid only for norm-1 elements: (a+bi)^2 = 2a^2-1 + 2ab i
    return (2 * a * a - 1) % _Q, 2 * a * b % _Q


def _f2_unitary_pow(a, b, e):
    """NAF exponentiation; inversion of a norm-1 element is conjugation."""
    if e == 0:
        return mpz(1), mpz(0)
    if e < 0:
        return _f2_unitary_pow(a, (-b) % _Q, -e)
    naf = []
    n = mpz(e)
    while n:
        if n & 1:
            d = int(n & 3)
            if d == 3:
                d = -1
            naf.append(d)
            n -= d
        else:
            naf.append(0)
        n >>= 1
    ra, rb = mpz(1), mpz(0)
    nb = (-b) % _Q
    for d in reversed(naf):
        ra, rb = _f2_unitary_sqr(ra, rb)
        if d == 1:
            ra, rb = _f2_mul(ra, rb, a, b)
        elif d == -1:
            ra, rb = _f2_mul(ra, rb, a, nb)
    return ra, rb


# ---------------------------------------------------------------------------
# Curve points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class G1Point:
    """Affine point on y^2 = x^3 + x over F_q; x is None for the identity."""

    x: object = None
    y: object = None

    @property
    def is_identity(self) -> bool:
        return self.x is None

    def __repr__(self) -> str:
        if self.is_identity:
            return "G1Point(identity)"
        return f"G1Point(x=0x{int(self.x):x})"

    def encode(self) -> bytes:
        """Compressed encoding: flag byte (2 | y parity, 0 for identity) + x."""
        if self.is_identity:
            return bytes(POINT_BYTES)
        flag = 2 | int(self.y & 1)
        return bytes([flag]) + int(self.x).to_bytes(_FIELD_BYTES, "big")

    @classmethod
    def decode(cls, data: bytes) -> "G1Point":
        if len(data) != POINT_BYTES:
            raise EncodingError(f"point encoding must be {POINT_BYTES} bytes, got {len(data)}")
        flag = data[0]
        if flag == 0:
            if any(data[1:]):
                raise EncodingError("identity encoding must be all zero")
            return cls()
        if flag not in (2, 3):
            raise EncodingError(f"bad point flag {flag}")
        x = mpz(int.from_bytes(data[1:], "big"))
        if x >= _Q:
            raise EncodingError("x coordinate out of range")
        t = (x * x % _Q * x + x) % _Q
        y = gmpy2.powmod(t, (_Q + 1) // 4, _Q)
        if y * y % _Q != t:
            raise EncodingError("x is not on the curve")
        if int(y & 1) != (flag & 1):
            y = (-y) % _Q
        return cls(x, y)


IDENTITY = G1Point()


def _on_curve(x, y) -> bool:
    return (y * y - (x * x % _Q * x + x)) % _Q == 0


def _jdbl(X, Y, Z):
    if Z == 0:
        return X, Y, Z
    YY = Y * Y % _Q
    ZZ = Z * Z % _Q
    M = (3 * X * X + ZZ * ZZ) % _Q
    S = 4 * X * YY % _Q
    X3 = (M * M - 2 * S) % _Q
    Y3 = (M * (S - X3) - 8 * YY * YY) % _Q
    Z3 = 2 * Y * Z % _Q
    return X3, Y3, Z3


def _jadd_affine(X, Y, Z, x2, y2):
    if Z == 0:
        return x2, y2, mpz(1)
    ZZ = Z * Z % _Q
    U2 = x2 * ZZ % _Q
    S2 = y2 * ZZ % _Q * Z % _Q
    H = (U2 - X) % _Q
    R = (S2 - Y) % _Q
    if H == 0:
        if R == 0:
            return _jdbl(X, Y, Z)
        return mpz(1), mpz(1), mpz(0)
    HH = H * H % _Q
    HHH = H * HH % _Q
    V = X * HH % _Q
    X3 = (R * R - HHH - 2 * V) % _Q
    Y3 = (R * (V - X3) - Y * HHH) % _Q
    Z3 = Z * H % _Q
    return X3, Y3, Z3


def _to_affine(X, Y, Z) -> G1Point:
    if Z == 0:
        return IDENTITY
    zi = gmpy2.invert(Z, _Q)
    zi2 = zi * zi % _Q
    return G1Point(X * zi2 % _Q, Y * zi2 % _Q * zi % _Q)


def g1_add(p1: G1Point, p2: G1Point) -> G1Point:
    if p1.is_identity:
        return p2
    if p2.is_identity:
        return p1
    X, Y, Z = _jadd_affine(mpz(p1.x), mpz(p1.y), mpz(1), mpz(p2.x), mpz(p2.y))
    return _to_affine(X, Y, Z)


def g1_neg(p: G1Point) -> G1Point:
    if p.is_identity:
        return p
    return G1Point(p.x, (-p.y) % _Q)


def g1_mul(p: G1Point, k: int) -> G1Point:
    """Scalar multiplication; k is reduced mod the group order."""
    k = mpz(k) % GROUP_ORDER
    if k == 0 or p.is_identity:
        return IDENTITY
    X, Y, Z = mpz(1), mpz(1), mpz(0)
    x2, y2 = mpz(p.x), mpz(p.y)
    for bit in bin(k)[2:]:
        X, Y, Z = _jdbl(X, Y, Z)
        if bit == "1":
            X, Y, Z = _jadd_affine(X, Y, Z, x2, y2)
    return _to_affine(X, Y, Z)


def in_subgroup(p: G1Point) -> bool:
    """True for the identity and points of order exactly r."""
    if p.is_identity:
        return True
    if not _on_curve(mpz(p.x), mpz(p.y)):
        return False
    return g1_mul(p, GROUP_ORDER - 1) == g1_neg(p)


# fixed-base table for the generator: 4-bit windows over 256-bit scalars
_WINDOW = 4
_N_WINDOWS = (256 + _WINDOW - 1) // _WINDOW


@lru_cache(maxsize=1)
def _gen_table():
    table = []
    base = G1Point(GEN_X, GEN_Y)
    for _ in range(_N_WINDOWS):
        row = [IDENTITY]
        for _ in range(15):
            row.append(g1_add(row[-1], base))
        table.append(row)
        base = g1_add(row[1], row[-1])  # base * 16
    return table


def g1_mul_gen(k: int) -> G1Point:
    """Fixed-base scalar multiplication of the subgroup generator."""
    k = mpz(k) % GROUP_ORDER
    if k == 0:
        return IDENTITY
    table = _gen_table()
    X, Y, Z = mpz(1), mpz(1), mpz(0)
    for w in range(_N_WINDOWS):
        digit = int((k >> (w * _WINDOW)) & 15)
        if digit:
            pt = table[w][digit]
            X, Y, Z = _jadd_affine(X, Y, Z, mpz(pt.x), mpz(pt.y))
    return _to_affine(X, Y, Z)


# ---------------------------------------------------------------------------
# Pairing values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GTElement:
    """Element of the order-r pairing target group (norm-1 in F_q^2)."""

    a: object
    b: object

    def __mul__(self, other: "GTElement") -> "GTElement":
        return GTElement(*_f2_mul(self.a, self.b, other.a, other.b))

    def __pow__(self, e: int) -> "GTElement":
        return GTElement(*_f2_unitary_pow(self.a, self.b, mpz(e) % GROUP_ORDER))

    def inverse(self) -> "GTElement":
        return GTElement(self.a, (-self.b) % _Q)

    @property
    def is_identity(self) -> bool:
        return self.a == 1 and self.b == 0

    def __repr__(self) -> str:
        return f"GTElement(a=0x{int(self.a):x}, b=0x{int(self.b):x})"

    def encode(self) -> bytes:
        """Canonical encoding: both field components, big-endian, fixed width."""
        return int(self.a).to_bytes(_FIELD_BYTES, "big") + int(self.b).to_bytes(
            _FIELD_BYTES, "big"
        )

    @classmethod
    def decode(cls, data: bytes) -> "GTElement":
        if len(data) != GT_BYTES:
            raise EncodingError(f"GT encoding must be {GT_BYTES} bytes, got {len(data)}")
        a = mpz(int.from_bytes(data[:_FIELD_BYTES], "big"))
        b = mpz(int.from_bytes(data[_FIELD_BYTES:], "big"))
        if a >= _Q or b >= _Q:
            raise EncodingError("GT component out of range")
        if (a * a + b * b) % _Q != 1:
            raise EncodingError("GT element is not norm-1")
        return cls(a, b)


GT_IDENTITY = GTElement(mpz(1), mpz(0))


def pairing(p: G1Point, q: G1Point) -> GTElement:
    """Reduced Tate pairing with the distortion map applied to `q`.

    Symmetric and bilinear on the order-r subgroup: pairing(aP, bP) ==
    pairing(P, P) ** (a*b).  Raises for identity arguments (the scheme
    never pairs the identity and the Miller loop cannot evaluate there).
    """
    if p.is_identity or q.is_identity:
        raise ContextError("cannot pair the identity point")
    px, py = mpz(p.x), mpz(p.y)
    qx, qy = mpz(q.x), mpz(q.y)
    fa, fb = mpz(1), mpz(0)
    X, Y, Z = px, py, mpz(1)
    for bit in bin(GROUP_ORDER)[3:]:
        # tangent line at T, evaluated at (-qx, i*qy), Z^6-scaled
        YY = Y * Y % _Q
        ZZ = Z * Z % _Q
        M = (3 * X * X + ZZ * ZZ) % _Q
        S = 4 * X * YY % _Q
        X3 = (M * M - 2 * S) % _Q
        Z3 = 2 * Y * Z % _Q
        Y3 = (M * (S - X3) - 8 * YY * YY) % _Q
        A = (M * ((X + ZZ * qx) % _Q) - 2 * YY) % _Q
        B = Z3 * ZZ % _Q * qy % _Q
        fa, fb = _f2_sqr(fa, fb)
        fa, fb = _f2_mul(fa, fb, A, B)
        X, Y, Z = X3, Y3, Z3
        if bit == "1":
            ZZ = Z * Z % _Q
            U2 = px * ZZ % _Q
            S2 = py * ZZ % _Q * Z % _Q
            H = (U2 - X) % _Q
            R = (S2 - Y) % _Q
            if H == 0 and R != 0:
                # T == -P: vertical line, F_q-valued, killed by the final
                # exponentiation; happens only on the last loop step
                X, Y, Z = mpz(1), mpz(1), mpz(0)
                continue
            HH = H * H % _Q
            HHH = H * HH % _Q
            V = X * HH % _Q
            Z3 = Z * H % _Q
            X3 = (R * R - HHH - 2 * V) % _Q
            Y3 = (R * (V - X3) - Y * HHH) % _Q
            A = (R * ((qx + px) % _Q) - Z3 * py) % _Q
            B = Z3 * qy % _Q
            fa, fb = _f2_mul(fa, fb, A, B)
            X, Y, Z = X3, Y3, Z3
    # final exponentiation: (q^2-1)/r = (q-1) * COFACTOR
    ia, ib = _f2_inv(fa, fb)
    ua, ub = _f2_mul(fa, (-fb) % _Q, ia, ib)  # f^(q-1) = conj(f)/f, unitary
    ra, rb = _f2_unitary_pow(ua, ub, COFACTOR)
    return GTElement(ra, rb)


def random_scalar() -> int:
    """Uniform nonzero exponent modulo the group order, crypto-strength."""
    while True:
        k = secrets.randbelow(int(GROUP_ORDER))
        if k != 0:
            return k


# ---------------------------------------------------------------------------
# Group context
# ---------------------------------------------------------------------------

class GroupContext:
    """Handle bundling the group order, generator and pairing map.

    There is one supported instantiation (128-bit security, the fixed
    curve above); requesting any other level is a configuration error.
    """

    __slots__ = ("p", "g", "security_level", "_egg")

    def __init__(self, p, g: G1Point, security_level: int):
        self.p = p
        self.g = g
        self.security_level = security_level
        self._egg = None

    @classmethod
    def default(cls, security_level: int = 128) -> "GroupContext":
        if security_level != 128:
            raise ContextError(
                f"unsupported security level {security_level}; only 128 is available"
            )
        return _DEFAULT_CONTEXT

    def pairing(self, p: G1Point, q: G1Point) -> GTElement:
        return pairing(p, q)

    @property
    def egg(self) -> GTElement:
        """Cached e(g, g); non-degeneracy is asserted on first use."""
        if self._egg is None:
            e = pairing(self.g, self.g)
            if e.is_identity:
                raise ContextError("degenerate pairing: e(g, g) == 1")
            self._egg = e
        return self._egg


_DEFAULT_CONTEXT = GroupContext(GROUP_ORDER, G1Point(GEN_X, GEN_Y), 128)
