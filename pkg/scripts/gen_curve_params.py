#!/usr/bin/env python3
"""Regenerate the fixed pairing-group parameters baked into qshield.pairing.

The curve is the classic supersingular y^2 = x^3 + x over F_q with
q = 3 (mod 4), which carries a symmetric pairing via the distortion map
(x, y) -> (-x, iy).  Security rests on two knobs:

  * the prime subgroup order r must resist Pollard rho  -> 256 bits
  * the pairing target lives in F_q^2, which must resist finite-field
    DLP (NFS)                                           -> q >= 1536 bits,
    i.e. q^2 >= 3072 bits, the standard 128-bit equivalence.

r is chosen sparse (2^255 + small) so the Miller loop has almost no
addition steps; the cofactor multiplier u is drawn from a seeded PRG so
q = 4*u*r - 1 has no special form.  Everything below is deterministic:
rerunning this script reproduces the constants in qshield/pairing.py.
"""

import hashlib

import gmpy2
from gmpy2 import mpz

SEED = b"qshield-curve-v1"
R_BITS = 256
U_BITS = 1279  # q = 4*u*r - 1 ends up at 1536 bits


def prg_int(seed: bytes, label: bytes, bits: int) -> mpz:
    """Deterministic integer of exactly `bits` bits from SHA-256 in counter mode."""
    out = b""
    counter = 0
    while len(out) * 8 < bits:
        out += hashlib.sha256(seed + label + counter.to_bytes(4, "big")).digest()
        counter += 1
    val = mpz(int.from_bytes(out, "big")) >> (len(out) * 8 - bits)
    return val | (mpz(1) << (bits - 1))


def find_r() -> mpz:
    delta = 1
    while True:
        cand = mpz(2) ** (R_BITS - 1) + delta
        if gmpy2.is_prime(cand, 50):
            return cand
        delta += 2


def find_q(r: mpz) -> mpz:
    small_primorial = mpz(1)
    for sp in range(3, 20000):
        if gmpy2.is_prime(sp):
            small_primorial *= sp
    attempt = 0
    while True:
        u = prg_int(SEED, b"cofactor-%d" % attempt, U_BITS)
        q = 4 * u * r - 1
        if (
            q.bit_length() == 1536
            and gmpy2.gcd(q, small_primorial) == 1
            and gmpy2.is_prime(q, 50)
        ):
            return q
        attempt += 1


def find_generator(q: mpz, r: mpz, h: mpz):
    """First curve point (by seeded x search) whose cofactor multiple has order r."""
    exp = (q + 1) // 4
    attempt = 0
    while True:
        x = prg_int(SEED, b"basepoint-%d" % attempt, 1535) % q
        t = (x * x % q * x + x) % q
        y = gmpy2.powmod(t, exp, q)
        if y * y % q == t:
            gx, gy = _scalar_affine(h, x, y, q)
            if gx is not None:
                assert _scalar_affine(r, gx, gy, q) == (None, None)
                return gx, gy
        attempt += 1


def _scalar_affine(k: mpz, x: mpz, y: mpz, q: mpz):
    X, Y, Z = mpz(1), mpz(1), mpz(0)
    for bit in bin(k)[2:]:
        X, Y, Z = _jdbl(X, Y, Z, q)
        if bit == "1":
            X, Y, Z = _jadd(X, Y, Z, x, y, q)
    if Z == 0:
        return None, None
    zi = gmpy2.invert(Z, q)
    zi2 = zi * zi % q
    return X * zi2 % q, Y * zi2 % q * zi % q


def _jdbl(X, Y, Z, q):
    if Z == 0:
        return X, Y, Z
    YY = Y * Y % q
    S = 4 * X * YY % q
    ZZ = Z * Z % q
    M = (3 * X * X + ZZ * ZZ) % q
    X3 = (M * M - 2 * S) % q
    Y3 = (M * (S - X3) - 8 * YY * YY) % q
    Z3 = 2 * Y * Z % q
    return X3, Y3, Z3


def _jadd(X, Y, Z, x2, y2, q):
    if Z == 0:
        return mpz(x2), mpz(y2), mpz(1)
    ZZ = Z * Z % q
    U2 = x2 * ZZ % q
    S2 = y2 * ZZ % q * Z % q
    Hd = (U2 - X) % q
    Rd = (S2 - Y) % q
    if Hd == 0:
        if Rd == 0:
            return _jdbl(X, Y, Z, q)
        return mpz(1), mpz(1), mpz(0)
    HH = Hd * Hd % q
    HHH = Hd * HH % q
    V = X * HH % q
    X3 = (Rd * Rd - HHH - 2 * V) % q
    Y3 = (Rd * (V - X3) - Y * HHH) % q
    Z3 = Z * Hd % q
    return X3, Y3, Z3


def main() -> None:
    r = find_r()
    q = find_q(r)
    h = (q + 1) // r
    gx, gy = find_generator(q, r, h)
    print("# generated by scripts/gen_curve_params.py")
    print(f"FIELD_MODULUS = {hex(q)}")
    print(f"GROUP_ORDER = {hex(r)}")
    print(f"COFACTOR = {hex(h)}")
    print(f"GEN_X = {hex(gx)}")
    print(f"GEN_Y = {hex(gy)}")


if __name__ == "__main__":
    main()
