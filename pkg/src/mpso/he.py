"""Additively homomorphic encryption over Z_N (Paillier scheme).

Plaintexts are integers modulo N, ciphertexts live in Z_{N^2}.  Adding two
plaintexts corresponds to multiplying their ciphertexts, which is all the
set protocols in this package need: cells accumulate sums of zeros and
random non-zero values, and the decider only ever asks "is this zero".

All randomized functions accept an ``rng`` so that runs can be replayed
deterministically from a seed; the default source is the system CSPRNG.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

from sympy import isprime

DEFAULT_KEY_BITS = 512
MIN_KEY_BITS = 128

_SYSTEM_RNG = random.SystemRandom()

# Attempts at sampling a prime of the requested size before giving up.
_PRIME_ATTEMPTS = 100_000


class KeyGenerationError(Exception):
    """Raised when no suitable prime pair was found within bounds."""


class KeyMismatchError(Exception):
    """Raised when a ciphertext is used under a key it was not made for."""


@dataclass(frozen=True)
class PublicKey:
    """Public half of a key pair: modulus N with generator g = N + 1."""

    n: int
    key_id: str

    @property
    def n_sq(self) -> int:
        return self.n * self.n

    @property
    def g(self) -> int:
        return self.n + 1


@dataclass(frozen=True)
class PrivateKey:
    lam: int    # lcm(p-1, q-1)
    mu: int     # (L(g^lam mod N^2))^-1 mod N
    public: PublicKey


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str


def _fingerprint(n: int) -> str:
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return hashlib.blake2b(raw, digest_size=8).hexdigest()


def _random_prime(bits: int, rng: random.Random) -> int:
    # Top two bits forced so the product of two such primes has full width.
    for _ in range(_PRIME_ATTEMPTS):
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        if isprime(candidate):
            return candidate
    raise KeyGenerationError(f"no {bits}-bit prime found in {_PRIME_ATTEMPTS} attempts")


def keygen(bits: int = DEFAULT_KEY_BITS, rng: random.Random | None = None) -> KeyPair:
    """Generate a key pair whose modulus N is exactly ``bits`` long.

    ``bits`` must be even and at least 128; smaller moduli make the
    "random non-zero" plaintexts collide too easily to be meaningful.
    """
    rng = rng or _SYSTEM_RNG
    if bits < MIN_KEY_BITS or bits % 2:
        raise ValueError(f"key size must be even and >= {MIN_KEY_BITS}, got {bits}")
    half = bits // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != bits:
            continue
        if math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        break
    lam = math.lcm(p - 1, q - 1)
    # With g = N + 1, g^lam mod N^2 = 1 + lam*N, so L(g^lam) is just lam mod N.
    mu = pow(lam % n, -1, n)
    public = PublicKey(n=n, key_id=_fingerprint(n))
    return KeyPair(public=public, private=PrivateKey(lam=lam, mu=mu, public=public))


def encrypt(pk: PublicKey, m: int, rng: random.Random | None = None) -> Ciphertext:
    """Encrypt plaintext ``m`` in [0, N) under a fresh random blinding."""
    rng = rng or _SYSTEM_RNG
    if not 0 <= m < pk.n:
        raise ValueError(f"plaintext {m} outside [0, {pk.n})")
    n, n_sq = pk.n, pk.n_sq
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            break
    # (1+N)^m = 1 + m*N mod N^2, saving one full modexp.
    value = (1 + m * n) % n_sq * pow(r, n, n_sq) % n_sq
    return Ciphertext(value=value, key_id=pk.key_id)


def encrypt_random_nonzero(pk: PublicKey, rng: random.Random | None = None) -> Ciphertext:
    """Encrypt a fresh uniform value from [1, N), never zero."""
    rng = rng or _SYSTEM_RNG
    return encrypt(pk, rng.randrange(1, pk.n), rng)


def decrypt(sk: PrivateKey, c: Ciphertext) -> int:
    pk = sk.public
    if c.key_id != pk.key_id:
        raise KeyMismatchError("ciphertext was produced under a different key")
    if math.gcd(c.value, pk.n) != 1:
        raise ValueError("ciphertext value not invertible modulo N")
    return (pow(c.value, sk.lam, pk.n_sq) - 1) // pk.n * sk.mu % pk.n


def add(pk: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition: dec(add(a, b)) == dec(a) + dec(b) mod N."""
    if a.key_id != b.key_id or a.key_id != pk.key_id:
        raise KeyMismatchError("cannot combine ciphertexts under different keys")
    return Ciphertext(value=a.value * b.value % pk.n_sq, key_id=pk.key_id)


def scalar_pow(pk: PublicKey, c: Ciphertext, a: int) -> Ciphertext:
    """Homomorphic scaling: dec(scalar_pow(c, a)) == a * dec(c) mod N.

    ``a`` = 0 is rejected: it would collapse any ciphertext to a trivial
    encryption of zero, which no protocol step ever legitimately wants.
    """
    if c.key_id != pk.key_id:
        raise KeyMismatchError("ciphertext was produced under a different key")
    if not 1 <= a < pk.n:
        raise ValueError(f"scalar must be in [1, {pk.n}), got {a}")
    return Ciphertext(value=pow(c.value, a, pk.n_sq), key_id=pk.key_id)


# --- serialization ---------------------------------------------------------
#
# Canonical wire form: big-endian integers with a 4-byte big-endian length
# prefix.  Ciphertexts carry the 8-byte raw key fingerprint first so that
# key binding survives a round-trip.  Hex encodings of these byte strings
# are what the CLI prints in dumps.


def _pack_int(x: int) -> bytes:
    raw = x.to_bytes((x.bit_length() + 7) // 8 or 1, "big")
    return len(raw).to_bytes(4, "big") + raw


def _unpack_int(data: bytes, offset: int) -> tuple[int, int]:
    if offset + 4 > len(data):
        raise ValueError("truncated length prefix")
    length = int.from_bytes(data[offset:offset + 4], "big")
    end = offset + 4 + length
    if end > len(data):
        raise ValueError("truncated integer body")
    return int.from_bytes(data[offset + 4:end], "big"), end


def public_key_to_bytes(pk: PublicKey) -> bytes:
    return _pack_int(pk.n)


def public_key_from_bytes(data: bytes) -> PublicKey:
    n, end = _unpack_int(data, 0)
    if end != len(data):
        raise ValueError("trailing bytes after public key")
    return PublicKey(n=n, key_id=_fingerprint(n))


def private_key_to_bytes(sk: PrivateKey) -> bytes:
    return _pack_int(sk.public.n) + _pack_int(sk.lam) + _pack_int(sk.mu)


def private_key_from_bytes(data: bytes) -> PrivateKey:
    n, off = _unpack_int(data, 0)
    lam, off = _unpack_int(data, off)
    mu, off = _unpack_int(data, off)
    if off != len(data):
        raise ValueError("trailing bytes after private key")
    return PrivateKey(lam=lam, mu=mu, public=PublicKey(n=n, key_id=_fingerprint(n)))


def ciphertext_to_bytes(c: Ciphertext) -> bytes:
    return bytes.fromhex(c.key_id) + _pack_int(c.value)


def ciphertext_from_bytes(data: bytes) -> Ciphertext:
    if len(data) < 8:
        raise ValueError("ciphertext blob too short")
    key_id = data[:8].hex()
    value, end = _unpack_int(data, 8)
    if end != len(data):
        raise ValueError("trailing bytes after ciphertext")
    return Ciphertext(value=value, key_id=key_id)
