"""Cryptographic primitives: key agreement, PRF, indexed PRG, Shamir sharing, AEAD.

Two group backends are provided.  :class:`X25519Group` is the one used by the
protocol by default; :class:`ModPGroup` is a multiplicative group modulo a small
prime, meant for exhaustive tests where every exponent can be enumerated.

All randomness is drawn from an injected ``random.Random``-like object so that
a simulation seeded with one master seed is bit-reproducible.  Production
callers pass ``random.SystemRandom()``.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

DEFAULT_KAPPA = 128

# Smallest prime above 2**128, so every 128-bit seed embeds injectively.
DEFAULT_PRIME = (1 << 128) + 51

NONCE_BYTES = 12
TAG_BYTES = 16

_RING_DTYPES = {8: np.uint8, 16: np.uint16, 32: np.uint32, 64: np.uint64}


class CryptoError(Exception):
    """Base class for primitive-level failures."""


class InvalidGroupElement(CryptoError):
    pass


class InsufficientShares(CryptoError):
    pass


class DecryptionError(CryptoError):
    pass


# ---------------------------------------------------------------------------
# Groups and key agreement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    private: object = field(repr=False)
    public: object


@dataclass(frozen=True)
class SharedSecret:
    """Result of a key agreement.

    ``element`` is the raw group element (an int for :class:`ModPGroup`, 32
    bytes for X25519); ``key`` is its kappa-bit hash used as PRF/AEAD key.
    """

    element: object
    key: bytes


def _truncate(digest: bytes, bits: int) -> bytes:
    nbytes = (bits + 7) // 8
    out = bytearray(digest[:nbytes])
    spare = nbytes * 8 - bits
    if spare:
        out[0] &= 0xFF >> spare
    return bytes(out)


class ModPGroup:
    """Subgroup of Z_p^* generated by ``g``, of order ``q``.

    Only suitable for tests: parameters are tiny so that oracles can
    enumerate the whole group.
    """

    name = "modp"

    def __init__(self, p: int, g: int, q: int | None = None):
        self.p = p
        self.g = g
        self.q = q if q is not None else self._order(g, p)

    @staticmethod
    def _order(g: int, p: int) -> int:
        x, n = g % p, 1
        while x != 1:
            x = x * g % p
            n += 1
        return n

    def keygen(self, rng) -> KeyPair:
        a = rng.randrange(1, self.q)
        return KeyPair(a, pow(self.g, a, self.p))

    def validate(self, element: int) -> None:
        if not isinstance(element, int) or not 1 <= element < self.p:
            raise InvalidGroupElement(f"{element!r} is not in Z_{self.p}^*")
        if pow(element, self.q, self.p) != 1:
            raise InvalidGroupElement(f"{element} is not in the order-{self.q} subgroup")

    def exchange(self, private: int, public: int) -> int:
        if private % self.q == 0:
            raise InvalidGroupElement("degenerate private scalar")
        self.validate(public)
        return pow(public, private, self.p)

    def encode_public(self, public: int) -> bytes:
        return public.to_bytes((self.p.bit_length() + 7) // 8, "big")

    def encode_element(self, element: int) -> bytes:
        return self.encode_public(element)


class X25519Group:
    name = "x25519"

    def keygen(self, rng) -> KeyPair:
        raw = rng.getrandbits(256).to_bytes(32, "little")
        sk = X25519PrivateKey.from_private_bytes(raw)
        return KeyPair(sk, sk.public_key().public_bytes_raw())

    def validate(self, element: bytes) -> None:
        if not isinstance(element, (bytes, bytearray)) or len(element) != 32:
            raise InvalidGroupElement("X25519 public keys are 32 bytes")

    def exchange(self, private: X25519PrivateKey, public: bytes) -> bytes:
        self.validate(public)
        if private.private_bytes_raw() == bytes(32):
            raise InvalidGroupElement("degenerate private scalar")
        try:
            # cryptography rejects small-order points (all-zero shared secret)
            return private.exchange(X25519PublicKey.from_public_bytes(bytes(public)))
        except ValueError as exc:
            raise InvalidGroupElement(str(exc)) from exc

    def encode_public(self, public: bytes) -> bytes:
        return bytes(public)

    def encode_element(self, element: bytes) -> bytes:
        return bytes(element)


def key_agree(group, private, public_peer, kappa: int = DEFAULT_KAPPA) -> SharedSecret:
    """Diffie-Hellman agreement; symmetric in the two parties."""
    element = group.exchange(private, public_peer)
    digest = hashlib.sha256(b"persecagg/kdf" + group.encode_element(element)).digest()
    return SharedSecret(element, _truncate(digest, kappa))


# ---------------------------------------------------------------------------
# PRF and PRG
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Seed:
    value: int
    bits: int = DEFAULT_KAPPA

    def __post_init__(self):
        if not 0 <= self.value < (1 << self.bits):
            raise ValueError(f"seed does not fit in {self.bits} bits")

    def to_bytes(self) -> bytes:
        return self.value.to_bytes((self.bits + 7) // 8, "big")

    @classmethod
    def from_bytes(cls, data: bytes, bits: int = DEFAULT_KAPPA) -> "Seed":
        return cls(int.from_bytes(data, "big"), bits)

    @classmethod
    def random(cls, rng, bits: int = DEFAULT_KAPPA) -> "Seed":
        return cls(rng.getrandbits(bits), bits)


def prf(key: SharedSecret | bytes, tau: int, kappa: int = DEFAULT_KAPPA) -> Seed:
    raw = key.key if isinstance(key, SharedSecret) else key
    mac = hmac.new(raw, b"persecagg/prf" + struct.pack(">Q", tau), hashlib.sha256).digest()
    return Seed.from_bytes(_truncate(mac, kappa), kappa)


def ring_dtype(width: int):
    try:
        return _RING_DTYPES[width]
    except KeyError:
        raise ValueError(f"unsupported ring width {width}; use one of 8, 16, 32, 64") from None


@functools.lru_cache(maxsize=8192)
def _prg_encryptor(seed: Seed):
    # ECB keeps no state between block-aligned updates, so one context serves every call
    key = hashlib.sha256(b"persecagg/prg" + seed.to_bytes()).digest()[:16]
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor()


def prg_elements(seed: Seed, indices, width: int = 32) -> np.ndarray:
    """``PRG(seed)[k]`` for every ``k`` in ``indices``, with random access.

    Element k lives in AES block ``k // (128 / width)``.  One block is
    encrypted per requested index, so cost is linear in ``len(indices)``
    whatever the vector length.
    """
    dtype = ring_dtype(width)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(0, dtype=dtype)
    per_block = 128 // width
    counters = np.zeros((idx.size, 2), dtype=">u8")
    counters[:, 1] = idx // per_block
    stream = _prg_encryptor(seed).update(counters.tobytes())
    table = np.frombuffer(stream, dtype=np.dtype(dtype).newbyteorder("<")).reshape(idx.size, per_block)
    return table[np.arange(idx.size), idx % per_block].astype(dtype)


def prg_range(seed: Seed, start: int, stop: int, width: int = 32) -> np.ndarray:
    """``PRG(seed)[start:stop]`` without building an index array."""
    dtype = ring_dtype(width)
    if stop <= start:
        return np.zeros(0, dtype=dtype)
    per_block = 128 // width
    first, last = start // per_block, (stop - 1) // per_block
    counters = np.zeros((last - first + 1, 2), dtype=">u8")
    counters[:, 1] = np.arange(first, last + 1)
    stream = _prg_encryptor(seed).update(counters.tobytes())
    flat = np.frombuffer(stream, dtype=np.dtype(dtype).newbyteorder("<"))
    offset = start - first * per_block
    return flat[offset : offset + stop - start].astype(dtype)


def prg_element(seed: Seed, index: int, dim: int, width: int = 32) -> int:
    if not 0 <= index < dim:
        raise IndexError(f"PRG index {index} outside [0, {dim})")
    return int(prg_elements(seed, [index], width)[0])


# ---------------------------------------------------------------------------
# Shamir secret sharing over F_p
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecretShare:
    x: int
    y: int
    secret_id: tuple = ()

    def to_bytes(self, prime: int = DEFAULT_PRIME) -> bytes:
        return struct.pack(">I", self.x) + self.y.to_bytes(field_bytes(prime), "big")

    @classmethod
    def from_bytes(cls, data: bytes, prime: int = DEFAULT_PRIME, secret_id: tuple = ()) -> "SecretShare":
        (x,) = struct.unpack(">I", data[:4])
        return cls(x, int.from_bytes(data[4 : 4 + field_bytes(prime)], "big"), secret_id)


def field_bytes(prime: int) -> int:
    return (prime.bit_length() + 7) // 8


def _horner(coeffs: Sequence[int], x: int, prime: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % prime
    return acc


def ss_share(
    secret: int,
    threshold: int,
    n_shares: int,
    rng=None,
    prime: int = DEFAULT_PRIME,
    coefficients: Sequence[int] | None = None,
    secret_id: tuple = (),
) -> list[SecretShare]:
    """Split ``secret`` into ``n_shares`` points of a degree ``threshold-1`` polynomial.

    Share ``j`` (0-based) is evaluated at x = j + 1.  ``coefficients`` pins the
    non-constant coefficients (test mode); otherwise they are drawn from ``rng``.
    """
    if threshold < 2 or threshold > n_shares:
        raise ValueError(f"need 2 <= threshold <= n_shares, got {threshold}, {n_shares}")
    if not 0 <= secret < prime:
        raise ValueError("secret is not a field element")
    if n_shares >= prime:
        raise ValueError("field too small for the requested number of shares")
    if coefficients is None:
        coefficients = [rng.randrange(prime) for _ in range(threshold - 1)]
    elif len(coefficients) != threshold - 1:
        raise ValueError("need exactly threshold-1 coefficients")
    poly = [secret, *coefficients]
    return [SecretShare(x, _horner(poly, x, prime), secret_id) for x in range(1, n_shares + 1)]


def ss_recon(shares: Iterable[SecretShare], threshold: int, prime: int = DEFAULT_PRIME) -> int:
    """Lagrange interpolation at zero from the first ``threshold`` shares."""
    shares = list(shares)
    if len(shares) < threshold:
        raise InsufficientShares(f"insufficient shares: {len(shares)} < {threshold}")
    if len({s.secret_id for s in shares}) > 1:
        raise CryptoError("shares belong to different secrets")
    xs = [s.x for s in shares]
    if len(set(xs)) != len(xs):
        raise CryptoError("duplicate evaluation points")
    use = shares[:threshold]
    secret = 0
    for j, sj in enumerate(use):
        num, den = 1, 1
        for m, sm in enumerate(use):
            if m != j:
                num = num * sm.x % prime
                den = den * (sm.x - sj.x) % prime
        secret = (secret + sj.y * num * pow(den, -1, prime)) % prime
    return secret


# ---------------------------------------------------------------------------
# Authenticated encryption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ciphertext:
    nonce: bytes
    payload: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.payload + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if len(data) < NONCE_BYTES + TAG_BYTES:
            raise DecryptionError("ciphertext too short")
        return cls(data[:NONCE_BYTES], data[NONCE_BYTES:-TAG_BYTES], data[-TAG_BYTES:])

    def __len__(self) -> int:
        return NONCE_BYTES + len(self.payload) + TAG_BYTES


@functools.lru_cache(maxsize=8192)
def _aead_for(raw: bytes) -> AESGCM:
    return AESGCM(hashlib.sha256(b"persecagg/aead" + raw).digest()[:16])


def _aead(key: SharedSecret | bytes) -> AESGCM:
    return _aead_for(key.key if isinstance(key, SharedSecret) else bytes(key))


def sym_encrypt(key: SharedSecret | bytes, plaintext: bytes, nonce: bytes, aad: bytes = b"") -> Ciphertext:
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"nonce must be {NONCE_BYTES} bytes")
    sealed = _aead(key).encrypt(nonce, plaintext, aad)
    return Ciphertext(nonce, sealed[:-TAG_BYTES], sealed[-TAG_BYTES:])


def sym_decrypt(key: SharedSecret | bytes, ct: Ciphertext, aad: bytes = b"") -> bytes:
    try:
        return _aead(key).decrypt(ct.nonce, ct.payload + ct.tag, aad)
    except InvalidTag:
        raise DecryptionError("authentication failed") from None
