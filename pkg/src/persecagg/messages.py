"""Protocol messages and their canonical byte encoding.

Every message is ``tag:u8 | tau:u32 | sender:u32 | body`` (big-endian
integers).  Ring vectors inside a body are little-endian ``w/8``-byte
elements; indicator sets are varint-delta encoded.  The encoding is what the
cost ledger charges and what transcripts store, so it must be deterministic:
dict-valued fields are always written in sorted key order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .crypto import DEFAULT_PRIME, Ciphertext, SecretShare, field_bytes
from .ring import ElementMaskVector, decode_indicator, decode_vector, encode_indicator, encode_vector

SERVER_ID = 0xFFFFFFFF
FIELD_WIDTH = field_bytes(DEFAULT_PRIME)

TAG_REPORT = 1
TAG_FORWARD = 2
TAG_UNMASK = 3
TAG_RECOVERY_REQUEST = 4
TAG_RECOVERY_RESPONSE = 5
TAG_ABORT = 6


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, n):
        self.buf += struct.pack(">B", n)

    def u32(self, n):
        self.buf += struct.pack(">I", n)

    def blob(self, data: bytes):
        self.u32(len(data))
        self.buf += data

    def raw(self, data: bytes):
        self.buf += data

    def keyed_blob(self, keys: tuple, data: bytes):
        """u32 keys then a length-prefixed blob, packed in one go."""
        self.buf += struct.pack(f">{len(keys) + 1}I", *keys, len(data))
        self.buf += data


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def u8(self) -> int:
        (n,) = struct.unpack_from(">B", self.data, self.pos)
        self.pos += 1
        return n

    def u32(self) -> int:
        (n,) = struct.unpack_from(">I", self.data, self.pos)
        self.pos += 4
        return n

    def raw(self, n: int) -> bytes:
        out = self.data[self.pos : self.pos + n]
        if len(out) != n:
            raise ValueError("truncated message")
        self.pos += n
        return out

    def blob(self) -> bytes:
        return self.raw(self.u32())

    def keyed_blob(self, n_keys: int) -> tuple[tuple, bytes]:
        *keys, size = struct.unpack_from(f">{n_keys + 1}I", self.data, self.pos)
        self.pos += 4 * (n_keys + 1)
        return tuple(keys), self.raw(size)

    def indicator(self) -> np.ndarray:
        idx, self.pos = decode_indicator(self.data, self.pos)
        return idx


def _write_share(w: _Writer, share: SecretShare, width: int):
    w.u32(share.x)
    w.raw(share.y.to_bytes(width, "big"))


def _read_share(r: _Reader, width: int, secret_id=()) -> SecretShare:
    x = r.u32()
    return SecretShare(x, int.from_bytes(r.raw(width), "big"), secret_id)


@dataclass
class ClientReport:
    tau: int
    sender: int
    masked: np.ndarray
    indicator: np.ndarray
    seed_cts: dict[int, Ciphertext]
    """Encrypted shares of the individual seed, keyed by holder decryptor."""
    dseed_cts: dict[tuple[int, int], Ciphertext]
    """Encrypted shares of r_{i,v}, keyed by (holder u, decryptor v)."""
    width: int = 32

    tag = TAG_REPORT

    def body(self) -> bytes:
        w = _Writer()
        w.u8(self.width)
        w.u32(len(self.masked))
        w.raw(encode_vector(self.masked, self.width))
        w.raw(encode_indicator(self.indicator))
        w.u32(len(self.seed_cts))
        for u in sorted(self.seed_cts):
            w.keyed_blob((u,), self.seed_cts[u].to_bytes())
        w.u32(len(self.dseed_cts))
        for key in sorted(self.dseed_cts):
            w.keyed_blob(key, self.dseed_cts[key].to_bytes())
        return bytes(w.buf)

    @classmethod
    def parse(cls, tau, sender, r: _Reader) -> "ClientReport":
        width = r.u8()
        dim = r.u32()
        masked = decode_vector(r.raw(dim * width // 8), dim, width)
        ind = r.indicator()
        seed_cts = {}
        for _ in range(r.u32()):
            (u,), data = r.keyed_blob(1)
            seed_cts[u] = Ciphertext.from_bytes(data)
        dseed_cts = {}
        for _ in range(r.u32()):
            key, data = r.keyed_blob(2)
            dseed_cts[key] = Ciphertext.from_bytes(data)
        return cls(tau, sender, masked, ind, seed_cts, dseed_cts, width)


@dataclass
class Forward:
    """Server to one decryptor: every indicator set and that decryptor's seed-share ciphertexts."""

    tau: int
    indicators: dict[int, np.ndarray]
    seed_cts: dict[int, Ciphertext]
    sender: int = SERVER_ID

    tag = TAG_FORWARD

    def body(self) -> bytes:
        w = _Writer()
        w.u32(len(self.indicators))
        for i in sorted(self.indicators):
            w.u32(i)
            w.raw(encode_indicator(self.indicators[i]))
        w.u32(len(self.seed_cts))
        for i in sorted(self.seed_cts):
            w.keyed_blob((i,), self.seed_cts[i].to_bytes())
        return bytes(w.buf)

    @classmethod
    def parse(cls, tau, sender, r: _Reader) -> "Forward":
        indicators = {}
        for _ in range(r.u32()):
            i = r.u32()
            indicators[i] = r.indicator()
        cts = {}
        for _ in range(r.u32()):
            (i,), data = r.keyed_blob(1)
            cts[i] = Ciphertext.from_bytes(data)
        return cls(tau, indicators, cts, sender)


@dataclass
class UnmaskResponse:
    tau: int
    sender: int
    emk: ElementMaskVector
    shares: dict[int, SecretShare]
    failed: list[int] = field(default_factory=list)
    width: int = 32
    field_width: int = FIELD_WIDTH

    tag = TAG_UNMASK

    def body(self) -> bytes:
        w = _Writer()
        w.u8(self.width)
        n = len(self.emk.present)
        w.u32(n)
        w.raw(np.packbits(self.emk.present, bitorder="little").tobytes())
        w.raw(encode_vector(self.emk.values[self.emk.present], self.width))
        fw = self.field_width
        w.u8(fw)
        w.u32(len(self.shares))
        for i in sorted(self.shares):
            w.u32(i)
            _write_share(w, self.shares[i], fw)
        w.u32(len(self.failed))
        for i in sorted(self.failed):
            w.u32(i)
        return bytes(w.buf)

    @classmethod
    def parse(cls, tau, sender, r: _Reader) -> "UnmaskResponse":
        width = r.u8()
        n = r.u32()
        present = np.unpackbits(
            np.frombuffer(r.raw((n + 7) // 8), dtype=np.uint8), count=n, bitorder="little"
        ).astype(bool)
        k = int(present.sum())
        values = np.zeros(n, dtype=decode_vector(b"", 0, width).dtype)
        values[present] = decode_vector(r.raw(k * width // 8), k, width)
        fw = r.u8()
        shares = {}
        for _ in range(r.u32()):
            i = r.u32()
            shares[i] = _read_share(r, fw, (i, "r"))
        failed = [r.u32() for _ in range(r.u32())]
        return cls(tau, sender, ElementMaskVector(values, present), shares, failed, width, fw)


@dataclass
class RecoveryRequest:
    tau: int
    dropped: list[int]
    cts: dict[tuple[int, int], Ciphertext]
    """Ciphertexts of shares of r_{i,v}, keyed by (client i, dropped v)."""
    sender: int = SERVER_ID

    tag = TAG_RECOVERY_REQUEST

    def body(self) -> bytes:
        w = _Writer()
        w.u32(len(self.dropped))
        for v in self.dropped:
            w.u32(v)
        w.u32(len(self.cts))
        for key in sorted(self.cts):
            w.keyed_blob(key, self.cts[key].to_bytes())
        return bytes(w.buf)

    @classmethod
    def parse(cls, tau, sender, r: _Reader) -> "RecoveryRequest":
        dropped = [r.u32() for _ in range(r.u32())]
        cts = {}
        for _ in range(r.u32()):
            key, data = r.keyed_blob(2)
            cts[key] = Ciphertext.from_bytes(data)
        return cls(tau, dropped, cts, sender)


@dataclass
class RecoveryResponse:
    tau: int
    sender: int
    shares: dict[tuple[int, int], SecretShare]
    failed: list[tuple[int, int]] = field(default_factory=list)
    field_width: int = FIELD_WIDTH

    tag = TAG_RECOVERY_RESPONSE

    def body(self) -> bytes:
        w = _Writer()
        fw = self.field_width
        w.u8(fw)
        w.u32(len(self.shares))
        for i, v in sorted(self.shares):
            w.u32(i)
            w.u32(v)
            _write_share(w, self.shares[i, v], fw)
        w.u32(len(self.failed))
        for i, v in sorted(self.failed):
            w.u32(i)
            w.u32(v)
        return bytes(w.buf)

    @classmethod
    def parse(cls, tau, sender, r: _Reader) -> "RecoveryResponse":
        fw = r.u8()
        shares = {}
        for _ in range(r.u32()):
            i, v = r.u32(), r.u32()
            shares[i, v] = _read_share(r, fw, (i, v))
        failed = [(r.u32(), r.u32()) for _ in range(r.u32())]
        return cls(tau, sender, shares, failed, fw)


@dataclass
class Abort:
    tau: int
    sender: int
    cause: str

    tag = TAG_ABORT

    def body(self) -> bytes:
        return self.cause.encode("utf-8")

    @classmethod
    def parse(cls, tau, sender, r: _Reader) -> "Abort":
        return cls(tau, sender, r.data[r.pos :].decode("utf-8"))


_TYPES = {c.tag: c for c in (ClientReport, Forward, UnmaskResponse, RecoveryRequest, RecoveryResponse, Abort)}


def encode(msg) -> bytes:
    return struct.pack(">BII", msg.tag, msg.tau, msg.sender) + msg.body()


def decode(data: bytes):
    tag, tau, sender = struct.unpack_from(">BII", data, 0)
    try:
        cls = _TYPES[tag]
    except KeyError:
        raise ValueError(f"unknown message tag {tag}") from None
    return cls.parse(tau, sender, _Reader(data, 9))
