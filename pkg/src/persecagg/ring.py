"""Vector arithmetic over Z_{2^w} and the masking / unmasking kernels.

Ring vectors are plain numpy arrays of an unsigned dtype of the ring width;
numpy's wrap-around on unsigned overflow *is* reduction mod 2^w, so additions
and subtractions need no explicit modulo.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .crypto import Seed, prg_elements, prg_range, ring_dtype

DEFAULT_WIDTH = 32
DEFAULT_FRAC_BITS = 16


class QuantizationError(ValueError):
    pass


class IncompleteMasks(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskScope:
    """Sorted set of protected indices (the FC-layer slice)."""

    indices: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.dim):
            raise ValueError("scope must be strictly ascending indices inside [0, dim)")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def tail(cls, dim: int, size: int) -> "MaskScope":
        """Last ``size`` indices, where output-layer weights usually sit."""
        return cls(np.arange(dim - size, dim, dtype=np.int64), dim)

    @classmethod
    def full(cls, dim: int) -> "MaskScope":
        return cls(np.arange(dim, dtype=np.int64), dim)

    def __len__(self) -> int:
        return int(self.indices.size)

    def positions(self, indices) -> np.ndarray:
        """Map global indices (assumed inside the scope) to scope positions."""
        return np.searchsorted(self.indices, indices)

    def contains(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        if not self.indices.size:
            return np.zeros(indices.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self.indices, indices), self.indices.size - 1)
        return self.indices[pos] == indices


@dataclass
class ElementMaskVector:
    """A decryptor's per-index mask over the scope; ``present`` False means bottom."""

    values: np.ndarray
    present: np.ndarray

    @classmethod
    def empty(cls, size: int, width: int = DEFAULT_WIDTH) -> "ElementMaskVector":
        return cls(np.zeros(size, dtype=ring_dtype(width)), np.zeros(size, dtype=bool))


@dataclass
class RevealedAggregate:
    values: np.ndarray
    revealed: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, RevealedAggregate):
            return NotImplemented
        return (
            np.array_equal(self.revealed, other.revealed)
            and np.array_equal(self.values[self.revealed], other.values[other.revealed])
        )

    def masked_values(self) -> list:
        return [int(v) if r else None for v, r in zip(self.values, self.revealed)]


def zeros(dim: int, width: int = DEFAULT_WIDTH) -> np.ndarray:
    return np.zeros(dim, dtype=ring_dtype(width))


_SIGNED = {8: np.int8, 16: np.int16, 32: np.int32, 64: np.int64}


def to_signed(v: np.ndarray, width: int = DEFAULT_WIDTH) -> np.ndarray:
    return np.asarray(v, dtype=ring_dtype(width)).view(_SIGNED[width]).astype(np.int64)


# ---------------------------------------------------------------------------
# Quantization and sparsification
# ---------------------------------------------------------------------------


def quantize(
    x,
    frac_bits: int = DEFAULT_FRAC_BITS,
    width: int = DEFAULT_WIDTH,
    n_clients: int = 1,
) -> np.ndarray:
    """Round to fixed point with ``frac_bits`` fractional bits, two's complement in Z_{2^w}.

    Rejects inputs whose sum over ``n_clients`` could wrap.
    """
    x = np.asarray(x, dtype=np.float64)
    q = np.rint(x * (1 << frac_bits))
    limit = 1 << (width - 1)
    if q.size and np.max(np.abs(q)) * n_clients >= limit:
        raise QuantizationError("quantization overflow risk: |x| * 2^f * |C| >= 2^(w-1)")
    return q.astype(np.int64).astype(ring_dtype(width))


def dequantize(v, frac_bits: int = DEFAULT_FRAC_BITS, width: int = DEFAULT_WIDTH) -> np.ndarray:
    return to_signed(v, width).astype(np.float64) / (1 << frac_bits)


def sparsify(x, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) >= lam, x, 0.0)


def sparsity_threshold(x, sparsity: float) -> float:
    """Smallest magnitude threshold that zeroes at least ``sparsity`` of ``x``."""
    mags = np.sort(np.abs(np.asarray(x, dtype=np.float64)))
    if not mags.size:
        return 0.0
    n_zero = int(np.ceil(sparsity * mags.size))
    if n_zero >= mags.size:
        return float(np.nextafter(mags[-1], np.inf))
    if n_zero == 0:
        return 0.0
    return float(np.nextafter(mags[n_zero - 1], np.inf))


# ---------------------------------------------------------------------------
# Indicator sets
# ---------------------------------------------------------------------------


def indicator(x: np.ndarray, scope: MaskScope) -> np.ndarray:
    """Sorted scope indices where ``x`` is non-zero."""
    if len(scope) == 0:
        return np.zeros(0, dtype=np.int64)
    return scope.indices[np.asarray(x)[scope.indices] != 0]


def dense_indicator(indices, dim: int) -> np.ndarray:
    b = np.zeros(dim, dtype=bool)
    b[np.asarray(indices, dtype=np.int64)] = True
    return b


def contributor_counts(indicators: Iterable[np.ndarray], scope: MaskScope) -> np.ndarray:
    """|C[k]| for every scope position."""
    sets = [np.asarray(b, dtype=np.int64).ravel() for b in indicators]
    if not sets:
        return np.zeros(len(scope), dtype=np.int64)
    flat = np.concatenate(sets)
    owner = np.repeat(np.arange(len(sets), dtype=np.int64), [b.size for b in sets])
    # forwarded sets are untrusted: ignore repeats and indices outside the scope
    keep = scope.contains(flat)
    keys = np.unique(owner[keep] * scope.dim + flat[keep])
    return np.bincount(scope.positions(keys % scope.dim), minlength=len(scope)).astype(np.int64)


def _write_varint(n: int, out: bytearray) -> None:
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    n = shift = 0
    while True:
        byte = data[pos]
        pos += 1
        n |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return n, pos
        shift += 7


def encode_indicator(indices) -> bytes:
    out = bytearray()
    idx = [int(k) for k in indices]
    _write_varint(len(idx), out)
    prev = 0
    for k in idx:
        _write_varint(k - prev, out)
        prev = k
    return bytes(out)


def decode_indicator(data: bytes, pos: int = 0) -> tuple[np.ndarray, int]:
    n, pos = _read_varint(data, pos)
    idx = np.empty(n, dtype=np.int64)
    prev = 0
    for j in range(n):
        d, pos = _read_varint(data, pos)
        prev += d
        idx[j] = prev
    return idx, pos


def encode_vector(v: np.ndarray, width: int = DEFAULT_WIDTH) -> bytes:
    return np.asarray(v, dtype=np.dtype(ring_dtype(width)).newbyteorder("<")).tobytes()


def decode_vector(data: bytes, dim: int, width: int = DEFAULT_WIDTH) -> np.ndarray:
    dt = np.dtype(ring_dtype(width)).newbyteorder("<")
    return np.frombuffer(data, dtype=dt, count=dim).astype(ring_dtype(width))


# ---------------------------------------------------------------------------
# Masking kernels
# ---------------------------------------------------------------------------


def flamingo_mask(
    x: np.ndarray,
    individual_seed: Seed,
    pairwise: Sequence[tuple[Seed, int]] = (),
    width: int = DEFAULT_WIDTH,
) -> np.ndarray:
    """``x + PRG(r_i) + sum(sign * PRG(r_ij))`` over every index."""
    dim = len(x)
    out = np.asarray(x, dtype=ring_dtype(width)) + prg_range(individual_seed, 0, dim, width)
    for seed, sign in pairwise:
        stream = prg_range(seed, 0, dim, width)
        if sign > 0:
            out += stream
        else:
            out -= stream
    return out


def per_element_mask(
    x: np.ndarray,
    flagged: np.ndarray,
    decryptor_seeds: Iterable[Seed],
    width: int = DEFAULT_WIDTH,
    strict: bool = True,
) -> np.ndarray:
    """Add ``sum_u PRG(r_iu)`` at the flagged indices only."""
    out = np.array(x, dtype=ring_dtype(width))
    flagged = np.asarray(flagged, dtype=np.int64)
    if strict and flagged.size and np.any(out[flagged] == 0):
        raise ValueError("indicator set flags an index whose value is zero")
    for seed in decryptor_seeds:
        out[flagged] += prg_elements(seed, flagged, width)
    return out


def element_masks(
    indicators: Mapping[int, np.ndarray],
    seeds: Mapping[int, Seed],
    threshold: int,
    scope: MaskScope,
    width: int = DEFAULT_WIDTH,
) -> ElementMaskVector:
    """One decryptor's element-wise mask.

    ``seeds[i]`` is the seed this decryptor shares with client ``i``.  The mask
    at a scope index is the sum of those clients' PRG values if at least
    ``threshold`` clients flagged it, bottom otherwise.
    """
    counts = contributor_counts(indicators.values(), scope)
    present = counts >= threshold
    emk = ElementMaskVector(np.zeros(len(scope), dtype=ring_dtype(width)), present)
    qualifying = scope.indices[present]
    for i, flagged in indicators.items():
        hit = np.intersect1d(flagged, qualifying)
        if hit.size:
            emk.values[scope.positions(hit)] += prg_elements(seeds[i], hit, width)
    return emk


def dropout_masks(
    indicators: Mapping[int, np.ndarray],
    seeds: Mapping[tuple[int, int], Seed],
    dim: int,
    width: int = DEFAULT_WIDTH,
) -> np.ndarray:
    """``sum_i sum_v b_i * PRG(r_iv)`` for recovered seeds keyed by (client, decryptor)."""
    out = zeros(dim, width)
    for (i, _v), seed in seeds.items():
        flagged = indicators[i]
        out[flagged] += prg_elements(seed, flagged, width)
    return out


def unmask(
    aggregate: np.ndarray,
    individual_seeds: Iterable[Seed],
    emks: Sequence[ElementMaskVector],
    scope: MaskScope,
    n_decryptors: int,
    recovered: np.ndarray | None = None,
    n_recovered: int = 0,
    width: int = DEFAULT_WIDTH,
) -> RevealedAggregate:
    """Strip individual, element-wise and recovered dropout masks from the aggregate.

    Scope indices are revealed only where every supplied element mask is
    present; indices outside the scope are always revealed.
    """
    if len(emks) + n_recovered != n_decryptors or (n_recovered and recovered is None):
        raise IncompleteMasks(
            f"incomplete masks: {len(emks)} element masks + {n_recovered} recovered for {n_decryptors} decryptors"
        )
    dim = len(aggregate)
    y = np.array(aggregate, dtype=ring_dtype(width))
    for seed in individual_seeds:
        y -= prg_range(seed, 0, dim, width)
    revealed = np.ones(dim, dtype=bool)
    in_scope = np.ones(len(scope), dtype=bool)
    for emk in emks:
        if emk.values.shape != (len(scope),):
            raise ValueError("element mask length does not match the scope")
        y[scope.indices] -= np.where(emk.present, emk.values, 0).astype(y.dtype)
        in_scope &= emk.present
    if recovered is not None:
        y -= recovered
    revealed[scope.indices] = in_scope
    y[~revealed] = 0
    return RevealedAggregate(y, revealed)
