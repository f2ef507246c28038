"""Protocol constants and the threshold derivations that keep them safe.

Decryptor threshold, Shamir threshold and the dropout-list bound are all
derived from the base sizes and the collusion / dropout rates:

* ``t_prime   = floor(eta_C * |C|) + t``
* ``ell       = floor(2|D|/3) + 1``
* ``delta_max = ceil(ell / 2)``

``derive_params(..., variant="ceil")`` gives the alternative pair
``ceil(2|D|/3) + 1`` / ``floor(ell/2)`` for comparison sweeps.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterator

ONE_THIRD = Fraction(1, 3)


class ParamError(ValueError):
    """A parameter set violated a named constraint."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _frac(x) -> Fraction:
    # limit_denominator turns 0.1 into 1/10 rather than its binary expansion
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**6)


def floor_mul(rate, n: int) -> int:
    return math.floor(_frac(rate) * n)


def shamir_threshold(n_decryptors: int, variant: str = "floor") -> int:
    if variant == "floor":
        return (2 * n_decryptors) // 3 + 1
    if variant == "ceil":
        return -(-2 * n_decryptors // 3) + 1
    raise ValueError(f"unknown variant {variant!r}")


def dropout_bound(ell: int, variant: str = "floor") -> int:
    return -(-ell // 2) if variant == "floor" else ell // 2


@dataclass(frozen=True)
class ProtocolParams:
    n_clients: int
    n_decryptors: int
    n_neighbors: int
    dim: int
    scope_size: int
    t: int
    t_prime: int
    ell: int
    delta_max: int
    eta_c: float = 0.0
    eta_d: float = 0.0
    delta_d: float = 0.0
    width: int = 32
    frac_bits: int = 16
    kappa: int = 128
    lam: float = 0.0

    @property
    def max_colluding_clients(self) -> int:
        return floor_mul(self.eta_c, self.n_clients)

    @property
    def max_colluding_decryptors(self) -> int:
        return floor_mul(self.eta_d, self.n_decryptors)

    @property
    def max_dropouts(self) -> int:
        return floor_mul(self.delta_d, self.n_decryptors)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ProtocolParams":
        if _frac(self.delta_d) + _frac(self.eta_d) >= ONE_THIRD:
            raise ParamError("delta_d", "threat model requires delta_D + eta_D < 1/3")
        for name in ("eta_c", "eta_d", "delta_d"):
            if not 0 <= getattr(self, name) < 1:
                raise ParamError(name, "rate must lie in [0, 1)")
        if self.n_decryptors < 3:
            raise ParamError("n_decryptors", "need at least 3 decryptors")
        if self.t < 2:
            raise ParamError("t", "threshold t must be at least 2")
        if self.n_clients < self.t:
            raise ParamError("n_clients", f"fewer clients ({self.n_clients}) than t={self.t}")
        if self.t_prime != self.max_colluding_clients + self.t:
            raise ParamError("t_prime", "must equal floor(eta_C |C|) + t")
        if not 2 <= self.ell <= self.n_decryptors:
            raise ParamError("ell", f"need 2 <= ell <= |D|, got {self.ell}")
        if self.delta_max < 0:
            raise ParamError("delta_max", "must be non-negative")
        if not 0 <= self.n_neighbors < self.n_clients:
            raise ParamError("n_neighbors", "need 0 <= A < |C|")
        if not 0 <= self.scope_size <= self.dim:
            raise ParamError("scope_size", "mask scope must fit inside the vector")
        if self.width not in (8, 16, 32, 64):
            raise ParamError("width", "ring width must be 8, 16, 32 or 64")
        if not 0 <= self.frac_bits < self.width - 1:
            raise ParamError("frac_bits", "fraction bits must leave a sign bit")
        if not 8 <= self.kappa <= 256:
            raise ParamError("kappa", "security parameter must be in [8, 256] bits")
        if self.lam < 0:
            raise ParamError("lam", "sparsification threshold must be non-negative")
        return self


def derive_params(
    n_clients: int,
    n_decryptors: int,
    t: int,
    eta_c: float = 0.0,
    eta_d: float = 0.0,
    delta_d: float = 0.0,
    *,
    n_neighbors: int | None = None,
    dim: int = 65536,
    scope_size: int | None = None,
    width: int = 32,
    frac_bits: int = 16,
    kappa: int = 128,
    lam: float = 0.0,
    variant: str = "floor",
) -> ProtocolParams:
    """Fill in ``t_prime``, ``ell`` and ``delta_max`` and validate everything."""
    ell = shamir_threshold(n_decryptors, variant)
    if n_neighbors is None:
        n_neighbors = min(n_clients - 1, max(1, math.ceil(math.log2(max(n_clients, 2)))))
    params = ProtocolParams(
        n_clients=n_clients,
        n_decryptors=n_decryptors,
        n_neighbors=n_neighbors,
        dim=dim,
        scope_size=dim // 10 if scope_size is None else scope_size,
        t=t,
        t_prime=floor_mul(eta_c, n_clients) + t,
        ell=ell,
        delta_max=dropout_bound(ell, variant),
        eta_c=eta_c,
        eta_d=eta_d,
        delta_d=delta_d,
        width=width,
        frac_bits=frac_bits,
        kappa=kappa,
        lam=lam,
    )
    return params.validate()


@dataclass(frozen=True)
class FeasibilityReport:
    n_decryptors: int
    delta_d: Fraction
    eta_d: Fraction
    ell: int
    delta_max: int
    recovery_feasible: bool
    security_holds: bool

    @property
    def ok(self) -> bool:
        return self.recovery_feasible and self.security_holds


def check_recovery_security(n_decryptors: int, ell: int, delta_max: int, delta_d, eta_d) -> FeasibilityReport:
    """Evaluate both share-counting inequalities in exact integer arithmetic.

    Recovery: ``delta_max * online >= dropped * (ell - colluding)``.
    Security: ``delta_max * online <  honest  * (ell - colluding)``.
    """
    delta_d, eta_d = _frac(delta_d), _frac(eta_d)
    d = n_decryptors
    dropped = math.floor(delta_d * d)
    colluding = math.floor(eta_d * d)
    online = math.floor((1 - delta_d - eta_d) * d)
    honest = math.floor((1 - eta_d) * d)
    units = delta_max * online
    need = ell - colluding
    return FeasibilityReport(
        d, delta_d, eta_d, ell, delta_max,
        recovery_feasible=units >= dropped * need,
        security_holds=units < honest * need,
    )


def rate_grid(step) -> Iterator[tuple[Fraction, Fraction]]:
    """All (delta_D, eta_D) grid points with delta_D + eta_D < 1/3."""
    step = _frac(step)
    n = 0
    while n * step < ONE_THIRD:
        m = 0
        while (n + m) * step < ONE_THIRD:
            yield n * step, m * step
            m += 1
        n += 1


def sweep_parameter_space(
    d_range=range(3, 201), step=Fraction(1, 50), variant: str = "floor"
) -> tuple[list[FeasibilityReport], list[FeasibilityReport]]:
    """Evaluate the derived (ell, delta_max) across a grid; returns (rows, counterexamples)."""
    grid = list(rate_grid(step))
    rows = []
    for d in d_range:
        ell = shamir_threshold(d, variant)
        dm = dropout_bound(ell, variant)
        for delta_d, eta_d in grid:
            rows.append(check_recovery_security(d, ell, dm, delta_d, eta_d))
    return rows, [r for r in rows if not r.ok]
