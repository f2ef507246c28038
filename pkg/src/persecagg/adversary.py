"""Malicious-server behaviours and the adversary-knowledge leakage oracle.

Client and decryptor references in :class:`AdversaryConfig` are *positions*
in the sorted client / decryptor lists, so a config stays meaningful whatever
user ids the public randomness assigns to each role.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .crypto import Seed, prg_elements
from .params import ProtocolParams
from .ring import MaskScope, to_signed

BEHAVIORS = ("honest", "forge_indicators", "disguise_dropouts", "withhold_emk")
DROP_PHASES = ("unmask", "droprcv")


class AdversaryConfigError(ValueError):
    pass


@dataclass
class AdversaryConfig:
    behavior: str = "honest"
    colluding_clients: tuple = ()
    colluding_decryptors: tuple = ()
    dropouts: dict = field(default_factory=dict)
    """decryptor position -> phase at whose start it goes silent"""
    # forge_indicators
    targets: tuple | None = None
    """global indices to inflate; None picks under-threshold indices automatically"""
    n_targets: int = 4
    forge_only_to: tuple | None = None
    colluders_contribute: bool = False
    # disguise_dropouts
    extra_victims: tuple = ()
    worst_case: bool = False
    """build per-decryptor dropout lists that maximise harvested seeds"""
    # withhold_emk
    withhold: tuple = ()

    def validate(self, params: ProtocolParams) -> "AdversaryConfig":
        if self.behavior not in BEHAVIORS:
            raise AdversaryConfigError(f"behavior must be one of {BEHAVIORS}")
        if len(set(self.colluding_clients)) > params.max_colluding_clients:
            raise AdversaryConfigError(
                f"{len(self.colluding_clients)} colluding clients exceed floor(eta_C |C|)={params.max_colluding_clients}"
            )
        if len(set(self.colluding_decryptors)) > params.max_colluding_decryptors:
            raise AdversaryConfigError(
                f"{len(self.colluding_decryptors)} colluding decryptors exceed floor(eta_D |D|)={params.max_colluding_decryptors}"
            )
        if len(self.dropouts) > params.max_dropouts:
            raise AdversaryConfigError(
                f"{len(self.dropouts)} dropouts exceed floor(delta_D |D|)={params.max_dropouts}"
            )
        if set(self.dropouts) & set(self.colluding_decryptors):
            raise AdversaryConfigError("dropped and colluding decryptors must be disjoint")
        if any(p not in DROP_PHASES for p in self.dropouts.values()):
            raise AdversaryConfigError(f"dropout phase must be one of {DROP_PHASES}")
        for name, limit in (("colluding_clients", params.n_clients), ("colluding_decryptors", params.n_decryptors)):
            if any(not 0 <= p < limit for p in getattr(self, name)):
                raise AdversaryConfigError(f"{name} positions out of range")
        if any(not 0 <= p < params.n_decryptors for p in (*self.dropouts, *self.extra_victims, *self.withhold)):
            raise AdversaryConfigError("decryptor positions out of range")
        return self

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items()}
        out["dropouts"] = {str(k): v for k, v in self.dropouts.items()}
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "AdversaryConfig":
        d = dict(d)
        d["dropouts"] = {int(k): v for k, v in d.get("dropouts", {}).items()}
        for key in ("colluding_clients", "colluding_decryptors", "extra_victims", "withhold"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("targets", "forge_only_to"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


# ---------------------------------------------------------------------------
# Indicator forging
# ---------------------------------------------------------------------------


def plan_inflation(
    indicators: Mapping[int, np.ndarray],
    targets,
    t_prime: int,
    colluders=(),
) -> dict[int, list[int]]:
    """For each target index, the clients to flag falsely so that |C[k]| reaches exactly t'.

    Colluders are used first (their seeds let the adversary correct its own
    forgery); honest non-contributors fill the rest.
    """
    colluders = sorted(colluders)
    plan = {}
    for k in targets:
        k = int(k)
        flagged = {i for i, b in indicators.items() if np.any(b == k)}
        need = t_prime - len(flagged)
        if need <= 0:
            plan[k] = []
            continue
        pool = [i for i in colluders if i not in flagged]
        pool += [i for i in sorted(indicators) if i not in flagged and i not in colluders]
        plan[k] = pool[:need]
    return plan


def forge_indicators(indicators: Mapping[int, np.ndarray], plan: Mapping[int, list[int]]) -> dict[int, np.ndarray]:
    """Insert each target index into the chosen clients' indicator sets."""
    forged = {i: np.asarray(b, dtype=np.int64) for i, b in indicators.items()}
    for k, ids in plan.items():
        for i in ids:
            forged[i] = np.union1d(forged[i], [k]).astype(np.int64)
    return forged


def pick_targets(honest_counts: np.ndarray, scope: MaskScope, t: int, n: int, rng) -> list[int]:
    """Scope indices with at least one but fewer than t honest contributors."""
    cand = scope.indices[(honest_counts >= 1) & (honest_counts < t)]
    if cand.size <= n:
        return [int(k) for k in cand]
    return sorted(int(k) for k in rng.choice(cand, size=n, replace=False))


# ---------------------------------------------------------------------------
# Dropout disguise
# ---------------------------------------------------------------------------


def disguise_dropouts(true_dropped, extra_victims) -> list[int]:
    return sorted(set(true_dropped) | set(extra_victims))


def worst_case_lists(honest_live, true_dropped, delta_max: int, need: int) -> dict[int, list[int]]:
    """Per-decryptor dropout lists maximising how many seeds the server can rebuild.

    Every honest live decryptor answers for at most ``delta_max`` listed
    decryptors (never itself).  A victim's seeds are rebuilt once ``need``
    honest decryptors have answered for it (``need = ell - colluders``).
    Real dropouts are listed first, then victims are filled round-robin so
    that each one collects exactly ``need`` responders.
    """
    live = sorted(honest_live)
    lists: dict[int, list[int]] = {u: [] for u in live}
    candidates = list(sorted(true_dropped)) + [v for v in live]
    for v in candidates:
        helpers = [u for u in sorted(live, key=lambda u: (len(lists[u]), u)) if u != v and len(lists[u]) < delta_max]
        if len(helpers) < need:
            continue
        for u in helpers[:need]:
            lists[u].append(v)
    return {u: sorted(vs) for u, vs in lists.items()}


# ---------------------------------------------------------------------------
# Leakage oracle
# ---------------------------------------------------------------------------


@dataclass
class AdversaryView:
    """Everything the malicious server holds at the end of a round, plus ground truth for scoring."""

    params: ProtocolParams
    scope: MaskScope
    clients: list[int]
    decryptors: list[int]
    colluding_clients: set[int]
    colluding_decryptors: set[int]
    aggregate: np.ndarray
    true_indicators: dict[int, np.ndarray]
    forwarded: dict[int, dict[int, np.ndarray]]
    """indicator sets each decryptor was shown"""
    emks: dict
    """decryptor -> ElementMaskVector actually received"""
    individual_shares: dict[int, set[int]]
    """client -> holders whose share of r_i the adversary has"""
    decryptor_seed_shares: dict[tuple[int, int], set[int]]
    """(client, decryptor) -> holders whose share of r_{i,v} the adversary has"""
    # ground truth, used only where the adversary's knowledge permits
    individual_seeds: dict[int, Seed]
    decryptor_seeds: dict[tuple[int, int], Seed]
    updates: dict[int, np.ndarray]

    def known_individual(self, i: int) -> bool:
        return i in self.colluding_clients or len(self.individual_shares.get(i, ())) >= self.params.ell

    def known_pair(self, i: int, u: int) -> bool:
        if i in self.colluding_clients or u in self.colluding_decryptors:
            return True
        return len(self.decryptor_seed_shares.get((i, u), ())) >= self.params.ell

    def recovered_decryptors(self) -> set[int]:
        """Honest decryptors all of whose client seeds the adversary can rebuild."""
        return {
            u for u in self.decryptors
            if u not in self.colluding_decryptors and all(self.known_pair(i, u) for i in self.clients)
        }


@dataclass
class IndexOutcome:
    index: int
    server_view: int | None
    true_sum: int
    honest_count: int
    removable: bool
    disclosed: bool
    leaked: bool


@dataclass
class AttackOutcome:
    rows: list[IndexOutcome]
    recovered_decryptors: set[int]
    honest_decryptors: set[int]

    def leaks(self) -> list[IndexOutcome]:
        return [r for r in self.rows if r.leaked]

    def by_index(self) -> dict[int, IndexOutcome]:
        return {r.index: r for r in self.rows}


def measure_leakage(view: AdversaryView, t: int, indices=None) -> AttackOutcome:
    """Best value the adversary can derive at each scope index, compared with the honest sum.

    The adversary subtracts every mask it can compute: individual masks whose
    seeds it can rebuild, each decryptor's element mask (corrected for forged
    or missing contributors whose seeds it knows), and the updates of colluding
    clients.  A decryptor's share of the mask is *removable* only when the
    correction needs no unknown seed; otherwise a PRG residual remains.
    """
    p = view.params
    width = p.width
    scope = view.scope
    idx = scope.indices if indices is None else np.asarray(sorted(int(k) for k in indices), dtype=np.int64)
    pos = scope.positions(idx)
    clients = view.clients
    honest = [i for i in clients if i not in view.colluding_clients]
    n = idx.size

    def member(sets: Mapping[int, np.ndarray]) -> np.ndarray:
        return np.array([np.isin(idx, sets.get(i, ())) for i in clients]).reshape(len(clients), n)

    truth = member(view.true_indicators)
    dtype = view.aggregate.dtype
    value = view.aggregate[idx].copy()
    for i in clients:
        if view.known_individual(i):
            value -= prg_elements(view.individual_seeds[i], idx, width)
    removable_all = np.ones(n, dtype=bool)
    for u in view.decryptors:
        known = np.array([view.known_pair(i, u) for i in clients], dtype=bool)
        emk = view.emks.get(u)
        if emk is not None:
            shown = member(view.forwarded.get(u, view.true_indicators))
            present = emk.present[pos]
            diff = truth.astype(np.int8) - shown.astype(np.int8)
            est_emk = np.where(present, emk.values[pos], 0).astype(dtype)
        else:
            present = np.zeros(n, dtype=bool)
            shown = np.zeros_like(truth)
            diff = truth.astype(np.int8)
            est_emk = np.zeros(n, dtype=dtype)
        # with an element mask: emk + sum_known (truth - shown) * PRG; without: sum_known truth * PRG
        coeff = np.where(present[None, :], diff, truth.astype(np.int8))
        est = est_emk
        for row, i in enumerate(clients):
            if not known[row] or not coeff[row].any():
                continue
            stream = prg_elements(view.decryptor_seeds[i, u], idx, width)
            est = est + np.where(coeff[row] > 0, stream, 0).astype(dtype) - np.where(coeff[row] < 0, stream, 0).astype(dtype)
        unknown = ~known[:, None]
        removable = np.where(present, ~((truth != shown) & unknown).any(axis=0), ~(truth & unknown).any(axis=0))
        removable_all &= removable
        value -= est
    for j in view.colluding_clients:
        value -= view.updates[j][idx]
    honest_sum = np.zeros(n, dtype=dtype)
    for i in honest:
        honest_sum += view.updates[i][idx]
    honest_count = truth[[clients.index(i) for i in honest]].sum(axis=0) if honest else np.zeros(n, int)
    any_contrib = truth.any(axis=0)

    rows = []
    for c in range(n):
        seen = int(value[c]) if any_contrib[c] else None
        disclosed = seen is not None and seen == int(honest_sum[c])
        rows.append(IndexOutcome(
            index=int(idx[c]),
            server_view=seen,
            true_sum=int(honest_sum[c]),
            honest_count=int(honest_count[c]),
            removable=bool(removable_all[c]),
            disclosed=disclosed,
            leaked=disclosed and int(honest_count[c]) < t,
        ))
    honest_dec = {u for u in view.decryptors if u not in view.colluding_decryptors}
    return AttackOutcome(rows, view.recovered_decryptors(), honest_dec)


def signed_view(outcome: AttackOutcome, width: int = 32) -> list:
    """Server views as signed integers, for human-readable reports."""
    return [None if r.server_view is None else int(to_signed(np.array([r.server_view]), width)[0]) for r in outcome.rows]
