"""Per-(role, phase) counters of unit operations and bytes."""

from __future__ import annotations

from collections import defaultdict

COUNTERS = (
    "prf_evals",
    "prg_elements",
    "sym_ops",
    "share_ops",
    "ring_ops",
    "bytes_sent",
    "bytes_received",
)
ROLES = ("client", "decryptor", "server")
PHASES = ("report", "unmask", "droprcv")


class CostLedger:
    """Totals per (role, phase, counter), plus the set of parties seen per role.

    A secret-sharing operation (share or reconstruct one secret) is charged
    ``|D|^2`` share_ops; every other counter is charged one per unit.
    """

    def __init__(self):
        self._counts: dict[tuple[str, str, str], int] = defaultdict(int)
        self._parties: dict[str, set] = defaultdict(set)

    def charge(self, role: str, phase: str, party=None, **counts: int) -> None:
        if role not in ROLES or phase not in PHASES:
            raise ValueError(f"unknown ledger cell ({role}, {phase})")
        for name, n in counts.items():
            if name not in COUNTERS:
                raise ValueError(f"unknown counter {name}")
            if n < 0:
                raise ValueError("counters are monotone")
            self._counts[role, phase, name] += int(n)
        if party is not None:
            self._parties[role].add(party)

    def get(self, role: str, phase: str, counter: str) -> int:
        return self._counts.get((role, phase, counter), 0)

    def per_party(self, role: str, phase: str, counter: str) -> float:
        n = len(self._parties[role]) or 1
        return self.get(role, phase, counter) / n

    def n_parties(self, role: str) -> int:
        return len(self._parties[role])

    def phase_total(self, phase: str) -> int:
        return sum(v for (_, p, _), v in self._counts.items() if p == phase)

    def total(self, counter: str) -> int:
        return sum(v for (_, _, c), v in self._counts.items() if c == counter)

    def rows(self):
        """(role, phase, counter, value) for every cell, zeros included."""
        for role in ROLES:
            for phase in PHASES:
                for counter in COUNTERS:
                    yield role, phase, counter, self.get(role, phase, counter)

    def flat(self) -> dict[str, int]:
        return {f"{r}.{p}.{c}": v for r, p, c, v in self.rows()}

    def reset(self) -> None:
        self._counts.clear()
        self._parties.clear()
