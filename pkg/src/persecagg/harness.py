"""Deterministic round orchestration over an in-memory star network.

One call to :func:`run_round` plays Setup, Report, Unmask and (when needed)
Dropout Recovery with phase barriers in between.  Every party draws from its
own RNG derived from the master seed, and delivery is sorted canonically at
each barrier, so the transcript does not depend on the order in which parties
of a phase happen to run.
"""

from __future__ import annotations

import hashlib
import json
import random
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ring, workload
from .adversary import (
    AdversaryConfig,
    AdversaryView,
    AttackOutcome,
    disguise_dropouts,
    forge_indicators,
    measure_leakage,
    pick_targets,
    plan_inflation,
    worst_case_lists,
)
from .crypto import DEFAULT_PRIME, X25519Group
from .ledger import PHASES, CostLedger
from .messages import SERVER_ID, Abort, RecoveryRequest, RecoveryResponse, UnmaskResponse, decode, encode
from .params import ProtocolParams
from .ring import MaskScope, RevealedAggregate
from .roles import Client, Decryptor, ProtocolAbort, Server, select_neighbors, setup

TRANSCRIPT_MAGIC = b"PSAT\x01"


def derive_seed(master_seed: int, *labels) -> int:
    h = hashlib.sha256(b"persecagg/rng" + struct.pack(">Q", master_seed))
    for label in labels:
        h.update(b"|" + str(label).encode())
    return int.from_bytes(h.digest(), "big")


def derive_rng(master_seed: int, *labels) -> random.Random:
    return random.Random(derive_seed(master_seed, *labels))


def public_randomness(master_seed: int) -> bytes:
    return hashlib.sha256(b"persecagg/beacon" + struct.pack(">Q", master_seed)).digest()


# ---------------------------------------------------------------------------
# Network and transcript
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Delivery:
    phase: str
    sender: int
    receiver: int
    data: bytes


@dataclass
class Transcript:
    header: dict = field(default_factory=dict)
    entries: list[Delivery] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header, sort_keys=True).encode()
        out = bytearray(TRANSCRIPT_MAGIC)
        out += struct.pack(">I", len(head)) + head
        for e in self.entries:
            out += struct.pack(">BIII", PHASES.index(e.phase), e.sender, e.receiver, len(e.data))
            out += e.data
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transcript":
        if not data.startswith(TRANSCRIPT_MAGIC):
            raise ValueError("not a transcript file")
        pos = len(TRANSCRIPT_MAGIC)
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        header = json.loads(data[pos : pos + n])
        pos += n
        entries = []
        while pos < len(data):
            ph, src, dst, size = struct.unpack_from(">BIII", data, pos)
            pos += 13
            entries.append(Delivery(PHASES[ph], src, dst, bytes(data[pos : pos + size])))
            pos += size
        return cls(header, entries)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


class SimulatedNetwork:
    """Star network with per-link FIFO queues, phase barriers and byte accounting.

    ``intercept(phase, sender, receiver, msg)`` may rewrite a message or
    return None to swallow it; it runs before encoding, so the ledger and the
    transcript see what was actually put on the wire.
    """

    def __init__(self, ledger: CostLedger, role_of: Callable[[int], str], intercept=None):
        self.ledger = ledger
        self.role_of = role_of
        self.intercept = intercept
        self.transcript = Transcript()
        self._queues: dict[tuple[int, int], list[tuple[str, bytes]]] = {}
        self._silent: set[int] = set()

    def silence(self, party: int) -> None:
        """Party drops out: from now on it neither sends nor receives."""
        self._silent.add(party)

    def is_silent(self, party: int) -> bool:
        return party in self._silent

    def send(self, phase: str, receiver: int, msg) -> None:
        sender = msg.sender
        if sender in self._silent:
            return
        if self.intercept is not None:
            msg = self.intercept(phase, sender, receiver, msg)
            if msg is None:
                return
        data = encode(msg)
        self.ledger.charge(self.role_of(sender), phase, bytes_sent=len(data))
        self._queues.setdefault((sender, receiver), []).append((phase, data))

    def barrier(self, phase: str) -> dict[int, list]:
        """Deliver everything queued, ordered by (sender, receiver) then FIFO."""
        inbox: dict[int, list] = {}
        for sender, receiver in sorted(self._queues):
            for ph, data in self._queues[sender, receiver]:
                if receiver in self._silent:
                    continue
                self.ledger.charge(self.role_of(receiver), ph, bytes_received=len(data))
                self.transcript.entries.append(Delivery(ph, sender, receiver, data))
                inbox.setdefault(receiver, []).append(decode(data))
        self._queues.clear()
        return inbox


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    sums: np.ndarray
    counts: np.ndarray
    """|C[k]| per scope position"""
    expected: RevealedAggregate


def oracle(updates, scope: MaskScope, t_prime: int, width: int = 32) -> OracleResult:
    """Plaintext ring sum and the reveal pattern the protocol must produce."""
    sums = ring.zeros(scope.dim, width)
    for x in updates:
        sums += np.asarray(x, dtype=sums.dtype)
    counts = ring.contributor_counts([ring.indicator(x, scope) for x in updates], scope)
    revealed = np.ones(scope.dim, dtype=bool)
    revealed[scope.indices] = counts >= t_prime
    return OracleResult(sums, counts, RevealedAggregate(np.where(revealed, sums, 0).astype(sums.dtype), revealed))


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------


@dataclass
class Deployment:
    """Everything fixed at Setup: keys, PKI, public randomness and the decryptor set.

    Rounds of one deployment share ``shared``, the parties' cache of
    Diffie-Hellman results; per-round seeds still come from PRF(key, tau).
    """

    setup_seed: int
    group: object
    randomness: bytes
    pki: object
    clients: list[int]
    decryptors: list[int]
    keys: dict
    shared: dict = field(default_factory=dict, repr=False)


_DEPLOYMENTS: dict[tuple, Deployment] = {}


def deploy(n_clients: int, n_decryptors: int, setup_seed: int = 0, group=None) -> Deployment:
    """Run Setup for ``n_clients + n_decryptors`` users, memoised per (sizes, seed, group)."""
    group = group or X25519Group()
    cache_key = (n_clients, n_decryptors, setup_seed, repr(group.__dict__), type(group).__name__)
    if cache_key in _DEPLOYMENTS:
        return _DEPLOYMENTS[cache_key]
    randomness = public_randomness(setup_seed)
    users = range(n_clients + n_decryptors)
    pki, decryptors, keys = setup(users, randomness, n_decryptors, group,
                                  lambda uid: derive_rng(setup_seed, "keys", uid))
    dset = set(decryptors)
    dep = Deployment(setup_seed, group, randomness, pki, [u for u in users if u not in dset], decryptors, keys)
    if len(_DEPLOYMENTS) >= 64:
        _DEPLOYMENTS.pop(next(iter(_DEPLOYMENTS)))
    _DEPLOYMENTS[cache_key] = dep
    return dep


# ---------------------------------------------------------------------------
# Rounds
# ---------------------------------------------------------------------------


@dataclass
class RoundResult:
    output: RevealedAggregate | None
    abort: ProtocolAbort | None
    ledger: CostLedger
    outcome: AttackOutcome | None
    transcript: Transcript
    oracle: OracleResult
    info: dict

    @property
    def completed(self) -> bool:
        return self.output is not None

    def matches_oracle(self) -> bool:
        return self.output is not None and self.output == self.oracle.expected


def default_scope(params: ProtocolParams) -> MaskScope:
    return MaskScope.tail(params.dim, params.scope_size)


def run_round(
    params: ProtocolParams,
    updates,
    adversary: AdversaryConfig | None = None,
    master_seed: int = 0,
    *,
    scope: MaskScope | None = None,
    tau: int = 1,
    group=None,
    prime: int = DEFAULT_PRIME,
    schedule_seed: int | None = None,
    measure: bool | None = None,
    setup_seed: int | None = None,
) -> RoundResult:
    """Play one full round; never raises for protocol-level aborts.

    ``updates`` are quantized ring vectors in client order (client ``j`` of
    the sorted client list gets ``updates[j]``).  ``schedule_seed`` shuffles
    the order parties run within each phase; outputs must not change.
    Keys come from ``setup_seed`` (defaults to ``master_seed``); round
    randomness comes from ``master_seed`` and ``tau``.
    """
    params.validate()
    adv = (adversary or AdversaryConfig()).validate(params)
    scope = scope or default_scope(params)
    dep = deploy(params.n_clients, params.n_decryptors, master_seed if setup_seed is None else setup_seed, group)
    ledger = CostLedger()
    schedule = random.Random(schedule_seed) if schedule_seed is not None else None

    def order(xs):
        xs = list(xs)
        if schedule is not None:
            schedule.shuffle(xs)
        return xs

    updates = [np.asarray(x, dtype=ring.zeros(0, params.width).dtype).copy() for x in updates]
    if len(updates) != params.n_clients or any(x.shape != (params.dim,) for x in updates):
        raise ValueError("need one length-K update per client")

    randomness, pki, keys = dep.randomness, dep.pki, dep.keys
    clients, decryptors = dep.clients, dep.decryptors
    dset = set(decryptors)

    def role_of(uid):
        return "server" if uid == SERVER_ID else ("decryptor" if uid in dset else "client")

    x_of = dict(zip(clients, updates))

    colluding_clients = {clients[p] for p in adv.colluding_clients}
    colluding_decryptors = {decryptors[p] for p in adv.colluding_decryptors}
    drop_at = {decryptors[p]: phase for p, phase in adv.dropouts.items()}
    withheld = {decryptors[p] for p in adv.withhold} if adv.behavior == "withhold_emk" else set()

    # forged-indicator plan needs honest contributor counts before reports go out
    plan: dict[int, list[int]] = {}
    if adv.behavior == "forge_indicators":
        honest_counts = ring.contributor_counts(
            [ring.indicator(x_of[i], scope) for i in clients if i not in colluding_clients], scope)
        targets = adv.targets if adv.targets is not None else pick_targets(
            honest_counts, scope, params.t, adv.n_targets, np.random.default_rng(derive_seed(master_seed, "targets") % 2**63))
        if adv.colluders_contribute:
            for j in colluding_clients:
                x_of[j][list(targets)] = 1
        true_ind = {i: ring.indicator(x_of[i], scope) for i in clients}
        plan = plan_inflation(true_ind, targets, params.t_prime, colluding_clients)
    info: dict = {
        "clients": clients, "decryptors": decryptors, "randomness": randomness.hex(),
        "dropped": sorted(drop_at), "colluding_clients": sorted(colluding_clients),
        "colluding_decryptors": sorted(colluding_decryptors), "targets": sorted(plan),
    }
    forge_to = dset if adv.forge_only_to is None else {decryptors[p] for p in adv.forge_only_to}
    forwarded: dict[int, dict] = {}

    def intercept(phase, sender, receiver, msg):
        if sender == SERVER_ID and plan and phase == "report" and receiver in forge_to:
            msg.indicators = forge_indicators(msg.indicators, plan)
        if isinstance(msg, UnmaskResponse) and sender in withheld:
            return None
        if sender == SERVER_ID and phase == "report":
            forwarded[receiver] = msg.indicators
        return msg

    net = SimulatedNetwork(ledger, role_of, intercept)
    oracle_result = oracle([x_of[i] for i in clients], scope, params.t_prime, params.width)
    neighbors = select_neighbors(clients, randomness, tau, params.n_neighbors)
    client_objs = {i: Client(i, keys[i], params, pki, derive_rng(master_seed, "client", tau, i), prime, ledger,
                             dep.shared) for i in clients}
    dec_objs = {u: Decryptor(u, keys[u], params, pki, decryptors, scope, prime, ledger, dep.shared)
                for u in decryptors}
    server = Server(params, scope, clients, decryptors, prime, ledger)
    output = abort = None
    unmask_in: dict = {}
    recovery_in: dict = {}
    try:
        # Report
        for i in order(clients):
            net.send("report", SERVER_ID, client_objs[i].report(tau, x_of[i], scope, neighbors[i], decryptors))
        reports = {m.sender: m for m in net.barrier("report").get(SERVER_ID, [])}
        for u, fwd in server.collect(tau, reports).items():
            net.send("report", u, fwd)
        inbox = net.barrier("report")

        # Unmask
        for u in order(decryptors):
            if drop_at.get(u) == "unmask":
                net.silence(u)
                continue
            for fwd in inbox.get(u, []):
                net.send("unmask", SERVER_ID, dec_objs[u].unmask(tau, fwd))
        unmask_in = {m.sender: m for m in net.barrier("unmask").get(SERVER_ID, [])}
        step = server.unmask(unmask_in)

        # Dropout recovery, honest or disguised
        requests = None if isinstance(step, RevealedAggregate) else step
        disguised = adv.behavior == "disguise_dropouts"
        if disguised:
            requests = _disguised_requests(server, adv, params, decryptors, colluding_decryptors)
            info["claimed_dropouts"] = {u: r.dropped for u, r in requests.items()}
        if requests is None:
            output = step
        else:
            for u, req in requests.items():
                net.send("unmask", u, req)
            inbox = net.barrier("unmask")
            for u in order(decryptors):
                if drop_at.get(u) == "droprcv":
                    net.silence(u)
                    continue
                for req in inbox.get(u, []):
                    net.send("droprcv", SERVER_ID, dec_objs[u].recover(tau, req))
            recovery_in = {m.sender: m for m in net.barrier("droprcv").get(SERVER_ID, [])}
            if disguised:
                aborts = sorted((m for m in recovery_in.values() if isinstance(m, Abort)), key=lambda m: m.sender)
                if aborts:
                    raise ProtocolAbort("droprcv", f"decryptor {aborts[0].sender} aborted: {aborts[0].cause}", aborts[0].sender)
                # the disguise may still have carried enough shares to finish the round
                try:
                    output = server.recover(recovery_in)
                except ProtocolAbort as exc:
                    info["recovery_error"] = exc.cause
            else:
                output = server.recover(recovery_in)
    except ProtocolAbort as exc:
        abort = exc

    info["d1"] = sorted(unmask_in)
    info["d2"] = sorted(u for u, m in recovery_in.items() if isinstance(m, RecoveryResponse))
    info["shares_released"] = sum(len(m.shares) for m in recovery_in.values() if isinstance(m, RecoveryResponse))

    if measure is None:
        measure = adv.behavior != "honest" or bool(colluding_clients or colluding_decryptors)
    outcome = None
    if measure and server.aggregate is not None:
        view = _adversary_view(params, scope, clients, decryptors, colluding_clients, colluding_decryptors,
                               server, forwarded, unmask_in, recovery_in, client_objs, x_of)
        outcome = measure_leakage(view, params.t, plan or None)

    net.transcript.header = {"master_seed": master_seed, "setup_seed": dep.setup_seed, "tau": tau}
    return RoundResult(output, abort, ledger, outcome, net.transcript, oracle_result, info)


def _disguised_requests(server: Server, adv: AdversaryConfig, params: ProtocolParams, decryptors, colluding):
    d1 = server.d1
    true_dropped = [u for u in decryptors if u not in d1]
    if adv.worst_case:
        honest_live = [u for u in d1 if u not in colluding]
        lists = worst_case_lists(honest_live, true_dropped, params.delta_max, params.ell - len(colluding))
    else:
        claimed = disguise_dropouts(true_dropped, [decryptors[p] for p in adv.extra_victims])
        lists = {u: claimed for u in d1 if u not in claimed}
    return {
        u: RecoveryRequest(
            server.tau, list(vs),
            {(i, v): server.reports[i].dseed_cts[u, v] for i in server.clients for v in vs},
        )
        for u, vs in lists.items() if vs
    }


def _adversary_view(params, scope, clients, decryptors, colluding_clients, colluding_decryptors,
                    server, forwarded, unmask_in, recovery_in, client_objs, x_of) -> AdversaryView:
    individual_shares = {i: set(colluding_decryptors) for i in clients}
    for u, m in unmask_in.items():
        for i in m.shares:
            individual_shares[i].add(u)
    pair_shares: dict[tuple[int, int], set[int]] = {}
    for u, m in recovery_in.items():
        if isinstance(m, RecoveryResponse):
            for key in m.shares:
                pair_shares.setdefault(key, set()).add(u)
    for i in clients:
        for v in decryptors:
            pair_shares.setdefault((i, v), set()).update(colluding_decryptors)
    return AdversaryView(
        params=params, scope=scope, clients=list(clients), decryptors=list(decryptors),
        colluding_clients=set(colluding_clients), colluding_decryptors=set(colluding_decryptors),
        aggregate=server.aggregate,
        true_indicators=dict(server.indicators),
        forwarded=forwarded,
        emks={u: m.emk for u, m in unmask_in.items()},
        individual_shares=individual_shares,
        decryptor_seed_shares=pair_shares,
        individual_seeds={i: c.individual_seed for i, c in client_objs.items()},
        decryptor_seeds={(i, v): s for i, c in client_objs.items() for v, s in c.decryptor_seeds.items()},
        updates=x_of,
    )


# ---------------------------------------------------------------------------
# Cost-model checks
# ---------------------------------------------------------------------------

# (role, phase) -> cost expression over the run's sizes; the "client" column
# of the cost table for Unmask / DropRcv is booked to decryptors, who do that work.
COMPUTE_MODEL = {
    ("client", "report"): lambda s: s["D"] * s["Kp"] + s["A"] * s["K"] + s["D"] ** 3,
    ("server", "report"): lambda s: s["C"] * s["K"],
    ("decryptor", "unmask"): lambda s: s["C"] * s["Kp"],
    ("server", "unmask"): lambda s: s["D"] * s["Kp"] + s["C"] * s["D"] ** 2 + s["C"] * s["K"],
    ("decryptor", "droprcv"): lambda s: s["C"] * s["V"],
    ("server", "droprcv"): lambda s: s["V"] * (s["C"] * s["D"] ** 2 + s["Kp"]),
}
COMPUTE_COUNTERS = ("prf_evals", "prg_elements", "sym_ops", "share_ops", "ring_ops")


def run_sizes(params: ProtocolParams, n_dropped: int = 0, alpha: float | None = None) -> dict:
    return {"C": params.n_clients, "D": params.n_decryptors, "A": params.n_neighbors,
            "K": params.dim, "Kp": params.scope_size, "V": n_dropped, "alpha": alpha}


def compute_cost(ledger: CostLedger, role: str, phase: str) -> float:
    return sum(ledger.per_party(role, phase, c) for c in COMPUTE_COUNTERS)


def ledger_check(runs: list[tuple[dict, CostLedger]]) -> list[dict]:
    """Compare observed per-party compute growth with the cost table between consecutive runs.

    Each row holds the predicted and observed ratio and the relative residual
    ``observed / predicted - 1``; cells that are zero in both runs are skipped.
    """
    if len(runs) < 2:
        raise ValueError("need at least two ledgers at different scales")
    rows = []
    for (s0, l0), (s1, l1) in zip(runs, runs[1:]):
        for (role, phase), model in COMPUTE_MODEL.items():
            c0, c1 = compute_cost(l0, role, phase), compute_cost(l1, role, phase)
            m0, m1 = model(s0), model(s1)
            if c0 == 0 or m0 == 0:
                continue
            predicted, observed = m1 / m0, c1 / c0
            rows.append({"role": role, "phase": phase, "predicted_ratio": predicted,
                         "observed_ratio": observed, "residual": observed / predicted - 1})
    return rows


def counter_ratio(l0: CostLedger, l1: CostLedger, role: str, phase: str, counter: str) -> float:
    return l1.get(role, phase, counter) / l0.get(role, phase, counter)


# ---------------------------------------------------------------------------
# Revealed-fraction experiment
# ---------------------------------------------------------------------------


def revealed_fraction_experiment(
    model: str,
    t_grid,
    sparsity: float = 0.95,
    *,
    n_clients: int = 100,
    scope_size: int = 1000,
    eta_c: float = 0.0,
    n_runs: int = 20,
    seed: int = 0,
    **model_kw,
) -> dict[int, list[float]]:
    """Fraction of the scope whose contributor count reaches t' = floor(eta_C C) + t, per t and run."""
    scope = MaskScope.full(scope_size)
    colluders = int(np.floor(eta_c * n_clients))
    out: dict[int, list[float]] = {t: [] for t in t_grid}
    for run in range(n_runs):
        rng = np.random.default_rng(derive_seed(seed, "overlap", model, run) % 2**63)
        support = workload.scope_support(n_clients, scope, sparsity, model, rng, **model_kw)
        for t in t_grid:
            out[t].append(workload.revealed_fraction(support, colluders + t))
    return out


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


def replay(transcript: Transcript | bytes, rerun: Callable[[], RoundResult]) -> list[str]:
    """Re-execute via ``rerun`` and diff against a recorded transcript; empty list means identical."""
    if isinstance(transcript, (bytes, bytearray)):
        transcript = Transcript.from_bytes(transcript)
    fresh = rerun().transcript
    diffs = []
    if len(fresh.entries) != len(transcript.entries):
        diffs.append(f"entry count {len(transcript.entries)} != {len(fresh.entries)}")
    for n, (a, b) in enumerate(zip(transcript.entries, fresh.entries)):
        if a != b:
            diffs.append(f"entry {n}: {a.phase} {a.sender}->{a.receiver} differs")
    return diffs
