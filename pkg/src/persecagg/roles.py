"""Client, decryptor and server state machines.

Each role is driven by explicit method calls from the harness, one per
protocol phase; roles never talk to each other directly.  Setup (key
generation, PKI registration, decryptor election) happens once in
:func:`setup`.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ring
from .crypto import (
    DEFAULT_PRIME,
    CryptoError,
    DecryptionError,
    KeyPair,
    SecretShare,
    Seed,
    key_agree,
    prf,
    ss_recon,
    ss_share,
    sym_decrypt,
    sym_encrypt,
)
from .ledger import CostLedger
from .messages import Abort, ClientReport, Forward, RecoveryRequest, RecoveryResponse, UnmaskResponse
from .params import ProtocolParams
from .ring import MaskScope, RevealedAggregate

INDIVIDUAL = 0xFFFFFFFF  # share label of the individual seed r_i


class ProtocolAbort(Exception):
    """The round is poisoned; no aggregate is released."""

    def __init__(self, phase: str, cause: str, party=None):
        super().__init__(f"[{phase}] {cause}")
        self.phase = phase
        self.cause = cause
        self.party = party


def share_aad(tau: int, owner: int, holder: int, label: int) -> bytes:
    return b"persecagg/share" + struct.pack(">QIII", tau, owner, holder, label)


def public_hash(randomness: bytes, purpose: str, *parts: int) -> int:
    h = hashlib.sha256(randomness + purpose.encode() + b"".join(struct.pack(">Q", p) for p in parts))
    return int.from_bytes(h.digest(), "big")


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------


@dataclass
class PKI:
    """Trusted in-memory directory of (pairwise-mask key, encryption key) public halves."""

    group: object
    entries: dict[int, tuple] = field(default_factory=dict)

    def register(self, uid: int, mask_public, enc_public) -> None:
        if uid in self.entries:
            raise ValueError(f"duplicate user id {uid}")
        self.entries[uid] = (mask_public, enc_public)

    def mask_key(self, uid: int):
        try:
            return self.entries[uid][0]
        except KeyError:
            raise KeyError(f"no public key registered for user {uid}") from None

    def enc_key(self, uid: int):
        try:
            return self.entries[uid][1]
        except KeyError:
            raise KeyError(f"no public key registered for user {uid}") from None


def select_decryptors(users, randomness: bytes, n_decryptors: int) -> list[int]:
    users = list(users)
    if len(set(users)) != len(users):
        raise ValueError("duplicate user ids")
    if n_decryptors > len(users):
        raise ValueError("more decryptors than users")
    ranked = sorted(users, key=lambda u: public_hash(randomness, "decryptors", u))
    return sorted(ranked[:n_decryptors])


def setup(users, randomness: bytes, n_decryptors: int, group, rng_for) -> tuple[PKI, list[int], dict]:
    """Generate both key pairs per user, register them, and elect decryptors.

    ``rng_for(uid)`` returns the private RNG of each user.  Returns the PKI,
    the sorted decryptor ids and the private key pairs keyed by user.
    """
    decryptors = select_decryptors(users, randomness, n_decryptors)
    pki = PKI(group)
    keys = {}
    for uid in users:
        rng = rng_for(uid)
        a, b = group.keygen(rng), group.keygen(rng)
        pki.register(uid, a.public, b.public)
        keys[uid] = (a, b)
    return pki, decryptors, keys


def select_neighbors(clients, randomness: bytes, tau: int, n_neighbors: int) -> dict[int, set[int]]:
    """Each client keeps its ``n_neighbors`` lowest-hash peers; the graph is then symmetrized."""
    clients = sorted(clients)
    chosen = {i: set() for i in clients}
    for i in clients:
        peers = sorted(
            (j for j in clients if j != i),
            key=lambda j: public_hash(randomness, "neighbors", tau, min(i, j), max(i, j)),
        )
        for j in peers[:n_neighbors]:
            chosen[i].add(j)
            chosen[j].add(i)
    return chosen


# ---------------------------------------------------------------------------
# Roles
# ---------------------------------------------------------------------------


class _Party:
    """Shared key-agreement plumbing; ``shared`` caches DH results across rounds."""

    def __init__(self, uid: int, keys: tuple[KeyPair, KeyPair], params: ProtocolParams, pki: PKI, shared=None):
        self.uid = uid
        self.mask_keys, self.enc_keys = keys
        self.params = params
        self.pki = pki
        self.shared = {} if shared is None else shared

    def _agree(self, kind: str, peer: int):
        key = (self.uid, peer, kind, self.params.kappa)
        if key not in self.shared:
            if kind == "mask":
                self.shared[key] = key_agree(self.pki.group, self.mask_keys.private, self.pki.mask_key(peer), self.params.kappa)
            else:
                self.shared[key] = key_agree(self.pki.group, self.enc_keys.private, self.pki.enc_key(peer), self.params.kappa)
        return self.shared[key]


class Client(_Party):
    def __init__(self, uid: int, keys: tuple[KeyPair, KeyPair], params: ProtocolParams, pki: PKI, rng,
                 prime: int = DEFAULT_PRIME, ledger: CostLedger | None = None, shared=None):
        super().__init__(uid, keys, params, pki, shared)
        self.rng = rng
        self.prime = prime
        self.ledger = ledger or CostLedger()

    def report(self, tau: int, x: np.ndarray, scope: MaskScope, neighbors, decryptors) -> ClientReport:
        p = self.params
        width, kappa = p.width, p.kappa
        decryptors = sorted(decryptors)
        n_dec = len(decryptors)
        neighbors = sorted(neighbors)

        pair_seeds = {j: prf(self._agree("mask", j), tau, kappa) for j in neighbors}
        dec_seeds = {u: prf(self._agree("mask", u), tau, kappa) for u in decryptors}
        enc = {u: self._agree("enc", u) for u in decryptors}

        x = np.asarray(x, dtype=ring.zeros(0, width).dtype)
        flagged = ring.indicator(x, scope)
        x1 = ring.per_element_mask(x, flagged, [dec_seeds[u] for u in decryptors], width)
        r_i = Seed.random(self.rng, kappa)
        # kept so the harness can score what an adversary could have derived
        self.individual_seed, self.decryptor_seeds = r_i, dec_seeds
        signed = [(pair_seeds[j], 1 if self.uid < j else -1) for j in neighbors]
        masked = ring.flamingo_mask(x1, r_i, signed, width)

        seed_cts = {}
        for share, u in zip(ss_share(r_i.value, p.ell, n_dec, self.rng, self.prime), decryptors):
            seed_cts[u] = self._seal(enc[u], share, tau, u, INDIVIDUAL)
        dseed_cts = {}
        for v in decryptors:
            for share, u in zip(ss_share(dec_seeds[v].value, p.ell, n_dec, self.rng, self.prime), decryptors):
                dseed_cts[u, v] = self._seal(enc[u], share, tau, u, v)

        dim, nb = len(x), len(flagged)
        self.ledger.charge(
            "client", "report", self.uid,
            prf_evals=len(neighbors) + n_dec,
            prg_elements=n_dec * nb + dim * (1 + len(neighbors)),
            ring_ops=n_dec * nb + dim * (1 + len(neighbors)),
            share_ops=(1 + n_dec) * n_dec**2,
            sym_ops=n_dec + n_dec**2,
        )
        return ClientReport(tau, self.uid, masked, flagged, seed_cts, dseed_cts, width)

    def _seal(self, key, share: SecretShare, tau: int, holder: int, label: int):
        nonce = self.rng.randbytes(12)
        return sym_encrypt(key, share.to_bytes(self.prime), nonce, share_aad(tau, self.uid, holder, label))


class Decryptor(_Party):
    def __init__(self, uid: int, keys: tuple[KeyPair, KeyPair], params: ProtocolParams, pki: PKI,
                 decryptors, scope: MaskScope, prime: int = DEFAULT_PRIME, ledger: CostLedger | None = None,
                 shared=None):
        super().__init__(uid, keys, params, pki, shared)
        self.decryptors = sorted(decryptors)
        self.scope = scope
        self.prime = prime
        self.ledger = ledger or CostLedger()
        self._enc: dict[int, object] = {}
        self._tau = None

    def _open(self, client: int, ct, tau: int, label: int, secret_id) -> SecretShare:
        plain = sym_decrypt(self._enc[client], ct, share_aad(tau, client, self.uid, label))
        return SecretShare.from_bytes(plain, self.prime, secret_id)

    def unmask(self, tau: int, msg: Forward) -> UnmaskResponse:
        p = self.params
        clients = sorted(set(msg.indicators) | set(msg.seed_cts))
        self._tau = tau
        seeds = {}
        for i in clients:
            seeds[i] = prf(self._agree("mask", i), tau, p.kappa)
            self._enc[i] = self._agree("enc", i)
        indicators = {i: np.asarray(b, dtype=np.int64) for i, b in msg.indicators.items()}
        emk = ring.element_masks(indicators, seeds, p.t_prime, self.scope, p.width)

        shares, failed = {}, []
        for i, ct in sorted(msg.seed_cts.items()):
            try:
                shares[i] = self._open(i, ct, tau, INDIVIDUAL, (i, "r"))
            except (DecryptionError, CryptoError):
                failed.append(i)

        counts = ring.contributor_counts(indicators.values(), self.scope)
        terms = int(counts[counts >= p.t_prime].sum())
        self.ledger.charge(
            "decryptor", "unmask", self.uid,
            prf_evals=len(clients),
            sym_ops=len(msg.seed_cts),
            prg_elements=terms,
            ring_ops=terms,
        )
        return UnmaskResponse(tau, self.uid, emk, shares, failed, p.width)

    def recover(self, tau: int, msg: RecoveryRequest) -> RecoveryResponse | Abort:
        dropped = list(msg.dropped)
        if len(dropped) > self.params.delta_max:
            return Abort(tau, self.uid, f"dropout list of {len(dropped)} exceeds delta_max={self.params.delta_max}")
        if len(set(dropped)) != len(dropped) or not set(dropped) <= set(self.decryptors):
            return Abort(tau, self.uid, "dropout list names unknown or repeated decryptors")
        if self.uid in dropped:
            return Abort(tau, self.uid, "dropout list names this live decryptor")
        if tau != self._tau:
            return Abort(tau, self.uid, "recovery request for a round this decryptor did not unmask")
        listed = set(dropped)
        shares, failed = {}, []
        for (i, v), ct in sorted(msg.cts.items()):
            if v not in listed or i not in self._enc:
                continue
            try:
                shares[i, v] = self._open(i, ct, tau, v, (i, v))
            except (DecryptionError, CryptoError):
                failed.append((i, v))
        self.ledger.charge("decryptor", "droprcv", self.uid, sym_ops=len(shares) + len(failed))
        return RecoveryResponse(tau, self.uid, shares, failed)


class Server:
    def __init__(self, params: ProtocolParams, scope: MaskScope, clients, decryptors,
                 prime: int = DEFAULT_PRIME, ledger: CostLedger | None = None):
        self.params = params
        self.scope = scope
        self.clients = sorted(clients)
        self.decryptors = sorted(decryptors)
        self.prime = prime
        self.ledger = ledger or CostLedger()
        self.tau = None
        self.aggregate = None
        self.indicators: dict[int, np.ndarray] = {}
        self.reports: dict[int, ClientReport] = {}
        self.individual_seeds: dict[int, Seed] = {}
        self.emks: dict[int, ring.ElementMaskVector] = {}
        self.d1: list[int] = []
        self.d2: list[int] = []
        self.dropped: list[int] = []

    # Report phase
    def collect(self, tau: int, reports: dict[int, ClientReport]) -> dict[int, Forward]:
        missing = set(self.clients) - set(reports)
        if missing:
            raise ProtocolAbort("report", f"missing reports from clients {sorted(missing)}", "server")
        p = self.params
        self.tau = tau
        self.reports = reports
        agg = ring.zeros(p.dim, p.width)
        for i in self.clients:
            agg += reports[i].masked
        self.aggregate = agg
        self.indicators = {i: reports[i].indicator for i in self.clients}
        self.ledger.charge("server", "report", "server", ring_ops=len(self.clients) * p.dim)
        return {
            u: Forward(tau, dict(self.indicators), {i: reports[i].seed_cts[u] for i in self.clients})
            for u in self.decryptors
        }

    def _reconstruct(self, shares: list[SecretShare], phase: str, what: str) -> Seed:
        try:
            value = ss_recon(shares, self.params.ell, self.prime)
            return Seed(value, self.params.kappa)
        except (CryptoError, ValueError) as exc:
            raise ProtocolAbort(phase, f"cannot reconstruct {what}: {exc}", "server") from None

    # Unmasking phase
    def unmask(self, responses: dict[int, UnmaskResponse]) -> RevealedAggregate | dict[int, RecoveryRequest]:
        p = self.params
        d1 = sorted(u for u in responses if u in self.decryptors)
        if len(d1) < p.ell:
            raise ProtocolAbort("unmask", f"only {len(d1)} decryptors responded, need ell={p.ell}", "server")
        lengths = {len(responses[u].emk.present) for u in d1}
        if lengths != {len(self.scope)}:
            raise ProtocolAbort("unmask", "element mask length does not match the scope", "server")
        self.d1 = d1
        self.emks = {u: responses[u].emk for u in d1}
        for i in self.clients:
            shares = [responses[u].shares[i] for u in d1 if i in responses[u].shares]
            self.individual_seeds[i] = self._reconstruct(shares, "unmask", f"seed of client {i}")
        n_dec = len(self.decryptors)
        self.ledger.charge(
            "server", "unmask", "server",
            share_ops=len(self.clients) * n_dec**2,
            prg_elements=len(self.clients) * p.dim,
            ring_ops=len(self.clients) * p.dim + len(d1) * len(self.scope),
        )
        if d1 == self.decryptors:
            return self._finish(recovered=None)
        self.dropped = [u for u in self.decryptors if u not in d1]
        return {
            u: RecoveryRequest(
                self.tau,
                list(self.dropped),
                {(i, v): self.reports[i].dseed_cts[u, v] for i in self.clients for v in self.dropped},
            )
            for u in d1
        }

    # Dropout recovery phase
    def recover(self, responses: dict[int, RecoveryResponse | Abort]) -> RevealedAggregate:
        p = self.params
        aborts = [r for r in responses.values() if isinstance(r, Abort)]
        if aborts:
            first = min(aborts, key=lambda a: a.sender)
            raise ProtocolAbort("droprcv", f"decryptor {first.sender} aborted: {first.cause}", first.sender)
        d2 = sorted(u for u in responses if u in self.d1)
        if len(d2) < p.ell:
            raise ProtocolAbort("droprcv", f"only {len(d2)} decryptors answered recovery, need ell={p.ell}", "server")
        self.d2 = d2
        seeds = {}
        for i in self.clients:
            for v in self.dropped:
                shares = [responses[u].shares[i, v] for u in d2 if (i, v) in responses[u].shares]
                seeds[i, v] = self._reconstruct(shares, "droprcv", f"seed r[{i},{v}]")
        recovered = ring.dropout_masks(self.indicators, seeds, p.dim, p.width)
        terms = sum(len(self.indicators[i]) for i in self.clients) * len(self.dropped)
        self.ledger.charge(
            "server", "droprcv", "server",
            share_ops=len(seeds) * len(self.decryptors) ** 2,
            prg_elements=terms,
            ring_ops=terms + p.dim,
        )
        return self._finish(recovered)

    def _finish(self, recovered) -> RevealedAggregate:
        p = self.params
        return ring.unmask(
            self.aggregate,
            [self.individual_seeds[i] for i in self.clients],
            [self.emks[u] for u in self.d1],
            self.scope,
            len(self.decryptors),
            recovered=recovered,
            n_recovered=len(self.dropped) if recovered is not None else 0,
            width=p.width,
        )
