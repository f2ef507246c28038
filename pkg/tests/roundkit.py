"""Hand-driven round for role-level tests: no network, no harness."""

import numpy as np

from persecagg import ring
from persecagg.harness import deploy, derive_rng
from persecagg.ledger import CostLedger
from persecagg.params import derive_params
from persecagg.roles import Client, Decryptor, Server, select_neighbors


class HandRound:
    def __init__(self, n_clients=5, n_decryptors=4, t=2, dim=16, scope_size=8, seed=0, tau=1):
        self.params = p = derive_params(n_clients, n_decryptors, t, dim=dim, scope_size=scope_size)
        self.dep = dep = deploy(n_clients, n_decryptors, setup_seed=1000 + seed)
        self.scope = ring.MaskScope.tail(dim, scope_size)
        self.tau = tau
        self.ledger = CostLedger()
        rng = np.random.default_rng(seed)
        self.updates = {
            i: np.where(rng.random(dim) < 0.6, rng.integers(1, 1000, dim), 0).astype(np.uint32) for i in dep.clients
        }
        self.neighbors = select_neighbors(dep.clients, dep.randomness, tau, p.n_neighbors)
        self.clients = {
            i: Client(i, dep.keys[i], p, dep.pki, derive_rng(seed, "c", i), ledger=self.ledger) for i in dep.clients
        }
        self.decryptors = {
            u: Decryptor(u, dep.keys[u], p, dep.pki, dep.decryptors, self.scope, ledger=self.ledger)
            for u in dep.decryptors
        }
        self.server = Server(p, self.scope, dep.clients, dep.decryptors, ledger=self.ledger)

    def reports(self):
        return {
            i: c.report(self.tau, self.updates[i], self.scope, self.neighbors[i], self.dep.decryptors)
            for i, c in self.clients.items()
        }

    def forwards(self):
        return self.server.collect(self.tau, self.reports())

    def unmask(self, live=None):
        fwd = self.forwards()
        live = self.dep.decryptors if live is None else live
        return {u: self.decryptors[u].unmask(self.tau, fwd[u]) for u in live}

    def expected(self):
        t_prime = self.params.t_prime
        xs = [self.updates[i] for i in self.dep.clients]
        total = sum(x.astype(np.uint64) for x in xs).astype(np.uint32)
        counts = ring.contributor_counts([ring.indicator(x, self.scope) for x in xs], self.scope)
        revealed = np.ones(self.params.dim, dtype=bool)
        revealed[self.scope.indices] = counts >= t_prime
        return ring.RevealedAggregate(total, revealed)
