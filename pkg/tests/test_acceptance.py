"""Acceptance criteria, one test per criterion; each prints a single PASS/FAIL line."""

import itertools
import random
from fractions import Fraction

import numpy as np

from persecagg import ring
from persecagg.adversary import AdversaryConfig
from persecagg.crypto import ss_recon, ss_share
from persecagg.harness import Transcript, counter_ratio, replay, revealed_fraction_experiment, run_round
from persecagg.params import derive_params, sweep_parameter_space
from persecagg.workload import make_updates


def updates(params, seed, sparsity=0.95):
    return make_updates(params.n_clients, params.dim, sparsity, np.random.default_rng(seed))


def test_criterion_1_honest_round_correctness(criterion):
    p = derive_params(32, 9, 3, dim=1024, scope_size=256)
    with criterion("1", "honest-round correctness, 50 runs exact", budget=10) as c:
        revealed_in_scope = 0
        for seed in range(50):
            res = run_round(p, updates(p, seed), master_seed=seed, setup_seed=0, tau=seed + 1)
            out, expect = res.output, res.oracle
            scope = ring.MaskScope.tail(p.dim, p.scope_size)
            c.check(out is not None, f"run {seed} did not complete")
            if out is None:
                continue
            want_revealed = expect.counts >= p.t_prime
            c.check(np.array_equal(out.revealed[scope.indices], want_revealed), f"run {seed}: reveal set")
            c.check(np.array_equal(out.values[out.revealed], expect.sums[out.revealed]), f"run {seed}: values")
            revealed_in_scope += int(want_revealed.sum())
        c.note(f"{revealed_in_scope} revealed scope indices checked")


def test_criterion_2_dropout_recovery(criterion):
    with criterion("2", "dropout recovery equals zero-dropout run, all schedules", budget=30) as c:
        n_runs = 0
        for delta in (Fraction(1, 10), Fraction(2, 10), Fraction(3, 10)):
            p = derive_params(8, 12, 2, delta_d=delta, dim=128, scope_size=32)
            ups = updates(p, 100, 0.7)
            base = run_round(p, ups, master_seed=5, measure=False)
            c.check(base.matches_oracle(), f"delta={delta}: baseline wrong")
            schedules = [
                {pos: "unmask" for pos in subset}
                for size in range(1, p.max_dropouts + 1)
                for subset in itertools.combinations(range(12), size)
            ]
            # a decryptor that vanishes after unmasking leaves nothing to recover but must not hurt either
            schedules += [{pos: "droprcv"} for pos in range(12)]
            for sched in schedules:
                res = run_round(p, ups, AdversaryConfig(dropouts=sched), master_seed=5, measure=False)
                n_runs += 1
                c.check(res.output is not None and res.output == base.output
                        and np.array_equal(res.output.values, base.output.values),
                        f"delta={delta} schedule {sorted(sched)} diverged")
        c.note(f"{n_runs} schedules")


def test_criterion_3_forged_indicator_defense(criterion):
    with criterion("3", "forged indicators never disclose honest sums, 100 attacks", budget=30) as c:
        n_targets = 0
        for seed in range(100):
            colluding = seed % 4 == 3
            p = derive_params(32, 9, 3, eta_c=0.1 if colluding else 0.0, dim=256, scope_size=128)
            adv = AdversaryConfig("forge_indicators", n_targets=4,
                                  colluding_clients=(0, 1, 2) if colluding else (),
                                  colluders_contribute=colluding and seed % 8 == 7)
            res = run_round(p, updates(p, 1000 + seed), adv, master_seed=seed, setup_seed=0)
            targets = res.info["targets"]
            c.check(bool(targets), f"attack {seed} found no under-threshold index")
            rows = res.outcome.by_index()
            for k in targets:
                n_targets += 1
                row = rows[k]
                c.check(row.honest_count < p.t, f"attack {seed} index {k}: not under threshold")
                c.check(res.output is None or bool(res.output.revealed[k]),
                        f"attack {seed} index {k}: masks not released, inflation missed t'")
                c.check(row.server_view != row.true_sum, f"attack {seed} index {k}: honest sum disclosed")
        c.note(f"{n_targets} target indices")


def test_criterion_4a_oversized_lists_abort(criterion):
    with criterion("4a", "dropout lists longer than delta_max abort, zero shares", budget=15) as c:
        n = 0
        for d, eta in ((12, 0.0), (12, 0.25), (9, 0.2), (20, 0.25)):
            p = derive_params(16, d, 3, eta_d=eta, dim=128, scope_size=32)
            coll = tuple(range(p.max_colluding_decryptors))
            pool = [u for u in range(d) if u not in coll]
            for size in range(p.delta_max + 1, min(len(pool), p.delta_max + 4)):
                for seed in range(2):
                    victims = tuple(random.Random(seed * 100 + size).sample(pool, size))
                    adv = AdversaryConfig("disguise_dropouts", colluding_decryptors=coll, extra_victims=victims)
                    res = run_round(p, updates(p, seed), adv, master_seed=seed)
                    n += 1
                    c.check(res.abort is not None and res.output is None, f"D={d} |V|={size} did not abort")
                    c.check(res.info["shares_released"] == 0, f"D={d} |V|={size} released shares")
                    c.check(res.outcome.leaks() == [], f"D={d} |V|={size} leaked")
        c.note(f"{n} oversized lists")


def test_criterion_4b_bounded_disguise_hides(criterion):
    p = derive_params(32, 12, 3, eta_d=0.25, dim=256, scope_size=128)
    coll = tuple(range(12 // 3 - 1))
    with criterion("4b", "bounded disguise at D=12 recovers strictly fewer honest decryptors", budget=15) as c:
        c.check(len(coll) == p.max_colluding_decryptors, "collusion size")
        worst = 0
        for seed in range(10):
            adv = AdversaryConfig("disguise_dropouts", colluding_decryptors=coll, worst_case=seed % 2 == 0,
                                  extra_victims=() if seed % 2 == 0 else tuple(range(3, 3 + p.delta_max)))
            res = run_round(p, updates(p, 50 + seed), adv, master_seed=seed, setup_seed=0)
            out = res.outcome
            c.check(all(len(v) <= p.delta_max for v in res.info["claimed_dropouts"].values()),
                    f"run {seed}: list over delta_max")
            c.check(len(out.recovered_decryptors) < len(out.honest_decryptors),
                    f"run {seed}: every honest decryptor recovered")
            worst = max(worst, len(out.recovered_decryptors))
            hidden = [r for r in out.rows if 1 <= r.honest_count < p.t]
            c.check(all(r.server_view != r.true_sum for r in hidden), f"run {seed}: under-threshold index disclosed")
            c.check(out.leaks() == [], f"run {seed}: leak")
        c.note(f"at most {worst} of {12 - len(coll)} honest decryptors recovered")


def test_criterion_5_threshold_sweep(criterion):
    with criterion("5", "derived (ell, delta_max) satisfy both inequalities on the grid", budget=5) as c:
        rows, bad = sweep_parameter_space(range(3, 201), Fraction(1, 50))
        c.note(f"{len(rows)} grid points, {len(bad)} counterexamples")
        for r in bad[:3]:
            c.note(f"D={r.n_decryptors} delta={r.delta_d} eta={r.eta_d}")
        c.check(not bad, "counterexamples found")


def test_criterion_6_shamir_suite(criterion):
    with criterion("6", "Shamir subsets round-trip and perfect hiding over F_7", budget=5) as c:
        rng = random.Random(6)
        subsets = 0
        for n in range(2, 9):
            for ell in range(2, n + 1):
                secret = rng.randrange(2**128)
                shares = ss_share(secret, ell, n, rng)
                for subset in itertools.combinations(shares, ell):
                    subsets += 1
                    c.check(ss_recon(list(subset), ell) == secret, f"(ell={ell}, L={n}) subset failed")
        p, ell = 7, 3
        for xs in itertools.combinations(range(1, p), ell - 1):
            for secret in range(p):
                seen = {}
                for coeffs in itertools.product(range(p), repeat=ell - 1):
                    shares = ss_share(secret, ell, p - 1, prime=p, coefficients=list(coeffs))
                    view = tuple(shares[x - 1].y for x in xs)
                    seen[view] = seen.get(view, 0) + 1
                c.check(len(seen) == p ** (ell - 1) and set(seen.values()) == {1},
                        f"x={xs} secret={secret}: shares not uniform")
        c.note(f"{subsets} subsets")


def test_criterion_7_cost_scaling(criterion):
    def ledger(n_clients, n_dec, dim, scope, dropouts=None, delta=0.0, sparsity=0.5):
        p = derive_params(n_clients, n_dec, 3, delta_d=delta, dim=dim, scope_size=scope)
        adv = AdversaryConfig(dropouts=dropouts or {})
        return run_round(p, updates(p, 7, sparsity), adv, master_seed=7, measure=False).ledger

    with criterion("7", "counter ratios follow the cost table", budget=60) as c:
        r_c = counter_ratio(ledger(16, 9, 2048, 512), ledger(32, 9, 2048, 512), "server", "report", "ring_ops")
        r_k = counter_ratio(ledger(16, 9, 4096, 1024), ledger(16, 9, 4096, 2048), "decryptor", "unmask", "prg_elements")
        l_d0, l_d1 = ledger(16, 12, 256, 64), ledger(16, 24, 256, 64)
        r_d = l_d1.per_party("client", "report", "share_ops") / l_d0.per_party("client", "report", "share_ops")
        c.note(f"C x2 -> {r_c:.3f}, K' x2 -> {r_k:.3f}, D x2 -> {r_d:.2f}")
        c.check(abs(r_c / 2 - 1) <= 0.05, "server report ring_ops")
        c.check(abs(r_k / 2 - 1) <= 0.05, "decryptor unmask prg_elements")
        c.check(abs(r_d / 8 - 1) <= 0.10, "client report share_ops")
        quiet = ledger(16, 9, 256, 64)
        c.check(quiet.phase_total("droprcv") == 0, "droprcv counters non-zero without dropouts")
        busy = ledger(16, 12, 256, 64, dropouts={0: "unmask"}, delta=0.1)
        c.check(busy.phase_total("droprcv") > 0, "droprcv counters stay zero with a dropout")


def test_criterion_8_revealed_fraction(criterion):
    t_grid = [1, 2, 3, 5, 10, 15, 20, 25, 30]
    with criterion("8", "revealed fraction monotone in t, iid >= skewed", budget=None) as c:
        iid = revealed_fraction_experiment("iid", t_grid, 0.95, n_clients=100, n_runs=20, seed=8)
        skew = revealed_fraction_experiment("dirichlet-skewed", t_grid, 0.95, n_clients=100, n_runs=20, seed=8)
        for name, res in (("iid", iid), ("skewed", skew)):
            for run in range(20):
                curve = [res[t][run] for t in t_grid]
                c.check(all(a >= b for a, b in zip(curve, curve[1:])), f"{name} run {run} not monotone")
        for t in (10, 20, 30):
            a, b = np.mean(iid[t]), np.mean(skew[t])
            c.note(f"t={t}: iid {a:.4f} vs skewed {b:.4f}")
            c.check(a >= b, f"t={t}: iid below skewed")


def test_criterion_9_determinism(criterion):
    scenarios = [
        (derive_params(16, 9, 3, dim=256, scope_size=64), AdversaryConfig()),
        (derive_params(16, 12, 3, delta_d=0.2, dim=256, scope_size=64),
         AdversaryConfig(dropouts={1: "unmask", 5: "unmask"})),
        (derive_params(16, 9, 3, dim=256, scope_size=64), AdversaryConfig("forge_indicators")),
    ]
    with criterion("9", "replay from transcript and seed is byte-identical under shuffled scheduling", budget=None) as c:
        for n, (p, adv) in enumerate(scenarios):
            for master in (1, 2):
                ups = updates(p, master, 0.8)
                first = run_round(p, ups, adv, master_seed=master)
                data = first.transcript.to_bytes()
                c.check(Transcript.from_bytes(data).to_bytes() == data, "transcript serialization")
                for sched in range(3):
                    def rerun():
                        return run_round(p, ups, adv, master_seed=master, schedule_seed=sched)
                    c.check(replay(data, rerun) == [], f"scenario {n} seed {master}: transcript diff")
                    again = rerun()
                    c.check(again.transcript.to_bytes() == data, f"scenario {n}: transcript bytes")
                    c.check(ring.encode_vector(again.output.values) == ring.encode_vector(first.output.values)
                            and again.output.revealed.tobytes() == first.output.revealed.tobytes(),
                            f"scenario {n}: output bytes")
                    c.check(again.ledger.flat() == first.ledger.flat(), f"scenario {n}: ledger")
