from fractions import Fraction

import pytest

from persecagg.params import (
    ParamError,
    check_recovery_security,
    derive_params,
    dropout_bound,
    rate_grid,
    shamir_threshold,
    sweep_parameter_space,
)


def test_t_prime_examples():
    assert derive_params(256, 40, 5, eta_c=0.1).t_prime == 30
    assert derive_params(256, 40, 5).t_prime == 5


def test_ell_and_delta_max_examples():
    p = derive_params(256, 40, 5)
    assert (p.ell, p.delta_max) == (27, 14)
    assert (shamir_threshold(3), dropout_bound(shamir_threshold(3))) == (3, 2)


def test_ceil_variant_formulas():
    assert shamir_threshold(40, "ceil") == 28
    assert dropout_bound(28, "ceil") == 14
    assert shamir_threshold(39, "ceil") == shamir_threshold(39) == 27
    with pytest.raises(ValueError):
        shamir_threshold(10, "bogus")


def test_rate_bound_is_enforced():
    with pytest.raises(ParamError, match="delta_D \\+ eta_D < 1/3") as err:
        derive_params(32, 9, 3, eta_d=0.2, delta_d=0.2)
    assert err.value.field == "delta_d"
    with pytest.raises(ParamError):
        derive_params(32, 9, 3, eta_d=Fraction(1, 6), delta_d=Fraction(1, 6))
    derive_params(32, 9, 3, eta_d=0.1, delta_d=0.2)


@pytest.mark.parametrize("kw, field", [
    (dict(n_clients=32, n_decryptors=2, t=3), "n_decryptors"),
    (dict(n_clients=32, n_decryptors=9, t=1), "t"),
    (dict(n_clients=2, n_decryptors=9, t=3), "n_clients"),
    (dict(n_clients=32, n_decryptors=9, t=3, dim=16, scope_size=17), "scope_size"),
    (dict(n_clients=32, n_decryptors=9, t=3, width=24), "width"),
    (dict(n_clients=32, n_decryptors=9, t=3, lam=-1.0), "lam"),
    (dict(n_clients=32, n_decryptors=9, t=3, eta_c=1.0), "eta_c"),
])
def test_param_errors_name_the_field(kw, field):
    with pytest.raises(ParamError) as err:
        derive_params(**kw)
    assert err.value.field == field


def test_collusion_counts_are_floored():
    p = derive_params(100, 12, 3, eta_c=0.05, eta_d=0.25, delta_d=0.08)
    assert (p.max_colluding_clients, p.max_colluding_decryptors, p.max_dropouts) == (5, 3, 0)


def test_recovery_feasible_near_delta_limit():
    eps = Fraction(1, 1000)
    r = check_recovery_security(40, 27, 14, Fraction(1, 3) - eps, 0)
    assert r.recovery_feasible
    # 14 * 27 online units against 13 dropped decryptors needing 27 shares each
    assert 14 * 27 >= 13 * 27


def test_security_inequality_ties_at_d40_near_eta_limit():
    # 13 colluders leave 26 honest, all online: 14 * 26 units vs 26 * (27 - 13) needed, a tie, so "<" fails
    eps = Fraction(1, 1000)
    r = check_recovery_security(40, 27, 14, 0, Fraction(1, 3) - eps)
    assert r.recovery_feasible and not r.security_holds
    # one colluder fewer and the strict inequality holds
    assert check_recovery_security(40, 27, 14, 0, Fraction(12, 40)).security_holds


def test_over_generous_delta_max_breaks_security():
    eps = Fraction(1, 1000)
    r = check_recovery_security(40, 27, 27, 0, Fraction(1, 3) - eps)
    assert not r.security_holds and not r.ok


def test_grid_excludes_points_at_or_above_one_third():
    grid = list(rate_grid(Fraction(1, 50)))
    assert all(d + e < Fraction(1, 3) for d, e in grid)
    assert (Fraction(0), Fraction(0)) in grid
    assert (Fraction(8, 50), Fraction(8, 50)) in grid
    assert (Fraction(9, 50), Fraction(8, 50)) not in grid


def _counterexamples_oracle(d_lo, d_hi):
    """Recomputes both inequalities with plain integer loops over a 2%-grid."""
    bad = []
    for d in range(d_lo, d_hi + 1):
        ell = 2 * d // 3 + 1
        dm = (ell + 1) // 2
        for a in range(0, 17):
            for b in range(0, 17):
                if 3 * (a + b) >= 50:
                    continue
                dropped, coll = a * d // 50, b * d // 50
                online = (50 - a - b) * d // 50
                honest = (50 - b) * d // 50
                if not (dm * online >= dropped * (ell - coll) and dm * online < honest * (ell - coll)):
                    bad.append((d, a, b))
    return bad


def test_sweep_matches_integer_oracle():
    rows, bad = sweep_parameter_space(range(3, 61))
    assert len(rows) == 58 * len(list(rate_grid(Fraction(1, 50))))
    assert sorted((r.n_decryptors, int(r.delta_d * 50), int(r.eta_d * 50)) for r in bad) == _counterexamples_oracle(3, 60)


def test_sweep_counterexamples_are_the_frozen_set():
    _, bad = sweep_parameter_space(range(6, 61))
    assert sorted({r.n_decryptors for r in bad}) == [7, 10, 13, 16, 19, 22, 25]
    assert all(r.recovery_feasible and not r.security_holds for r in bad)
    assert all(r.n_decryptors % 3 == 1 for r in bad)


def test_ceil_variant_sweep_is_clean():
    _, bad = sweep_parameter_space(range(3, 201), variant="ceil")
    assert bad == []


def test_smallest_decryptor_set_is_evaluated():
    rows, _ = sweep_parameter_space(range(3, 4))
    assert rows and all((r.ell, r.delta_max) == (3, 2) for r in rows)


def test_empty_sweep():
    rows, bad = sweep_parameter_space(range(5, 5))
    assert rows == [] and bad == []
