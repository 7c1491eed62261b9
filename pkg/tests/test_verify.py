import numpy as np
import pytest
from scipy.linalg import expm

from twoscale.model import GeneticSwitchParams, build_genetic_switch
from twoscale.verify import (EstimateWithCI, RateLadder, Rung, _occupation_chunk, closed_form_check,
                             convexity_suite, duality_audit, langevin_noise_compare, lln_check,
                             meanfield_consistency_check, occupation_ldp_estimate,
                             occupation_rate_theory, zero_momentum_check)


def exact_occupation_tail(f, g, n, T, lo, M=2000):
    """P(time share of state 1 >= lo) by a discrete-time occupancy recursion."""
    h = T / M
    P = expm(h * n * np.array([[-f, f], [g, -g]]))
    a = np.zeros((2, M + 1))
    a[:, 0] = [g / (f + g), f / (f + g)]
    for _ in range(M):
        b = np.zeros_like(a)
        b[0] = a[0]
        b[1, 1:] = a[1, :-1]
        a = P.T @ b
    return a[:, np.arange(M + 1) >= lo * M].sum()


@pytest.fixture(scope="module")
def symmetric_switch():
    return build_genetic_switch(GeneticSwitchParams(b=0.25, gamma=1.0, f=1.0, g=1.0))


def test_occupation_theory_values():
    assert occupation_rate_theory(1, 1, (0.9, 1.0), 1.0) == pytest.approx(0.4)
    assert occupation_rate_theory(1, 1, (0.9, 1.0), 2.0) == pytest.approx(0.8)
    assert occupation_rate_theory(1, 3, (0.1, 0.6), 1.0) == 0.0
    # window below the stationary share clips to its upper end
    assert occupation_rate_theory(3, 1, (0.0, 0.5), 1.0) == pytest.approx((np.sqrt(1.5) - np.sqrt(0.5)) ** 2)


def test_occupation_sampler_matches_exact_tail():
    rng = np.random.default_rng(2)
    m = 200_000
    hits = _occupation_chunk(1.0, 1.0, 5, 1.0, (0.7, 1.0), m, rng)
    p = exact_occupation_tail(1.0, 1.0, 5, 1.0, 0.7)
    assert abs(hits / m - p) < 4 * np.sqrt(p * (1 - p) / m) + 2e-3


def test_exact_tail_rate_approaches_theory():
    # the decay rate of the exact tail tends to the closed-form rate
    rates = [-np.log(exact_occupation_tail(1.0, 1.0, n, 1.0, 0.9, M=3000)) / n for n in (25, 100)]
    assert rates[0] > rates[1] > 0.4


def test_ladder_on_reachable_window(symmetric_switch):
    kw = dict(window=(0.7, 1.0), T=1.0, n_ladder=[5, 10, 20], reps=60_000, seed=4)
    lad = occupation_ldp_estimate(symmetric_switch, [1.0, 1.0], **kw)
    assert all(r.hits > 0 for r in lad.rungs)
    assert lad.theory == pytest.approx(occupation_rate_theory(1, 1, (0.7, 1.0), 1.0))
    rates = [r.rate for r in lad.rungs]
    assert rates[0] > rates[1] > rates[2] > lad.theory
    assert lad.to_csv().splitlines()[0] == "n,reps,hits,rate,ci_low,ci_high,bound_only"
    again = occupation_ldp_estimate(symmetric_switch, [1.0, 1.0], threads=4, **kw)
    assert again.to_csv() == lad.to_csv()


def test_zero_hits_report_a_bound(symmetric_switch):
    lad = occupation_ldp_estimate(symmetric_switch, [1.0, 1.0], (0.95, 1.0), 1.0, [80], 2000, 1)
    rung = lad.rungs[0]
    assert rung.hits == 0 and rung.bound_only
    assert rung.rate == pytest.approx(-np.log(3 / 2000) / 80)
    assert not lad.verdict["passed"]


def test_container_validation():
    with pytest.raises(ValueError):
        EstimateWithCI(1.0, -0.1, 10, "x")
    with pytest.raises(ValueError):
        EstimateWithCI(1.0, 0.1, 1, "x")
    r = Rung(10, 5, 1, 0.1, (0.0, 1.0), False)
    with pytest.raises(ValueError):
        RateLadder([r, Rung(10, 5, 1, 0.1, (0.0, 1.0), False)])


def test_duality_audit_non_reversible(three_state):
    out = duality_audit(three_state, 8, seed=1)
    assert out["verdict"]["passed"]
    assert not out["checks"]["dv_vs_chen"]["applicable"]
    assert out["checks"]["dv_vs_flow"]["max_discrepancy"] < 1e-8
    with pytest.raises(ValueError):
        duality_audit(three_state, 0, seed=1)


def test_deterministic_checks_on_preset(switch, params):
    assert duality_audit(switch, 8, seed=2)["verdict"]["passed"]
    assert convexity_suite(switch, 40, seed=2)["verdict"]["passed"]
    assert zero_momentum_check(params, 50, seed=2)["verdict"]["passed"]
    assert closed_form_check(params, 30, seed=2)["verdict"]["passed"]
    assert meanfield_consistency_check(params, np.array([[0.5, 0.2], [2.0, 1.0]]))["verdict"]["passed"]


def test_lln_deviation_shrinks(switch):
    out = lln_check(switch, [100, 400], 1.0, 40, seed=3, z0=[0.2, 0.05], grid_points=101)
    devs = [r["mean_sup_dev"] for r in out["rows"]]
    assert devs[1] < devs[0]
    assert out["verdict"]["integrator_error"] < 1e-8


def test_langevin_comparison_reports_theory(params):
    out = langevin_noise_compare(params, 200, [0.435, 0.109], 0.02, 0.02, 3000, seed=5, batches=5)
    assert out["z0"] == [0.435, 0.11]
    assert out["full_theory"] > out["naive_theory"] > 0
    assert set(out["verdict"]) >= {"gap", "gap_z", "ssa_closer_to_full", "passed"}
