import numpy as np
import pytest
from scipy import stats

from twoscale.model import model_from_config, preset_model
from twoscale.rng import ReplicaStreams, chunk_generator, derive_seed, replica_generator
from twoscale.simulate import (ensemble_csv, fixed_points, langevin_run, meanfield_integrate,
                               named_points, occupation_measure, ssa_ensemble, ssa_run)

PURE_BIRTH = {"d": 1, "D": 1, "stoichiometry": [[1]], "propensities": ["1.5"]}


def test_replica_streams_are_keyed():
    a = replica_generator(7, 3).random(5)
    np.testing.assert_array_equal(a, replica_generator(7, 3).random(5))
    assert not np.allclose(a, replica_generator(7, 4).random(5))
    s = ReplicaStreams(7, [3, 4], block=4)
    first = s.draw(np.array([0, 1]), 3)
    second = s.draw(np.array([0]), 3)
    np.testing.assert_array_equal(first[0], a[:3])
    # a refill starts a fresh block from the same stream
    np.testing.assert_array_equal(second[0], replica_generator(7, 3).random(8)[4:7])


def test_derived_seeds():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(1, 3)
    np.testing.assert_array_equal(chunk_generator(5, 0, 1).random(3), chunk_generator(5, 0, 1).random(3))


def test_pure_birth_counts_are_poisson():
    spec = model_from_config(PURE_BIRTH)
    n, T = 20, 2.0
    ens = ssa_ensemble(spec, n, [0.0], T, 4000, seed=11, grid=[T])
    counts = np.rint(ens.z[:, 0, 0] * n)
    lam = 1.5 * n * T
    assert abs(counts.mean() - lam) < 4 * np.sqrt(lam / len(counts))
    # variance of a Poisson sample: sd of the sample variance ~ sqrt(2/N) lam
    assert abs(counts.var() - lam) < 4 * np.sqrt(2 / len(counts)) * lam + 1
    _, pval = stats.chisquare(*_binned(counts, lam))
    assert pval > 1e-3


def _binned(counts, lam):
    edges = np.arange(int(lam - 3 * np.sqrt(lam)), int(lam + 3 * np.sqrt(lam)) + 1)
    obs = np.histogram(counts, np.concatenate([[-np.inf], edges[1:-1], [np.inf]]))[0]
    cdf = stats.poisson.cdf(edges[1:-1] - 1, lam)
    exp = np.diff(np.concatenate([[0.0], cdf, [1.0]])) * len(counts)
    return obs, exp


def test_switch_occupation_matches_stationary_law(switch):
    z0 = np.array([0.435, 0.11])
    ens = ssa_ensemble(switch, 1000, z0, 0.5, 400, seed=3, grid=[0.5], cells=1)
    frac = ens.occupation[:, 0, 1].mean()
    f, g = 0.2 + 10 * 0.11**2 / (0.7 + 0.11**2), 3.0
    assert frac == pytest.approx(f / (f + g), abs=0.02)


def test_lattice_and_argument_checks(switch):
    with pytest.raises(ValueError, match="lattice"):
        ssa_run(switch, 10, [0.15, 0.0], 0, 1.0, seed=1)
    with pytest.raises(ValueError):
        ssa_run(switch, 0, [0.0, 0.0], 0, 1.0, seed=1)
    with pytest.raises(ValueError):
        ssa_ensemble(switch, 10, [0.0, 0.0], -1.0, 3, seed=1)


def test_trajectory_record(switch):
    tr = ssa_run(switch, 200, [0.435, 0.11], 1, 2.0, seed=5)
    assert tr.times[0] == 0 and np.all(np.diff(tr.times) >= 0) and tr.times[-1] <= 2.0
    steps = np.abs(np.diff(tr.z, axis=0)).sum(axis=1) * 200
    assert set(np.round(steps).astype(int)) <= {0, 1}
    text = tr.to_csv()
    assert text.splitlines()[0] == "time,z1,z2,xi,channel"
    assert len(text.splitlines()) == len(tr.times) + 1
    summary = tr.summary(switch.S)
    assert summary["reaction_events"] + summary["switch_events"] == tr.n_events
    occ = occupation_measure(tr, 4, D=2)
    np.testing.assert_allclose(occ.rows.sum(axis=1), 1.0)


def test_event_cap_marks_truncation(switch):
    tr = ssa_run(switch, 200, [0.435, 0.11], 1, 5.0, seed=5, event_cap=50)
    assert tr.truncated and tr.n_events <= 50


def test_ensemble_independent_of_threads_and_chunks(switch):
    kw = dict(grid=np.linspace(0, 1, 5), cells=3, seed=9)
    a = ssa_ensemble(switch, 100, [0.44, 0.11], 1.0, 60, threads=1, chunk=60, **kw)
    b = ssa_ensemble(switch, 100, [0.44, 0.11], 1.0, 60, threads=4, chunk=7, **kw)
    assert ensemble_csv(a) == ensemble_csv(b)
    np.testing.assert_array_equal(a.occupation, b.occupation)
    np.testing.assert_allclose(a.occupation.sum(-1), 1.0)
    # replica r of a larger run equals a run started at r
    c = ssa_ensemble(switch, 100, [0.44, 0.11], 1.0, 10, first_replica=50, **kw)
    np.testing.assert_array_equal(a.z[50:], c.z)


def test_rk4_exact_linear_decay():
    spec = model_from_config({"d": 1, "D": 1, "stoichiometry": [[1], [-1]], "propensities": ["2.0", "z1"]})
    exact = 2.0 + (0.5 - 2.0) * np.exp(-3.0)
    err = [abs(meanfield_integrate(spec, [0.5], 3.0, dt).z[-1, 0] - exact) for dt in (0.2, 0.1)]
    # fourth-order: halving the step cuts the error by about 16
    assert 13 < err[0] / err[1] < 19
    assert err[1] < 1e-5


def test_meanfield_relaxes_to_stable_point(switch):
    path = meanfield_integrate(switch, [0.2, 0.05], 150.0, 0.01)
    np.testing.assert_allclose(path.z[-1], [0.43544, 0.10886], atol=1e-4)


def test_fixed_points_of_preset(switch):
    fps = fixed_points(switch, [[0, 5], [0, 5]])
    assert [fp.stability for fp in fps] == ["stable", "saddle", "stable"]
    np.testing.assert_allclose(fps[1].point, [0.87604, 0.21901], atol=1e-5)
    pts = named_points(switch, [[0, 5], [0, 5]])
    np.testing.assert_array_equal(pts["saddle"], pts["saddle1"])
    assert pts["stable1"][0] < pts["stable2"][0]


def test_langevin_reproducible_and_reflected(params):
    a = langevin_run(params, 50, [0.02, 0.01], 1.0, 0.01, seed=4, reps=20)
    b = langevin_run(params, 50, [0.02, 0.01], 1.0, 0.01, seed=4, reps=20, chunk=3)
    np.testing.assert_array_equal(a.z, b.z)
    assert a.z.shape == (20, 101, 2) and np.all(a.z >= 0)
    assert a.reflections.sum() > 0
    quiet = langevin_run(params, 50, [0.4, 0.1], 1.0, 0.01, noise=False)
    ref = meanfield_integrate(preset_model(), [0.4, 0.1], 1.0, 0.01)
    np.testing.assert_allclose(quiet.z[0, -1], ref.z[-1], atol=5e-3)
    with pytest.raises(ValueError):
        langevin_run(params, 50, [0.4, 0.1], 1.0, 0.01, variant="other")
