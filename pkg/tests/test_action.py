import json

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from twoscale.action import (MAMConfig, PathError, PathGrid, geometric_local_action, hj_residual,
                             minimize_action, optimal_rows, path_csv, rate_functional, reduced_action)
from twoscale.hamiltonians import reduced_lagrangian
from twoscale.model import stationary_weights
from twoscale.simulate import meanfield_integrate


def quasipotential(x, a=1.0):
    # immigration-death chain with rates a and z: V(x) = x log(x/a) - x + a
    return x * np.log(x / a) - x + a


def test_pathgrid_validation():
    with pytest.raises(PathError):
        PathGrid([0.0, 0.0], [[1.0], [2.0]])
    with pytest.raises(PathError):
        PathGrid([0.0, 1.0], [[1.0], [-0.5]])
    with pytest.raises(PathError):
        PathGrid([0.0, 1.0], [[1.0], [2.0]], weights=[[0.3, 0.3]])
    g = PathGrid.uniform([[0.0], [1.0], [3.0]], 2.0)
    np.testing.assert_allclose(g.velocities()[:, 0], [1.0, 2.0])
    np.testing.assert_allclose(g.midpoints()[:, 0], [0.5, 2.0])


def test_config_validation():
    with pytest.raises(ValueError):
        MAMConfig(nodes=4)
    with pytest.raises(ValueError):
        MAMConfig(time="sometimes")
    with pytest.raises(ValueError):
        MAMConfig(init="spiral")


def test_meanfield_path_costs_nothing(switch):
    mf = meanfield_integrate(switch, [0.2, 0.05], 2.0, 0.005)
    w = stationary_weights(switch, 0.5 * (mf.z[1:] + mf.z[:-1]))
    rep = rate_functional(switch, PathGrid(mf.times, mf.z, w))
    assert 0 <= rep.total < 1e-6
    assert reduced_action(switch, PathGrid(mf.times, mf.z)).total < 1e-6


def test_reduced_action_is_sum_of_lagrangians(switched_birth_death):
    path = PathGrid.uniform(np.linspace(0.8, 1.6, 9)[:, None], 2.0)
    rep = reduced_action(switched_birth_death, path)
    manual = sum(reduced_lagrangian(switched_birth_death, m, v).value * dt
                 for m, v, dt in zip(path.midpoints(), path.velocities(), path.dt))
    assert rep.total == pytest.approx(manual, rel=1e-10)
    assert rep.I_s + rep.I_f == pytest.approx(rep.total)
    # any other occupation rows cost at least as much
    rows = optimal_rows(switched_birth_death, path)
    other = PathGrid(path.times, path.points, np.full_like(rows, 0.5))
    assert rate_functional(switched_birth_death, other).total >= rep.total - 1e-12


def test_local_action_closed_form(birth_death):
    z = np.array([[2.0], [2.0], [0.5]])
    v = np.array([[0.5], [-0.3], [0.4]])
    loc = geometric_local_action(birth_death, z, v)
    # uphill against a negative drift, downhill along it, with the positive drift
    np.testing.assert_allclose(loc.ell, [0.5 * np.log(2.0), 0.0, 0.0], atol=1e-9)
    assert loc.converged.all()


def test_local_action_is_scaled_lagrangian_minimum(switched_birth_death):
    z, v = np.array([1.4]), np.array([0.7])

    def scaled(logmu):
        mu = np.exp(logmu)
        return mu * reduced_lagrangian(switched_birth_death, z, v / mu).value

    best = minimize_scalar(scaled, bounds=(-6, 6), method="bounded", options={"xatol": 1e-10}).fun
    loc = geometric_local_action(switched_birth_death, z, v)
    assert loc.ell[0] == pytest.approx(best, rel=1e-7)


def test_gmam_recovers_quasipotential(birth_death):
    path, rep, mom = minimize_action(birth_death, [1.0], [2.5], MAMConfig(nodes=60))
    assert rep.converged
    assert rep.total == pytest.approx(quasipotential(2.5), rel=1e-4)
    assert hj_residual(birth_death, path, mom) < 1e-8
    # the optimal momentum is the quasipotential gradient log(z)
    np.testing.assert_allclose(mom[:, 0], np.log(path.midpoints()[:, 0]), atol=1e-3)
    assert path.times[0] == 0 and path.times[-1] == pytest.approx(1.0)


def test_downhill_costs_nothing(birth_death):
    _, rep, _ = minimize_action(birth_death, [2.5], [1.2], MAMConfig(nodes=30))
    assert rep.total < 1e-8


def test_time_modes_bound_geometric(birth_death):
    cfg = dict(nodes=30, max_iter=60)
    _, geo, _ = minimize_action(birth_death, [1.0], [2.0], MAMConfig(**cfg))
    _, fixed, _ = minimize_action(birth_death, [1.0], [2.0], MAMConfig(time="fixed", T=3.0, **cfg))
    _, opt, _ = minimize_action(birth_death, [1.0], [2.0],
                                MAMConfig(time="optimized", T_bracket=(0.5, 30.0), **cfg))
    # a finite horizon can only cost more than the time-free infimum
    assert fixed.total >= geo.total - 1e-9
    assert geo.total - 1e-9 <= opt.total <= fixed.total + 1e-9
    assert opt.info["T"] > 3.0


def test_rejects_negative_endpoint(birth_death):
    with pytest.raises(PathError):
        minimize_action(birth_death, [-1.0], [1.0])


def test_path_csv_layout():
    path = PathGrid.uniform([[0.0, 1.0], [1.0, 1.0], [2.0, 0.5]], 1.0)
    text = path_csv(path, momenta=np.ones((2, 2)), density=[0.1, 0.2])
    rows = text.splitlines()
    assert rows[0] == "t,z1,z2,p1,p2,density"
    assert rows[-1].endswith(",,,")
    assert len(rows) == 4


def test_report_json(birth_death):
    _, rep, _ = minimize_action(birth_death, [1.0], [1.5], MAMConfig(nodes=10))
    data = json.loads(rep.to_json())
    assert data["total"] == pytest.approx(rep.total) and len(data["contributions"]) == 9
