"""Named verification suites shared by ``twoscale verify`` and the acceptance tests.

Every suite takes ``(spec, seed, probes, reps, threads)`` (``None`` picks the
default size) and returns a dict with a ``verdict`` holding ``passed``.
Suites tied to the genetic switch report ``applicable: False`` on other models.
"""

from __future__ import annotations

import time

import numpy as np

from .action import MAMConfig, hj_residual, minimize_action
from .model import GeneticSwitchParams, ModelSpec, build_genetic_switch
from .simulate import ensemble_csv, meanfield_integrate, named_points, ssa_ensemble
from .verify import (closed_form_check, convexity_suite, duality_audit, langevin_noise_compare,
                     lln_check, meanfield_consistency_check, occupation_ldp_estimate,
                     zero_momentum_check)

BOX = [[0.0, 5.0], [0.0, 5.0]]


def _skip(reason):
    return {"verdict": {"passed": True, "applicable": False, "reason": reason}}


def _timed(fn):
    def wrapper(spec, **kw):
        t0 = time.perf_counter()
        out = fn(spec, **kw)
        out.setdefault("verdict", {})["runtime_s"] = time.perf_counter() - t0
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def zero(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """H and the WKB Hamiltonian vanish at p = 0."""
    if spec.params is None:
        return _skip("genetic-switch only")
    return zero_momentum_check(spec.params, probes or 1000, seed)


@_timed
def closed(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Numeric sup over weights matches the closed form."""
    if spec.params is None:
        return _skip("genetic-switch only")
    return closed_form_check(spec.params, probes or 500, seed)


@_timed
def meanfield(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Gradient and curvature of H at p = 0 against drift and diffusion."""
    if spec.params is None:
        return _skip("genetic-switch only")
    rng = np.random.default_rng(seed)
    pts = rng.random((probes or 20, 2)) * 5.0
    return meanfield_consistency_check(spec.params, pts)


@_timed
def duality(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Paired representations agree."""
    return duality_audit(spec, probes or 100, seed)


@_timed
def convexity(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Convexity in p and concavity in w."""
    return convexity_suite(spec, probes or 500, seed)


@_timed
def occupation(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Occupation-measure rate ladder, symmetric switch f = g = 1, window [0.9, 1]."""
    if spec.params is not None:
        flat = {"c0": 1.0, "c1": 0.0, "K": 1.0}
        params = spec.params.to_dict()
        params.update(f=flat, g=flat)
        spec = build_genetic_switch(GeneticSwitchParams(**params))
        z = np.array([1.0, 1.0])
    elif spec.D == 2:
        z = np.asarray(next(iter(named_points(spec, BOX[:spec.d]).values())))
    else:
        return _skip("two-state switch only")
    ladder = occupation_ldp_estimate(spec, z, (0.9, 1.0), 1.0, [50, 100, 200, 400],
                                     reps or 250_000, seed, threads=threads)
    out = ladder.to_dict()
    out["csv"] = ladder.to_csv()
    return out


@_timed
def langevin(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Switching-induced Langevin noise term against SSA."""
    if spec.params is None:
        return _skip("genetic-switch only")
    z0 = named_points(spec, BOX)["stable1"]
    return langevin_noise_compare(spec.params, 1000, z0, 0.02, 0.02, reps or 100_000, seed,
                                  threads=threads)


@_timed
def lln(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Sup-norm SSA deviation from the mean-field ODE decays like n^(-1/2)."""
    z0 = np.full(spec.d, 0.2) if spec.params is None else np.array([0.2, 0.05])
    return lln_check(spec, [100, 400, 1600], 5.0, reps or 200, seed, z0, threads=threads)


@_timed
def gmam(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Uphill action, grid and initial-path stability, H residuals, downhill zero cost."""
    pts = named_points(spec, BOX[:spec.d] if spec.d == 2 else [[0.0, 5.0]] * spec.d)
    if "saddle" not in pts or "stable1" not in pts:
        return _skip("needs a stable point and a saddle")
    A, S = pts["stable1"], pts["saddle"]
    N = probes or 100
    path, rep, mom = minimize_action(spec, A, S, MAMConfig(nodes=N))
    _, rep2, _ = minimize_action(spec, A, S, MAMConfig(nodes=2 * N))
    _, rep_arc, _ = minimize_action(spec, A, S, MAMConfig(nodes=N, init="arc"))
    _, down, _ = minimize_action(spec, S, A, MAMConfig(nodes=N))
    z0 = A + 0.5 * (S - A) + np.array([0.3] + [0.0] * (spec.d - 1))
    flow_end = meanfield_integrate(spec, z0, 2.0, 0.01).z[-1]
    _, flow, _ = minimize_action(spec, z0, flow_end, MAMConfig(nodes=N))
    res_h = hj_residual(spec, path, mom, "reduced")
    res_w = hj_residual(spec, path, mom, "wkb") if spec.params is not None else 0.0
    v = {
        "uphill_action": rep.total, "uphill_action_2N": rep2.total,
        "grid_relative_change": abs(rep2.total - rep.total) / rep.total,
        "arc_init_relative_change": abs(rep_arc.total - rep.total) / rep.total,
        "converged": rep.converged and rep2.converged,
        "downhill_action": down.total, "flow_action": flow.total,
        "hj_residual_reduced": res_h, "hj_residual_wkb": res_w,
        "I_s": rep.I_s, "I_f": rep.I_f,
    }
    v["passed"] = bool(v["uphill_action"] > 0 and v["grid_relative_change"] <= 1e-3
                       and v["arc_init_relative_change"] <= 1e-3 and down.total <= 1e-4
                       and flow.total <= 1e-4 and res_h <= 1e-4 and res_w <= 1e-2)
    return {"nodes": N, "verdict": v}


@_timed
def determinism(spec: ModelSpec, seed=0, probes=None, reps=None, threads=1):
    """Byte-identical stochastic outputs with 1 and 8 worker threads."""
    z0 = np.rint(named_points(spec, BOX)["stable1"] * 200) / 200 if spec.params is not None \
        else np.full(spec.d, 0.2)
    reps = reps or 2000
    grid = np.linspace(0.0, 1.0, 11)
    outs = []
    for th in (1, 8):
        ens = ssa_ensemble(spec, 200, z0, 1.0, reps, seed, grid=grid, cells=4, threads=th, chunk=256)
        parts = [ensemble_csv(ens).encode(), ens.occupation.tobytes()]
        if spec.D == 2:
            parts.append(occupation(spec, seed=seed, reps=120_000, threads=th)["csv"].encode())
        outs.append(b"".join(parts))
    return {"verdict": {"passed": outs[0] == outs[1], "bytes": len(outs[0])}}


SUITES = {f.__name__: f for f in (zero, closed, meanfield, duality, convexity, occupation, langevin,
                                  lln, gmam, determinism)}
ALL = list(SUITES)
