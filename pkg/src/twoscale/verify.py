"""Monte-Carlo and cross-representation checks.

Each ``*_check`` / ``*_estimate`` returns plain data plus a ``verdict`` dict
(``passed`` and the measured numbers) so the CLI and the test-suite can
report the same thing.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .hamiltonians import (DEFAULTS, Settings, _reduced_H_batch, chen_rate, diffusion_coeffs,
                           dv_rate, flow_rate_representation, genetic_hamiltonian_closed, hs,
                           is_reversible, perron_hamiltonian, reduced_hamiltonian,
                           reduced_lagrangian, reduced_lagrangian_inf_w, slow_lagrangian,
                           slow_lagrangian_entropy, wkb_hamiltonian, ReversibilityError)
from .model import ModelSpec, build_genetic_switch
from .rng import chunk_generator, derive_seed
from .simulate import langevin_run, meanfield_integrate, ssa_ensemble

log = logging.getLogger(__name__)

CHUNK = 50_000


@dataclass
class EstimateWithCI:
    value: float
    stderr: float
    count: int
    method: str

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("standard error must be nonnegative")
        if self.count < 2:
            raise ValueError("need at least two replicates")

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "count": self.count, "method": self.method}


@dataclass
class Rung:
    n: int
    reps: int
    hits: int
    rate: float
    ci: tuple
    bound_only: bool


@dataclass
class RateLadder:
    rungs: list
    intercept: float = np.nan
    intercept_se: float = np.nan
    slope: float = np.nan
    theory: float = np.nan
    verdict: dict = field(default_factory=dict)

    def __post_init__(self):
        ns = [r.n for r in self.rungs]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("ladder n values must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "reps", "hits", "rate", "ci_low", "ci_high", "bound_only"])
        for r in self.rungs:
            w.writerow([r.n, r.reps, r.hits, f"{r.rate:.17g}", f"{r.ci[0]:.17g}", f"{r.ci[1]:.17g}",
                        int(r.bound_only)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rungs": [r.__dict__ for r in self.rungs],
            "intercept": self.intercept, "intercept_se": self.intercept_se, "slope": self.slope,
            "theory": self.theory, "verdict": self.verdict,
        }


# ---------------------------------------------------------------------------
# occupation-measure large deviations of the frozen fast chain


def _two_state_rate(w1, f, g):
    return (np.sqrt((1 - w1) * f) - np.sqrt(w1 * g)) ** 2


def occupation_rate_theory(f: float, g: float, window, T: float) -> float:
    """``T * min_{w1 in window} (sqrt((1-w1) f) - sqrt(w1 g))^2``.

    The rate is convex in ``w1`` with its zero at ``f / (f + g)``, so the
    minimum sits at that point clipped to the window.
    """
    a, b = window
    return float(T * _two_state_rate(np.clip(f / (f + g), a, b), f, g))


def _occupation_chunk(f, g, n, T, window, m, rng):
    """Fraction of ``m`` two-state chains whose state-1 time share is in the window."""
    state = (rng.random(m) < f / (f + g)).astype(np.int8)
    t = np.zeros(m)
    occ1 = np.zeros(m)
    live = np.arange(m)
    rates = n * np.array([f, g])
    while live.size:
        s = state[live]
        hold = rng.exponential(1.0, live.size) / rates[s]
        stay = np.minimum(hold, T - t[live])
        occ1[live] += stay * s
        t[live] += hold
        state[live] = 1 - s
        live = live[t[live] < T]
    frac = occ1 / T
    return int(np.sum((frac >= window[0]) & (frac <= window[1])))


def _logit_ci(hits, reps, z=1.96):
    p = hits / reps
    se = np.sqrt(1.0 / (reps * p * (1 - p)))
    lo, hi = np.log(p / (1 - p)) - z * se, np.log(p / (1 - p)) + z * se
    return 1 / (1 + np.exp(-lo)), 1 / (1 + np.exp(-hi))


def occupation_ldp_estimate(spec: ModelSpec, z_frozen, window, T: float, n_ladder, reps: int,
                            seed: int, threads: int = 1, tolerance: float = 0.15) -> RateLadder:
    """Empirical ``-log P(occupation in window) / n`` for the fast chain at a frozen slow state.

    Rungs with no hits report the one-sided bound ``-log(3/reps)/n`` and do
    not enter the ``1/n`` regression.
    """
    if spec.D != 2:
        raise ValueError("occupation LDP estimate needs a two-state switch")
    a, b = window
    if not 0 <= a <= b <= 1:
        raise ValueError("window must satisfy 0 <= a <= b <= 1")
    q = spec.switch_matrix(np.asarray(z_frozen, float))
    f, g = float(q[0, 1]), float(q[1, 0])
    if a <= f / (f + g) <= b:
        log.warning("window contains the stationary fraction; the rate is 0")
    theory = occupation_rate_theory(f, g, window, T)
    rungs = []
    for k, n in enumerate(n_ladder):
        sizes = [min(CHUNK, reps - s) for s in range(0, reps, CHUNK)]

        def run(ci, n=n, k=k):
            return _occupation_chunk(f, g, n, T, window, sizes[ci], chunk_generator(seed, k, ci))

        if threads > 1 and len(sizes) > 1:
            with ThreadPoolExecutor(threads) as pool:
                hits = sum(pool.map(run, range(len(sizes))))
        else:
            hits = sum(run(ci) for ci in range(len(sizes)))
        if hits == 0:
            bound = -np.log(3.0 / reps) / n
            rungs.append(Rung(int(n), reps, 0, float(bound), (float(bound), np.inf), True))
            continue
        p = hits / reps
        if hits == reps:
            rungs.append(Rung(int(n), reps, hits, 0.0, (0.0, 0.0), False))
            continue
        plo, phi = _logit_ci(hits, reps)
        rungs.append(Rung(int(n), reps, hits, float(-np.log(p) / n),
                          (float(-np.log(phi) / n), float(-np.log(plo) / n)), False))
    ladder = RateLadder(rungs, theory=theory)
    _fit_ladder(ladder)
    usable = [r for r in rungs if not r.bound_only]
    final = rungs[-1]
    rel = abs(final.rate - theory) / theory if theory > 0 and not final.bound_only else np.nan
    gaps = [abs(r.rate - theory) for r in usable]
    monotone = len(usable) == len(rungs) and all(y <= x + 1e-12 for x, y in zip(gaps, gaps[1:]))
    ladder.verdict = {
        "theory": theory,
        "final_rate": final.rate,
        "final_bound_only": final.bound_only,
        "final_relative_error": rel,
        "monotone": monotone,
        "zero_hit_rungs": [r.n for r in rungs if r.bound_only],
        "tolerance": tolerance,
        "passed": bool(np.isfinite(rel) and rel <= tolerance and monotone),
    }
    return ladder


def _fit_ladder(ladder: RateLadder):
    """Inverse-variance weighted fit ``rate = c + s / n`` over rungs with hits."""
    use = [r for r in ladder.rungs if not r.bound_only and 0 < r.hits < r.reps]
    if len(use) < 2:
        return
    n = np.array([r.n for r in use], float)
    y = np.array([r.rate for r in use])
    p = np.array([r.hits / r.reps for r in use])
    var = (1 - p) / (np.array([r.reps for r in use]) * p) / n**2
    X = np.stack([np.ones_like(n), 1 / n], axis=1)
    W = 1 / var
    cov = np.linalg.inv(X.T @ (X * W[:, None]))
    beta = cov @ (X.T @ (W * y))
    ladder.intercept, ladder.slope = float(beta[0]), float(beta[1])
    ladder.intercept_se = float(np.sqrt(cov[0, 0]))


# ---------------------------------------------------------------------------
# Langevin noise comparison


def _var_with_se(x):
    x = np.asarray(x, float)
    v = x.var(ddof=1)
    m4 = np.mean((x - x.mean()) ** 4)
    return float(v), float(np.sqrt(max(m4 - v * v, 0.0) / x.size))


def langevin_noise_compare(params, n: int, z_start, dt: float, horizon: float, reps: int, seed: int,
                           batches: int = 20, threads: int = 1) -> dict:
    """Variance of the ``z1`` increment over ``horizon`` for SSA and both Langevin forms.

    The SSA starts from ``z_start`` rounded to the ``1/n`` lattice with the
    fast state drawn from its stationary law. Theory targets are
    ``D11 * horizon / n`` and the switching deficit
    ``2 f g / (b^2 (f+g)^3) * horizon / n``.
    """
    spec = build_genetic_switch(params)
    params = spec.params
    z0 = np.rint(np.asarray(z_start, float) * n) / n
    D11, _ = diffusion_coeffs(params, z0)
    f, g = params.f(z0[1]), params.g(z0[1])
    deficit = 2 * f * g / (params.b**2 * (f + g) ** 3) * horizon / n
    full_theory = float(D11) * horizon / n

    ens = ssa_ensemble(spec, n, z0, horizon, reps, derive_seed(seed, 0), xi0=None, grid=[horizon],
                       threads=threads)
    d_ssa = ens.z[:, 0, 0] - z0[0]
    d_full = langevin_run(params, n, z0, horizon, dt, "full", derive_seed(seed, 1), reps).z[:, -1, 0] - z0[0]
    d_naive = langevin_run(params, n, z0, horizon, dt, "naive", derive_seed(seed, 2), reps).z[:, -1, 0] - z0[0]
    v_ssa, se_ssa = _var_with_se(d_ssa)
    v_full, se_full = _var_with_se(d_full)
    v_naive, se_naive = _var_with_se(d_naive)
    gap = v_full - v_naive
    gap_se = float(np.hypot(se_full, se_naive))
    closer = []
    for part in np.array_split(np.arange(reps), batches):
        vs = d_ssa[part].var(ddof=1)
        closer.append(abs(vs - d_full[part].var(ddof=1)) < abs(vs - d_naive[part].var(ddof=1)))
    frac = float(np.mean(closer))
    verdict = {
        "gap": gap, "gap_se": gap_se, "gap_theory": float(deficit),
        "gap_z": (gap - deficit) / gap_se if gap_se > 0 else np.inf,
        "full_z": (v_full - full_theory) / se_full if se_full > 0 else np.inf,
        "ssa_closer_to_full": abs(v_ssa - v_full) < abs(v_ssa - v_naive),
        "batch_fraction_closer": frac,
    }
    verdict["passed"] = bool(abs(verdict["gap_z"]) <= 3 and verdict["ssa_closer_to_full"]
                             and frac >= 0.95)
    return {
        "z0": z0.tolist(), "n": n, "horizon": horizon, "dt": dt, "reps": reps,
        "ssa": EstimateWithCI(v_ssa, se_ssa, reps, "ssa").to_dict(),
        "full": EstimateWithCI(v_full, se_full, reps, "langevin-full").to_dict(),
        "naive": EstimateWithCI(v_naive, se_naive, reps, "langevin-naive").to_dict(),
        "full_theory": full_theory, "naive_theory": full_theory - float(deficit),
        "verdict": verdict,
    }


# ---------------------------------------------------------------------------
# law of large numbers


def lln_check(spec: ModelSpec, n_ladder, T: float, reps: int, seed: int, z0, grid_points: int = 501,
              ode_dt: float = 1e-3, slope_range=(-0.65, -0.35), threads: int = 1) -> dict:
    """Mean sup-norm distance between SSA paths and the mean-field ODE per ``n``."""
    z0 = np.asarray(z0, float)
    grid = np.linspace(0.0, T, grid_points)
    ode = meanfield_integrate(spec, z0, T, ode_dt)
    step = int(round((T / (grid_points - 1)) / (ode.times[1] - ode.times[0])))
    if not np.allclose(ode.times[::step], grid):
        ref = np.stack([np.interp(grid, ode.times, ode.z[:, k]) for k in range(spec.d)], axis=1)
    else:
        ref = ode.z[::step]
    # noise-free surrogate: the integrator against itself at half the step
    fine = meanfield_integrate(spec, z0, T, ode_dt / 2)
    integrator_err = float(np.abs(fine.z[::2] - ode.z).max())
    rows = []
    for k, n in enumerate(n_ladder):
        ens = ssa_ensemble(spec, int(n), z0, T, reps, derive_seed(seed, k), grid=grid, threads=threads)
        dev = np.abs(ens.z - ref[None]).max(axis=(1, 2))
        rows.append({"n": int(n), "mean_sup_dev": float(dev.mean()),
                     "stderr": float(dev.std(ddof=1) / np.sqrt(reps)), "reps": reps})
    x = np.log([r["n"] for r in rows])
    y = np.log([r["mean_sup_dev"] for r in rows])
    slope = float(np.polyfit(x, y, 1)[0])
    means = [r["mean_sup_dev"] for r in rows]
    verdict = {
        "slope": slope, "range": list(slope_range),
        "monotone": all(b < a for a, b in zip(means, means[1:])),
        "integrator_error": integrator_err,
    }
    verdict["passed"] = bool(slope_range[0] <= slope <= slope_range[1] and verdict["monotone"])
    return {"rows": rows, "T": T, "z0": z0.tolist(), "verdict": verdict}


# ---------------------------------------------------------------------------
# cross-representation audit


def _random_simplex(rng, D, lo=0.02):
    w = rng.dirichlet(np.ones(D))
    w = lo / D + (1 - lo) * w
    return w / w.sum()


def duality_audit(spec: ModelSpec, probes: int, seed: int, box=None, p_radius: float = 2.0,
                  tol: float = 1e-6, settings: Settings = DEFAULTS) -> dict:
    """Max discrepancy between the paired representations on random probes.

    Pairs: reduced Hamiltonian vs Perron eigenvalue; slow Lagrangian dual
    vs entropy form; reduced Lagrangian ``sup_p`` vs ``inf_w``; Chen vs
    Donsker-Varadhan rate (reversible switch only); Donsker-Varadhan vs flow
    form; and, for the genetic switch, numeric vs closed-form Hamiltonian.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, 7))
    box = np.asarray(box if box is not None else [[0.05, 3.0]] * spec.d, float)
    checks: dict[str, dict] = {}

    def record(name, err, applicable=True, note=None):
        c = checks.setdefault(name, {"max_discrepancy": 0.0, "probes": 0, "applicable": applicable})
        c["probes"] += 1
        c["max_discrepancy"] = max(c["max_discrepancy"], float(err))
        if note:
            c["note"] = note

    for _ in range(probes):
        z = box[:, 0] + rng.random(spec.d) * (box[:, 1] - box[:, 0])
        p = rng.normal(size=spec.d)
        p *= p_radius * rng.random() / max(np.linalg.norm(p), 1e-12)
        w = _random_simplex(rng, spec.D)
        H = reduced_hamiltonian(spec, z, p, settings)
        record("hamiltonian_vs_perron", abs(H.value - perron_hamiltonian(spec, z, p)))
        # velocities from random momenta keep the probes inside the cone
        p2 = rng.normal(size=spec.d) * 0.5
        beta_s = _hs_grad(spec, z, p2, w)
        ls = slow_lagrangian(spec, z, beta_s, w, settings)
        ent = slow_lagrangian_entropy(spec, z, beta_s, w, settings)
        record("slow_lagrangian_vs_entropy", abs(ls.value - ent.value))
        beta = H.grad_p
        sup = reduced_lagrangian(spec, z, beta, settings)
        inf = reduced_lagrangian_inf_w(spec, z, beta, settings)
        record("reduced_lagrangian_sup_vs_inf", abs(sup.value - inf.value))
        dv = dv_rate(spec, z, w, settings).value
        if spec.D > 1 and is_reversible(spec, z, settings):
            record("dv_vs_chen", abs(dv - chen_rate(spec, z, w, settings)))
        else:
            checks.setdefault("dv_vs_chen", {"max_discrepancy": None, "probes": 0, "applicable": False,
                                             "note": "switch rates not reversible; Chen form inapplicable"})
        record("dv_vs_flow", abs(dv - flow_rate_representation(spec, z, w, settings)[0]))
        if spec.params is not None:
            record("numeric_vs_closed_hamiltonian",
                   abs(H.value - genetic_hamiltonian_closed(spec.params, z, p)))
    for c in checks.values():
        c["passed"] = (not c["applicable"]) or c["max_discrepancy"] <= tol
    return {"probes": probes, "tolerance": tol, "checks": checks,
            "verdict": {"passed": all(c["passed"] for c in checks.values())}}


def _hs_grad(spec, z, p, w):
    lam = spec.rates(z)
    e = np.exp(spec.stoich @ p)
    return np.einsum("j,js,s,sd->d", w, lam, e, spec.stoich.astype(float))


# ---------------------------------------------------------------------------
# convexity / concavity


def convexity_suite(spec: ModelSpec, probes: int, seed: int, box=None, p_radius: float = 3.0,
                    slack: float = 1e-9, settings: Settings = DEFAULTS) -> dict:
    """Midpoint convexity of ``H`` in ``p`` and concavity of ``hs - S`` in ``w``."""
    rng = np.random.default_rng(derive_seed(seed, 11))
    box = np.asarray(box if box is not None else [[0.0, 5.0]] * spec.d, float)
    z = box[:, 0] + rng.random((probes, spec.d)) * (box[:, 1] - box[:, 0])

    def ball(m):
        v = rng.normal(size=(m, spec.d))
        return v * (p_radius * rng.random((m, 1)) ** (1 / spec.d) / np.linalg.norm(v, axis=1, keepdims=True))

    p1, p2 = ball(probes), ball(probes)
    Hs = [_reduced_H_batch(spec, z, p, settings=settings).value for p in (p1, p2, 0.5 * (p1 + p2))]
    conv_gap = Hs[2] - 0.5 * (Hs[0] + Hs[1])
    w1 = np.stack([_random_simplex(rng, spec.D, 0.0) for _ in range(probes)])
    w2 = np.stack([_random_simplex(rng, spec.D, 0.0) for _ in range(probes)])
    pw = ball(probes)

    def h(w):
        out = np.empty(probes)
        for k in range(probes):
            out[k] = hs(spec, z[k], pw[k], w[k]) - _fast(spec, z[k], w[k], settings)
        return out

    conc_gap = 0.5 * (h(w1) + h(w2)) - h(0.5 * (w1 + w2))
    verdict = {
        "max_convexity_violation": float(max(conv_gap.max(), 0.0)),
        "max_concavity_violation": float(max(conc_gap.max(), 0.0)),
        "slack": slack,
    }
    verdict["passed"] = bool(conv_gap.max() <= slack and conc_gap.max() <= slack)
    return {"probes": probes, "verdict": verdict}


def _fast(spec, z, w, settings):
    if spec.D == 1:
        return 0.0
    try:
        return chen_rate(spec, z, w, settings)
    except ReversibilityError:
        return dv_rate(spec, z, w, settings).value


# ---------------------------------------------------------------------------
# genetic-switch identities


def zero_momentum_check(params, samples: int, seed: int, box=((0.0, 5.0), (0.0, 5.0)),
                        tol: float = 1e-10) -> dict:
    """``H(z, 0)`` and the WKB Hamiltonian at ``p = 0`` on random states."""
    spec = build_genetic_switch(params)
    rng = np.random.default_rng(derive_seed(seed, 13))
    box = np.asarray(box, float)
    z = box[:, 0] + rng.random((samples, 2)) * (box[:, 1] - box[:, 0])
    H = _reduced_H_batch(spec, z, np.zeros((samples, 2))).value
    Hw = wkb_hamiltonian(spec.params, z, np.zeros((samples, 2)))
    verdict = {"max_H": float(np.abs(H).max()), "max_wkb": float(np.abs(Hw).max()), "tol": tol}
    verdict["passed"] = bool(verdict["max_H"] <= tol and verdict["max_wkb"] <= tol)
    return {"samples": samples, "verdict": verdict}


def closed_form_check(params, samples: int, seed: int, p_radius: float = 3.0, tol: float = 1e-8) -> dict:
    """Numeric ``sup_w`` against the closed-form Hamiltonian and weight."""
    from .hamiltonians import genetic_switch_weight

    spec = build_genetic_switch(params)
    rng = np.random.default_rng(derive_seed(seed, 17))
    z = rng.random((samples, 2)) * 5.0
    v = rng.normal(size=(samples, 2))
    p = v * (p_radius * np.sqrt(rng.random((samples, 1))) / np.linalg.norm(v, axis=1, keepdims=True))
    r = _reduced_H_batch(spec, z, p)
    Hc = genetic_hamiltonian_closed(spec.params, z, p)
    s = genetic_switch_weight(spec.params, z, p)
    verdict = {"max_H_error": float(np.abs(r.value - Hc).max()),
               "max_weight_error": float(np.abs(r.w[:, 1] - s).max()), "tol": tol}
    verdict["passed"] = bool(verdict["max_H_error"] <= tol and verdict["max_weight_error"] <= tol)
    return {"samples": samples, "verdict": verdict}


def meanfield_consistency_check(params, points, h: float = 1e-4) -> dict:
    """Envelope gradient at ``p = 0`` vs drift; FD Hessian diagonal vs ``D11, D22``."""
    spec = build_genetic_switch(params)
    P = spec.params
    pts = np.atleast_2d(np.asarray(points, float))
    g_err, h_err = 0.0, 0.0
    for z in pts:
        r = reduced_hamiltonian(spec, z, np.zeros(2))
        f, gg = P.f(z[1]), P.g(z[1])
        drift = np.array([f / (P.b * (f + gg)) - P.gamma * z[0], P.gamma * P.b * z[0] - z[1]])
        g_err = max(g_err, float(np.abs(r.grad_p - drift).max()))
        D = diffusion_coeffs(P, z)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            Hp = reduced_hamiltonian(spec, z, e).value
            Hm = reduced_hamiltonian(spec, z, -e).value
            h_err = max(h_err, abs((Hp + Hm) / h**2 - float(D[k])))
    verdict = {"max_gradient_error": g_err, "max_hessian_error": h_err}
    verdict["passed"] = bool(g_err <= 1e-8 and h_err <= 1e-5)
    return {"points": pts.tolist(), "verdict": verdict}


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


__all__ = [
    "EstimateWithCI", "RateLadder", "occupation_rate_theory", "occupation_ldp_estimate",
    "langevin_noise_compare", "lln_check", "duality_audit", "convexity_suite",
    "zero_momentum_check", "closed_form_check", "meanfield_consistency_check",
]
