"""Action functionals on discrete paths and minimum-action transition paths.

Paths are polygons ``r_0 .. r_N`` with times ``t_0 .. t_N``. Interval ``k``
is evaluated at its midpoint with velocity ``(r_{k+1} - r_k) / dt_k``.

``minimize_action`` works in one of two parameterizations:

``geometric`` (default)
    minimizes ``sum_k ell(m_k, r_{k+1} - r_k)`` where
    ``ell(z, v) = sup {<p, v> : H(z, p) <= 0}`` is the local geometric action.
    It is 1-homogeneous in ``v`` so the total time drops out, which is what
    heteroclinic connections between fixed points need.
``fixed`` / ``optimized``
    minimizes ``sum_k dt_k L(m_k, beta_k)`` on a uniform time grid, with the
    total time either given or chosen by bounded scalar search.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize, minimize_scalar

from .hamiltonians import (DEFAULTS, Settings, _batch_reduced_lagrangian, _chen, _cone_depth,
                           _dv_solve, _kolmogorov_ok, _reduced_H_batch, genetic_hamiltonian_closed,
                           meanfield_drift, reduced_lagrangian, slow_lagrangian, wkb_hamiltonian)
from .model import GeneticSwitchParams, ModelSpec, build_genetic_switch, stationary_weights
from .simulate import meanfield_integrate

log = logging.getLogger(__name__)


class PathError(ValueError):
    pass


@dataclass
class PathGrid:
    times: np.ndarray
    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.times.ndim != 1 or self.times.size != self.points.shape[0]:
            raise PathError("times and points must have matching lengths")
        if self.times.size < 2 or np.any(np.diff(self.times) <= 0):
            raise PathError("times must be strictly increasing with at least two entries")
        if np.any(self.points < -1e-12):
            raise PathError("path leaves the nonnegative orthant")
        if self.weights is not None:
            self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
            if self.weights.shape[0] != self.times.size - 1:
                raise PathError("need one occupation row per interval")
            if np.any(self.weights < 0) or np.any(np.abs(self.weights.sum(1) - 1) > 1e-9):
                raise PathError("occupation rows must be probability vectors")

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.points[1:] + self.points[:-1])

    def velocities(self) -> np.ndarray:
        return np.diff(self.points, axis=0) / self.dt[:, None]

    @classmethod
    def uniform(cls, points, T: float, weights=None) -> "PathGrid":
        points = np.atleast_2d(points)
        return cls(np.linspace(0.0, T, points.shape[0]), points, weights)


@dataclass
class ActionReport:
    I_s: float
    I_f: float
    total: float
    contributions: np.ndarray
    infeasible: bool = False
    converged: bool = True
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["contributions"] = [float(c) for c in self.contributions]
        for k in ("I_s", "I_f", "total"):
            d[k] = float(d[k]) if np.isfinite(d[k]) else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o))


@dataclass
class MAMConfig:
    """Options for :func:`minimize_action`.

    ``time``: ``"geometric"``, ``"fixed"`` (uses ``T``) or ``"optimized"``
    (searches ``T`` in ``T_bracket``). ``init``: ``"line"``, ``"arc"``
    (line bent by ``bend`` times its length) or ``"flow"``.
    """

    nodes: int = 100
    max_iter: int = 40
    tol: float = 1e-9
    inner_iter: int = 200
    reparam: bool = True
    time: str = "geometric"
    T: float = 10.0
    T_bracket: tuple = (1.0, 50.0)
    init: str = "line"
    bend: float = 0.2
    fd_step: float = 1e-5
    h_tol: float = 1e-10

    def __post_init__(self):
        if self.nodes < 8:
            raise ValueError("MAMConfig.nodes must be >= 8")
        if self.time not in ("geometric", "fixed", "optimized"):
            raise ValueError(f"unknown time handling {self.time!r}")
        if self.init not in ("line", "arc", "flow"):
            raise ValueError(f"unknown initial path {self.init!r}")


# ---------------------------------------------------------------------------
# evaluation on given paths


def _fast_cost(spec, z, w, settings):
    q = spec.switch_matrix(z)
    if spec.D == 1:
        return 0.0
    if np.all(_kolmogorov_ok(q[None], settings.reversibility_rtol)):
        return float(_chen(q[None], np.asarray(w)[None])[0])
    return _dv_solve(q, np.asarray(w, float), settings).value


def rate_functional(spec: ModelSpec, path: PathGrid, settings: Settings = DEFAULTS) -> ActionReport:
    """Slow and fast costs of a path together with its occupation rows."""
    if path.weights is None:
        raise PathError("rate_functional needs occupation rows")
    mids, vel, dt = path.midpoints(), path.velocities(), path.dt
    slow = np.empty(len(dt))
    fast = np.empty(len(dt))
    ok = True
    for k in range(len(dt)):
        ls = slow_lagrangian(spec, mids[k], vel[k], path.weights[k], settings)
        slow[k] = dt[k] * ls.value
        fast[k] = dt[k] * _fast_cost(spec, mids[k], path.weights[k], settings)
        ok &= ls.converged
    contrib = slow + fast
    if not np.all(np.isfinite(contrib)):
        return ActionReport(np.inf, np.inf, np.inf, contrib, infeasible=True, converged=ok)
    return ActionReport(float(slow.sum()), float(fast.sum()), float(contrib.sum()), contrib,
                        converged=ok)


def _full_cone(spec, U_mask_cache, mask):
    key = mask.tobytes()
    if key not in U_mask_cache:
        U = spec.stoich[mask].astype(float)
        full = U.size > 0 and np.linalg.matrix_rank(U) == spec.d
        if full:
            depth = _cone_depth(U, np.zeros(spec.d))
            full = depth is not None and depth > 1e-12
        U_mask_cache[key] = full
    return U_mask_cache[key]


def _lagrangian_many(spec, z, beta, settings, p0=None):
    """``L`` at stacks of points; returns (values, momenta, weights, converged)."""
    z = np.atleast_2d(z)
    beta = np.atleast_2d(beta)
    N = beta.shape[0]
    masks = spec.rates(z).max(axis=-2) > 0
    cache: dict = {}
    interior = np.array([_full_cone(spec, cache, m) for m in masks])
    vals = np.empty(N)
    P = np.full((N, spec.d), np.nan)
    W = np.empty((N, spec.D))
    conv = np.ones(N, dtype=bool)
    if np.any(interior):
        idx = np.flatnonzero(interior)
        v, p, w, c, _ = _batch_reduced_lagrangian(spec, z[idx], beta[idx],
                                                  None if p0 is None else p0[idx],
                                                  settings=settings)
        vals[idx], P[idx], W[idx], conv[idx] = v, p, w, c
    for k in np.flatnonzero(~interior):
        r = reduced_lagrangian(spec, z[k], beta[k], settings)
        vals[k], conv[k] = r.value, r.converged
        if r.p_star is not None:
            P[k] = r.p_star
        W[k] = r.w_star if r.w_star is not None else stationary_weights(spec, z[k])
    return vals, P, W, conv


def _split_fast(spec, z, W, scale, settings):
    return float(sum(s * _fast_cost(spec, zk, wk, settings) for zk, wk, s in zip(z, W, scale)))


def reduced_action(spec: ModelSpec, path: PathGrid, settings: Settings = DEFAULTS) -> ActionReport:
    """``sum_k dt_k L(m_k, beta_k)`` with ``L`` the conjugate of the reduced Hamiltonian.

    ``I_f`` is the fast cost at the optimal occupation of each interval and
    ``I_s`` the remainder, so ``total = I_s + I_f``.
    """
    mids, vel, dt = path.midpoints(), path.velocities(), path.dt
    vals, _, W, conv = _lagrangian_many(spec, mids, vel, settings)
    contrib = dt * vals
    if not np.all(np.isfinite(contrib)):
        return ActionReport(np.inf, np.inf, np.inf, contrib, infeasible=True, converged=bool(conv.all()))
    total = float(contrib.sum())
    I_f = _split_fast(spec, mids, W, dt, settings)
    return ActionReport(total - I_f, I_f, total, contrib, converged=bool(conv.all()))


def optimal_rows(spec: ModelSpec, path: PathGrid, settings: Settings = DEFAULTS) -> np.ndarray:
    """Per-interval occupation rows attaining the reduced Lagrangian."""
    _, _, W, _ = _lagrangian_many(spec, path.midpoints(), path.velocities(), settings)
    return W


# ---------------------------------------------------------------------------
# local geometric action


@dataclass
class _Local:
    ell: np.ndarray
    p: np.ndarray
    mu: np.ndarray
    w: np.ndarray
    converged: np.ndarray


def geometric_local_action(spec: ModelSpec, z, v, settings: Settings = DEFAULTS, p0=None, mu0=None,
                           h_tol: float = 1e-10, mu_max: float = 1e10) -> _Local:
    """``ell(z, v) = sup{<p, v> : H(z, p) <= 0} = inf_{mu > 0} mu L(z, v / mu)``.

    Safeguarded Newton on ``log mu`` using ``d/dmu = -H(p*)`` and
    ``d2/dmu2 = beta' H_pp^{-1} beta / mu``; each step re-solves the inner
    Legendre problem from the previous momentum.

    Batched over rows of ``z`` and ``v``; a single point yields length-1 arrays.
    """
    z = np.atleast_2d(np.asarray(z, float))
    v = np.atleast_2d(np.asarray(v, float))
    N, d = v.shape
    vn = np.linalg.norm(v, axis=1)
    ell = np.zeros(N)
    P = np.zeros((N, d))
    MU = np.full(N, np.inf)
    W = stationary_weights(spec, z)
    conv = np.ones(N, dtype=bool)
    live = np.flatnonzero(vn > 0)
    if live.size == 0:
        return _Local(ell, P, MU, W, conv)
    zl, vl = z[live], v[live]
    if mu0 is None:
        drift = np.linalg.norm(meanfield_drift(spec, zl), axis=-1)
        mu = vn[live] / np.maximum(drift, 1e-3 * vn[live].max() + 1e-12)
    else:
        mu = np.where(np.isfinite(mu0[live]) & (mu0[live] > 0), mu0[live], 1.0).astype(float)
    p = np.zeros((live.size, d)) if p0 is None else np.nan_to_num(np.array(p0[live], float))
    s = np.log(mu)
    lo = np.full(live.size, -np.inf)
    hi = np.full(live.size, np.log(mu_max))
    done = np.zeros(live.size, dtype=bool)
    Lval = np.zeros(live.size)
    w = W[live].copy()
    Hval = np.zeros(live.size)
    for _ in range(100):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        m = np.exp(s[idx])
        beta = vl[idx] / m[:, None]
        val, pk, wk, _, hess = _batch_reduced_lagrangian(spec, zl[idx], beta, p[idx], w[idx],
                                                         settings)
        p[idx], w[idx], Lval[idx] = pk, wk, val
        H = (pk * beta).sum(-1) - val
        Hval[idx] = H
        # H inherits the inner gradient tolerance times |beta|
        scale = 1.0 + np.abs(beta).max(-1)
        ok = (np.abs(H) <= h_tol * scale) | (hi[idx] - lo[idx] < 1e-13)
        at_cap = (s[idx] >= hi[idx] - 1e-12) & (H < 0)
        done[idx[ok | at_cap]] = True
        # bracket: H > 0 means mu too small
        lo[idx] = np.where(H > 0, np.maximum(lo[idx], s[idx]), lo[idx])
        hi[idx] = np.where(H < 0, np.minimum(hi[idx], s[idx]), hi[idx])
        x = np.linalg.solve(hess, beta[..., None])[..., 0]
        curv = (beta * x).sum(-1) / m
        d1 = -m * H
        d2 = np.maximum(d1 + m * m * curv, 1e-300)
        step = np.clip(-d1 / d2, -3.0, 3.0)
        trial = s[idx] + step
        out = (trial <= lo[idx]) | (trial >= hi[idx])
        both = np.isfinite(lo[idx]) & np.isfinite(hi[idx])
        mid = 0.5 * (lo[idx] + hi[idx])
        trial = np.where(out & both, mid, trial)
        trial = np.where(out & ~both & (H > 0), s[idx] + 3.0, trial)
        trial = np.where(out & ~both & (H < 0), s[idx] - 3.0, trial)
        trial = np.minimum(trial, np.log(mu_max))
        s[idx] = np.where(done[idx], s[idx], trial)
    mu = np.exp(s)
    ell[live] = (p * vl).sum(-1) - mu * Hval
    P[live], MU[live], W[live] = p, mu, w
    conv[live] = done
    return _Local(ell, P, MU, W, conv)


def _hz(spec, z, p, w, settings, h):
    """Central differences of ``H`` in ``z`` at fixed ``p``; shape (N, d)."""
    N, d = z.shape
    steps = h * np.maximum(1.0, np.abs(z))
    zs = []
    for k in range(d):
        e = np.zeros((N, d))
        e[:, k] = steps[:, k]
        zs += [z + e, np.maximum(z - e, 0.0)]
    Z = np.concatenate(zs)
    r = _reduced_H_batch(spec, Z, np.tile(p, (2 * d, 1)), np.tile(w, (2 * d, 1)), settings)
    out = np.empty((N, d))
    for k in range(d):
        plus, minus = r.value[2 * k * N:(2 * k + 1) * N], r.value[(2 * k + 1) * N:(2 * k + 2) * N]
        dz = Z[2 * k * N:(2 * k + 1) * N, k] - Z[(2 * k + 1) * N:(2 * k + 2) * N, k]
        out[:, k] = (plus - minus) / dz
    return out


# ---------------------------------------------------------------------------
# path optimization


def _initial_path(spec, zA, zB, cfg: MAMConfig) -> np.ndarray:
    s = np.linspace(0.0, 1.0, cfg.nodes)[:, None]
    line = zA + s * (zB - zA)
    if cfg.init == "line":
        return line
    if cfg.init == "arc":
        dvec = zB - zA
        normal = np.zeros_like(dvec)
        normal[0], normal[1 % len(dvec)] = -dvec[1 % len(dvec)], dvec[0]
        bump = cfg.bend * np.sin(np.pi * s) * normal
        return np.maximum(line + bump, 0.0)
    # forward flow out of zA, reversed flow into zB, straight bridge between
    k = cfg.nodes // 3
    fwd = meanfield_integrate(spec, zA, 2.0, 2.0 / k).z[:k]
    bwd = meanfield_integrate(spec, zB, 2.0, 2.0 / k).z[:k][::-1]
    bridge = fwd[-1] + np.linspace(0, 1, cfg.nodes - 2 * k + 2)[1:-1, None] * (bwd[0] - fwd[-1])
    return _equal_arclength(np.vstack([fwd, bridge, bwd]), cfg.nodes)


def _equal_arclength(points, nodes):
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-14])
    points = points[keep]
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    if s[-1] == 0:
        return np.repeat(points[:1], nodes, axis=0)
    target = np.linspace(0.0, s[-1], nodes)
    if len(points) >= 4:
        out = CubicSpline(s / s[-1], points, axis=0)(target / s[-1])
    else:
        out = np.stack([np.interp(target, s, points[:, k]) for k in range(points.shape[1])], axis=1)
    out[0], out[-1] = points[0], points[-1]
    return np.maximum(out, 0.0)


class _GeometricObjective:
    def __init__(self, spec, zA, zB, cfg, settings):
        self.spec, self.zA, self.zB, self.cfg, self.settings = spec, zA, zB, cfg, settings
        self.p = None
        self.mu = None
        self.last = None

    def nodes(self, x):
        return np.vstack([self.zA, x.reshape(-1, self.spec.d), self.zB])

    def __call__(self, x):
        pts = self.nodes(x)
        mids = 0.5 * (pts[1:] + pts[:-1])
        v = np.diff(pts, axis=0)
        loc = geometric_local_action(self.spec, mids, v, self.settings, self.p, self.mu, self.cfg.h_tol)
        self.p, self.mu = loc.p, loc.mu
        self.last = loc
        Hz = np.zeros_like(mids)
        live = np.isfinite(loc.mu)
        if np.any(live):
            Hz[live] = _hz(self.spec, mids[live], loc.p[live], loc.w[live], self.settings,
                           self.cfg.fd_step)
        mu = np.where(live, loc.mu, 0.0)
        ell_z = -mu[:, None] * Hz
        g = np.zeros_like(pts)
        g[1:] += 0.5 * ell_z + loc.p
        g[:-1] += 0.5 * ell_z - loc.p
        return float(loc.ell.sum()), g[1:-1].ravel()


class _TimeObjective:
    def __init__(self, spec, zA, zB, T, cfg, settings):
        self.spec, self.zA, self.zB, self.cfg, self.settings = spec, zA, zB, cfg, settings
        self.dt = T / (cfg.nodes - 1)
        self.p = None
        self.last = None

    def nodes(self, x):
        return np.vstack([self.zA, x.reshape(-1, self.spec.d), self.zB])

    def __call__(self, x):
        pts = self.nodes(x)
        mids = 0.5 * (pts[1:] + pts[:-1])
        beta = np.diff(pts, axis=0) / self.dt
        vals, P, W, conv = _lagrangian_many(self.spec, mids, beta, self.settings, self.p)
        if not np.all(np.isfinite(vals)) or np.any(np.isnan(P)):
            return np.inf, np.zeros_like(x)
        self.p = P
        self.last = (vals, P, W, conv)
        Lz = -_hz(self.spec, mids, P, W, self.settings, self.cfg.fd_step)
        g = np.zeros_like(pts)
        g[1:] += self.dt * 0.5 * Lz + P
        g[:-1] += self.dt * 0.5 * Lz - P
        return float(self.dt * vals.sum()), g[1:-1].ravel()


def _descend(obj, pts, cfg, reparam):
    history = []
    best = (np.inf, pts)
    bounds = [(0.0, None)] * (pts[1:-1].size)
    converged = False
    for sweep in range(cfg.max_iter):
        res = minimize(obj, pts[1:-1].ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": cfg.inner_iter, "ftol": 1e-15, "gtol": 1e-11,
                                "maxcor": 20})
        pts = obj.nodes(res.x)
        val = float(res.fun)
        if val < best[0]:
            best = (val, pts)
        history.append(min(val, history[-1]) if history else val)
        if len(history) > 1 and history[-2] - history[-1] <= cfg.tol * max(1.0, abs(history[-1])):
            converged = True
            break
        if reparam:
            pts = _equal_arclength(pts, cfg.nodes)
    return best[1], best[0], history, converged


def minimize_action(spec: ModelSpec, zA, zB, cfg: MAMConfig | None = None,
                    settings: Settings = DEFAULTS, init_points=None):
    """Minimum-action path from ``zA`` to ``zB`` with endpoints pinned.

    Returns ``(path, report, momenta)``. ``momenta[k]`` is the maximizing
    momentum on interval ``k`` (between nodes ``k`` and ``k+1``). Nodes are
    kept in the closed orthant; nodes that end on a face are listed in
    ``report.info["boundary_nodes"]``.
    """
    cfg = cfg or MAMConfig()
    zA = np.asarray(zA, dtype=float)
    zB = np.asarray(zB, dtype=float)
    if np.any(zA < 0) or np.any(zB < 0):
        raise PathError("endpoints must lie in the nonnegative orthant")
    pts = _initial_path(spec, zA, zB, cfg) if init_points is None else np.asarray(init_points, float)
    if cfg.time == "geometric":
        obj = _GeometricObjective(spec, zA, zB, cfg, settings)
        pts, val, history, converged = _descend(obj, pts, cfg, cfg.reparam)
        obj(pts[1:-1].ravel())
        loc = obj.last
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        times = s / s[-1] if s[-1] > 0 else np.linspace(0, 1, len(s))
        path = PathGrid(times, pts)
        contrib = loc.ell
        mids = path.midpoints()
        I_f = _split_fast(spec, mids, loc.w, np.where(np.isfinite(loc.mu), loc.mu, 0.0), settings)
        phys = np.concatenate([[0.0], np.cumsum(np.where(np.isfinite(loc.mu), loc.mu, 0.0))])
        info = {"time": "geometric", "history": history, "physical_time": phys,
                "inner_converged": bool(loc.converged.all())}
        momenta = loc.p
        total = float(contrib.sum())
        converged = converged and bool(loc.converged.all())
    else:
        def solve_T(T, start):
            o = _TimeObjective(spec, zA, zB, T, cfg, settings)
            out = _descend(o, start, cfg, False)
            return o, out

        if cfg.time == "fixed":
            T = cfg.T
            obj, (pts, val, history, converged) = solve_T(T, pts)
        else:
            cache = {}

            def f(T):
                o, out = solve_T(T, pts)
                cache[T] = (o, out)
                return out[1]

            res = minimize_scalar(f, bounds=cfg.T_bracket, method="bounded",
                                  options={"xatol": 1e-3 * cfg.T_bracket[1]})
            T = float(res.x)
            obj, (pts, val, history, converged) = cache.get(T) or solve_T(T, pts)
        obj(pts[1:-1].ravel())
        vals, momenta, W, conv = obj.last
        path = PathGrid(np.linspace(0.0, T, cfg.nodes), pts)
        contrib = obj.dt * vals
        total = float(contrib.sum())
        I_f = _split_fast(spec, path.midpoints(), W, path.dt, settings)
        info = {"time": cfg.time, "T": T, "history": history, "inner_converged": bool(conv.all())}
        converged = converged and bool(conv.all())
    info["boundary_nodes"] = [int(k) for k in np.flatnonzero((pts[1:-1] <= 0).any(axis=1)) + 1]
    report = ActionReport(total - I_f, I_f, total, contrib, converged=converged, info=info)
    return path, report, momenta


# ---------------------------------------------------------------------------
# Hamilton-Jacobi residuals and output


def hj_residual(spec_or_params, path: PathGrid, momenta, which: str = "reduced") -> float:
    """Max ``|H(z_k, p_k)|`` (or the WKB Hamiltonian) along a path.

    ``momenta`` may be given per node or per interval; per-interval momenta
    are paired with interval midpoints.
    """
    momenta = np.atleast_2d(np.asarray(momenta, float))
    if momenta.shape[0] == path.points.shape[0]:
        z = path.points
    elif momenta.shape[0] == path.points.shape[0] - 1:
        z = path.midpoints()
    else:
        raise PathError("momenta must have one row per node or per interval")
    if which == "reduced":
        spec = spec_or_params
        if isinstance(spec, GeneticSwitchParams):
            spec = build_genetic_switch(spec)
        vals = _reduced_H_batch(spec, z, momenta).value
    elif which == "wkb":
        params = spec_or_params.params if isinstance(spec_or_params, ModelSpec) else spec_or_params
        if params is None:
            raise PathError("WKB Hamiltonian needs genetic-switch parameters")
        vals = wkb_hamiltonian(params, z, momenta)
    elif which == "closed":
        params = spec_or_params.params if isinstance(spec_or_params, ModelSpec) else spec_or_params
        vals = genetic_hamiltonian_closed(params, z, momenta)
    else:
        raise ValueError(f"unknown Hamiltonian {which!r}")
    return float(np.max(np.abs(vals)))


def path_csv(path: PathGrid, momenta=None, density=None) -> str:
    """CSV with one row per node; ``p*`` and ``density`` columns refer to the
    interval that starts at the node and are empty on the last row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = path.points.shape[1]
    head = ["t"] + [f"z{k + 1}" for k in range(d)]
    if momenta is not None:
        head += [f"p{k + 1}" for k in range(d)]
    if density is not None:
        head.append("density")
    w.writerow(head)
    for k, (t, z) in enumerate(zip(path.times, path.points)):
        row = [f"{t:.17g}"] + [f"{x:.17g}" for x in z]
        last = k == len(path.times) - 1
        if momenta is not None:
            row += [""] * d if last else [f"{x:.17g}" for x in momenta[k]]
        if density is not None:
            row.append("" if last else f"{density[k]:.17g}")
        w.writerow(row)
    return buf.getvalue()


__all__ = [
    "PathGrid", "ActionReport", "MAMConfig", "PathError", "rate_functional", "reduced_action",
    "optimal_rows", "geometric_local_action", "minimize_action", "hj_residual", "path_csv",
]
