"""Stochastic simulation of the coupled process and its deterministic limits.

* ``ssa_run`` / ``ssa_ensemble``  exact direct-method simulation
* ``occupation_measure``          per-cell fast-state time fractions
* ``meanfield_integrate``         RK4 on the averaged drift
* ``langevin_run``                Euler-Maruyama for the chemical Langevin SDE
* ``fixed_points``                multi-start Newton on the averaged drift
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .hamiltonians import _params, diffusion_coeffs, meanfield_drift
from .model import ModelSpec, stationary_weights
from .rng import ReplicaStreams

log = logging.getLogger(__name__)

DEFAULT_EVENT_CAP = 10**8


class SimulationError(RuntimeError):
    pass


@dataclass
class TrajectoryRecord:
    n: int
    T: float
    times: np.ndarray
    z: np.ndarray
    xi: np.ndarray
    channels: np.ndarray
    truncated: bool = False

    @property
    def n_events(self) -> int:
        return len(self.times) - 1

    def state_at(self, t) -> tuple[np.ndarray, np.ndarray]:
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.z[k], self.xi[k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.z.shape[1]
        w.writerow(["time"] + [f"z{k + 1}" for k in range(d)] + ["xi", "channel"])
        for t, z, xi, ch in zip(self.times, self.z, self.xi, self.channels):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in z] + [int(xi), int(ch)])
        return buf.getvalue()

    def summary(self, S: int) -> dict:
        ch = self.channels[1:]
        return {
            "n": self.n,
            "T": self.T,
            "events": self.n_events,
            "reaction_events": int(np.sum((ch >= 0) & (ch < S))),
            "switch_events": int(np.sum(ch >= S)),
            "truncated": self.truncated,
        }


@dataclass
class OccupationDensity:
    edges: np.ndarray
    rows: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass
class EnsembleResult:
    """Grid snapshots and occupation tallies of many independent replicas."""

    grid: np.ndarray
    z: np.ndarray
    xi: np.ndarray
    occupation: np.ndarray | None
    events: np.ndarray
    truncated: np.ndarray


@dataclass
class MeanFieldPath:
    times: np.ndarray
    z: np.ndarray


@dataclass
class SDEPath:
    times: np.ndarray
    z: np.ndarray
    variant: str
    dt: float
    reflections: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _check_lattice(z0, n):
    counts = np.asarray(z0, dtype=float) * n
    X = np.rint(counts)
    if np.any(np.abs(counts - X) > 1e-9 * np.maximum(1.0, np.abs(counts))) or np.any(X < 0):
        raise ValueError(f"z0={z0} is not on the lattice N^d/{n}")
    return X.astype(np.int64)


def _simulate_chunk(spec: ModelSpec, n, X0, xi0, T, seed, replicas, grid, cells,
                    record_events, event_cap):
    R = len(replicas)
    d, S, D = spec.d, spec.S, spec.D
    streams = ReplicaStreams(seed, replicas)
    X = np.broadcast_to(X0, (R, d)).copy()
    if xi0 is None:
        w0 = stationary_weights(spec, X0 / n)
        u = streams.draw(np.arange(R), 1)[:, 0]
        xi = np.minimum(np.searchsorted(np.cumsum(w0), u, side="right"), D - 1)
    else:
        xi = np.broadcast_to(np.asarray(xi0, dtype=np.int64), (R,)).copy()
    t = np.zeros(R)
    events = np.zeros(R, dtype=np.int64)
    truncated = np.zeros(R, dtype=bool)
    active = np.ones(R, dtype=bool)

    G = 0 if grid is None else len(grid)
    snap_z = np.empty((R, G, d))
    snap_xi = np.empty((R, G), dtype=np.int64)
    next_g = np.zeros(R, dtype=np.int64)
    if cells:
        occ = np.zeros((R, cells, D))
        edges = np.linspace(0.0, T, cells + 1)
    else:
        occ = None
    ev_log = [(0.0, X[0] / n, int(xi[0]), -1)] if record_events else None
    stoich = spec.stoich
    rows = np.arange(R)

    while True:
        idx = rows[active]
        if idx.size == 0:
            break
        z = X[idx] / n
        lam = spec.rates(z)[np.arange(idx.size), xi[idx]]
        q = spec.switch_matrix(z)[np.arange(idx.size), xi[idx]]
        if np.any(lam < 0) or np.any(q < 0):
            bad = np.flatnonzero((lam < 0).any(-1) | (q < 0).any(-1))[0]
            raise SimulationError(f"negative rate at z={z[bad]}, xi={xi[idx][bad]}")
        rates = n * np.concatenate([lam, q], axis=1)
        a0 = rates.sum(axis=1)
        u = streams.draw(idx, 2)
        with np.errstate(divide="ignore"):
            tau = np.where(a0 > 0, -np.log1p(-u[:, 0]) / a0, np.inf)
        t_old = t[idx]
        t_new = t_old + tau
        t_end = np.minimum(t_new, T)

        if G:
            while True:
                gi = next_g[idx]
                due = gi < G
                # the current state holds on [t_old, t_new); past T it is final
                due[due] = (grid[gi[due]] < t_new[due]) | (t_new[due] >= T)
                if not np.any(due):
                    break
                sel = idx[due]
                snap_z[sel, next_g[sel]] = X[sel] / n
                snap_xi[sel, next_g[sel]] = xi[sel]
                next_g[sel] += 1
        if occ is not None:
            cur = t_old.copy()
            while True:
                todo = cur < t_end
                if not np.any(todo):
                    break
                c = np.minimum(np.searchsorted(edges, cur[todo], side="right") - 1, cells - 1)
                seg = np.minimum(t_end[todo], edges[c + 1])
                seg = np.where(seg <= cur[todo], t_end[todo], seg)
                occ[idx[todo], c, xi[idx[todo]]] += seg - cur[todo]
                cur[todo] = seg

        done = t_new >= T
        t[idx] = t_end
        if np.any(done):
            active[idx[done]] = False
        go = ~done
        if not np.any(go):
            continue
        gidx = idx[go]
        cum = np.cumsum(rates[go], axis=1)
        target = u[go, 1] * a0[go]
        ch = (cum <= target[:, None]).sum(axis=1)
        # guard against round-off selecting a zero-rate channel at the end
        last = (rates[go] > 0).shape[1] - 1 - np.argmax((rates[go] > 0)[:, ::-1], axis=1)
        ch = np.minimum(ch, last)
        is_rx = ch < S
        if np.any(is_rx):
            X[gidx[is_rx]] += stoich[ch[is_rx]]
        if np.any(~is_rx):
            xi[gidx[~is_rx]] = ch[~is_rx] - S
        events[gidx] += 1
        if record_events:
            ev_log.append((float(t_new[go][0]), X[0] / n, int(xi[0]), int(ch[0])))
        capped = events[gidx] >= event_cap
        if np.any(capped):
            truncated[gidx[capped]] = True
            active[gidx[capped]] = False
            log.warning("event cap %d reached; trajectory truncated", event_cap)
    if G:
        # snapshots at or after the final time come from the terminal state
        for r in range(R):
            if next_g[r] < G:
                snap_z[r, next_g[r]:] = X[r] / n
                snap_xi[r, next_g[r]:] = xi[r]
    if occ is not None:
        occ /= np.diff(edges)[:, None]
    return snap_z, snap_xi, occ, events, truncated, ev_log


def ssa_ensemble(spec: ModelSpec, n: int, z0, T: float, reps: int, seed: int, xi0=None,
                 grid=None, cells: int = 0, event_cap: int = DEFAULT_EVENT_CAP,
                 threads: int = 1, chunk: int = 20000, first_replica: int = 0) -> EnsembleResult:
    """Run ``reps`` independent replicas with the direct method.

    ``grid`` are snapshot times in ``[0, T]``; ``cells`` > 0 also records,
    per uniform time cell, the fraction of time spent in each fast state
    (rows sum to 1 unless the replica was truncated). ``xi0=None`` draws the initial
    fast state from the stationary law at ``z0``. Results depend only on
    ``(seed, replica index)``, never on ``threads`` or ``chunk``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    X0 = _check_lattice(z0, n)
    grid = None if grid is None else np.asarray(grid, dtype=float)
    ids = np.arange(first_replica, first_replica + reps)
    parts = [ids[i:i + chunk] for i in range(0, reps, chunk)]

    def run(part):
        return _simulate_chunk(spec, n, X0, xi0, T, seed, part, grid, cells, False, event_cap)

    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(run, parts))
    else:
        outs = [run(p) for p in parts]
    cat = lambda k: np.concatenate([o[k] for o in outs]) if outs[0][k] is not None else None  # noqa: E731
    return EnsembleResult(grid if grid is not None else np.zeros(0), cat(0), cat(1), cat(2),
                          cat(3), cat(4))


def ensemble_csv(ens: EnsembleResult) -> str:
    """One row per (replica, snapshot time); occupation tallies are not included."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    R, G, d = ens.z.shape
    w.writerow(["replica", "t"] + [f"z{k + 1}" for k in range(d)] + ["xi"])
    for r in range(R):
        for g in range(G):
            w.writerow([r, f"{ens.grid[g]:.17g}"] + [f"{v:.17g}" for v in ens.z[r, g]]
                       + [int(ens.xi[r, g])])
    return buf.getvalue()


def ssa_run(spec: ModelSpec, n: int, z0, xi0, T: float, seed: int,
            event_cap: int = DEFAULT_EVENT_CAP, replica: int = 0) -> TrajectoryRecord:
    """One exact trajectory of the coupled process over ``[0, T]``.

    Reactions fire at rates ``n lambda_i(z, xi)`` and move ``z`` by
    ``u_i / n``; the switch hops ``i -> j`` at rate ``n q_ij(z)``.
    ``xi0=None`` draws the initial fast state from the stationary law.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    X0 = _check_lattice(z0, n)
    _, _, _, _, trunc, ev = _simulate_chunk(spec, n, X0, xi0, T, seed, np.array([replica]),
                                            None, 0, True, event_cap)
    times = np.array([e[0] for e in ev])
    z = np.array([e[1] for e in ev])
    xi = np.array([e[2] for e in ev], dtype=np.int64)
    ch = np.array([e[3] for e in ev], dtype=np.int64)
    return TrajectoryRecord(n, float(T), times, z, xi, ch, bool(trunc[0]))


def occupation_measure(traj: TrajectoryRecord, cells: int, D: int | None = None) -> OccupationDensity:
    """Exact per-cell fraction of time spent in each fast state."""
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    D = int(traj.xi.max()) + 1 if D is None else D
    edges = np.linspace(0.0, traj.T, cells + 1)
    times = traj.times
    dt = np.diff(np.append(times, traj.T))
    rows = np.empty((cells, D))
    k = np.searchsorted(times, edges, side="right") - 1
    for j in range(D):
        inj = traj.xi == j
        cum = np.concatenate([[0.0], np.cumsum(dt * inj)])
        O = cum[k] + (edges - times[k]) * inj[k]
        rows[:, j] = np.diff(O) / np.diff(edges)
    return OccupationDensity(edges, rows)


def meanfield_integrate(spec: ModelSpec, z0, T: float, dt: float, drift=None) -> MeanFieldPath:
    """Classic RK4 on the averaged drift, clamped to the orthant."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    f = drift or (lambda z: meanfield_drift(spec, z))
    steps = max(1, int(np.ceil(T / dt - 1e-12)))
    h = T / steps
    z = np.array(z0, dtype=float)
    out = np.empty((steps + 1, z.size))
    out[0] = z
    for k in range(steps):
        k1 = f(z)
        k2 = f(np.maximum(z + 0.5 * h * k1, 0.0))
        k3 = f(np.maximum(z + 0.5 * h * k2, 0.0))
        k4 = f(np.maximum(z + h * k3, 0.0))
        z = np.maximum(z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0)
        if not np.all(np.isfinite(z)):
            raise SimulationError(f"non-finite state at step {k + 1} (t={(k + 1) * h:g})")
        out[k + 1] = z
    return MeanFieldPath(np.linspace(0.0, T, steps + 1), out)


def langevin_run(params, n: int, z0, T: float, dt: float, variant: str = "full", seed: int = 0,
                 reps: int = 1, noise: bool = True, first_replica: int = 0,
                 chunk: int = 20000) -> SDEPath:
    """Euler-Maruyama for the genetic-switch chemical Langevin equation.

    Four independent Gaussian increments per step drive transcription, mRNA
    decay, translation and protein decay. ``variant="naive"`` drops the
    switching-induced term ``2 f g / (b^2 (f+g)^3)`` from the transcription
    noise. Negative overshoots are reflected at 0 and counted per replica.
    Output ``z`` has shape ``(reps, steps + 1, 2)``.
    """
    if variant not in ("full", "naive"):
        raise ValueError("variant must be 'full' or 'naive'")
    if not dt > 0:
        raise ValueError("dt must be positive")
    params = _params(params)
    b, gamma = params.b, params.gamma
    steps = max(1, int(np.ceil(T / dt - 1e-12)))
    h = T / steps
    z0 = np.asarray(z0, dtype=float)
    drift0 = np.abs(_cle_drift(params, z0[None])[0]) * h
    if np.any(drift0 > np.maximum(np.abs(z0), 1e-12)):
        log.warning("dt=%g large relative to state scale: drift step %s vs z0 %s", h, drift0, z0)
    out = np.empty((reps, steps + 1, 2))
    refl = np.zeros(reps, dtype=np.int64)
    scale = 1.0 / np.sqrt(n)
    for start in range(0, reps, chunk):
        ids = np.arange(first_replica + start, first_replica + min(reps, start + chunk))
        m = ids.size
        streams = ReplicaStreams(seed, ids, block=256, kind="normal")
        z = np.broadcast_to(z0, (m, 2)).copy()
        out[start:start + m, 0] = z
        for k in range(steps):
            z1, z2 = z[:, 0], z[:, 1]
            f, g = params.f(z2), params.g(z2)
            tx = f / (b * (f + g))
            if variant == "full":
                tx_var = tx + 2.0 * f * g / (b * b * (f + g) ** 3)
            else:
                tx_var = tx
            mu = _cle_drift(params, z)
            znew = z + mu * h
            if noise:
                dB = streams.draw(np.arange(m), 4) * np.sqrt(h)
                znew[:, 0] += scale * (np.sqrt(tx_var) * dB[:, 0] - np.sqrt(gamma * z1) * dB[:, 1])
                znew[:, 1] += scale * (np.sqrt(gamma * b * z1) * dB[:, 2] - np.sqrt(z2) * dB[:, 3])
            neg = znew < 0
            if np.any(neg):
                refl[start:start + m] += neg.any(axis=1)
                znew = np.abs(znew)
            if not np.all(np.isfinite(znew)):
                bad = np.flatnonzero(~np.isfinite(znew).all(axis=1))[0]
                raise SimulationError(f"NaN in Langevin step {k + 1} for replica {ids[bad]}")
            z = znew
            out[start:start + m, k + 1] = z
    return SDEPath(np.linspace(0.0, T, steps + 1), out, variant, h, refl)


def _cle_drift(params, z):
    z1, z2 = np.maximum(z[:, 0], 0.0), np.maximum(z[:, 1], 0.0)
    f, g = params.f(z2), params.g(z2)
    return np.stack([f / (params.b * (f + g)) - params.gamma * z1,
                     params.gamma * params.b * z1 - z2], axis=1)


@dataclass
class FixedPoint:
    point: np.ndarray
    stability: str
    eigenvalues: np.ndarray
    residual: float


def drift_jacobian(spec: ModelSpec, z, h: float = 1e-6) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    J = np.empty((spec.d, spec.d))
    for k in range(spec.d):
        e = np.zeros(spec.d)
        e[k] = h * max(1.0, abs(z[k]))
        J[:, k] = (meanfield_drift(spec, z + e) - meanfield_drift(spec, z - e)) / (2 * e[k])
    return J


def _classify(eig) -> str:
    re = np.real(eig)
    if np.all(re < 0):
        return "stable"
    if np.all(re > 0):
        return "unstable"
    return "saddle"


def fixed_points(spec: ModelSpec, box, grid: int = 16, tol: float = 1e-12) -> list[FixedPoint]:
    """Zeros of the averaged drift inside ``box`` from a grid of root-finder starts.

    Midpoints between zeros already found are tried as extra starts, since
    saddles sit between stable points and have small basins.

    Returned in order of the first coordinate.
    """
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    span = hi - lo
    axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
    seeds = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    found: list[FixedPoint] = []

    def attempt(z0):
        sol = optimize.root(lambda x: meanfield_drift(spec, np.maximum(x, 0.0)), z0,
                            jac=lambda x: drift_jacobian(spec, np.maximum(x, 0.0)),
                            method="hybr", options={"xtol": 1e-14})
        z = np.maximum(sol.x, 0.0)
        F = meanfield_drift(spec, z)
        for _ in range(3):
            if not np.all(np.isfinite(F)) or np.linalg.norm(F) <= tol:
                break
            try:
                z = np.maximum(z - np.linalg.solve(drift_jacobian(spec, z), F), 0.0)
            except np.linalg.LinAlgError:
                break
            F = meanfield_drift(spec, z)
        res = float(np.linalg.norm(F))
        if not res <= 1e-10 or np.any(z < lo - 1e-9 * span) or np.any(z > hi + 1e-9 * span):
            return
        if any(np.linalg.norm(z - fp.point) <= 1e-6 for fp in found):
            return
        eig = np.linalg.eigvals(drift_jacobian(spec, z))
        found.append(FixedPoint(z, _classify(eig), eig, res))

    for z0 in seeds:
        attempt(z0)
    for i, j in [(i, j) for i in range(len(found)) for j in range(i + 1, len(found))]:
        attempt(0.5 * (found[i].point + found[j].point))
    found.sort(key=lambda fp: tuple(fp.point))
    return found


def point_names(fps: list[FixedPoint]) -> list[str]:
    """``stable1``, ``saddle1``, ``stable2``, ... numbered per type in list order."""
    counts: dict[str, int] = {}
    names = []
    for fp in fps:
        counts[fp.stability] = counts.get(fp.stability, 0) + 1
        names.append(f"{fp.stability}{counts[fp.stability]}")
    return names


def named_points(spec: ModelSpec, box, grid: int = 16) -> dict[str, np.ndarray]:
    """Fixed points keyed by :func:`point_names`; ``stable``/``saddle`` alias the first of each."""
    fps = fixed_points(spec, box, grid=grid)
    out = {}
    for name, fp in zip(point_names(fps), fps):
        out[name] = fp.point
        out.setdefault(fp.stability, fp.point)
    return out


def diffusion_matrix_check(params, z):
    """Convenience: genetic-switch ``(D11, D22)`` at ``z``."""
    return diffusion_coeffs(params, z)
