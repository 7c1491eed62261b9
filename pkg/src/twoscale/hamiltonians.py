"""Hamiltonians, Lagrangians and their dual representations.

Notation: ``z`` slow state (length d), ``p`` momentum (length d), ``w`` a
probability vector over the D fast states, ``beta`` a slow velocity.

* ``hs``                  slow Hamiltonian averaged under ``w``
* ``dv_rate``             Donsker-Varadhan cost of fast occupation ``w``
* ``chen_rate``           its closed form for reversible switch rates
* ``reduced_hamiltonian`` ``sup_w [hs - S]`` with maximizer and gradient
* ``slow_lagrangian`` / ``slow_lagrangian_entropy``  two forms of ``L_s``
* ``reduced_lagrangian`` / ``reduced_lagrangian_inf_w``  two forms of ``L``
* ``flow_rate_representation``  primal (rate-matrix) form of ``S``

Batched helpers prefixed with ``_`` work on stacks of points and are what the
path optimizer calls; the public functions handle one point at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar

from .model import GeneticSwitchParams, ModelSpec, stationary_weights


@dataclass(frozen=True)
class Settings:
    """Solver tolerances shared by every inner optimization."""

    grad_tol: float = 1e-10
    max_iter: int = 200
    exp_cap: float = 700.0
    boundary_clamp: float = 1e-12
    reversibility_rtol: float = 1e-10


DEFAULTS = Settings()


def settings_with(**overrides) -> Settings:
    return replace(DEFAULTS, **{k: v for k, v in overrides.items() if v is not None})


class ReversibilityError(ValueError):
    """Raised by ``chen_rate`` when the switch matrix is not symmetrizable."""


@dataclass
class HamEval:
    value: float
    w_star: np.ndarray
    grad_p: np.ndarray
    converged: bool
    iterations: int


@dataclass
class RateResult:
    value: float
    sigma: np.ndarray
    converged: bool
    iterations: int

    def __iter__(self):
        return iter((self.value, self.sigma))


@dataclass
class LagrangianResult:
    value: float
    p_star: np.ndarray | None
    converged: bool
    iterations: int = 0
    w_star: np.ndarray | None = None
    attained: bool = True

    def __iter__(self):
        if self.w_star is None:
            return iter((self.value, self.p_star))
        return iter((self.value, self.p_star, self.w_star))


@dataclass
class EntropyResult:
    value: float
    mu_star: np.ndarray | None
    converged: bool
    iterations: int = 0

    def __iter__(self):
        return iter((self.value, self.mu_star))


@dataclass
class FlowBalancedRates:
    eta: np.ndarray
    psi: np.ndarray

    def balance_residual(self) -> float:
        flux = self.psi[:, None] * self.eta
        np.fill_diagonal(flux, 0.0)
        return float(np.abs(flux.sum(axis=1) - flux.sum(axis=0)).max())


# ---------------------------------------------------------------------------
# slow Hamiltonian


def _exponents(spec: ModelSpec, p, cap: float):
    p = np.asarray(p, dtype=float)
    arg = p @ spec.stoich.T
    overflow = np.any(arg > cap, axis=-1)
    return np.exp(np.minimum(arg, cap)), overflow


def _switch_gain(spec: ModelSpec, lam, e):
    """``c_j = sum_i lambda_ij (e^{<p,u_i>} - 1)`` per fast state."""
    return np.einsum("...js,...s->...j", lam, e - 1.0)


def hs(spec: ModelSpec, z, p, w, settings: Settings = DEFAULTS):
    """Slow Hamiltonian ``sum_i sum_j lambda_i(z,j) w_j (exp<p,u_i> - 1)``.

    Returns ``inf`` when an exponent exceeds the overflow cap.
    """
    e, overflow = _exponents(spec, p, settings.exp_cap)
    c = _switch_gain(spec, spec.rates(z), e)
    val = np.einsum("...j,...j->...", c, np.asarray(w, dtype=float))
    return np.where(overflow, np.inf, val) if np.ndim(val) else (np.inf if overflow else float(val))


# ---------------------------------------------------------------------------
# fast rate


def _clamp_simplex(w, eps):
    w = np.maximum(np.asarray(w, dtype=float), eps)
    return w / w.sum(axis=-1, keepdims=True)


def _dv_objective(sigma, w, q):
    diff = sigma[:, None] - sigma[None, :]
    a = w[:, None] * q * np.exp(diff)
    return -(a - w[:, None] * q).sum(), a


def _dv_solve(q, w, settings: Settings) -> RateResult:
    q = np.array(q, dtype=float)
    np.fill_diagonal(q, 0.0)
    w = _clamp_simplex(w, settings.boundary_clamp)
    D = w.size
    sigma = np.zeros(D)
    if D == 1:
        return RateResult(0.0, sigma, True, 0)
    val, a = _dv_objective(sigma, w, q)
    for it in range(settings.max_iter + 1):
        g = (a.sum(axis=0) - a.sum(axis=1))[:-1]
        if np.abs(g).max() <= settings.grad_tol:
            return RateResult(max(val, 0.0), sigma, True, it)
        if it == settings.max_iter:
            break
        sym = a + a.T
        lap = np.diag(sym.sum(axis=1)) - sym
        step = np.linalg.solve(lap[:-1, :-1], g)
        t = 1.0
        while True:
            trial = sigma.copy()
            trial[:-1] += t * step
            tval, ta = _dv_objective(trial, w, q)
            if tval >= val + 1e-4 * t * (g @ step) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            break
        sigma, val, a = trial, tval, ta
    return RateResult(max(val, 0.0), sigma, False, it)


def dv_rate(spec: ModelSpec, z, w, settings: Settings = DEFAULTS) -> RateResult:
    """Donsker-Varadhan rate ``sup_sigma -sum w_i q_ij (e^{s_i - s_j} - 1)``.

    Damped Newton on the concave objective with gauge ``sigma[-1] = 0``.
    Zero entries of ``w`` are clamped to ``boundary_clamp`` first.
    Non-convergence is reported through ``converged``; the value is then the
    best iterate, a lower bound.
    """
    return _dv_solve(spec.switch_matrix(z), w, settings)


def _kolmogorov_ok(q, rtol) -> np.ndarray:
    """Kolmogorov cycle criterion on every 3-cycle, batched over leading axes."""
    D = q.shape[-1]
    ok = np.ones(q.shape[:-2], dtype=bool)
    if D <= 2:
        return ok
    if D <= 6:
        cycles = list(combinations(range(D), 3))
    else:
        rng = np.random.default_rng(0)
        cycles = [tuple(rng.choice(D, 3, replace=False)) for _ in range(200)]
    for i, j, k in cycles:
        fwd = q[..., i, j] * q[..., j, k] * q[..., k, i]
        bwd = q[..., i, k] * q[..., k, j] * q[..., j, i]
        ok &= np.abs(fwd - bwd) <= rtol * np.maximum(np.abs(fwd), np.abs(bwd))
    return ok


def is_reversible(spec: ModelSpec, z, settings: Settings = DEFAULTS) -> bool:
    return bool(np.all(_kolmogorov_ok(spec.switch_matrix(z), settings.reversibility_rtol)))


def _chen(q, w):
    sq = np.sqrt(np.maximum(w, 0.0)[..., :, None] * q)
    diff = sq - np.swapaxes(sq, -1, -2)
    D = q.shape[-1]
    diff[..., np.arange(D), np.arange(D)] = 0.0
    return 0.5 * (diff**2).sum(axis=(-1, -2))


def chen_rate(spec: ModelSpec, z, w, settings: Settings = DEFAULTS, check: bool = True):
    """Closed form ``1/2 sum_i sum_{j!=i} (sqrt(w_i q_ij) - sqrt(w_j q_ji))^2``.

    Valid only for symmetrizable switch matrices; raises
    :class:`ReversibilityError` otherwise (use :func:`dv_rate`).
    """
    q = spec.switch_matrix(z)
    if check and not np.all(_kolmogorov_ok(q, settings.reversibility_rtol)):
        raise ReversibilityError("switch matrix fails the Kolmogorov cycle test; use dv_rate")
    val = _chen(q, np.asarray(w, dtype=float))
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# reduced Hamiltonian: sup over the simplex


def _chen_derivs(q, w):
    """Gradient and Hessian in ``w`` of the Chen form; batched (N, D)."""
    qsum = q.sum(axis=-1)
    K = np.sqrt(q * np.swapaxes(q, -1, -2))
    sw = np.sqrt(w)
    ratio = K * sw[:, None, :] / sw[:, :, None]
    grad = qsum - ratio.sum(axis=-1)
    hess = -0.5 * K / (sw[:, :, None] * sw[:, None, :])
    D = w.shape[-1]
    diag = 0.5 * (K * sw[:, None, :]).sum(axis=-1) / (w * sw)
    hess[:, np.arange(D), np.arange(D)] = diag
    return grad, hess


def _reduce(grad, hess):
    g = grad[:, :-1] - grad[:, -1:]
    h = (hess[:, :-1, :-1] - hess[:, :-1, -1:] - hess[:, -1:, :-1]
         + hess[:, -1:, -1:])
    return g, h


def _maximize_h_chen(c, q, w0, settings: Settings):
    """Newton ascent of ``c.w - S_chen(w)`` over the open simplex, batched."""
    N, D = c.shape
    w = _clamp_simplex(w0, 1e-9)
    converged = np.zeros(N, dtype=bool)
    iters = np.zeros(N, dtype=int)
    if D == 1:
        return np.ones((N, 1)), c[:, 0].copy(), np.ones(N, bool), iters

    val = (c * w).sum(-1) - _chen(q, w)
    scale = 1.0 + np.abs(c).max(-1) + q.sum(-1).max(-1)
    active = np.ones(N, dtype=bool)
    for it in range(settings.max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        wa = w[idx]
        gS, hS = _chen_derivs(q[idx], wa)
        g, h = _reduce(c[idx] - gS, -hS)
        with np.errstate(over="ignore", invalid="ignore"):
            step = np.linalg.solve(-h, g[..., None])[..., 0]
            decrement = (g * step).sum(-1)
        done = (np.abs(g).max(-1) <= settings.grad_tol * scale[idx]) | (decrement <= 1e-30 * scale[idx])
        converged[idx[done]] = True
        # a singular Hessian right at the simplex boundary: give up on that point
        done |= ~np.isfinite(step).all(-1) | ~np.isfinite(decrement)
        iters[idx] = it
        keep = ~done
        idx, wa, step, g = idx[keep], wa[keep], step[keep], g[keep]
        active[:] = False
        active[idx] = True
        if idx.size == 0:
            break
        full = np.concatenate([step, -step.sum(-1, keepdims=True)], axis=-1)
        # stay strictly inside: move at most 90% of the way to the boundary
        with np.errstate(divide="ignore", invalid="ignore"):
            lim = np.where(full < 0, -0.9 * wa / full, np.inf).min(-1)
        t = np.minimum(1.0, lim)
        base = val[idx]
        slope = (g * step).sum(-1)
        # in the quadratic regime the predicted gain is below round-off; take the step
        quad = (slope <= 1e-16 * scale[idx]) & (t >= 1.0)
        for _ in range(60):
            trial = wa + t[:, None] * full
            tval = (c[idx] * trial).sum(-1) - _chen(q[idx], trial)
            bad = (tval < base + 1e-4 * t * slope - 1e-15 * np.abs(base)) & ~quad
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        w[idx] = trial
        val[idx] = tval
        # no ascent possible at this precision: stop, converged if nearly stationary
        stall = bad & (t < 1e-14)
        if np.any(stall):
            active[idx[stall]] = False
            converged[idx[stall]] = np.abs(g[stall]).max(-1) <= 1e3 * settings.grad_tol * scale[idx[stall]]
    return w, val, converged, iters


def _s_and_grad_dv(q, w, settings):
    res = _dv_solve(q, w, settings)
    s = res.sigma
    grad = -(q * (np.exp(s[:, None] - s[None, :]) - 1.0)).sum(axis=1)
    return res.value, grad


def _maximize_h_dv(c, q, w0, settings: Settings):
    """Per-point ascent of ``c.w - S_dv(w)`` for non-reversible switch rates."""
    N, D = c.shape
    w_out = np.empty((N, D))
    vals = np.empty(N)
    conv = np.zeros(N, dtype=bool)
    iters = np.zeros(N, dtype=int)
    for n in range(N):
        w = _clamp_simplex(w0[n], 1e-9)

        def red_grad(w_):
            s, gS = _s_and_grad_dv(q[n], w_, settings)
            g = c[n] - gS
            return (c[n] @ w_ - s), g[:-1] - g[-1]

        val, g = red_grad(w)
        for it in range(settings.max_iter):
            iters[n] = it
            if np.abs(g).max() <= 1e-9:
                conv[n] = True
                break
            # finite-difference Hessian of the reduced gradient
            hstep = 1e-6
            H = np.empty((D - 1, D - 1))
            for k in range(D - 1):
                e = np.zeros(D)
                e[k], e[-1] = hstep, -hstep
                H[:, k] = (red_grad(w + e)[1] - red_grad(w - e)[1]) / (2 * hstep)
            H = 0.5 * (H + H.T)
            try:
                step = np.linalg.solve(-H, g)
            except np.linalg.LinAlgError:
                step = g
            full = np.append(step, -step.sum())
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.where(full < 0, -0.9 * w / full, np.inf).min()
            t = min(1.0, lim)
            for _ in range(60):
                trial = w + t * full
                tval, tg = red_grad(trial)
                if (tval >= val + 1e-4 * t * (g @ step) - 1e-15 * abs(val)
                        or np.abs(tg).max() <= (1 - 1e-4 * t) * np.abs(g).max()):
                    break
                t *= 0.5
            if t < 1e-14:
                break
            w, val, g = trial, tval, tg
        w_out[n], vals[n] = w, val
    return w_out, vals, conv, iters


@dataclass
class _BatchH:
    value: np.ndarray
    w: np.ndarray
    grad_p: np.ndarray
    hess_p: np.ndarray | None
    converged: np.ndarray
    iterations: np.ndarray


def _reduced_H_batch(spec: ModelSpec, z, p, w0=None, settings: Settings = DEFAULTS,
                     hessian: bool = False, reversible: bool | None = None) -> _BatchH:
    """Reduced Hamiltonian on stacks ``z, p`` of shape (N, d)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    N = max(z.shape[0], p.shape[0])
    z = np.broadcast_to(z, (N, spec.d))
    p = np.broadcast_to(p, (N, spec.d))
    lam = spec.rates(z)
    q = spec.switch_matrix(z)
    e, overflow = _exponents(spec, p, settings.exp_cap)
    c = _switch_gain(spec, lam, e)
    if w0 is None:
        w0 = stationary_weights(spec, z)
    w0 = np.broadcast_to(np.asarray(w0, dtype=float), (N, spec.D))
    if reversible is None:
        reversible = bool(np.all(_kolmogorov_ok(q, settings.reversibility_rtol)))
    if reversible:
        w, val, conv, iters = _maximize_h_chen(c, q, w0, settings)
    else:
        w, val, conv, iters = _maximize_h_dv(c, q, w0, settings)
    val = np.where(overflow, np.inf, val)
    # dc_j/dp = sum_i lambda_ij e_i u_i
    dc = np.einsum("njs,ns,sd->njd", lam, e, spec.stoich)
    grad_p = np.einsum("nj,njd->nd", w, dc)
    hess = None
    if hessian:
        A = np.einsum("nj,njs,ns,sd,sk->ndk", w, lam, e, spec.stoich, spec.stoich)
        if spec.D > 1:
            if reversible:
                gS, hS = _chen_derivs(q, w)
                _, hr = _reduce(gS, -hS)
            else:
                hr = np.stack([_fd_reduced_hessian(c[n], q[n], w[n], settings) for n in range(N)])
            C = dc[:, :-1, :] - dc[:, -1:, :]
            A = A + np.einsum("nkd,nkl->ndl", C, np.linalg.solve(-hr, C))
        hess = A
    return _BatchH(val, w, grad_p, hess, conv, iters)


def _fd_reduced_hessian(c, q, w, settings):
    D = w.size
    hstep = 1e-6
    H = np.empty((D - 1, D - 1))

    def red_grad(w_):
        _, gS = _s_and_grad_dv(q, w_, settings)
        g = c - gS
        return g[:-1] - g[-1]

    for k in range(D - 1):
        e = np.zeros(D)
        e[k], e[-1] = hstep, -hstep
        H[:, k] = (red_grad(w + e) - red_grad(w - e)) / (2 * hstep)
    return 0.5 * (H + H.T)


def reduced_hamiltonian(spec: ModelSpec, z, p, settings: Settings = DEFAULTS, w0=None) -> HamEval:
    """``H(z, p) = sup_w [hs(z, p, w) - S(z, w)]`` by Newton ascent on the simplex.

    The fast rate uses the Chen form when the switch matrix is reversible and
    the Donsker-Varadhan form otherwise. The gradient in ``p`` comes from the
    envelope identity: it is ``d hs / dp`` at the maximizer.
    """
    r = _reduced_H_batch(spec, np.asarray(z, float)[None], np.asarray(p, float)[None],
                         None if w0 is None else np.asarray(w0, float)[None], settings)
    return HamEval(float(r.value[0]), r.w[0], r.grad_p[0], bool(r.converged[0]), int(r.iterations[0]))


def perron_hamiltonian(spec: ModelSpec, z, p) -> float:
    """Principal eigenvalue of ``Q(z) + diag(c(p))``.

    The Donsker-Varadhan variational formula makes this equal to the reduced
    Hamiltonian; used as an independent check of the simplex maximizer.
    """
    e, _ = _exponents(spec, p, DEFAULTS.exp_cap)
    c = _switch_gain(spec, spec.rates(z), e)
    M = spec.generator(z) + np.diag(c)
    return float(np.max(np.linalg.eigvals(M).real))


# ---------------------------------------------------------------------------
# genetic switch closed forms


def _params(obj) -> GeneticSwitchParams:
    if isinstance(obj, GeneticSwitchParams):
        return obj
    params = getattr(obj, "params", None)
    if isinstance(params, GeneticSwitchParams):
        return params
    raise TypeError("expected GeneticSwitchParams or a genetic-switch ModelSpec")


def _fg(params, z):
    z2 = np.asarray(z, dtype=float)[..., 1]
    return params.f(z2), params.g(z2)


def _A(params, z, p):
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    z1, z2 = np.maximum(z[..., 0], 0.0), np.maximum(z[..., 1], 0.0)
    p1, p2 = p[..., 0], p[..., 1]
    g, b = params.gamma, params.b
    return g * z1 * np.expm1(-p1) + g * b * z1 * np.expm1(p2) + z2 * np.expm1(-p2)


def genetic_switch_weight(params, z, p):
    """Active-state maximizer ``s`` of the closed-form Hamiltonian."""
    params = _params(params)
    f, g = _fg(params, z)
    p1 = np.asarray(p, dtype=float)[..., 0]
    s1 = (np.expm1(p1) / params.b + f - g) / np.sqrt(f * g)
    return 0.5 + s1 / (2.0 * np.sqrt(s1 * s1 + 4.0))


def genetic_hamiltonian_closed(params, z, p):
    """Closed-form reduced Hamiltonian of the genetic switch.

    ``H = s (e^{p1}-1)/b - (sqrt((1-s) f) - sqrt(s g))^2 + A(z, p)``.
    """
    params = _params(params)
    f, g = _fg(params, z)
    s = genetic_switch_weight(params, z, p)
    p1 = np.asarray(p, dtype=float)[..., 0]
    val = s * np.expm1(p1) / params.b - (np.sqrt((1 - s) * f) - np.sqrt(s * g)) ** 2 + _A(params, z, p)
    return float(val) if np.ndim(val) == 0 else val


def wkb_hamiltonian(params, z, p):
    """Hamiltonian from the WKB ansatz, ``A + [A + (e^{p1}-1)/b][f - A] / g``."""
    params = _params(params)
    f, g = _fg(params, z)
    A = _A(params, z, p)
    p1 = np.asarray(p, dtype=float)[..., 0]
    val = A + (A + np.expm1(p1) / params.b) * (f - A) / g
    return float(val) if np.ndim(val) == 0 else val


def meanfield_drift(spec: ModelSpec, z) -> np.ndarray:
    """Averaged drift ``sum_i lambda_bar_i(z) u_i`` under the stationary fast law."""
    z = np.asarray(z, dtype=float)
    w = stationary_weights(spec, z)
    return spec.averaged_rates(z, w) @ spec.stoich


def diffusion_coeffs(params, z):
    """Diagonal second derivatives of the genetic-switch ``H`` at ``p = 0``."""
    params = _params(params)
    z = np.asarray(z, dtype=float)
    f, g = _fg(params, z)
    z1, z2 = z[..., 0], z[..., 1]
    binv = 1.0 / params.b
    D11 = binv * f / (f + g) + 2 * binv**2 * f * g / (f + g) ** 3 + params.gamma * z1
    D22 = params.gamma * params.b * z1 + z2
    return D11, D22


# ---------------------------------------------------------------------------
# Lagrangians


def _cone_depth(U, beta):
    """Max ``t <= 1`` with ``beta = sum mu_i u_i``, ``mu_i >= t``; None if infeasible.

    ``t > 0`` means ``beta`` lies in the relative interior of the cone.
    """
    S = U.shape[0]
    if S == 0:
        return (1.0 if np.allclose(beta, 0) else None)
    # variables (mu, t); maximize t
    cost = np.zeros(S + 1)
    cost[-1] = -1.0
    A_eq = np.hstack([U.T, np.zeros((U.shape[1], 1))])
    A_ub = np.hstack([-np.eye(S), np.ones((S, 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(S), A_eq=A_eq, b_eq=beta,
                  bounds=[(0, None)] * S + [(None, 1.0)], method="highs")
    if res.status != 0:
        return None
    return float(res.x[-1])


def _legendre_newton(beta, lam_bar, U, p0, settings):
    """Maximize ``<p,beta> - sum lam_i (e^{<p,u_i>} - 1)``; returns (val, p, ok, it)."""
    p = np.zeros(U.shape[1]) if p0 is None else np.array(p0, dtype=float)

    def obj(p_):
        ex = np.exp(np.minimum(U @ p_, settings.exp_cap))
        return p_ @ beta - lam_bar @ (ex - 1.0), ex

    val, ex = obj(p)
    for it in range(settings.max_iter):
        grad = beta - U.T @ (lam_bar * ex)
        if np.abs(grad).max() <= settings.grad_tol * (1.0 + np.abs(beta).max()):
            return val, p, True, it
        hess = (U.T * (lam_bar * ex)) @ U
        step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            tval, tex = obj(p + t * step)
            if tval >= val + 1e-4 * t * (grad @ step) - 1e-15 * abs(val) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            return val, p, False, it
        p, val, ex = p + t * step, tval, tex
    return val, p, False, settings.max_iter


def slow_lagrangian(spec: ModelSpec, z, beta, w, settings: Settings = DEFAULTS,
                    p0=None) -> LagrangianResult:
    """``L_s(z, beta, w) = sup_p <p, beta> - hs(z, p, w)``.

    Outside the cone spanned by reactions active under ``w`` the value is
    ``inf``. On the cone's boundary the supremum is not attained; the value
    then comes from the entropy representation and ``attained`` is False.
    """
    beta = np.asarray(beta, dtype=float)
    lam_bar = spec.averaged_rates(z, w)
    act = lam_bar > 0
    U = spec.stoich[act].astype(float)
    depth = _cone_depth(U, beta)
    if depth is None:
        return LagrangianResult(np.inf, None, True)
    if depth <= 1e-12:
        ent = slow_lagrangian_entropy(spec, z, beta, w, settings)
        return LagrangianResult(ent.value, None, ent.converged, ent.iterations, attained=False)
    val, p, ok, it = _legendre_newton(beta, lam_bar[act], U, p0, settings)
    # reactions gated off carry no cost but contribute lambda_bar = 0 anyway
    return LagrangianResult(float(val), p, ok, it)


def slow_lagrangian_entropy(spec: ModelSpec, z, beta, w, settings: Settings = DEFAULTS) -> EntropyResult:
    """``inf_{mu >= 0, sum mu_i u_i = beta} sum (lam_i - mu_i + mu_i log(mu_i/lam_i))``.

    Infeasible-start Newton on the KKT system of the equality-constrained
    convex program; ``lam`` is the ``w``-averaged propensity.
    """
    beta = np.asarray(beta, dtype=float)
    lam_bar = spec.averaged_rates(z, w)
    act = lam_bar > 0
    lam = lam_bar[act]
    U = spec.stoich[act].astype(float)
    if _cone_depth(U, beta) is None:
        return EntropyResult(np.inf, None, True)
    mu_full = np.zeros(spec.S)
    if lam.size == 0:
        return EntropyResult(0.0, mu_full, True)
    # orthonormal rows for the constraint U^T mu = beta
    P, sv, Vt = np.linalg.svd(U.T, full_matrices=False)
    r = int(np.sum(sv > 1e-12 * sv.max()))
    A = Vt[:r]
    b = (P[:, :r].T @ beta) / sv[:r]
    mu = lam.copy()
    m = mu.size

    def residual(mu_, nu_):
        rd = np.log(mu_ / lam) + A.T @ nu_
        rp = A @ mu_ - b
        return np.concatenate([rd, rp])

    nu = np.zeros(r)
    converged = False
    it = 0
    for it in range(1, 4 * settings.max_iter + 1):
        res = residual(mu, nu)
        if np.abs(res).max() <= settings.grad_tol:
            converged = True
            break
        K = np.zeros((m + r, m + r))
        K[:m, :m] = np.diag(1.0 / mu)
        K[:m, m:] = A.T
        K[m:, :m] = A
        delta = np.linalg.solve(K, -res)
        dmu, dnu = delta[:m], delta[m:]
        with np.errstate(divide="ignore", invalid="ignore"):
            lim = np.where(dmu < 0, -0.99 * mu / dmu, np.inf).min()
        t = min(1.0, lim)
        norm0 = np.linalg.norm(res)
        while t > 1e-14:
            if np.linalg.norm(residual(mu + t * dmu, nu + t * dnu)) <= (1 - 0.01 * t) * norm0:
                break
            t *= 0.5
        mu, nu = mu + t * dmu, nu + t * dnu
    val = float(np.sum(lam - mu + mu * np.log(mu / lam)))
    mu_full[act] = mu
    return EntropyResult(val, mu_full, converged, it)


def _active_all_states(spec, z):
    return spec.rates(z).max(axis=-2) > 0


def _batch_reduced_lagrangian(spec, z, beta, p0=None, w0=None, settings=DEFAULTS, reversible=None):
    """Damped Newton for ``sup_p <p,beta> - H(z,p)`` on stacks of points.

    Assumes every ``beta`` is interior to the cone (no check).
    Returns (value, p, w, converged, hess_p).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    N, d = beta.shape
    z = np.broadcast_to(z, (N, d))
    p = np.zeros((N, d)) if p0 is None else np.array(p0, dtype=float)
    r = _reduced_H_batch(spec, z, p, w0, settings, hessian=True, reversible=reversible)
    val = (p * beta).sum(-1) - r.value
    conv = np.zeros(N, dtype=bool)
    scale = 1.0 + np.abs(beta).max(-1)
    idx = np.arange(N)
    w = r.w.copy()
    hess = r.hess_p.copy()
    state = r
    stalled = np.zeros(0, dtype=bool)
    for it in range(settings.max_iter):
        grad = beta[idx] - state.grad_p
        gmax = np.abs(grad).max(-1)
        done = gmax <= settings.grad_tol * scale[idx]
        conv[idx[done]] = True
        if stalled.size:
            # line search found no ascent: accept only if close to stationary
            conv[idx[stalled]] = gmax[stalled] <= 1e3 * settings.grad_tol * scale[idx[stalled]]
            done |= stalled
        keep = ~done
        if not np.any(keep):
            break
        idx = idx[keep]
        grad = grad[keep]
        H = state.hess_p[keep]
        step = np.linalg.solve(H, grad[..., None])[..., 0]
        t = np.ones(idx.size)
        slope = (grad * step).sum(-1)
        for _ in range(50):
            trial = p[idx] + t[:, None] * step
            tr = _reduced_H_batch(spec, z[idx], trial, w[idx], settings, hessian=True,
                                  reversible=reversible)
            tval = (trial * beta[idx]).sum(-1) - tr.value
            # near the optimum the objective is flat to round-off; fall back
            # to requiring a smaller gradient
            tgrad = np.abs(beta[idx] - tr.grad_p).max(-1)
            bad = ~((tval >= val[idx] + 1e-4 * t * slope - 1e-14 * np.abs(val[idx]))
                    | (tgrad <= (1 - 1e-4 * t) * np.abs(grad).max(-1)))
            if not np.any(bad) or t.min() < 1e-10:
                break
            t = np.where(bad, 0.5 * t, t)
        stalled = bad & (t < 1e-10)
        p[idx] = trial
        val[idx] = tval
        w[idx] = tr.w
        hess[idx] = tr.hess_p
        state = tr
    return val, p, w, conv, hess


def reduced_lagrangian(spec: ModelSpec, z, beta, settings: Settings = DEFAULTS, p0=None) -> LagrangianResult:
    """``L(z, beta) = sup_p <p, beta> - H(z, p)`` with ``H`` the reduced Hamiltonian."""
    beta = np.asarray(beta, dtype=float)
    z = np.asarray(z, dtype=float)
    U = spec.stoich[_active_all_states(spec, z)].astype(float)
    depth = _cone_depth(U, beta)
    if depth is None:
        return LagrangianResult(np.inf, None, True)
    if depth <= 1e-12:
        inf = reduced_lagrangian_inf_w(spec, z, beta, settings)
        return LagrangianResult(inf.value, None, inf.converged, w_star=inf.w_star, attained=False)
    val, p, w, conv, _ = _batch_reduced_lagrangian(spec, z[None], beta[None],
                                                   None if p0 is None else np.asarray(p0)[None],
                                                   settings=settings)
    return LagrangianResult(float(val[0]), p[0], bool(conv[0]), w_star=w[0])


def _fast_rate(spec, z, w, settings):
    if is_reversible(spec, z, settings):
        return chen_rate(spec, z, w, settings, check=False)
    return dv_rate(spec, z, w, settings).value


def reduced_lagrangian_inf_w(spec: ModelSpec, z, beta, settings: Settings = DEFAULTS) -> LagrangianResult:
    """``L(z, beta) = inf_w [L_s(z, beta, w) + S(z, w)]`` over the simplex."""
    beta = np.asarray(beta, dtype=float)
    z = np.asarray(z, dtype=float)
    D = spec.D

    def cost(w):
        ls = slow_lagrangian(spec, z, beta, w, settings)
        return ls.value + _fast_rate(spec, z, w, settings), ls

    if D == 1:
        val, ls = cost(np.ones(1))
        return LagrangianResult(val, ls.p_star, ls.converged, w_star=np.ones(1))
    if D == 2:
        res = minimize_scalar(lambda x: cost(np.array([1 - x, x]))[0], bounds=(1e-12, 1 - 1e-12),
                              method="bounded", options={"xatol": 1e-13, "maxiter": 500})
        w = np.array([1 - res.x, res.x])
        val, ls = cost(w)
        return LagrangianResult(val, ls.p_star, bool(res.success), res.nfev, w_star=w)

    def softmax(theta):
        x = np.append(theta, 0.0)
        x = np.exp(x - x.max())
        return x / x.sum()

    theta0 = np.log(np.maximum(stationary_weights(spec, z), 1e-300))
    theta0 = theta0[:-1] - theta0[-1]
    res = minimize(lambda th: cost(softmax(th))[0], theta0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000, "maxfev": 20000})
    w = softmax(res.x)
    val, ls = cost(w)
    return LagrangianResult(val, ls.p_star, bool(res.success), res.nfev, w_star=w)


def flow_rate_representation(spec: ModelSpec, z, w, settings: Settings = DEFAULTS):
    """Primal form of the fast rate.

    ``inf sum_i w_i sum_j (eta_ij log(eta_ij/q_ij) + q_ij - eta_ij)`` over
    positive ``eta`` whose probability flux under ``w`` balances at every
    state. Solved by infeasible-start Newton on the KKT system; independent
    of the dual ascent in :func:`dv_rate`.

    Returns ``(value, FlowBalancedRates, converged)``.
    """
    q = spec.switch_matrix(z)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("flow representation needs strictly positive w")
    w = w / w.sum()
    D = w.size
    pairs = [(i, j) for i in range(D) for j in range(D) if i != j]
    m = len(pairs)
    if m == 0:
        return 0.0, FlowBalancedRates(np.zeros((1, 1)), w), True
    qv = np.array([q[i, j] for i, j in pairs])
    wt = np.array([w[i] for i, _ in pairs])
    # balance rows: outflow - inflow at state k, last row dropped (redundant)
    A = np.zeros((D, m))
    for col, (i, j) in enumerate(pairs):
        A[i, col] += w[i]
        A[j, col] -= w[i]
    A = A[:-1]
    r = D - 1
    x = qv.copy()
    nu = np.zeros(r)

    def residual(x_, nu_):
        return np.concatenate([wt * np.log(x_ / qv) + A.T @ nu_, A @ x_])

    converged = False
    for _ in range(4 * settings.max_iter):
        res = residual(x, nu)
        if np.abs(res).max() <= settings.grad_tol:
            converged = True
            break
        K = np.zeros((m + r, m + r))
        K[:m, :m] = np.diag(wt / x)
        K[:m, m:] = A.T
        K[m:, :m] = A
        delta = np.linalg.solve(K, -res)
        dx, dnu = delta[:m], delta[m:]
        with np.errstate(divide="ignore", invalid="ignore"):
            lim = np.where(dx < 0, -0.99 * x / dx, np.inf).min()
        t = min(1.0, lim)
        norm0 = np.linalg.norm(res)
        while t > 1e-14:
            if np.linalg.norm(residual(x + t * dx, nu + t * dnu)) <= (1 - 0.01 * t) * norm0:
                break
            t *= 0.5
        x, nu = x + t * dx, nu + t * dnu
    value = float(np.sum(wt * (x * np.log(x / qv) + qv - x)))
    eta = np.zeros((D, D))
    for col, (i, j) in enumerate(pairs):
        eta[i, j] = x[col]
    return value, FlowBalancedRates(eta, w), converged
