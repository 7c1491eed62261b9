"""Two-scale reaction network data model and the built-in genetic switch.

A model has ``d`` slow species whose concentrations jump by ``u_i / n`` at
rates ``n * lambda_i(z, j)`` and a fast switch with ``D`` states that hops
``i -> j`` at rate ``n * q_ij(z)``.

Evaluators are vectorized over leading axes:

* ``propensity(z)`` maps ``(..., d)`` to ``(..., D, S)``: entry ``[..., j, i]``
  is ``lambda_i(z, j)``.
* ``switch_rate(z)`` maps ``(..., d)`` to ``(..., D, D)``; the diagonal is
  ignored everywhere.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .expr import compile_expression

PRESETS = ("genetic-switch",)


class ModelError(ValueError):
    """Invalid model definition or parameters."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    d: int
    D: int
    stoich: np.ndarray
    propensity: Callable[[np.ndarray], np.ndarray]
    switch_rate: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    orthant: bool = True
    config: dict | None = None
    params: Any = None

    def __post_init__(self):
        stoich = np.asarray(self.stoich)
        if stoich.ndim != 2 or stoich.shape[1] != self.d:
            raise ModelError(f"stoichiometry must be S x {self.d}, got {stoich.shape}")
        if not np.all(np.equal(np.mod(stoich, 1), 0)):
            raise ModelError("stoichiometry vectors must be integer-valued")
        stoich = stoich.astype(np.int64)
        stoich.setflags(write=False)
        object.__setattr__(self, "stoich", stoich)
        if self.D < 1:
            raise ModelError("need at least one fast state")

    @property
    def S(self) -> int:
        return self.stoich.shape[0]

    def rates(self, z) -> np.ndarray:
        """Propensities ``lambda[..., j, i]`` at slow state(s) ``z``."""
        return self.propensity(np.asarray(z, dtype=float))

    def switch_matrix(self, z) -> np.ndarray:
        """Off-diagonal switch rates with the diagonal zeroed."""
        q = np.array(self.switch_rate(np.asarray(z, dtype=float)), dtype=float)
        idx = np.arange(self.D)
        q[..., idx, idx] = 0.0
        return q

    def generator(self, z) -> np.ndarray:
        """Fast-chain generator ``Q(z)`` with rows summing to zero."""
        q = self.switch_matrix(z)
        idx = np.arange(self.D)
        q[..., idx, idx] = -q.sum(axis=-1)
        return q

    def averaged_rates(self, z, w) -> np.ndarray:
        """``sum_j lambda_i(z, j) w_j`` for each reaction."""
        lam = self.rates(z)
        return np.einsum("...js,...j->...s", lam, np.asarray(w, dtype=float))


@dataclass(frozen=True)
class HillRate:
    """``c0 + c1 * z**2 / (K + z**2)``, the rate family for DNA switching."""

    c0: float
    c1: float = 0.0
    K: float = 1.0

    def __call__(self, z2):
        z2 = np.maximum(np.asarray(z2, dtype=float), 0.0)
        if self.c1 == 0.0:
            return np.full(np.shape(z2), float(self.c0))
        sq = z2 * z2
        return self.c0 + self.c1 * sq / (self.K + sq)

    def derivative(self, z2):
        z2 = np.maximum(np.asarray(z2, dtype=float), 0.0)
        return self.c1 * 2.0 * z2 * self.K / (self.K + z2 * z2) ** 2

    def expression(self) -> str:
        if self.c1 == 0.0:
            return repr(float(self.c0))
        return f"{self.c0!r} + {self.c1!r}*hill(z2, {self.K!r}, 2)"


@dataclass(frozen=True)
class GeneticSwitchParams:
    b: float
    gamma: float
    f: HillRate = field(default_factory=lambda: HillRate(1.0))
    g: HillRate = field(default_factory=lambda: HillRate(1.0))

    def __post_init__(self):
        for name in ("f", "g"):
            rate = getattr(self, name)
            if isinstance(rate, dict):
                rate = HillRate(**rate)
            elif isinstance(rate, (int, float)):
                rate = HillRate(float(rate))
            object.__setattr__(self, name, rate)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_switch_params(params: GeneticSwitchParams):
    if not params.b > 0:
        raise ModelError(f"b must be positive, got {params.b}")
    if not params.gamma > 0:
        raise ModelError(f"gamma must be positive, got {params.gamma}")
    for name in ("f", "g"):
        rate = getattr(params, name)
        if not rate.c0 > 0:
            raise ModelError(f"{name}: constant term c0 must be positive, got {rate.c0}")
        if rate.c1 < 0:
            raise ModelError(f"{name}: Hill coefficient c1 must be nonnegative")
        if rate.c1 > 0 and not rate.K > 0:
            raise ModelError(f"{name}: Hill constant K must be positive")


def build_genetic_switch(params: GeneticSwitchParams) -> ModelSpec:
    """Genetic switch with positive feedback: d=2, D=2, S=4.

    Fast state 0 is inactive DNA, 1 is active. Reactions are transcription
    (``1/b`` when active), mRNA decay ``gamma z1``, translation
    ``gamma b z1`` and protein decay ``z2``.
    """
    _check_switch_params(params)
    b, gamma, f, g = params.b, params.gamma, params.f, params.g
    stoich = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])

    def propensity(z):
        z = np.asarray(z, dtype=float)
        z1 = np.maximum(z[..., 0], 0.0)
        z2 = np.maximum(z[..., 1], 0.0)
        out = np.empty(z.shape[:-1] + (2, 4))
        out[..., 0, 0] = 0.0
        out[..., 1, 0] = 1.0 / b
        out[..., :, 1] = (gamma * z1)[..., None]
        out[..., :, 2] = (gamma * b * z1)[..., None]
        out[..., :, 3] = z2[..., None]
        return out

    def switch_rate(z):
        z2 = np.asarray(z, dtype=float)[..., 1]
        out = np.zeros(z2.shape + (2, 2))
        out[..., 0, 1] = f(z2)
        out[..., 1, 0] = g(z2)
        return out

    config = {
        "name": "genetic-switch",
        "d": 2,
        "D": 2,
        "stoichiometry": stoich.tolist(),
        "propensities": [f"{1.0 / b!r}*gate(1)", f"{gamma!r}*z1", f"{gamma * b!r}*z1", "z2"],
        "switch_rates": [[None, f.expression()], [g.expression(), None]],
    }
    return ModelSpec(2, 2, stoich, propensity, switch_rate, "genetic-switch",
                     config=config, params=params)


def model_from_config(config: dict) -> ModelSpec:
    """Build a model from a JSON-style mapping.

    Either ``{"preset": name, "params": {...}}`` or an explicit network with
    ``d``, ``D``, ``stoichiometry``, ``propensities`` and ``switch_rates``.
    """
    if "preset" in config:
        return preset_model(config["preset"], config.get("params"))
    try:
        d, D = int(config["d"]), int(config["D"])
        stoich = np.asarray(config["stoichiometry"], dtype=float)
        props = [compile_expression(e, d, D) for e in config["propensities"]]
        raw_q = config.get("switch_rates") or [[None]]
    except KeyError as exc:
        raise ModelError(f"model config missing field {exc.args[0]!r}") from None
    if len(props) != stoich.shape[0]:
        raise ModelError("propensities and stoichiometry disagree on reaction count")
    if np.shape(raw_q)[:2] != (D, D) and not (D == 1 and raw_q == [[None]]):
        raise ModelError(f"switch_rates must be a {D} x {D} matrix")
    qexpr = {}
    for i in range(D):
        for j in range(D):
            if i != j:
                if raw_q[i][j] is None:
                    raise ModelError(f"switch rate {i}->{j} missing")
                qexpr[i, j] = compile_expression(raw_q[i][j], d, D)
    states = np.arange(D)

    def propensity(z):
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape[:-1] + (D, len(props)))
        for j in states:
            for i, e in enumerate(props):
                out[..., j, i] = e(z, j)
        return out

    def switch_rate(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1] + (D, D))
        for (i, j), e in qexpr.items():
            out[..., i, j] = e(z, i)
        return out

    return ModelSpec(d, D, stoich, propensity, switch_rate,
                     config.get("name", "custom"), config=dict(config))


def preset_params(name: str = "genetic-switch", overrides: dict | None = None) -> GeneticSwitchParams:
    if name != "genetic-switch":
        raise ModelError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("twoscale").joinpath("presets/genetic_switch.json").read_text()
    params = dict(json.loads(text)["params"])
    for key, val in (overrides or {}).items():
        params[key] = val
    return GeneticSwitchParams(**params)


def preset_model(name: str = "genetic-switch", overrides: dict | None = None) -> ModelSpec:
    return build_genetic_switch(preset_params(name, overrides))


def load_model(source: str | Path | dict) -> ModelSpec:
    """Resolve a preset name, a JSON file path or a config mapping."""
    if isinstance(source, dict):
        return model_from_config(source)
    if str(source) in PRESETS:
        return preset_model(str(source))
    path = Path(source)
    if not path.exists():
        raise ModelError(f"no preset or file named {source!r}")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from None
    return model_from_config(config)


def frozen_fast_chain(spec: ModelSpec, z) -> ModelSpec:
    """The fast chain alone with slow state pinned at ``z`` (propensities zeroed)."""
    z = np.asarray(z, dtype=float)
    q = spec.switch_matrix(z)

    def propensity(x):
        return np.zeros(np.shape(x)[:-1] + (spec.D, spec.S))

    def switch_rate(x):
        return np.broadcast_to(q, np.shape(x)[:-1] + q.shape).copy()

    return ModelSpec(spec.d, spec.D, spec.stoich, propensity, switch_rate,
                     f"{spec.name}[frozen]", params=spec.params)


def stationary_weights(spec: ModelSpec, z) -> np.ndarray:
    """Invariant law ``w`` of the fast chain: ``w Q(z) = 0``, ``sum w = 1``.

    Vectorized over leading axes of ``z``.
    """
    Q = spec.generator(z)
    D = spec.D
    if D == 1:
        return np.ones(Q.shape[:-1])
    # replace the last balance equation with normalization
    A = np.swapaxes(Q, -1, -2).copy()
    A[..., -1, :] = 1.0
    rhs = np.zeros(Q.shape[:-1])
    rhs[..., -1] = 1.0
    try:
        w = np.linalg.solve(A, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("fast-chain generator is singular; switch rates must be positive") from exc
    return w


@dataclass
class ValidationReport:
    lipschitz_estimate: np.ndarray
    log_q_bounds: tuple[float, float]
    propensity_bounds: tuple[float, float]
    cone_check: bool
    violations: list[str]
    notes: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations and self.cone_check

    def to_dict(self) -> dict:
        return {
            "lipschitz_estimate": self.lipschitz_estimate.tolist(),
            "log_q_bounds": list(self.log_q_bounds),
            "propensity_bounds": list(self.propensity_bounds),
            "cone_check": self.cone_check,
            "violations": list(self.violations),
            "notes": list(self.notes),
        }


def _cone_points_inward(stoich: np.ndarray, active: np.ndarray, zero_coords: np.ndarray) -> bool:
    # the cone stays in the orthant near x iff every active generator has a
    # nonnegative component along each coordinate where x sits on the boundary
    used = stoich[active][:, zero_coords]
    return bool(np.all(used >= 0))


def validate_model(spec: ModelSpec, box, samples: int = 200, seed: int = 0) -> ValidationReport:
    """Sample-based regularity check of a model over an axis-aligned box.

    ``box`` is a sequence of ``(low, high)`` per slow coordinate inside the
    nonnegative orthant. Problems are reported, never raised.
    """
    box = np.asarray(box, dtype=float)
    if box.shape != (spec.d, 2):
        raise ModelError(f"box must have shape ({spec.d}, 2)")
    if np.any(box[:, 0] < 0) or np.any(box[:, 1] < box[:, 0]):
        raise ModelError("box must lie in the nonnegative orthant with low <= high")
    if samples < 2:
        raise ModelError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    lo, hi = box[:, 0], box[:, 1]
    width = np.where(hi > lo, hi - lo, 1.0)
    pts = lo + rng.random((samples, spec.d)) * (hi - lo)
    violations, notes = [], []

    lam = spec.rates(pts)
    # pairwise secants plus short local secants
    step = 1e-4 * width * rng.choice([-1.0, 1.0], size=pts.shape)
    near = np.clip(pts + step, lo, hi)
    pairs = [(pts[:-1], pts[1:], lam[:-1], lam[1:]), (pts, near, lam, spec.rates(near))]
    lip = np.zeros(spec.S)
    for a, b, la, lb in pairs:
        dist = np.linalg.norm(a - b, axis=-1)
        ok = dist > 0
        if np.any(ok):
            ratio = np.abs(la[ok] - lb[ok]).max(axis=1) / dist[ok, None]
            lip = np.maximum(lip, ratio.max(axis=0))

    if np.any(lam < 0):
        violations.append("negative propensity sampled")
    interior = np.all(pts > 0, axis=-1)
    lam_int = lam[interior]
    if lam_int.size:
        gated = lam_int.max(axis=1) <= 0
        if np.any(gated):
            bad = np.flatnonzero(gated.any(axis=0))
            violations.append(f"reactions {bad.tolist()} vanish for every fast state in the open orthant")
        if np.any(lam_int <= 0):
            notes.append("some propensities are gated to zero in particular fast states")
    prop_bounds = (float(lam.min()), float(lam.max()))

    q = spec.switch_matrix(pts)
    off = ~np.eye(spec.D, dtype=bool)
    qoff = q[:, off]
    with np.errstate(divide="ignore"):
        logq = np.log(qoff) if qoff.size else np.zeros(1)
    log_bounds = (float(logq.min()), float(logq.max())) if qoff.size else (0.0, 0.0)
    if qoff.size and not np.all(np.isfinite(logq)):
        violations.append("log q_ij unbounded (zero switch rate sampled)")

    # boundary points: project samples onto each lower face that touches 0
    cone_ok = True
    faces = np.flatnonzero(lo == 0)
    for k in faces:
        bpts = pts.copy()
        bpts[:, k] = 0.0
        blam = spec.rates(bpts).max(axis=1)
        for x, lx in zip(bpts, blam):
            zero = np.flatnonzero(x == 0)
            if not _cone_points_inward(spec.stoich, lx > 0, zero):
                cone_ok = False
                break
        if not cone_ok:
            violations.append(f"cone condition fails on face z{k + 1}=0")
            break
    return ValidationReport(lip, log_bounds, prop_bounds, cone_ok, violations, notes)
