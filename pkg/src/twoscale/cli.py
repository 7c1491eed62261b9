"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import secrets
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .action import MAMConfig, hj_residual, minimize_action, path_csv
from .expr import ExpressionError
from .hamiltonians import (ReversibilityError, chen_rate, dv_rate, genetic_hamiltonian_closed, hs,
                           meanfield_drift, reduced_hamiltonian, reduced_lagrangian, settings_with,
                           slow_lagrangian, wkb_hamiltonian)
from .model import ModelError, load_model, model_from_config, stationary_weights
from .simulate import (SimulationError, ensemble_csv, fixed_points, langevin_run, named_points,
                       point_names, ssa_ensemble, ssa_run)

log = logging.getLogger("twoscale")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits and non-finite as null."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(x, np.ndarray):
        x = x.tolist()
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_fmt(v, indent + 1)}" for k, v in x.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(x, (list, tuple)):
        if not any(isinstance(v, (dict, list, tuple, np.ndarray)) for v in x):
            return "[" + ", ".join(_fmt(v) for v in x) + "]"
        return "[\n" + ",\n".join(inner + _fmt(v, indent + 1) for v in x) + "\n" + pad + "]"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return f"{x:.17g}" if math.isfinite(x) else "null"
    if x is None:
        return "null"
    return json.dumps(str(x))


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _envelope(args, config: dict, result: dict, t0: float) -> str:
    doc = {
        "tool": "twoscale",
        "version": __version__,
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "wall_clock_s": time.perf_counter() - t0,
        "result": result,
    }
    return _fmt(doc) + "\n"


def _emit(args, name: str, text: str):
    if args.out:
        write_atomic(Path(args.out) / name, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# argument resolution


def _vector(text: str, d: int, field: str):
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise ConfigError(f"--{field}: expected {d} comma-separated numbers, got {text!r}") from None
    if v.size != d:
        raise ConfigError(f"--{field}: expected {d} components, got {v.size}")
    return v


def _model(args):
    src = args.model or args.preset
    try:
        overrides = json.loads(args.params) if args.params else None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--params is not valid JSON: {exc}") from None
    if overrides is not None and not isinstance(overrides, dict):
        raise ConfigError("--params must be a JSON object")
    if overrides and args.model:
        raise ConfigError("--params overrides preset parameters and cannot be combined with --model")
    try:
        if args.model:
            spec = load_model(args.model)
        else:
            spec = model_from_config({"preset": args.preset, "params": overrides})
    except (ModelError, ExpressionError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"model {src!r}: {exc}") from None
    return spec


def _box(args, spec):
    if args.box:
        vals = _vector(args.box, 2 * spec.d, "box").reshape(spec.d, 2)
        return vals
    return np.array([[0.0, 5.0]] * spec.d)


def _point(text: str, spec, args, field: str):
    if text and text[0].isalpha():
        pts = named_points(spec, _box(args, spec))
        if text not in pts:
            raise ConfigError(f"--{field}: no fixed point named {text!r}; found {sorted(pts)}")
        return pts[text]
    return _vector(text, spec.d, field)


def _settings(args):
    return settings_with(grad_tol=getattr(args, "grad_tol", None), max_iter=getattr(args, "max_iter", None))


def _seed(args):
    if args.seed is None:
        args.seed = secrets.randbits(63)
        log.info("no --seed given; using %d", args.seed)
    if args.seed < 0:
        raise ConfigError("--seed must be nonnegative")
    return args.seed


def _positive(value, field, integer=False):
    if value is None or value <= 0 or (integer and int(value) != value):
        raise ConfigError(f"--{field} must be a positive {'integer' if integer else 'number'}, got {value}")


def _base_config(args, spec):
    return {"model": args.model or args.preset, "params": spec.params.to_dict() if spec.params else None,
            "model_config": spec.config}


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, t0):
    spec = _model(args)
    _positive(args.n, "n", integer=True)
    _positive(args.T, "T")
    _positive(args.reps, "reps", integer=True)
    seed = _seed(args)
    z0 = _point(args.z0, spec, args, "z0")
    config = _base_config(args, spec)
    if args.method == "ssa":
        z0 = np.rint(z0 * args.n) / args.n
        config.update(method="ssa", n=args.n, T=args.T, z0=z0, xi0=args.xi0, reps=args.reps)
        if args.reps == 1:
            traj = ssa_run(spec, args.n, z0, args.xi0, args.T, seed)
            summary = traj.summary(spec.S)
            _emit(args, "trajectory.csv", traj.to_csv())
        else:
            grid = np.linspace(0.0, args.T, args.grid)
            ens = ssa_ensemble(spec, args.n, z0, args.T, args.reps, seed, xi0=args.xi0, grid=grid,
                               threads=args.threads)
            summary = {"reps": args.reps, "events_total": int(ens.events.sum()),
                       "truncated": int(ens.truncated.sum()), "mean_final": ens.z[:, -1].mean(0)}
            _emit(args, "ensemble.csv", ensemble_csv(ens))
    else:
        if spec.params is None:
            raise ConfigError("Langevin simulation is only defined for the genetic-switch preset")
        _positive(args.dt, "dt")
        variant = "full" if args.method == "langevin" else "naive"
        config.update(method=args.method, n=args.n, T=args.T, z0=z0, dt=args.dt, reps=args.reps)
        sde = langevin_run(spec.params, args.n, z0, args.T, args.dt, variant, seed, args.reps)
        summary = {"reps": args.reps, "steps": len(sde.times) - 1, "reflections": int(sde.reflections.sum())}
        _emit(args, "trajectory.csv", _paths_csv(sde.times, sde.z))
    if args.out:
        _emit(args, "summary.json", _envelope(args, config, summary, t0))
    return EXIT_OK


def _paths_csv(times, z):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    R, G, d = z.shape
    w.writerow(["replica", "t"] + [f"z{k + 1}" for k in range(d)])
    for r in range(R):
        for g in range(G):
            w.writerow([r, f"{times[g]:.17g}"] + [f"{v:.17g}" for v in z[r, g]])
    return buf.getvalue()


def cmd_eval(args, t0):
    spec = _model(args)
    settings = _settings(args)
    z = _point(args.z, spec, args, "z")
    config = _base_config(args, spec)
    config.update(what=args.what, z=z)
    what = args.what
    res: dict = {}
    if what in ("H", "wkb", "closed", "hs"):
        if args.p is None:
            raise ConfigError(f"--p is required for --what {what}")
        p = _vector(args.p, spec.d, "p")
        config["p"] = p
        if what == "H":
            r = reduced_hamiltonian(spec, z, p, settings)
            res = {"value": r.value, "w_star": r.w_star, "grad_p": r.grad_p, "converged": r.converged}
            if not r.converged:
                raise NumericalError(f"Hamiltonian maximizer did not converge at z={z}, p={p}")
        elif what == "hs":
            w = _weights(args, spec, z)
            res = {"value": float(hs(spec, z, p, w)), "w": w}
        else:
            if spec.params is None:
                raise ConfigError(f"--what {what} needs the genetic-switch preset")
            fn = wkb_hamiltonian if what == "wkb" else genetic_hamiltonian_closed
            res = {"value": float(fn(spec.params, z, p))}
    elif what in ("S", "chen"):
        w = _weights(args, spec, z)
        if what == "S":
            r = dv_rate(spec, z, w, settings)
            res = {"value": r.value, "sigma": r.sigma, "converged": r.converged, "w": w}
        else:
            try:
                res = {"value": float(chen_rate(spec, z, w, settings)), "w": w}
            except ReversibilityError as exc:
                raise ConfigError(str(exc)) from None
    elif what in ("L", "Ls"):
        if args.beta is None:
            raise ConfigError(f"--beta is required for --what {what}")
        beta = meanfield_drift(spec, z) if args.beta == "drift" else _vector(args.beta, spec.d, "beta")
        config["beta"] = beta
        if what == "L":
            r = reduced_lagrangian(spec, z, beta, settings)
        else:
            r = slow_lagrangian(spec, z, beta, _weights(args, spec, z), settings)
        res = {"value": r.value, "p_star": r.p_star, "w_star": r.w_star, "attained": r.attained,
               "converged": r.converged}
        if not r.converged:
            raise NumericalError(f"Lagrangian solve did not converge at z={z}, beta={beta}")
    elif what == "drift":
        res = {"value": meanfield_drift(spec, z), "w": stationary_weights(spec, z)}
    text = _envelope(args, config, res, t0)
    _emit(args, "eval.json", text)
    return EXIT_OK


def _weights(args, spec, z):
    if args.w is None:
        return stationary_weights(spec, z)
    w = _vector(args.w, spec.D, "w")
    if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
        raise ConfigError("--w must be a probability vector")
    return w


def cmd_gmam(args, t0):
    spec = _model(args)
    zA = _point(args.from_, spec, args, "from")
    zB = _point(args.to, spec, args, "to")
    try:
        cfg = MAMConfig(nodes=args.nodes, max_iter=args.max_sweeps, time=args.time, T=args.T,
                        T_bracket=(args.T_min, args.T_max), init=args.init)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path, report, momenta = minimize_action(spec, zA, zB, cfg, _settings(args))
    report.info["hj_residual_reduced"] = hj_residual(spec, path, momenta, "reduced")
    if spec.params is not None:
        report.info["hj_residual_wkb"] = hj_residual(spec, path, momenta, "wkb")
    config = _base_config(args, spec)
    config.update(start=zA, end=zB, mam=cfg.__dict__)
    density = report.contributions
    if args.out:
        write_atomic(Path(args.out) / "path.csv", path_csv(path, momenta, density))
    _emit(args, "action.json", _envelope(args, config, report.to_dict(), t0))
    if not report.converged:
        log.error("action minimization did not converge")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_fixed_points(args, t0):
    spec = _model(args)
    box = _box(args, spec)
    fps = fixed_points(spec, box, grid=args.grid)
    out = []
    for name, fp in zip(point_names(fps), fps):
        out.append({"name": name, "point": fp.point, "stability": fp.stability,
                    "eigenvalues_real": np.real(fp.eigenvalues), "residual": fp.residual})
    config = _base_config(args, spec)
    config.update(box=box, grid=args.grid)
    _emit(args, "fixed_points.json", _envelope(args, config, {"points": out}, t0))
    return EXIT_OK


def cmd_verify(args, t0):
    from . import suites

    spec = _model(args)
    seed = _seed(args)
    names = suites.ALL if args.suite == "all" else args.suite.split(",")
    unknown = [s for s in names if s not in suites.SUITES]
    if unknown:
        raise ConfigError(f"unknown suite(s) {unknown}; choose from {sorted(suites.SUITES)}")
    if args.probes is not None and args.probes < 1:
        raise ConfigError("--probes must be >= 1")
    results = {}
    for name in names:
        res = suites.SUITES[name](spec, seed=seed, probes=args.probes, reps=args.reps,
                                  threads=args.threads)
        results[name] = res
        if args.out and "csv" in res:
            write_atomic(Path(args.out) / f"{name}.csv", res.pop("csv"))
        res.pop("csv", None)
        log.info("%s: %s", name, "pass" if res["verdict"]["passed"] else "FAIL")
    config = _base_config(args, spec)
    config.update(suites=names, probes=args.probes, reps=args.reps, threads=args.threads)
    passed = all(r["verdict"]["passed"] for r in results.values())
    _emit(args, "verdict.json", _envelope(args, config, {"passed": passed, "suites": results}, t0))
    return EXIT_OK if passed else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twoscale", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"twoscale {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, stochastic=False):
        p.add_argument("--preset", default="genetic-switch")
        p.add_argument("--model", help="JSON model file (overrides --preset)")
        p.add_argument("--params", help="JSON object of preset parameter overrides")
        p.add_argument("--box", help="fixed-point search box lo1,hi1,lo2,hi2,...")
        p.add_argument("--out", help="output directory (default: JSON to stdout)")
        p.add_argument("--grad-tol", type=float, dest="grad_tol")
        p.add_argument("--max-iter", type=int, dest="max_iter")
        p.add_argument("-v", "--verbose", action="store_true")
        if stochastic:
            p.add_argument("--seed", type=int)
            p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("simulate", help="SSA or Langevin trajectories")
    common(p, True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--z0", default="stable1", help="start point or fixed-point name")
    p.add_argument("--xi0", type=int, default=None, help="initial fast state (default: stationary draw)")
    p.add_argument("--method", choices=["ssa", "langevin", "langevin-naive"], default="ssa")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--grid", type=int, default=101, help="snapshot count for --reps > 1")

    p = sub.add_parser("eval", help="point evaluation of Hamiltonians, rates and Lagrangians")
    common(p)
    p.add_argument("--what", choices=["H", "wkb", "closed", "hs", "S", "chen", "L", "Ls", "drift"],
                   required=True)
    p.add_argument("--z", required=True)
    p.add_argument("--p")
    p.add_argument("--w")
    p.add_argument("--beta", help="velocity, or 'drift' for the mean-field drift at z")

    p = sub.add_parser("gmam", help="minimum-action path between two states")
    common(p)
    p.add_argument("--from", dest="from_", default="stable1")
    p.add_argument("--to", default="saddle")
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--max-sweeps", type=int, default=40, dest="max_sweeps")
    p.add_argument("--time", choices=["geometric", "fixed", "optimized"], default="geometric")
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--T-min", type=float, default=1.0, dest="T_min")
    p.add_argument("--T-max", type=float, default=50.0, dest="T_max")
    p.add_argument("--init", choices=["line", "arc", "flow"], default="line")

    p = sub.add_parser("verify", help="run verification suites")
    common(p, True)
    p.add_argument("--suite", default="duality", help="comma-separated suite names or 'all'")
    p.add_argument("--probes", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("fixed-points", help="fixed points of the mean-field ODE")
    common(p)
    p.add_argument("--grid", type=int, default=8)
    return ap


COMMANDS = {"simulate": cmd_simulate, "eval": cmd_eval, "gmam": cmd_gmam,
            "fixed-points": cmd_fixed_points, "verify": cmd_verify}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        return COMMANDS[args.command](args, t0)
    except (ConfigError, ModelError, ExpressionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SimulationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
