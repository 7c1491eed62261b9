"""Acceptance criteria 1-10 at their stated tolerances.

Each test records one ``PASS``/``FAIL`` line with the measured values and
runtime; pytest prints them in its terminal summary. Running this file as a
script prints the same lines without pytest.
"""

import json
import sys
import time
from pathlib import Path

import pytest

from twoscale import suites
from twoscale.cli import main as cli_main
from twoscale.model import preset_model

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # imported outside the tests directory
    ACCEPTANCE_LINES = []

SEED = 20240601


def record(k, title, passed, detail, runtime, limit=None):
    ok = bool(passed) and (limit is None or runtime < limit)
    budget = f" (limit {limit:g} s)" if limit is not None else ""
    line = f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}; runtime {runtime:.1f} s{budget}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def spec():
    return preset_model()


def test_criterion_01_zero_hamiltonian(spec):
    v = suites.zero(spec, seed=SEED, probes=1000)["verdict"]
    record(1, "zero-momentum identity",
           v["max_H"] <= 1e-10 and v["max_wkb"] <= 1e-10,
           f"max|H(z,0)| {v['max_H']:.1e}, max|H~(z,0)| {v['max_wkb']:.1e} on 1000 z (tol 1e-10)",
           v["runtime_s"], 5)


def test_criterion_02_closed_form(spec):
    v = suites.closed(spec, seed=SEED, probes=500)["verdict"]
    record(2, "closed form vs numeric maximizer",
           v["max_H_error"] <= 1e-8 and v["max_weight_error"] <= 1e-8,
           f"H error {v['max_H_error']:.1e}, weight error {v['max_weight_error']:.1e} on 500 (z,p) (tol 1e-8)",
           v["runtime_s"], 30)


def test_criterion_03_meanfield(spec):
    v = suites.meanfield(spec, seed=SEED, probes=20)["verdict"]
    record(3, "mean-field consistency",
           v["max_gradient_error"] <= 1e-8 and v["max_hessian_error"] <= 1e-5,
           f"gradient error {v['max_gradient_error']:.1e} (tol 1e-8), "
           f"curvature error {v['max_hessian_error']:.1e} (tol 1e-5)", v["runtime_s"])


def test_criterion_04_duality(spec):
    out = suites.duality(spec, seed=SEED, probes=100)
    checks = out["checks"]
    needed = ["slow_lagrangian_vs_entropy", "reduced_lagrangian_sup_vs_inf", "dv_vs_chen", "dv_vs_flow"]
    worst = max(checks[k]["max_discrepancy"] for k in needed)
    passed = all(checks[k]["applicable"] and checks[k]["max_discrepancy"] <= 1e-6 for k in needed)
    detail = ", ".join(f"{k} {checks[k]['max_discrepancy']:.1e}" for k in needed)
    record(4, "dual representations", passed, f"{detail}; worst {worst:.1e} over 100 probes (tol 1e-6)",
           out["verdict"]["runtime_s"], 120)


def test_criterion_05_convexity(spec):
    v = suites.convexity(spec, seed=SEED, probes=500)["verdict"]
    record(5, "convexity in p, concavity in w", v["passed"],
           f"max violations {v['max_convexity_violation']:.1e} / {v['max_concavity_violation']:.1e} "
           f"on 500 probes (slack 1e-9)", v["runtime_s"])


@pytest.mark.slow
def test_criterion_06_occupation_ldp(spec):
    out = suites.occupation(spec, seed=SEED, reps=250_000, threads=8)
    v = out["verdict"]
    total = sum(r["reps"] for r in out["rungs"])
    final = out["rungs"][-1]
    hits = [r["hits"] for r in out["rungs"]]
    rate = f"{'>=' if final['bound_only'] else ''}{final['rate']:.4f}"
    err = v["final_relative_error"]
    record(6, "occupation-measure LDP",
           v["passed"] and total >= 1_000_000,
           f"final rate {rate} vs theory {out['theory']:g} "
           f"(rel. error {'n/a' if err is None or err != err else f'{err:.2f}'}, tol 0.15), hits per rung {hits}, "
           f"{total} replicates, monotone {v['monotone']}", v["runtime_s"], 600)


@pytest.mark.slow
def test_criterion_07_langevin(spec):
    out = suites.langevin(spec, seed=SEED, reps=100_000, threads=8)
    v = out["verdict"]
    record(7, "switching-induced Langevin noise", v["passed"],
           f"gap {v['gap']:.3e} vs theory {v['gap_theory']:.3e} (z = {v['gap_z']:+.2f}, |z| <= 3); "
           f"SSA var {out['ssa']['value']:.3e}, full {out['full']['value']:.3e}, "
           f"naive {out['naive']['value']:.3e}; SSA closer to full {v['ssa_closer_to_full']} "
           f"({v['batch_fraction_closer']:.2f} of batches)", v["runtime_s"], 300)


@pytest.mark.slow
def test_criterion_08_gmam(spec):
    t0 = time.perf_counter()
    v = suites.gmam(spec, seed=SEED, probes=100)["verdict"]
    record(8, "minimum-action path",
           v["passed"] and v["converged"],
           f"uphill action {v['uphill_action']:.6e}, 2N change {v['grid_relative_change']:.1e} (tol 1e-3), "
           f"downhill {v['downhill_action']:.1e} (tol 1e-4), H residual {v['hj_residual_reduced']:.1e} "
           f"(tol 1e-4), WKB residual {v['hj_residual_wkb']:.1e} (tol 1e-2)",
           time.perf_counter() - t0, 300)


@pytest.mark.slow
def test_criterion_09_lln(spec):
    out = suites.lln(spec, seed=SEED, reps=200, threads=8)
    v = out["verdict"]
    devs = ", ".join(f"n={r['n']}: {r['mean_sup_dev']:.4f}" for r in out["rows"])
    record(9, "law of large numbers", v["passed"],
           f"log-log slope {v['slope']:.3f} (range [-0.65, -0.35]); {devs}", v["runtime_s"], 300)


def _strip_clock(obj):
    if isinstance(obj, dict):
        return {k: _strip_clock(v) for k, v in obj.items() if k not in ("runtime_s", "wall_clock_s", "threads")}
    if isinstance(obj, list):
        return [_strip_clock(v) for v in obj]
    return obj


@pytest.mark.slow
def test_criterion_10_determinism(spec, tmp_path):
    t0 = time.perf_counter()
    v = suites.determinism(spec, seed=SEED)["verdict"]
    commands = {
        "simulate ssa": ["simulate", "--n", "500", "--T", "2", "--reps", "300", "--grid", "21"],
        "simulate langevin": ["simulate", "--n", "500", "--T", "2", "--reps", "300", "--method", "langevin"],
        "simulate trajectory": ["simulate", "--n", "1000", "--T", "10"],
        "verify lln": ["verify", "--suite", "lln", "--reps", "40"],
        "verify langevin": ["verify", "--suite", "langevin", "--reps", "20000"],
    }
    same = {}
    for name, argv in commands.items():
        outs = []
        for th in (1, 8):
            d = tmp_path / f"{name.replace(' ', '_')}_{th}"
            cli_main(argv + ["--seed", str(SEED), "--threads", str(th), "--out", str(d)])
            files = {p.name: p.read_bytes() for p in d.glob("*.csv")}
            for p in d.glob("*.json"):
                files[p.name] = json.dumps(_strip_clock(json.loads(p.read_text())["result"]))
            outs.append(files)
        same[name] = outs[0] == outs[1] and bool(outs[0])
    detail = ", ".join(f"{k} {'same' if ok else 'DIFFERENT'}" for k, ok in same.items())
    record(10, "byte-identical outputs, 1 vs 8 threads", v["passed"] and all(same.values()),
           f"ensemble+occupation ladder {v['bytes']} bytes {'same' if v['passed'] else 'DIFFERENT'}, {detail}",
           time.perf_counter() - t0)


if __name__ == "__main__":
    import tempfile

    model = preset_model()
    failed = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_criterion_"):
            continue
        kwargs = {"spec": model}
        if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
            kwargs["tmp_path"] = Path(tempfile.mkdtemp())
        try:
            fn(**kwargs)
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
