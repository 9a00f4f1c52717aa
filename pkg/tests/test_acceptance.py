"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -v -s``) or directly
(``python tests/test_acceptance.py [numbers...]``).  Criteria 6 and 7 run the
full desk-scale learning benchmarks and take a few minutes each.
"""

import json
import os
from pathlib import Path
import sys
import time

import numpy as np
import pytest

from nnbm import kernels
from nnbm.cli import main as cli_main
from nnbm.experiment import ExperimentSpec, run_experiment
from nnbm.model import NnbmModel, Topology, build_square_grid
from nnbm.response import covariance_matrix, isusp_solve, susp_solve
from nnbm.sampling import (SamplerConfig, gibbs_sample, mc_moments, quadrature_moments,
                           site_sample_stats)
from nnbm.tap import SolverConfig, tap_solve

ROOT = Path(__file__).resolve().parent.parent
TIGHT = SolverConfig(tol=1e-12)


def _random_model(rng, n, b=(-0.5, 0.5)):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return NnbmModel(Topology(n, edges), rng.uniform(*b, size=n), np.ones(n),
                     rng.uniform(-0.3, 0.8, size=len(edges)))


def _random_models(seed, count, sizes):
    rng = np.random.default_rng(seed)
    return [_random_model(rng, int(rng.choice(sizes))) for _ in range(count)]


# ---------------------------------------------------------------------------


def criterion_1():
    """Single-site TAP against quadrature on a 5x5 (b, w_11) grid."""
    bs = np.linspace(-2.0, 2.0, 5)
    ws = np.linspace(0.25, 4.0, 5)
    models = [NnbmModel(Topology(1, []), [b], [w], []) for b in bs for w in ws]
    oracle = [quadrature_moments(m) for m in models]
    t0 = time.perf_counter()
    states = [tap_solve(m) for m in models]
    secs = time.perf_counter() - t0
    err = max(max(abs(s.m[0] - q.mean1[0]), abs(s.v[0] - q.mean2[0]))
              for s, q in zip(states, oracle))
    return err <= 1e-9 and secs < 1.0, f"max |error| = {err:.2e} (<= 1e-9), TAP time {secs:.3f} s (< 1 s)"


def _fd_means(model, h=1e-6):
    n = model.n
    out = np.empty((n, n))
    for j in range(n):
        b = model.b.copy()
        b[j] += h
        up = tap_solve(model.with_params(b=b), cfg=TIGHT).m
        b[j] -= 2 * h
        dn = tap_solve(model.with_params(b=b), cfg=TIGHT).m
        out[:, j] = (up - dn) / (2 * h)
    return out


def criterion_2():
    """SusP entries against central finite differences of the TAP means."""
    t0 = time.perf_counter()
    models = _random_models(2, 24, range(2, 7))
    worst = 0.0
    for model in models:
        s = tap_solve(model, cfg=TIGHT)
        M = susp_solve(model, s, cfg=TIGHT).M
        fd = _fd_means(model)
        tol = np.maximum(1e-6, 1e-3 * np.abs(M))
        worst = max(worst, float(np.max(np.abs(M - fd) / tol)))
    secs = time.perf_counter() - t0
    return worst <= 1.0 and secs < 30, (
        f"{len(models)} models, worst |M - FD| / tol = {worst:.3f} (<= 1), {secs:.1f} s (< 30 s)")


def criterion_3():
    """I-SusP diagonal consistency on the grid model and 20 random models."""
    t0 = time.perf_counter()
    models = [build_square_grid(6, 6, -0.4, 0.4, 1.0, 0.8, 0)] + _random_models(3, 20, range(2, 7))
    gaps = [isusp_solve(m).diagonal_gap for m in models]
    secs = time.perf_counter() - t0
    return max(gaps) <= 1e-8 and secs < 60, (
        f"max |M_ii - (v_i - m_i^2)| = {max(gaps):.2e} over {len(models)} models (<= 1e-8), "
        f"{secs:.1f} s (< 60 s)")


def criterion_4():
    """Mean covariance error against quadrature: I-SusP <= SusP over 20 triangles."""
    t0 = time.perf_counter()
    models = _random_models(4, 20, [3])
    e_susp, e_isusp, e_tap_m, e_isusp_m = [], [], [], []
    for model in models:
        exact = quadrature_moments(model)
        s = tap_solve(model)
        cov_s = covariance_matrix(s, susp_solve(model, s))
        res = isusp_solve(model)
        cov_i = covariance_matrix(res.state, res.response)
        e_susp.append(np.mean(np.abs(cov_s - exact.covariance)))
        e_isusp.append(np.mean(np.abs(cov_i - exact.covariance)))
        e_tap_m.append(np.mean(np.abs(s.m - exact.mean1)))
        e_isusp_m.append(np.mean(np.abs(res.state.m - exact.mean1)))
    secs = time.perf_counter() - t0
    a, b = float(np.mean(e_isusp)), float(np.mean(e_susp))
    wins = int(np.sum(np.array(e_isusp) <= np.array(e_susp)))
    return a <= b and secs < 120, (
        f"covariance MAE I-SusP {a:.3e} vs SusP {b:.3e} (I-SusP better on {wins}/20); "
        f"mean MAE I-SusP {np.mean(e_isusp_m):.3e} vs TAP {np.mean(e_tap_m):.3e}; {secs:.1f} s (< 120 s)")


def criterion_5():
    """Sampler moments against analytics (one site) and quadrature (a pair)."""
    t0 = time.perf_counter()
    worst_site = 0.0
    for k, (a, w) in enumerate([(1.5, 1.0), (0.0, 2.0), (-2.0, 1.0), (-25.0, 3.0)]):
        m, se_m, v, se_v = site_sample_stats(a, w, 1_000_000, seed=100 + k)
        em, ev = kernels.site_moments(a, w)
        worst_site = max(worst_site, abs(m - em) / se_m, abs(v - ev) / se_v)
    pair = NnbmModel(Topology(2, [(0, 1)]), [0.5, -0.2], [1.0, 1.5], [0.3])
    exact = quadrature_moments(pair)
    mc = mc_moments(pair, SamplerConfig(burn_in=1000, thin=1, n_samples=100_000, seed=5))
    z = [np.abs(mc.mean1 - exact.mean1) / mc.se_mean1,
         np.abs(mc.mean2 - exact.mean2) / mc.se_mean2,
         np.array([abs(mc.cross[0, 1] - exact.cross[0, 1]) / mc.se_cross[0, 1]])]
    worst_pair = float(max(np.max(x) for x in z))
    secs = time.perf_counter() - t0
    return worst_site <= 4 and worst_pair <= 3 and secs < 120, (
        f"single site worst {worst_site:.2f} SE (<= 4), pair worst {worst_pair:.2f} SE (<= 3), "
        f"{secs:.1f} s (< 120 s)")


def _ordering(descriptor, budget_minutes):
    spec = ExperimentSpec.load(ROOT / "experiments" / descriptor)
    t0 = time.perf_counter()
    jobs = int(os.environ.get("NNBM_JOBS", "1"))
    rep = run_experiment(spec, jobs=jobs)
    minutes = (time.perf_counter() - t0) / 60
    s, i = rep.summary["susp"], rep.summary["isusp"]
    all_ok = s["ok"] == spec.trials and i["ok"] == spec.trials
    ok = all_ok and i["e_b"][0] < s["e_b"][0] and i["e_w"][0] < s["e_w"][0]
    detail = (f"e_b I-SusP {i['e_b'][0]:.3f}+-{i['e_b'][1]:.3f} vs SusP {s['e_b'][0]:.3f}+-{s['e_b'][1]:.3f}; "
              f"e_w I-SusP {i['e_w'][0]:.3f}+-{i['e_w'][1]:.3f} vs SusP {s['e_w'][0]:.3f}+-{s['e_w'][1]:.3f}; "
              f"trials ok {i['ok']}/{s['ok']} of {spec.trials}; {minutes:.1f} min (target < {budget_minutes})")
    return ok, detail


def criterion_6():
    """Square-grid learning benchmark: I-SusP beats SusP on both MAEs."""
    return _ordering("square_grid.json", 30)


def criterion_7():
    """Orientation-tuning learning benchmark: same ordering."""
    return _ordering("orientation_tuning.json", 45)


def criterion_8():
    """Per-sweep operation count of the response solvers scales as n |E|."""
    ratios, walls = [], []
    for side in (4, 6, 8, 10):
        model = build_square_grid(side, side, -0.4, 0.4, 1.0, 0.8, 0)
        s = tap_solve(model)
        r = susp_solve(model, s)
        res = isusp_solve(model)
        assert res.response.ops_per_sweep == r.ops_per_sweep
        n, e = model.n, model.topology.n_edges
        ratios.append(r.ops_per_sweep / (n * e))
        walls.append(1e6 * _time_sweep(model, s) / (n * e))
    spread = max(ratios) / min(ratios)
    return spread <= 1.3, (
        f"ops/(n|E|) = {', '.join(f'{x:.2f}' for x in ratios)} for n = 16, 36, 64, 100; "
        f"spread {spread:.3f} (<= 1.3); wall us/(n|E|) {', '.join(f'{x:.3f}' for x in walls)}")


def _time_sweep(model, state, reps=20):
    from nnbm.response import _ResponseSweep
    sweep = _ResponseSweep(model, state, np.zeros(model.n))
    M = np.diag(state.variance)
    V = np.zeros_like(M)
    eye = np.eye(model.n)
    t0 = time.perf_counter()
    for _ in range(reps):
        sweep(M, V, eye)
    return (time.perf_counter() - t0) / reps


def _snapshot(folder):
    return {str(p.relative_to(folder)): p.read_bytes() for p in sorted(folder.rglob("*"))
            if p.is_file() and not p.name.endswith(".timing.json")}


def criterion_9(workdir=None):
    """Every CLI command, repeated from the same arguments, gives identical bytes."""
    import tempfile
    base = Path(workdir or tempfile.mkdtemp(prefix="nnbm-determinism-"))
    spec = {"experiment": "square-grid", "rows": 2, "cols": 2, "N": 300, "trials": 2,
            "model": {"w_edge": 0.5}, "sampler": {"burn_in": 50},
            "learner": {"init": "moments", "optimizer": "fisher", "step_size": 0.5}}
    commands = [
        ["generate", "grid", "--rows", "3", "--cols", "3", "--seed", "7", "--w-edge", "0.5", "--out", "g.json"],
        ["generate", "orientation", "--n", "12", "--out", "o.json"],
        ["generate", "grid", "--rows", "1", "--cols", "3", "--seed", "1", "--out", "t.json"],
        ["sample", "--model", "g.json", "--N", "2000", "--seed", "3", "--burn-in", "100", "--out", "d.tsv"],
        ["infer", "--method", "naive", "--model", "g.json", "--out-dir", "inf_naive"],
        ["infer", "--method", "tap", "--model", "g.json", "--out-dir", "inf_tap"],
        ["infer", "--method", "susp", "--model", "g.json", "--out-dir", "inf_susp"],
        ["infer", "--method", "isusp", "--model", "o.json", "--out-dir", "inf_isusp"],
        ["oracle", "--model", "t.json", "--out", "oracle.json"],
        ["learn", "--data", "d.tsv", "--topo", "g.json", "--method", "isusp", "--init", "moments",
         "--optimizer", "fisher", "--step-size", "0.5", "--out", "learned.json"],
        ["experiment", "--spec", "spec.json", "--out-dir", "exp"],
    ]
    snaps = []
    cwd = os.getcwd()
    try:
        for k in range(2):
            d = base / f"run{k}"
            d.mkdir(parents=True)
            (d / "spec.json").write_text(json.dumps(spec))
            os.chdir(d)
            for cmd in commands:
                code = cli_main(cmd)
                if code != 0:
                    return False, f"command {' '.join(cmd)} exited {code}"
            snaps.append(_snapshot(d))
    finally:
        os.chdir(cwd)
    diff = sorted(set(snaps[0]) ^ set(snaps[1]))
    diff += [name for name in snaps[0] if name in snaps[1] and snaps[0][name] != snaps[1][name]]
    return not diff, (f"{len(commands)} commands, {len(snaps[0])} output files compared; "
                      f"differences: {diff if diff else 'none'}")


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 10)}


def _report(k, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {CRITERIA[k].__doc__.strip()} -- {detail}"
    print(line, flush=True)
    return line


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, capsys, tmp_path):
    ok, detail = CRITERIA[k](tmp_path) if k == 9 else CRITERIA[k]()
    with capsys.disabled():
        print()
        _report(k, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    chosen = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = [CRITERIA[k]() for k in chosen]
    for k, (ok, detail) in zip(chosen, results):
        _report(k, ok, detail)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
