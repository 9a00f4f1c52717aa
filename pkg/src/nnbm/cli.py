"""Command line: ``nnbm {generate,sample,infer,oracle,learn,experiment}``.

Exit codes: 0 success, 2 usage, 3 convergence, 4 stability, 5 data/domain,
6 unsupported size.  ``NNBM_SEED`` overrides every seed given on the command
line or in an experiment descriptor.
"""

import argparse
import copy
import json
import os
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from . import tables
from .errors import DomainError, NnbmError
from .experiment import ExperimentSpec, run_experiment
from .learning import METHODS, LearnConfig, learn, run_inference
from .model import (Topology, build_orientation_tuning, build_square_grid, hard_failures,
                    load_dataset, load_model, save_dataset, save_model, validate)
from .response import diagonal_gap
from .sampling import OracleConfig, SamplerConfig, gibbs_sample, quadrature_moments
from .tap import SolverConfig, state_rows

EXIT_OK, EXIT_USAGE = 0, 2


def _seed(value):
    env = os.environ.get("NNBM_SEED")
    return int(env) if env not in (None, "") else value


class Run:
    """Collects inputs/outputs of one command and writes its manifest."""

    def __init__(self, args, argv, out_dir):
        self.argv = list(argv)
        self.args = {k: v for k, v in vars(args).items() if k != "func"}
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = []
        self.seeds = {}
        self.t0 = time.perf_counter()

    def add_input(self, path):
        self.inputs[str(path)] = tables.file_digest(path)

    def manifest_path(self, stem):
        return self.out_dir / f"{stem}.manifest.json"

    def finish(self, stem, extra=None, timing=None):
        manifest = {
            "command": self.argv,
            "arguments": self.args,
            "config_sha256": tables.digest(self.args),
            "inputs": self.inputs,
            "outputs": {p: tables.file_digest(p) for p in self.outputs},
            "seeds": self.seeds,
            "library_version": __version__,
            "numpy_version": np.__version__,
        }
        if extra:
            manifest.update(extra)
        tables.write_json(self.manifest_path(stem), manifest)
        # Wall-times vary run to run, so they live beside the manifest.
        tables.write_json(self.out_dir / f"{stem}.timing.json",
                          {"manifest": self.manifest_path(stem).name,
                           "wall_seconds": time.perf_counter() - self.t0, **(timing or {})})


def _out_dir_for(path):
    p = Path(path)
    return p.parent if str(p.parent) else Path(".")


# ---------------------------------------------------------------------------


def cmd_generate(args, argv):
    if args.kind == "grid":
        seed = _seed(args.seed)
        model = build_square_grid(args.rows, args.cols, args.b_low, args.b_high,
                                  args.w_diag, args.w_edge, seed)
    else:
        seed = None
        model = build_orientation_tuning(args.n, args.beta, args.eps, args.circular_distance)
    bad = hard_failures(validate(model))
    if bad:
        raise DomainError("; ".join(f.message for f in bad))
    run = Run(args, argv, _out_dir_for(args.out))
    run.seeds["model"] = seed
    save_model(model, args.out)
    run.outputs.append(str(args.out))
    run.finish(Path(args.out).name)
    print(f"wrote {args.out}: n={model.n}, edges={model.topology.n_edges}")


def cmd_sample(args, argv):
    model = load_model(args.model)
    cfg = SamplerConfig(burn_in=args.burn_in, thin=args.thin, n_samples=args.N,
                        seed=_seed(args.seed))
    data = gibbs_sample(model, cfg)
    run = Run(args, argv, _out_dir_for(args.out))
    run.add_input(args.model)
    run.seeds["chain"] = cfg.seed
    prov = dict(data.provenance)
    prov["model_file"] = str(args.model)
    prov["manifest"] = run.manifest_path(Path(args.out).name).name
    save_dataset(type(data)(data.samples, prov), args.out)
    run.outputs += [str(args.out), str(args.out) + ".json"]
    run.finish(Path(args.out).name)
    print(f"wrote {args.out}: N={cfg.n_samples}, n={model.n}")


def _solver(args):
    return SolverConfig(tol=args.tol, max_iter=args.max_iter, damping=args.damping)


def cmd_infer(args, argv):
    model = load_model(args.model)
    out = Path(args.out_dir)
    run = Run(args, argv, out)
    run.add_input(args.model)
    inf = run_inference(model, args.method, _solver(args), literal=args.paper_literal_eq16_17)
    s = inf.state
    tables.write_tsv(out / "moments.tsv", ["i", "m", "v", "l", "r"], state_rows(s))
    tables.write_trace(out / "tap_trace.tsv", s.trace)
    run.outputs += [str(out / "moments.tsv"), str(out / "tap_trace.tsv")]
    if inf.cov is not None:
        resp = inf.warm[1] if args.method == "susp" else inf.warm.response
        gaps = np.abs(np.diag(resp.M) - s.variance)
        tables.write_matrix(out / "covariance.tsv", inf.cov)
        tables.write_matrix(out / "M.tsv", resp.M)
        tables.write_tsv(out / "gap.tsv", ["i", "M_ii", "v_minus_m2", "abs_gap"],
                         [(i + 1, resp.M[i, i], s.variance[i], gaps[i]) for i in range(model.n)])
        report = {"max_diagonal_gap": diagonal_gap(s, resp), "max_asymmetry": resp.asymmetry}
        if args.method == "isusp":
            report["lambda"] = inf.warm.lam.lam.tolist()
            report["outer_iterations"] = inf.warm.outer_iterations
            tables.write_tsv(out / "isusp_trace.tsv", ["outer", "change", "gap"], inf.warm.trace)
            run.outputs.append(str(out / "isusp_trace.tsv"))
        tables.write_json(out / "gap_report.json", report)
        run.outputs += [str(out / p) for p in ("covariance.tsv", "M.tsv", "gap.tsv", "gap_report.json")]
        print(f"max |M_ii - (v_i - m_i^2)| = {report['max_diagonal_gap']:.3e}")
    run.finish("infer")
    print(f"{args.method}: converged in {s.iterations} sweeps; wrote {out}")


def cmd_oracle(args, argv):
    model = load_model(args.model)
    cfg = OracleConfig(points_per_dim=args.points_per_dim)
    res = quadrature_moments(model, cfg)
    run = Run(args, argv, _out_dir_for(args.out))
    run.add_input(args.model)
    tables.write_json(args.out, {"method": "tensor-gauss-legendre", **res.to_dict(),
                                 "covariance": res.covariance.tolist()})
    run.outputs.append(str(args.out))
    run.finish(Path(args.out).name)
    print(f"wrote {args.out}: log Z = {res.log_partition:.12g}")


def _load_topology(path):
    d = json.loads(Path(path).read_text())
    try:
        return Topology(int(d["n"]), [(int(i) - 1, int(j) - 1) for i, j in d["edges"]])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"malformed topology file: {exc}") from exc


def cmd_learn(args, argv):
    data = load_dataset(args.data)
    topo = _load_topology(args.topo)
    cfg = LearnConfig(method=args.method, step_size=args.step_size, max_epochs=args.max_epochs,
                      grad_tol=args.grad_tol, init=args.init, optimizer=args.optimizer,
                      max_backtracks=args.max_backtracks,
                      literal=args.paper_literal_eq16_17,
                      solver=_solver(args))
    res = learn(data, topo, cfg)
    run = Run(args, argv, _out_dir_for(args.out))
    run.add_input(args.data)
    run.add_input(args.topo)
    model = res.model.with_params(meta={"learned_with": args.method, "converged": res.converged,
                                        "epochs": res.epochs,
                                        "edge_gradient": "covariance" if res.uses_covariance
                                        else "product-of-means only"})
    save_model(model, args.out)
    trace_path = Path(args.out).with_suffix(".trace.tsv")
    tables.write_tsv(trace_path, ["epoch", "grad_norm", "approx_log_likelihood"],
                     [(r.epoch, r.grad_norm, r.log_likelihood) for r in res.trace])
    run.outputs += [str(args.out), str(trace_path)]
    run.finish(Path(args.out).name)
    print(f"{args.method}: {res.epochs} epochs, converged={res.converged}; wrote {args.out}")


def cmd_experiment(args, argv):
    spec = ExperimentSpec.load(args.spec)
    spec.root_seed = _seed(spec.root_seed)
    out = Path(args.out_dir)
    run = Run(args, argv, out)
    run.add_input(args.spec)
    run.seeds["root"] = spec.root_seed

    def progress(t):
        parts = [f"{m}: " + (f"e_b={r['e_b']:.4f} e_w={r['e_w']:.4f}" if r["status"] == "ok"
                             else r["status"]) for m, r in t["methods"].items()]
        print(f"trial {t['trial'] + 1}/{spec.trials}  " + "  ".join(parts), flush=True)

    report = run_experiment(spec, jobs=args.jobs, literal=args.paper_literal_eq16_17,
                            progress=progress)
    tables.write_tsv(out / "table.tsv", ["method", "metric", "mean", "stderr", "trials_ok", "trials"],
                     report.table_rows())
    rows = []
    for t in report.trials:
        for m, r in t["methods"].items():
            rows.append((t["trial"] + 1, m, r["status"], r.get("e_b", float("nan")),
                         r.get("e_w", float("nan")), r.get("epochs", 0), int(bool(r.get("converged")))))
    tables.write_tsv(out / "trials.tsv", ["trial", "method", "status", "e_b", "e_w", "epochs", "converged"], rows)
    # Sidecar: full configuration, no timings (those go to the timing file).
    side = copy.deepcopy(report.to_dict())
    for t in side["trials"]:
        t.pop("sample_seconds", None)
        for r in t["methods"].values():
            r.pop("seconds", None)
    for s in side["summary"].values():
        s.pop("mean_seconds", None)
    side["learner_defaults"] = LearnConfig().to_dict()
    side["sampler_defaults"] = SamplerConfig().__dict__
    tables.write_json(out / "table.json", side)
    run.outputs += [str(out / p) for p in ("table.tsv", "trials.tsv", "table.json")]
    run.finish("experiment", timing={
        "mean_learn_seconds": {m: s["mean_seconds"] for m, s in report.summary.items()},
        "trial_seconds": [{"trial": t["trial"] + 1, "sample": t["sample_seconds"],
                           **{m: r["seconds"] for m, r in t["methods"].items()}}
                          for t in report.trials]})
    for row in report.table_rows():
        print("\t".join(tables.fmt(v) for v in row))
    failures = [t for t in report.trials if any(r["status"] != "ok" for r in t["methods"].values())]
    if failures:
        print(f"{len(failures)} trial(s) had failures; see trials.tsv", file=sys.stderr)


# ---------------------------------------------------------------------------


def _add_solver_flags(p):
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--damping", type=float, default=0.5)


def build_parser():
    ap = argparse.ArgumentParser(prog="nnbm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a benchmark model file")
    gsub = g.add_subparsers(dest="kind", required=True)
    grid = gsub.add_parser("grid", help="square grid with random biases")
    grid.add_argument("--rows", type=int, required=True)
    grid.add_argument("--cols", type=int, required=True)
    grid.add_argument("--seed", type=int, default=0)
    grid.add_argument("--b-low", type=float, default=-0.4)
    grid.add_argument("--b-high", type=float, default=0.4)
    grid.add_argument("--w-diag", type=float, default=1.0)
    grid.add_argument("--w-edge", type=float, default=0.8)
    grid.add_argument("--out", default="model.json")
    ori = gsub.add_parser("orientation", help="orientation-tuning ring model")
    ori.add_argument("--n", type=int, required=True)
    ori.add_argument("--beta", type=float, default=10.0)
    ori.add_argument("--eps", type=float, default=2.0)
    ori.add_argument("--circular-distance", action="store_true")
    ori.add_argument("--out", default="model.json")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sample", help="Gibbs-sample a dataset from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--burn-in", type=int, default=2000)
    s.add_argument("--thin", type=int, default=5)
    s.add_argument("--out", default="data.tsv")
    s.set_defaults(func=cmd_sample)

    i = sub.add_parser("infer", help="mean-field moments and covariances")
    i.add_argument("--method", choices=METHODS, required=True)
    i.add_argument("--model", required=True)
    i.add_argument("--out-dir", default="infer_out")
    i.add_argument("--paper-literal-eq16-17", action="store_true",
                   help="use the modified TAP equations exactly as typeset")
    _add_solver_flags(i)
    i.set_defaults(func=cmd_infer)

    o = sub.add_parser("oracle", help="exact moments by quadrature (n <= 3)")
    o.add_argument("--model", required=True)
    o.add_argument("--points-per-dim", type=int, default=64)
    o.add_argument("--out", default="oracle.json")
    o.set_defaults(func=cmd_oracle)

    le = sub.add_parser("learn", help="fit b and w to a dataset")
    le.add_argument("--data", required=True)
    le.add_argument("--topo", required=True, help="model or topology JSON (n, edges)")
    le.add_argument("--method", choices=METHODS, required=True)
    le.add_argument("--step-size", type=float, default=0.02)
    le.add_argument("--max-epochs", type=int, default=2000)
    le.add_argument("--grad-tol", type=float, default=1e-4)
    le.add_argument("--init", choices=("constant", "moments"), default="constant",
                    help="constant start (b=0, w_ii=1, w_ij=0) or per-site moment fit")
    le.add_argument("--optimizer", choices=("gradient", "fisher"), default="gradient",
                    help="plain ascent or ascent preconditioned by the data Fisher matrix")
    le.add_argument("--max-backtracks", type=int, default=0,
                    help="step halvings allowed when inference fails after an update")
    le.add_argument("--out", default="learned.json")
    le.add_argument("--paper-literal-eq16-17", action="store_true")
    _add_solver_flags(le)
    le.set_defaults(func=cmd_learn)

    e = sub.add_parser("experiment", help="run a repeated learning benchmark")
    e.add_argument("--spec", required=True)
    e.add_argument("--out-dir", default="experiment_out")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--paper-literal-eq16-17", action="store_true")
    e.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        args.func(args, ["nnbm", *argv])
    except NnbmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DomainError.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
