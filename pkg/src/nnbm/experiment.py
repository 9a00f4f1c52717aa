"""Repeated generate -> sample -> learn -> score trials for the two benchmark models.

Per-trial seeds come from ``numpy.random.SeedSequence(root_seed).spawn(trials)``;
trial ``k`` draws two 32-bit words from its child sequence, the first seeding
the random biases and the second the Gibbs chain.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import json
from pathlib import Path
import time

import numpy as np

from .errors import DomainError, NnbmError
from .learning import METHODS, LearnConfig, learn, mae, mean_and_se
from .model import build_orientation_tuning, build_square_grid
from .sampling import SamplerConfig, gibbs_sample

EXPERIMENTS = ("square-grid", "orientation-tuning")


@dataclass
class ExperimentSpec:
    experiment: str
    N: int = 10000
    trials: int = 10
    methods: tuple = ("susp", "isusp")
    root_seed: int = 0
    rows: int = 6
    cols: int = 6
    n: int = 36
    model: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    learner: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise DomainError(f"experiment must be one of {EXPERIMENTS}")
        if self.trials < 1 or self.N < 1:
            raise DomainError("trials and N must be >= 1")
        self.methods = tuple(self.methods)
        for m in self.methods:
            if m not in METHODS:
                raise DomainError(f"unknown method {m!r}")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise DomainError(f"unknown experiment fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DomainError(f"malformed experiment descriptor: {exc}") from exc

    def to_dict(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d


def trial_seeds(root_seed, trials):
    children = np.random.SeedSequence(root_seed).spawn(trials)
    return [tuple(int(x) for x in c.generate_state(2)) for c in children]


def build_true_model(spec, model_seed):
    p = dict(spec.model)
    if spec.experiment == "square-grid":
        return build_square_grid(
            spec.rows, spec.cols,
            p.get("b_low", -0.4), p.get("b_high", 0.4),
            p.get("w_diag", 1.0), p.get("w_edge", 0.8),
            model_seed,
        )
    # Deterministic parameters: only the dataset changes between trials.
    return build_orientation_tuning(
        spec.n, p.get("beta", 10.0), p.get("eps", 2.0), p.get("circular_distance", False)
    )


def run_trial(spec, index, literal=False):
    model_seed, chain_seed = trial_seeds(spec.root_seed, spec.trials)[index]
    true = build_true_model(spec, model_seed)
    sampler = SamplerConfig(**{**spec.sampler, "n_samples": spec.N, "seed": chain_seed})
    t0 = time.perf_counter()
    data = gibbs_sample(true, sampler)
    out = {"trial": index, "model_seed": model_seed, "chain_seed": chain_seed,
           "sample_seconds": time.perf_counter() - t0, "methods": {}}
    for method in spec.methods:
        cfg = LearnConfig(**{**spec.learner, "method": method, "literal": literal})
        t0 = time.perf_counter()
        try:
            res = learn(data, true.topology, cfg)
        except NnbmError as exc:
            out["methods"][method] = {"status": "error", "error": f"{type(exc).__name__}: {exc}",
                                      "seconds": time.perf_counter() - t0}
            continue
        rep = mae(true, res.model)
        out["methods"][method] = {
            "status": "ok",
            "e_b": rep.e_b,
            "e_w": rep.e_w,
            "epochs": res.epochs,
            "converged": res.converged,
            "final_grad_norm": res.trace[-1].grad_norm,
            "seconds": time.perf_counter() - t0,
        }
    return out


def _run_indexed(args):
    spec_dict, index, literal = args
    return run_trial(ExperimentSpec.from_dict(spec_dict), index, literal)


@dataclass
class TrialReport:
    spec: ExperimentSpec
    trials: list
    summary: dict  # method -> {"e_b": (mean, se), "e_w": (mean, se), "ok": int}

    def table_rows(self):
        rows = []
        for method in self.spec.methods:
            s = self.summary[method]
            for metric in ("e_b", "e_w"):
                mean, se = s[metric]
                rows.append((method, metric, mean, se, s["ok"], len(self.trials)))
        return rows

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "trials": self.trials,
                "summary": {k: {kk: list(vv) if isinstance(vv, tuple) else vv
                                for kk, vv in v.items()} for k, v in self.summary.items()}}


def summarize(spec, trials):
    summary = {}
    for method in spec.methods:
        ok = [t["methods"][method] for t in trials if t["methods"][method]["status"] == "ok"]
        entry = {"ok": len(ok)}
        for metric in ("e_b", "e_w"):
            entry[metric] = mean_and_se([r[metric] for r in ok]) if ok else (float("nan"), float("nan"))
        entry["mean_seconds"] = float(np.mean([r["seconds"] for r in ok])) if ok else float("nan")
        summary[method] = entry
    return summary


def run_experiment(spec, jobs=1, literal=False, progress=None):
    """Run every trial (optionally across processes) and aggregate MAEs."""
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    args = [(spec.to_dict(), k, literal) for k in range(spec.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_run_indexed, args))
    else:
        trials = []
        for a in args:
            trials.append(_run_indexed(a))
            if progress is not None:
                progress(trials[-1])
    trials.sort(key=lambda t: t["trial"])
    return TrialReport(spec, trials, summarize(spec, trials))
