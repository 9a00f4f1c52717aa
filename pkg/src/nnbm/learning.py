"""Maximum-likelihood learning of NNBM parameters with mean-field moments."""

from dataclasses import dataclass, field, asdict
import math
import time

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (ConvergenceError, DegenerateError, DivergenceError, DomainError,
                     LearningError, StabilityError)
from .kernels import site_conjugate
from .model import NnbmModel, sample_moments
from .response import covariance_matrix, isusp_solve, susp_solve
from .tap import SolverConfig, approx_log_likelihood, naive_mf_solve, tap_solve

METHODS = ("naive", "tap", "susp", "isusp")


@dataclass
class LearnConfig:
    method: str = "isusp"
    step_size: float = 0.02
    max_epochs: int = 2000
    grad_tol: float = 1e-4
    w_diag_floor: float = 0.05
    init_b: float = 0.0
    init_w_diag: float = 1.0
    init_w_edge: float = 0.0
    init: str = "constant"  # or "moments": per-site fit to the data, no couplings
    optimizer: str = "gradient"  # or "fisher": gradient preconditioned by the data Fisher matrix
    ridge: float = 1e-6
    max_backtracks: int = 0  # step halvings allowed when inference fails after a step
    literal: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.step_size > 0:
            raise DomainError("step_size must be > 0")
        if self.optimizer not in ("gradient", "fisher"):
            raise DomainError("optimizer must be 'gradient' or 'fisher'")
        if self.max_backtracks < 0:
            raise DomainError("max_backtracks must be >= 0")
        if self.init not in ("constant", "moments"):
            raise DomainError("init must be 'constant' or 'moments'")
        if not self.w_diag_floor > 0:
            raise DomainError("w_diag_floor must be > 0")
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)

    def to_dict(self):
        return asdict(self)


@dataclass
class Inference:
    """Moments produced by one inference back-end, plus its warm-start payload."""

    method: str
    m: np.ndarray
    v: np.ndarray
    cov: np.ndarray  # None for methods without linear response
    state: object
    warm: object = None
    gap: float = float("nan")
    asymmetry: float = float("nan")


def run_inference(model, method, cfg=None, warm=None, literal=False):
    cfg = cfg or SolverConfig()
    if method == "naive":
        s = naive_mf_solve(model, cfg, init=warm)
        return Inference(method, s.m, s.v, None, s, warm=s)
    if method == "tap":
        s = tap_solve(model, None, cfg, init=warm)
        return Inference(method, s.m, s.v, None, s, warm=s)
    if method == "susp":
        s0, r0 = warm if warm is not None else (None, None)
        s = tap_solve(model, None, cfg, init=s0)
        r = susp_solve(model, s, None, cfg, init=r0, check=False)
        gap = float(np.max(np.abs(np.diag(r.M) - s.variance)))
        return Inference(method, s.m, s.v, covariance_matrix(s, r), s, (s, r), gap, r.asymmetry)
    if method == "isusp":
        res = isusp_solve(model, cfg, init=warm, literal=literal)
        s, r = res.state, res.response
        return Inference(method, s.m, s.v, covariance_matrix(s, r), s, res,
                         res.diagonal_gap, r.asymmetry)
    raise DomainError(f"unknown method {method!r}")


def gradients(stats, m, v, cov, topology):
    """Log-likelihood gradients ``(grad_b, grad_w_diag, grad_w_edge)``.

    With ``cov=None`` (naive/tap back-ends) the edge gradient uses ``m_i m_j``
    alone.
    """
    n = topology.n
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    if m.shape != (n,) or v.shape != (n,) or stats.mean1.shape != (n,):
        raise DomainError("moment vectors do not match the topology size")
    if cov is not None and np.shape(cov) != (n, n):
        raise DomainError("covariance must be n x n")
    ea = topology.edge_array
    grad_b = stats.mean1 - m
    grad_wd = -stats.mean2_diag + v
    if len(ea):
        i, j = ea[:, 0], ea[:, 1]
        model_cross = m[i] * m[j]
        if cov is not None:
            model_cross = model_cross + cov[i, j]
        grad_we = -stats.mean2_edge + model_cross
    else:
        grad_we = np.zeros(0)
    return grad_b, grad_wd, grad_we


@dataclass
class EpochRecord:
    epoch: int
    grad_norm: float
    log_likelihood: float


@dataclass
class LearnResult:
    model: NnbmModel
    trace: list
    converged: bool
    epochs: int
    uses_covariance: bool
    seconds: float = 0.0


def sufficient_statistics(samples, topology):
    """Per-sample ``(x_i, -x_i^2/2, -x_i x_j)``, the derivatives of ``-E`` by ``(b, w_ii, w_ij)``."""
    x = np.asarray(samples, dtype=float)
    ea = topology.edge_array
    parts = [x, -0.5 * x * x]
    if len(ea):
        parts.append(-x[:, ea[:, 0]] * x[:, ea[:, 1]])
    return np.hstack(parts)


class FisherPreconditioner:
    """Inverse of the empirical covariance of the sufficient statistics.

    At the maximum-likelihood point this is the Fisher information, so a
    unit step is close to a Newton step.  The stationary points are the
    same as for plain ascent.
    """

    def __init__(self, samples, topology, ridge=1e-6):
        t = sufficient_statistics(samples, topology)
        f = np.cov(t, rowvar=False)
        f = f + ridge * np.mean(np.diag(f)) * np.eye(f.shape[0])
        self.n = topology.n
        self._cho = cho_factor(f)

    def direction(self, gb, gwd, gwe):
        # Spec gradients for w_ii drop the 1/2 of the energy; restore it here.
        g = np.concatenate([gb, 0.5 * gwd, gwe])
        d = cho_solve(self._cho, g)
        n = self.n
        return d[:n], d[n:2 * n], d[2 * n:]


def check_data(data, topology):
    if data.width != topology.n:
        raise DomainError(f"dataset width {data.width} != n = {topology.n}")
    var = data.samples.var(axis=0)
    if np.any(var <= 1e-12 * np.maximum(1.0, data.samples.mean(axis=0) ** 2)):
        bad = int(np.flatnonzero(var <= 1e-12)[0]) if np.any(var <= 1e-12) else 0
        raise DegenerateError(f"column {bad + 1} of the data has zero variance")


def _advance(last, step, floor):
    b, wd, we, (gb, gwd, gwe) = last
    return b + step * gb, np.maximum(wd + step * gwd, floor), we + step * gwe


def learn(data, topology, cfg=None, true_model=None, on_epoch=None):
    """Gradient-ascent learning on a fixed edge set.

    Returns a :class:`LearnResult`; ``trace`` holds one :class:`EpochRecord`
    per epoch.
    """
    cfg = cfg or LearnConfig()
    check_data(data, topology)
    stats = sample_moments(data, topology)
    if cfg.init == "moments":
        # Exact maximum-likelihood fit of each site on its own.
        b, wd = site_conjugate(stats.mean1, stats.mean2_diag)
        b, wd = np.atleast_1d(b).astype(float), np.maximum(np.atleast_1d(wd), cfg.w_diag_floor)
    else:
        b = np.full(topology.n, cfg.init_b)
        wd = np.full(topology.n, cfg.init_w_diag)
    we = np.full(topology.n_edges, cfg.init_w_edge)
    pre = FisherPreconditioner(data.samples, topology, cfg.ridge) if cfg.optimizer == "fisher" else None
    warm = None
    trace = []
    converged = False
    t0 = time.perf_counter()
    model = NnbmModel(topology, b, wd, we, {"learned_with": cfg.method})
    epoch = 0
    last = None  # (b, wd, we, direction) of the last epoch whose inference succeeded
    for epoch in range(1, cfg.max_epochs + 1):
        step = cfg.step_size
        for attempt in range(cfg.max_backtracks + 1):
            model = NnbmModel(topology, b, wd, we, {"learned_with": cfg.method})
            try:
                inf = run_inference(model, cfg.method, cfg.solver, warm, cfg.literal)
                break
            except (ConvergenceError, StabilityError, DomainError) as exc:
                if last is None or attempt == cfg.max_backtracks:
                    raise LearningError(f"inference failed in epoch {epoch}: {exc}", epoch) from exc
            # Retreat along the previous direction with half the step.
            step *= 0.5
            b, wd, we = _advance(last, step, cfg.w_diag_floor)
        warm = inf.warm
        gb, gwd, gwe = gradients(stats, inf.m, inf.v, inf.cov, topology)
        gnorm = float(max(np.max(np.abs(gb)), np.max(np.abs(gwd)),
                          np.max(np.abs(gwe)) if len(gwe) else 0.0))
        ll = approx_log_likelihood(model, stats, inf.state)
        trace.append(EpochRecord(epoch, gnorm, ll))
        if on_epoch is not None:
            on_epoch(epoch, model, gnorm, ll)
        if gnorm <= cfg.grad_tol:
            converged = True
            break
        if pre is not None:
            gb, gwd, gwe = pre.direction(gb, gwd, gwe)
        last = (b, wd, we, (gb, gwd, gwe))
        b, wd, we = _advance(last, cfg.step_size, cfg.w_diag_floor)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(wd)) and np.all(np.isfinite(we))):
            raise DivergenceError(f"parameters became non-finite in epoch {epoch}", epoch)
    else:
        model = NnbmModel(topology, b, wd, we, {"learned_with": cfg.method})
    return LearnResult(model, trace, converged, epoch, cfg.method in ("susp", "isusp"),
                       time.perf_counter() - t0)


@dataclass
class MaeReport:
    e_b: float
    e_w: float


def mae(true_model, learned):
    if true_model.topology.n != learned.topology.n or set(true_model.topology.edges) != set(learned.topology.edges):
        raise DomainError("models must share a topology")
    e_b = float(np.mean(np.abs(true_model.b - learned.b)))
    idx = learned.topology.edge_index()
    we_l = np.array([learned.w_edge[idx[e]] for e in true_model.topology.edges])
    total = np.sum(np.abs(true_model.w_edge - we_l)) + np.sum(np.abs(true_model.w_diag - learned.w_diag))
    e_w = float(total / (true_model.n + true_model.topology.n_edges))
    return MaeReport(e_b, e_w)


def mean_and_se(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), float("nan")
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))
