"""Second-order (TAP) mean-field equations for NNBMs.

The update map, for multipliers ``lam`` (all zero for the plain equations)::

    c_j = v_j - m_j^2
    l_i = b_i - sum_j w_ij m_j - m_i sum_j w_ij^2 c_j - lam_i m_i
    r_i = w_ii - sum_j w_ij^2 c_j - lam_i
    m_i, v_i = moments of the site (l_i, r_i)

is iterated Jacobi-style with damping on ``(m, v)``.  The naive mean-field
variant drops every ``w_ij^2`` term.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConvergenceError, DomainError, StabilityError


@dataclass
class SolverConfig:
    tol: float = 1e-9
    max_iter: int = 10000
    damping: float = 0.5
    r_floor: float = 1e-8
    max_retries: int = 20

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be > 0")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise DomainError("damping must lie in (0, 1]")
        if not self.r_floor > 0:
            raise DomainError("r_floor must be > 0")

    def tighter(self, factor):
        return replace(self, tol=self.tol * factor)


@dataclass
class MomentState:
    m: np.ndarray
    v: np.ndarray
    l: np.ndarray
    r: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    trace: list = field(default_factory=list, repr=False)

    @property
    def variance(self):
        return self.v - self.m * self.m

    def copy(self):
        return MomentState(self.m.copy(), self.v.copy(), self.l.copy(), self.r.copy(),
                           self.iterations, self.residual, list(self.trace))


def _couplings(model):
    return model.cached("couplings", lambda: _Couplings(model))


class _Couplings:
    """Sparse ``w`` and ``w**2`` (off-diagonal) for one model."""

    def __init__(self, model):
        self.b = model.b
        self.w_diag = model.w_diag
        self.w = model.sparse_couplings()
        self.w2 = self.w.multiply(self.w).tocsr()

    def conjugates(self, m, v, lam, variant="tap", literal=False):
        c = v - m * m
        wm = self.w @ m
        if variant == "naive":
            return self.b - wm - lam * m, self.w_diag - lam
        if literal:
            # Modified equations exactly as typeset, kept for comparison.
            return (self.b - wm - m * (self.w @ c) - lam * m,
                    self.w_diag - self.w2 @ v - lam)
        s = self.w2 @ c
        return self.b - wm - m * s - lam * m, self.w_diag - s - lam


def _lam(model, lam):
    if lam is None:
        return np.zeros(model.n)
    lam = np.asarray(getattr(lam, "lam", lam), dtype=float)
    if lam.shape != (model.n,) or not np.all(np.isfinite(lam)):
        raise DomainError("lambda field must be a finite vector of length n")
    return lam


def independent_start(model):
    """Moments of the decoupled sites ``(b_i, w_ii)``."""
    return kernels.site_moments(model.b, model.w_diag)


def _solve(model, lam, cfg, init, variant, literal):
    cfg = cfg or SolverConfig()
    lam = _lam(model, lam)
    cp = _couplings(model)
    if init is None:
        m, v = independent_start(model)
        if variant == "tap" and cp.conjugates(m, v, lam, variant, literal)[1].min() < cfg.r_floor:
            return _fallback_solve(model, lam, cfg, literal)
    else:
        m, v = np.array(init.m, dtype=float), np.array(init.v, dtype=float)
        if m.shape != (model.n,) or v.shape != (model.n,):
            raise DomainError("initial state has the wrong size")
    trace = []
    l, r = cp.conjugates(m, v, lam, variant, literal)
    res = np.inf
    for it in range(1, cfg.max_iter + 1):
        if r.min() < cfg.r_floor:
            raise StabilityError(
                f"r fell below {cfg.r_floor:g} at vertex {int(np.argmin(r)) + 1} "
                f"(r = {r.min():.3g}) in sweep {it}"
            )
        m_new, v_new = kernels.site_moments(l, r)
        res = float(max(np.max(np.abs(m_new - m)), np.max(np.abs(v_new - v))))
        trace.append(res)
        if res <= cfg.tol:
            return MomentState(m_new, v_new, l, r, it, res, trace)
        alpha = cfg.damping
        for _ in range(cfg.max_retries + 1):
            m_try = m + alpha * (m_new - m)
            v_try = v + alpha * (v_new - v)
            l_try, r_try = cp.conjugates(m_try, v_try, lam, variant, literal)
            if r_try.min() >= cfg.r_floor:
                break
            alpha *= 0.5
        else:
            raise StabilityError(
                f"r stays below {cfg.r_floor:g} after {cfg.max_retries} damping "
                f"reductions in sweep {it}"
            )
        if not (np.all(np.isfinite(m_try)) and np.all(np.isfinite(v_try))):
            raise StabilityError(f"non-finite moments in sweep {it}")
        m, v, l, r = m_try, v_try, l_try, r_try
    raise ConvergenceError(
        f"{variant} solver did not converge in {cfg.max_iter} sweeps "
        f"(residual {res:.3g})",
        residual=res,
        trace=trace,
    )


def _fallback_solve(model, lam, cfg, literal, steps=10):
    """Start from naive mean field; if that is infeasible too, ramp the couplings.

    Used when the independent-site start already violates ``r > r_floor``,
    which happens for strong couplings.
    """
    cp = _couplings(model)
    start = naive_mf_solve(model, cfg)
    if cp.conjugates(start.m, start.v, lam, "tap", literal)[1].min() >= cfg.r_floor:
        return _solve(model, lam, cfg, start, "tap", literal)
    state = None
    for t in np.linspace(0.0, 1.0, steps + 1)[1:]:
        ramped = model.with_params(w_edge=model.w_edge * t)
        state = _solve(ramped, lam * t, cfg, state, "tap", literal)
    return state


def tap_solve(model, lam=None, cfg=None, init=None, literal=False):
    """Solve the (optionally multiplier-modified) TAP equations."""
    return _solve(model, lam, cfg, init, "tap", literal)


def naive_mf_solve(model, cfg=None, init=None):
    """First-order mean field: the TAP map without the ``w**2`` terms."""
    return _solve(model, None, cfg, init, "naive", False)


def update_map(model, state, lam=None, variant="tap", literal=False):
    """One undamped application of the update map; returns ``(m, v)``."""
    l, r = _couplings(model).conjugates(state.m, state.v, _lam(model, lam), variant, literal)
    return kernels.site_moments(l, r)


def free_energy_2nd(model, state):
    """Second-order free energy evaluated at ``state`` (uses its ``l``, ``r``)."""
    m, v, l, r = state.m, state.v, state.l, state.r
    if np.any(np.asarray(r) <= 0):
        raise DomainError("free energy needs r > 0 at every vertex")
    c = v - m * m
    f = -model.b @ m + 0.5 * model.w_diag @ v
    f += np.sum(l * m - 0.5 * r * v - kernels.site_log_partition(l, r))
    ea = model.topology.edge_array
    if len(ea):
        i, j = ea[:, 0], ea[:, 1]
        f += np.sum(model.w_edge * m[i] * m[j])
        f -= 0.5 * np.sum(model.w_edge ** 2 * c[i] * c[j])
    return float(f)


def free_energy_of_moments(model, m, v):
    """Free energy at arbitrary feasible ``(m, v)``, maximising over ``(l, r)``."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    l, r = kernels.site_conjugate(m, v)
    return free_energy_2nd(model, MomentState(m, v, np.atleast_1d(l), np.atleast_1d(r)))


def approx_log_likelihood(model, stats, state):
    """Average log-likelihood with ``-log Z`` replaced by the free energy."""
    val = model.b @ stats.mean1 - 0.5 * model.w_diag @ stats.mean2_diag
    val -= model.w_edge @ stats.mean2_edge
    return float(val + free_energy_2nd(model, state))


def state_rows(state):
    """Rows ``(i, m, v, l, r)`` with 1-based vertex index."""
    return [(i + 1, state.m[i], state.v[i], state.l[i], state.r[i]) for i in range(len(state.m))]
