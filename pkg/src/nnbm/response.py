"""Linear response on top of a TAP solution.

``susp_solve`` differentiates the TAP fixed point with respect to the biases
(susceptibility propagation).  ``isusp_solve`` adds per-vertex multipliers
``lam`` chosen so that the self-response ``M_ii`` equals the TAP variance
``v_i - m_i^2`` and feeds them back into the TAP equations.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateError, DomainError, StateError
from .tap import SolverConfig, _couplings, _lam, tap_solve, update_map


@dataclass
class ResponseState:
    M: np.ndarray
    V: np.ndarray
    L: np.ndarray
    R: np.ndarray
    sweeps: int = 0
    residual: float = 0.0
    ops_per_sweep: int = 0
    trace: list = field(default_factory=list, repr=False)

    @property
    def asymmetry(self):
        """Largest ``|M_ij - M_ji|``; zero only for symmetric responses."""
        return float(np.max(np.abs(self.M - self.M.T))) if self.M.size else 0.0


@dataclass
class LambdaField:
    lam: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n))

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.lam)):
            raise DomainError("lambda field must be finite")


@dataclass
class ISuspResult:
    state: object
    response: ResponseState
    lam: LambdaField
    outer_iterations: int
    trace: list  # (outer, change, gap)

    @property
    def diagonal_gap(self):
        return diagonal_gap(self.state, self.response)

    def __iter__(self):
        return iter((self.state, self.response, self.lam))


def _site_slopes(state):
    """Derivatives of the site mean with respect to ``l`` and ``r``."""
    m, v, l, r = state.m, state.v, state.l, state.r
    return v - m * m, -(l * v - m * m * l + m) / (2.0 * r)


class _ResponseSweep:
    """The linearised TAP map acting on ``(M, V)``, all columns at once."""

    def __init__(self, model, state, lam):
        cp = _couplings(model)
        self.w, self.w2 = cp.w, cp.w2
        self.n = model.n
        self.m, self.v, self.l, self.r = state.m, state.v, state.l, state.r
        self.dm_dl, self.dm_dr = _site_slopes(state)
        self.self_coef = self.w2 @ (self.v - self.m * self.m) + lam
        # Multiply-adds: two sparse products over every column plus four
        # dense entry-wise updates.
        self.ops = self.n * (self.w.nnz + self.w2.nnz + 4 * self.n)

    def __call__(self, M, V, source):
        m, v, l, r = (a[:, None] for a in (self.m, self.v, self.l, self.r))
        T = self.w2 @ (V - 2.0 * m * M)
        R = -T
        L = source - self.w @ M - self.self_coef[:, None] * M - m * T
        M_new = self.dm_dl[:, None] * L + self.dm_dr[:, None] * R
        V_new = (m * L + l * M_new - v * R) / r
        return M_new, V_new, L, R


def check_state(model, state, lam=None, tol=1e-6, literal=False):
    """Raise ``StateError`` unless ``state`` is a fixed point for ``(model, lam)``."""
    m_new, v_new = update_map(model, state, lam, literal=literal)
    res = max(np.max(np.abs(m_new - state.m)), np.max(np.abs(v_new - state.v)))
    if not res <= tol:
        raise StateError(f"state is not a fixed point of the TAP map (residual {res:.3g})")


def susp_solve(model, state, lam=None, cfg=None, init=None, check=True):
    """Solve the susceptibility equations by damped column-wise iteration."""
    cfg = cfg or SolverConfig()
    lamv = _lam(model, lam)
    if check:
        check_state(model, state, lamv, tol=max(1e3 * cfg.tol, 1e-6))
    n = model.n
    sweep = _ResponseSweep(model, state, lamv)
    source = np.eye(n)
    if init is None:
        M = np.diag(state.v - state.m ** 2)
        V = np.zeros((n, n))
    else:
        M, V = init.M.copy(), init.V.copy()
    trace = []
    res = np.inf
    for it in range(1, cfg.max_iter + 1):
        M_new, V_new, L, R = sweep(M, V, source)
        res = float(max(np.max(np.abs(M_new - M)), np.max(np.abs(V_new - V))))
        trace.append(res)
        if not np.isfinite(res):
            break
        if res <= cfg.tol:
            return ResponseState(M_new, V_new, L, R, it, res, sweep.ops, trace)
        a = cfg.damping
        M = M + a * (M_new - M)
        V = V + a * (V_new - V)
    raise ConvergenceError(
        f"susceptibility propagation did not converge in {cfg.max_iter} sweeps "
        f"(residual {res:.3g})",
        residual=res,
        trace=trace,
    )


def susp_dense(model, state, lam=None):
    """Direct solve of the same linear system, for cross-checks at small n.

    Builds the 2n x 2n matrix of the homogeneous sweep from basis vectors.
    """
    n = model.n
    sweep = _ResponseSweep(model, state, _lam(model, lam))
    zero = np.zeros((n, 1))
    A = np.zeros((2 * n, 2 * n))
    for k in range(2 * n):
        e = np.zeros((2 * n, 1))
        e[k] = 1.0
        Mk, Vk, _, _ = sweep(e[:n], e[n:], zero)
        A[:, k] = np.concatenate([Mk[:, 0], Vk[:, 0]])
    M0, V0, _, _ = sweep(np.zeros((n, n)), np.zeros((n, n)), np.eye(n))
    X = np.linalg.solve(np.eye(2 * n) - A, np.vstack([M0, V0]))
    M, V = X[:n], X[n:]
    _, _, L, R = sweep(M, V, np.eye(n))
    return ResponseState(M, V, L, R)


def diagonal_gap(state, resp):
    return float(np.max(np.abs(np.diag(resp.M) - (state.v - state.m ** 2))))


def diagonal_matching(model, state, resp, floor=1e-12):
    """Multipliers that make the self-responses match the TAP variances."""
    m, v = state.m, state.v
    c = v - m * m
    if np.min(c) < floor:
        i = int(np.argmin(c))
        raise DegenerateError(f"variance at vertex {i + 1} is {c[i]:.3g}")
    cp = _couplings(model)
    M, V, R = resp.M, resp.V, resp.R
    # diag(W M) and diag(W2 Y) only touch the edges: O(|E|).
    wm_diag = np.asarray(cp.w.multiply(M.T).sum(axis=1)).ravel()
    Y = V - 2.0 * m[:, None] * M
    w2y_diag = np.asarray(cp.w2.multiply(Y.T).sum(axis=1)).ravel()
    A = -wm_diag - c * (cp.w2 @ c) - m * w2y_diag
    _, dm_dr = _site_slopes(state)
    B = dm_dr * np.diag(R)
    return LambdaField(A / c + B / (c * c))


def covariance_matrix(state, resp):
    """Symmetrised susceptibility matrix used as the covariance estimate."""
    return 0.5 * (resp.M + resp.M.T)


def isusp_solve(model, cfg=None, lam_damping=0.5, max_outer=2000, init=None,
                literal=False):
    """Alternate TAP(lam), susceptibility propagation and diagonal matching.

    ``init`` may be a previous :class:`ISuspResult` to warm-start from.
    """
    cfg = cfg or SolverConfig()
    inner = cfg.tighter(1e-2)
    if init is not None:
        state, resp, lam = init.state, init.response, init.lam.lam.copy()
    else:
        state, resp, lam = None, None, np.zeros(model.n)
    trace = []
    change = gap = np.inf
    for outer in range(1, max_outer + 1):
        prev = state
        state = tap_solve(model, lam, inner, init=state, literal=literal)
        resp = susp_solve(model, state, lam, inner, init=resp, check=False)
        lam_new = diagonal_matching(model, state, resp).lam
        gap = diagonal_gap(state, resp)
        change = float(np.max(np.abs(lam_new - lam)))
        if prev is not None:
            change = max(change, float(np.max(np.abs(state.m - prev.m))),
                         float(np.max(np.abs(state.v - prev.v))))
        trace.append((outer, change, gap))
        if change <= cfg.tol and gap <= cfg.tol:
            return ISuspResult(state, resp, LambdaField(lam), outer, trace)
        if not np.all(np.isfinite(lam_new)):
            break
        lam = lam + lam_damping * (lam_new - lam)
    raise ConvergenceError(
        f"I-SusP outer loop did not converge in {max_outer} iterations "
        f"(change {change:.3g}, diagonal gap {gap:.3g})",
        residual=change,
        trace=trace,
    )
