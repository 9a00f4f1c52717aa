"""Reference machinery: truncated-normal site sampler, Gibbs chains, and
brute-force moment oracles (tensor quadrature for n <= 3, Monte Carlo above).
"""

from dataclasses import dataclass, asdict
import itertools
import math

import numpy as np

from . import kernels
from .errors import AccuracyError, DomainError, UnsupportedSizeError
from .model import PRNG_NAME, Dataset

MAX_QUADRATURE_DIM = 3


@dataclass
class SamplerConfig:
    burn_in: int = 2000
    thin: int = 5
    n_samples: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0 or self.thin < 1 or self.n_samples < 1:
            raise DomainError("need burn_in >= 0, thin >= 1, n_samples >= 1")


@dataclass
class OracleConfig:
    points_per_dim: int = 64
    tail_mass_cut: float = 1e-13
    mc_samples: int = 100000
    mc_seed: int = 0
    max_grid_points: int = 2 ** 23

    def __post_init__(self):
        if self.points_per_dim < 16:
            raise DomainError("points_per_dim must be >= 16")
        if not 0 < self.tail_mass_cut <= 1e-10:
            raise DomainError("tail_mass_cut must lie in (0, 1e-10]")


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


# --------------------------------------------------------------------------
# Single-site sampler


def _robert_rate(alpha):
    return 0.5 * (alpha + np.sqrt(alpha * alpha + 4.0))


def sample_truncated_site(a, w_ii, rng, size=None):
    """Draw from the density ~ exp(a x - w_ii x^2 / 2) on [0, inf).

    Location ``a / w_ii`` and scale ``1 / sqrt(w_ii)``.  When the location is
    nonnegative, plain rejection from the untruncated normal accepts at
    least half of the proposals; otherwise an exponential proposal anchored
    at the truncation point is used (Robert, 1995).
    """
    if not w_ii > 0:
        raise DomainError("w_ii must be > 0")
    scale = 1.0 / math.sqrt(w_ii)
    mu = a / w_ii
    alpha = -mu / scale  # truncation point in standard units
    if size is None:
        return float(_standard_tail(alpha, rng, 1)[0] * scale + mu)
    return _standard_tail(alpha, rng, int(np.prod(size))).reshape(size) * scale + mu


def _standard_tail(alpha, rng, count):
    out = np.empty(count)
    todo = np.arange(count)
    if alpha <= 0.0:
        while len(todo):
            z = rng.standard_normal(len(todo))
            ok = z >= alpha
            out[todo[ok]] = z[ok]
            todo = todo[~ok]
        return out
    lam = _robert_rate(alpha)
    while len(todo):
        z = alpha + rng.standard_exponential(len(todo)) / lam
        ok = rng.random(len(todo)) <= np.exp(-0.5 * (z - lam) ** 2)
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    # Guard against round-off putting a draw a hair below the bound.
    return np.maximum(out, alpha)


class _Stream:
    """Buffered scalar draws from one generator; consumption order is fixed."""

    def __init__(self, rng, block=1 << 14):
        self.rng = rng
        self.block = block
        self._normal = self._uniform = self._expo = None
        self._in = self._iu = self._ie = block

    def normal(self):
        if self._in == self.block:
            self._normal = self.rng.standard_normal(self.block).tolist()
            self._in = 0
        self._in += 1
        return self._normal[self._in - 1]

    def uniform(self):
        if self._iu == self.block:
            self._uniform = self.rng.random(self.block).tolist()
            self._iu = 0
        self._iu += 1
        return self._uniform[self._iu - 1]

    def exponential(self):
        if self._ie == self.block:
            self._expo = self.rng.standard_exponential(self.block).tolist()
            self._ie = 0
        self._ie += 1
        return self._expo[self._ie - 1]


def _draw_site(a, w_ii, stream):
    scale = 1.0 / math.sqrt(w_ii)
    mu = a / w_ii
    alpha = -mu / scale
    if alpha <= 0.0:
        while True:
            z = stream.normal()
            if z >= alpha:
                return mu + scale * z
    lam = 0.5 * (alpha + math.sqrt(alpha * alpha + 4.0))
    while True:
        z = alpha + stream.exponential() / lam
        if stream.uniform() <= math.exp(-0.5 * (z - lam) ** 2):
            return max(mu + scale * z, 0.0)


# --------------------------------------------------------------------------
# Gibbs sampler


def gibbs_sample(model, cfg, init=None):
    """Sequential-sweep Gibbs chain; every ``thin``-th sweep after burn-in is kept."""
    if np.any(model.w_diag <= 0):
        raise DomainError("w_diag must be > 0")
    n = model.n
    W = model.coupling_matrix()
    rows = [W[i] for i in range(n)]
    nbrs = [np.asarray(model.topology.neighbors(i), dtype=int) for i in range(n)]
    b = model.b.tolist()
    wd = model.w_diag.tolist()
    if init is None:
        x = np.asarray(kernels.site_mean(model.b, model.w_diag), dtype=float).reshape(n)
    else:
        x = np.array(init, dtype=float).reshape(n)
        if np.any(x < 0):
            raise DomainError("initial chain state must be nonnegative")
    stream = _Stream(make_rng(cfg.seed))
    out = np.empty((cfg.n_samples, n))
    total = cfg.burn_in + cfg.n_samples * cfg.thin
    kept = 0
    dense = model.topology.n_edges * 2 > n * (n - 1) // 2
    for sweep in range(1, total + 1):
        for i in range(n):
            if dense:
                a = b[i] - float(rows[i] @ x)
            else:
                nb = nbrs[i]
                a = b[i] - float(rows[i][nb] @ x[nb]) if len(nb) else b[i]
            x[i] = _draw_site(a, wd[i], stream)
        if sweep > cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0:
            out[kept] = x
            kept += 1
    prov = {
        "source": "gibbs",
        "prng": PRNG_NAME,
        "numpy_version": np.__version__,
        "sampler": asdict(cfg),
        "model_meta": model.meta,
    }
    return Dataset(out, prov)


# --------------------------------------------------------------------------
# Oracles


@dataclass
class OracleMoments:
    mean1: np.ndarray
    mean2: np.ndarray  # E[x_i^2]
    cross: np.ndarray  # E[x_i x_j], full n x n (diagonal equals mean2)
    log_partition: float = float("nan")
    error: float = float("nan")
    se_mean1: np.ndarray = None
    se_mean2: np.ndarray = None
    se_cross: np.ndarray = None

    @property
    def covariance(self):
        return self.cross - np.outer(self.mean1, self.mean1)

    def edge_cross(self, topology):
        ea = topology.edge_array
        return self.cross[ea[:, 0], ea[:, 1]] if len(ea) else np.zeros(0)

    def to_dict(self):
        out = {
            "mean1": self.mean1.tolist(),
            "mean2": self.mean2.tolist(),
            "cross": self.cross.tolist(),
            "log_partition": self.log_partition,
            "error_estimate": self.error,
        }
        for k in ("se_mean1", "se_mean2", "se_cross"):
            val = getattr(self, k)
            if val is not None:
                out[k] = val.tolist()
        return out


def _site_tail_log(u, a, w):
    """log P(x > u) for the single site with parameters (a, w)."""
    s = math.sqrt(w / 2.0)
    mu = a / w
    t_u = (u - mu) * s
    t_0 = -mu * s
    return (-(t_u ** 2) + t_0 ** 2 + kernels.ln_erfcx(t_u) - kernels.ln_erfcx(t_0))


def _upper_limit(a, w, cut):
    lo, hi = 0.0, max(a / w, 0.0) + 1.0 / math.sqrt(w)
    while _site_tail_log(hi, a, w) > math.log(cut):
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _site_tail_log(mid, a, w) > math.log(cut):
            lo = mid
        else:
            hi = mid
    return hi


def integration_limits(model, cut):
    """Per-vertex upper limits ``U_i`` bounding the neglected tail mass.

    Negative couplings raise a neighbour's effective bias, so the bound is
    iterated with ``a_i = b_i + sum_j max(0, -w_ij) U_j``.
    """
    W = model.coupling_matrix()
    neg = np.maximum(-W, 0.0)
    # Tenfold margin on the tail mass.
    cut = cut / 10.0
    U = np.array([_upper_limit(b, w, cut) for b, w in zip(model.b, model.w_diag)])
    for _ in range(50):
        a = model.b + neg @ U
        U_new = np.array([_upper_limit(ai, w, cut) for ai, w in zip(a, model.w_diag)])
        if np.allclose(U_new, U, rtol=1e-6):
            break
        U = U_new
    return U_new


def _gauss_legendre(upper, points, per_panel=16):
    panels = max(1, points // per_panel)
    x, w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(0.0, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _tensor_moments(model, U, points):
    n = model.n
    rules = [_gauss_legendre(U[i], points) for i in range(n)]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wts = rules[0][1]
    for r in rules[1:]:
        wts = np.multiply.outer(wts, r[1])
    expo = np.zeros(grids[0].shape)
    for i in range(n):
        expo += model.b[i] * grids[i] - 0.5 * model.w_diag[i] * grids[i] ** 2
    for (i, j), w in zip(model.topology.edges, model.w_edge):
        expo -= w * grids[i] * grids[j]
    shift = expo.max()
    dens = wts * np.exp(expo - shift)
    z = dens.sum()
    mean1 = np.array([np.sum(dens * g) / z for g in grids])
    cross = np.empty((n, n))
    for i, j in itertools.product(range(n), repeat=2):
        if j >= i:
            cross[i, j] = cross[j, i] = np.sum(dens * grids[i] * grids[j]) / z
    return mean1, cross, math.log(z) + shift


def quadrature_moments(model, cfg=None):
    """Exact moments by tensor-product composite Gauss-Legendre quadrature.

    Refines by doubling the points per dimension until every moment changes
    by less than 1e-10 between levels.
    """
    cfg = cfg or OracleConfig()
    n = model.n
    if n > MAX_QUADRATURE_DIM:
        raise UnsupportedSizeError(f"quadrature oracle supports n <= {MAX_QUADRATURE_DIM}, got {n}")
    U = integration_limits(model, cfg.tail_mass_cut)
    points = cfg.points_per_dim
    prev = _tensor_moments(model, U, points)
    while True:
        points *= 2
        if points ** n > cfg.max_grid_points:
            raise AccuracyError("quadrature refinement exceeded the grid budget")
        cur = _tensor_moments(model, U, points)
        err = max(np.max(np.abs(cur[0] - prev[0])), np.max(np.abs(cur[1] - prev[1])),
                  abs(cur[2] - prev[2]))
        if err < 1e-10:
            m1, cross, logz = cur
            return OracleMoments(m1, np.diag(cross).copy(), cross, logz, float(err))
        prev = cur


def _batch_se(x, batches):
    """Batch-means standard error of the column means of ``x``."""
    usable = (len(x) // batches) * batches
    if usable < batches or batches < 2:
        return np.full(x.shape[1:], np.nan)
    bm = x[:usable].reshape(batches, usable // batches, *x.shape[1:]).mean(axis=1)
    return bm.std(axis=0, ddof=1) / math.sqrt(batches)


def dataset_moments(data, batches=50):
    x = data.samples
    cross_samples = x[:, :, None] * x[:, None, :]
    return OracleMoments(
        x.mean(axis=0),
        (x * x).mean(axis=0),
        cross_samples.mean(axis=0),
        se_mean1=_batch_se(x, batches),
        se_mean2=_batch_se(x * x, batches),
        se_cross=_batch_se(cross_samples, batches),
    )


def mc_moments(model, cfg=None, batches=50):
    """Gibbs-based moment estimates with batch-means standard errors."""
    if cfg is None:
        cfg = OracleConfig()
    if isinstance(cfg, OracleConfig):
        cfg = SamplerConfig(n_samples=cfg.mc_samples, seed=cfg.mc_seed)
    return dataset_moments(gibbs_sample(model, cfg), batches)


def site_sample_stats(a, w_ii, draws, seed):
    """Sample mean/second moment and their standard errors for one site."""
    x = sample_truncated_site(a, w_ii, make_rng(seed), size=draws)
    n = len(x)
    return (x.mean(), x.std(ddof=1) / math.sqrt(n), (x * x).mean(), (x * x).std(ddof=1) / math.sqrt(n))

