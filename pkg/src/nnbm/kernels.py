"""Single-site rectified-Gaussian kernels.

A site with linear coefficient ``l`` and quadratic coefficient ``r > 0`` has
density proportional to ``exp(l*x - r*x**2/2)`` on ``[0, inf)``.  Every
solver in the package reduces to these one-dimensional integrals, so they
are written to stay accurate far into the tails.

All functions accept scalars or numpy arrays and broadcast.
"""

import numpy as np
from scipy import special

from .errors import DomainError

SQRT_PI = np.sqrt(np.pi)

# Below this value of l/sqrt(2r) the direct mean formula subtracts two
# nearly equal numbers; switch to the continued fraction.
MEAN_SWITCH = -4.0
LN_ERFCX_SWITCH = -6.0
_CF_TERMS = 40


def _as_finite(t, name="t"):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError(f"{name} must be finite")
    return t


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise DomainError("quadratic coefficient r must be finite and > 0")
    return r


def _out(x):
    return x.item() if np.ndim(x) == 0 else x


def erfcx(t):
    """Scaled complementary error function ``exp(t**2) * erfc(t)``.

    Overflows to ``inf`` for ``t < -26.6``; use :func:`ln_erfcx` there.
    """
    t = _as_finite(t)
    return _out(special.erfcx(t))


def ln_erfcx(t):
    """``log(erfcx(t))`` without overflow for any finite ``t``."""
    t = _as_finite(t)
    out = np.empty_like(t)
    neg = t <= LN_ERFCX_SWITCH
    # erfc(t) lies in (1, 2] here, so the log is well conditioned.
    out[neg] = t[neg] ** 2 + np.log(special.erfc(t[neg]))
    out[~neg] = np.log(special.erfcx(t[~neg]))
    return _out(out)


def _mills_tail(t, terms=_CF_TERMS):
    """Return ``(K, Q)`` with ``K = 1/(sqrt(pi) erfcx(t)) - t``.

    Uses the Laplace continued fraction
    ``K = a1/(t + a2/(t + a3/(t + ...)))`` with ``a_k = k/2``; ``Q`` is the
    inner tail so that ``K = 0.5/(t + Q)``.  Intended for ``t >= 4``.
    """
    t = np.asarray(t, dtype=float)
    tail = np.zeros_like(t)
    if tail.size == 0:
        return tail, tail
    for k in range(terms, 1, -1):
        tail = (0.5 * k) / (t + tail)
    return 0.5 / (t + tail), tail


def _mean_direct(l, r):
    t = -l / np.sqrt(2.0 * r)
    return l / r + np.sqrt(2.0 / (np.pi * r)) / special.erfcx(t)


def _mean_tail(l, r):
    t = -l / np.sqrt(2.0 * r)
    k, _ = _mills_tail(t)
    return np.sqrt(2.0 / r) * k


def site_mean(l, r):
    """Mean of the rectified Gaussian with density ~ exp(l x - r x^2 / 2)."""
    l = _as_finite(l, "l")
    r = _check_r(r)
    l, r = np.broadcast_arrays(l, r)
    out = np.empty(l.shape)
    tail = l / np.sqrt(2.0 * r) < MEAN_SWITCH
    out[tail] = _mean_tail(l[tail], r[tail])
    out[~tail] = _mean_direct(l[~tail], r[~tail])
    return _out(out)


def site_second_moment(l, r, m):
    """Second moment ``(1 + l m) / r`` given the site mean ``m``."""
    r = _check_r(r)
    return _out((1.0 + np.asarray(l, dtype=float) * np.asarray(m, dtype=float)) / r)


def site_third_moment(l, r, m, v):
    # Integration by parts: E[x^3] = (l E[x^2] + 2 E[x]) / r.
    return (l * v + 2.0 * m) / r


def site_log_partition(l, r):
    """``log`` of the integral of ``exp(l x - r x^2/2)`` over ``[0, inf)``."""
    l = _as_finite(l, "l")
    r = _check_r(r)
    return _out(0.5 * np.log(np.pi / (2.0 * r)) + ln_erfcx(-l / np.sqrt(2.0 * r)))


def site_moments(l, r):
    """Return ``(m, v)`` for arrays of site parameters."""
    m = np.asarray(site_mean(l, r), dtype=float)
    v = np.asarray(site_second_moment(l, r, m), dtype=float)
    return m, v


def site_conjugate(m, v, tol=1e-13, max_iter=100):
    """Invert the moment map: find ``(l, r)`` whose site has moments ``(m, v)``.

    This is the maximiser of ``l m - r v / 2 - log Z(l, r)``; the objective is
    concave, so Newton's method with step halving on ``r > 0`` is enough.
    Requires ``m > 0`` and ``v > m**2``.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float)).copy()
    v = np.atleast_1d(np.asarray(v, dtype=float)).copy()
    if np.any(m <= 0) or np.any(v <= m * m):
        raise DomainError("site_conjugate needs m > 0 and v > m^2")
    # Gaussian moment matching is a good start for the concave ascent.
    r = 1.0 / (v - m * m)
    l = m * r
    for _ in range(max_iter):
        mu1, mu2 = site_moments(l, r)
        mu3 = site_third_moment(l, r, mu1, mu2)
        mu4 = (l * mu3 + 3.0 * mu2) / r
        g1 = m - mu1
        g2 = 0.5 * (mu2 - v)
        scale = np.maximum(np.abs(m), np.abs(v))
        if np.all(np.abs(g1) <= tol * scale) and np.all(np.abs(g2) <= tol * scale):
            break
        # Negative Hessian is the covariance of (x, -x^2/2).
        h11 = mu2 - mu1 * mu1
        h12 = -0.5 * (mu3 - mu1 * mu2)
        h22 = 0.25 * (mu4 - mu2 * mu2)
        det = h11 * h22 - h12 * h12
        dl = (h22 * g1 - h12 * g2) / det
        dr = (h11 * g2 - h12 * g1) / det
        step = np.ones_like(l)
        while True:
            bad = r + step * dr <= 0.0
            if not np.any(bad):
                break
            step[bad] *= 0.5
        l = l + step * dl
        r = r + step * dr
    return _out(np.squeeze(l)), _out(np.squeeze(r))
