import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import fsolve

from nnbm import kernels
from nnbm.errors import ConvergenceError, DomainError
from nnbm.model import NnbmModel, Topology, build_orientation_tuning, build_square_grid
from nnbm.tap import (SolverConfig, free_energy_2nd, free_energy_of_moments, naive_mf_solve,
                      state_rows, tap_solve, update_map)

from conftest import pair_model, random_model

# Exact moments of the n=2 pair (b=0.5, w_ii=1, w_12=0.3), mpmath 2-d quadrature.
PAIR_LOGZ = 1.0893607273168021
PAIR_MEAN = 0.89289026538606564
PAIR_VAR = 0.42523987749769168


def _tap_residual(model, x):
    # Independent statement of the TAP equations, written out with dense numpy.
    n = model.n
    m, v = x[:n], x[n:]
    w = model.coupling_matrix()
    c = v - m * m
    l = model.b - w @ m - m * ((w * w) @ c)
    r = model.w_diag - (w * w) @ c
    mm, vv = kernels.site_moments(l, r)
    return np.concatenate([mm - m, vv - v])


def test_edgeless_model_is_exact():
    t = Topology(3, [])
    m = NnbmModel(t, [0.3, -1.0, 2.0], [1.0, 0.5, 4.0], [])
    s = tap_solve(m)
    em, ev = kernels.site_moments(m.b, m.w_diag)
    assert np.allclose(s.m, em, rtol=1e-14) and np.allclose(s.v, ev, rtol=1e-14)
    assert s.iterations == 1


def test_pair_fixed_point_agrees_with_root_finder():
    model = pair_model()
    s = tap_solve(model, cfg=SolverConfig(tol=1e-13))
    x0 = np.concatenate(kernels.site_moments(model.b, model.w_diag))
    root = fsolve(lambda x: _tap_residual(model, x), x0, xtol=1e-14)
    assert np.allclose(np.concatenate([s.m, s.v]), root, atol=1e-11)


def test_pair_is_close_to_exact_moments():
    s = tap_solve(pair_model())
    assert abs(s.m[0] - PAIR_MEAN) < 1e-3
    assert abs(s.variance[0] - PAIR_VAR) < 1e-3
    naive = naive_mf_solve(pair_model())
    # The second-order correction helps.
    assert abs(s.m[0] - PAIR_MEAN) < abs(naive.m[0] - PAIR_MEAN)


def test_free_energy_approximates_log_partition():
    s = tap_solve(pair_model())
    assert -free_energy_2nd(pair_model(), s) == pytest.approx(PAIR_LOGZ, abs=2e-3)


def test_tap_error_shrinks_cubically_in_coupling():
    # Error in log Z of a second-order expansion is O(w^3).
    from nnbm.sampling import quadrature_moments
    errs = []
    for w in (0.2, 0.1):
        model = pair_model(w12=w)
        s = tap_solve(model)
        errs.append(abs(-free_energy_2nd(model, s) - quadrature_moments(model).log_partition))
    assert 5.0 < errs[0] / errs[1] < 12.0


def test_fixed_point_is_stationary_point_of_free_energy():
    rng = np.random.default_rng(5)
    model = random_model(rng, 4)
    s = tap_solve(model, cfg=SolverConfig(tol=1e-13))
    h = 1e-6
    for k in range(4):
        for which in ("m", "v"):
            up = {"m": s.m.copy(), "v": s.v.copy()}
            dn = {"m": s.m.copy(), "v": s.v.copy()}
            up[which][k] += h
            dn[which][k] -= h
            g = (free_energy_of_moments(model, up["m"], up["v"])
                 - free_energy_of_moments(model, dn["m"], dn["v"])) / (2 * h)
            assert abs(g) < 1e-6


def test_returned_state_is_self_consistent(grid_model):
    s = tap_solve(grid_model)
    m, v = kernels.site_moments(s.l, s.r)
    assert np.array_equal(m, s.m) and np.array_equal(v, s.v)
    m2, v2 = update_map(grid_model, s)
    assert np.max(np.abs(m2 - s.m)) < 1e-8


def test_strong_grid_uses_feasible_fallback():
    # The decoupled start is infeasible here (r < 0 after one sweep).
    model = build_square_grid(6, 6, -0.4, 0.4, 1.0, 0.8, 0)
    s = tap_solve(model)
    assert np.all(s.r > 0)
    assert np.max(np.abs(update_map(model, s)[0] - s.m)) < 1e-8


def test_orientation_model_solves():
    model = build_orientation_tuning(36)
    s = tap_solve(model)
    assert np.all(s.m > 0) and np.ptp(s.m) < 1e-9  # translation invariance


def test_warm_start_from_solution_takes_one_sweep(grid_model):
    s = tap_solve(grid_model)
    again = tap_solve(grid_model, init=s)
    assert again.iterations <= 2


def test_iteration_budget_raises_with_trace():
    with pytest.raises(ConvergenceError) as exc:
        tap_solve(pair_model(), cfg=SolverConfig(max_iter=3, tol=1e-15))
    assert len(exc.value.trace) == 3


def test_invalid_config():
    with pytest.raises(DomainError):
        SolverConfig(damping=0.0)
    with pytest.raises(DomainError):
        tap_solve(pair_model(), init=tap_solve(random_model(np.random.default_rng(0), 3)))


def test_lambda_shifts_precision():
    model = pair_model()
    base = tap_solve(model)
    shifted = tap_solve(model, lam=np.array([0.1, 0.1]))
    assert np.allclose(shifted.r, base.r - 0.1, atol=1e-6) or np.all(shifted.r < base.r)


def test_literal_variant_differs_only_off_the_quadratic_term():
    model = pair_model()
    a = tap_solve(model)
    b = tap_solve(model, literal=True)
    assert not np.allclose(a.m, b.m)
    assert np.allclose(a.m, b.m, atol=0.05)


def test_state_rows_are_one_based(golden_pair):
    rows = state_rows(tap_solve(golden_pair))
    assert [r[0] for r in rows] == [1, 2]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_relabelling_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n)
    perm = rng.permutation(n)
    a = tap_solve(model, cfg=SolverConfig(tol=1e-12))
    b = tap_solve(model.permuted(perm), cfg=SolverConfig(tol=1e-12))
    assert np.allclose(b.m, a.m[perm], atol=1e-10)
    assert np.allclose(b.v, a.v[perm], atol=1e-10)
