import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnbm.errors import ConvergenceError, StateError
from nnbm.response import (covariance_matrix, diagonal_gap, isusp_solve, susp_dense,
                           susp_solve)
from nnbm.tap import SolverConfig, tap_solve

from conftest import pair_model, random_model

TIGHT = SolverConfig(tol=1e-12)

# Exact covariance of the golden pair, mpmath 2-d quadrature.
PAIR_VAR = 0.42523987749769168
PAIR_COV = -0.050745595440724018


def fd_susceptibility(model, h=1e-6):
    """Central differences of the TAP means with respect to the biases."""
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


def test_pair_matches_finite_differences(golden_pair):
    s = tap_solve(golden_pair, cfg=TIGHT)
    r = susp_solve(golden_pair, s, cfg=TIGHT)
    assert np.allclose(r.M, fd_susceptibility(golden_pair), atol=1e-8)


def test_pair_covariance_close_to_exact(golden_pair):
    s = tap_solve(golden_pair, cfg=TIGHT)
    r = susp_solve(golden_pair, s, cfg=TIGHT)
    assert abs(r.M[0, 0] - PAIR_VAR) < 1e-4
    assert abs(r.M[0, 1] - PAIR_COV) < 5e-4
    # The linear response diagonal beats the TAP variance here.
    assert abs(r.M[0, 0] - PAIR_VAR) < abs(s.variance[0] - PAIR_VAR)


def test_iterative_and_dense_solutions_agree():
    rng = np.random.default_rng(2)
    model = random_model(rng, 5)
    s = tap_solve(model, cfg=TIGHT)
    it = susp_solve(model, s, cfg=TIGHT)
    dense = susp_dense(model, s)
    assert np.allclose(it.M, dense.M, atol=1e-10)
    assert np.allclose(it.V, dense.V, atol=1e-10)


def test_edgeless_response_is_diagonal_variance():
    from nnbm.model import NnbmModel, Topology
    model = NnbmModel(Topology(3, []), [0.2, -0.5, 1.0], [1.0, 2.0, 0.5], [])
    s = tap_solve(model)
    r = susp_solve(model, s)
    assert np.allclose(r.M, np.diag(s.variance), atol=1e-12)


def test_susp_needs_a_fixed_point(golden_pair):
    s = tap_solve(golden_pair)
    s.m = s.m + 0.1
    with pytest.raises(StateError):
        susp_solve(golden_pair, s)


def test_sweep_budget(golden_pair):
    s = tap_solve(golden_pair, cfg=TIGHT)
    with pytest.raises(ConvergenceError):
        susp_solve(golden_pair, s, cfg=SolverConfig(max_iter=2, tol=1e-15))


def test_ops_per_sweep_counts_sparse_work(grid_model):
    s = tap_solve(grid_model)
    r = susp_solve(grid_model, s)
    n, e = grid_model.n, grid_model.topology.n_edges
    assert r.ops_per_sweep <= n * (4 * e + 4 * n)


def test_isusp_closes_the_diagonal_gap(golden_pair):
    res = isusp_solve(golden_pair, TIGHT)
    assert res.diagonal_gap <= 1e-10
    state, resp, lam = res
    assert diagonal_gap(state, resp) == res.diagonal_gap
    # The pair is symmetric, so the multiplier is too.
    assert lam.lam[0] == pytest.approx(lam.lam[1], abs=1e-12)


def test_isusp_is_exact_for_edgeless_model():
    from nnbm.model import NnbmModel, Topology
    model = NnbmModel(Topology(2, []), [0.2, -0.5], [1.0, 2.0], [])
    res = isusp_solve(model)
    assert np.allclose(res.lam.lam, 0.0, atol=1e-12)


def test_isusp_on_grid(grid_model):
    res = isusp_solve(grid_model)
    assert res.diagonal_gap <= 1e-8
    cov = covariance_matrix(res.state, res.response)
    assert np.allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_isusp_warm_start_is_cheap(grid_model):
    res = isusp_solve(grid_model)
    again = isusp_solve(grid_model, init=res)
    assert again.outer_iterations <= 2


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_response_is_nearly_symmetric(seed, n):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n, low=-0.2, high=0.4)
    s = tap_solve(model, cfg=TIGHT)
    r = susp_solve(model, s, cfg=TIGHT)
    # Not symmetric in general; asymmetry is a second-order effect.
    assert r.asymmetry < 0.05 * np.max(np.abs(r.M))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_isusp_relabelling_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n)
    perm = rng.permutation(n)
    a = isusp_solve(model)
    b = isusp_solve(model.permuted(perm))
    assert np.allclose(b.response.M, a.response.M[np.ix_(perm, perm)], atol=1e-7)
    assert np.allclose(b.lam.lam, a.lam.lam[perm], atol=1e-7)
