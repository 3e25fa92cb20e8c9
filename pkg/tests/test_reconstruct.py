import numpy as np
import pytest

from maglab.carleman import build_beta, compute_gamma_plus
from maglab.errors import ConfigurationError
from maglab.grid import Grid, divergence, norms
from maglab.hamiltonian import pointwise_norm
from maglab.inverse import make_initial_family, make_potential_pair, simulate_observations
from maglab.reconstruct import (ReconstructionProblem, adjoint_reconstruct, gradient_check,
                                projected_gradient)


def setup(dim, N, N_t, seed=3, delta=0.1, **kw):
    g = Grid.uniform(dim, N)
    pair = make_potential_pair(g, seed, delta)
    fam = make_initial_family(g)
    gp = compute_gamma_plus(build_beta(g, [-0.5] * dim))[0]
    obs, _ = simulate_observations(fam, pair.a, pair.at, gp, 1.0, N_t)
    return g, pair, fam, obs, ReconstructionProblem(fam, pair.a, obs, 1.0, N_t, **kw)


@pytest.mark.parametrize("dim,N,N_t", [(1, 33, 32), (2, 16, 8)])
def test_adjoint_gradient_matches_differences(dim, N, N_t):
    *_, prob = setup(dim, N, N_t)
    rng = np.random.default_rng(1)
    theta = 0.01 * rng.standard_normal(prob.n_params)
    errs = gradient_check(prob, theta, [rng.standard_normal(prob.n_params) for _ in range(3)])
    assert np.all(errs <= 1e-5), errs


def test_objective_vanishes_at_truth_without_regularization():
    g, pair, _, _, prob = setup(1, 33, 16, alpha=0.0)
    truth = pair.diff[0].ravel()[prob.free]
    assert prob.value(truth) <= 1e-20 * prob.value(np.zeros_like(truth))


def test_parameterization_respects_admissible_class():
    g, pair, _, _, prob = setup(2, 20, 4)
    theta = np.random.default_rng(0).standard_normal(prob.n_params)
    assert np.array_equal(prob.field(np.zeros(prob.n_params)), pair.a.a)
    b = prob.field(theta)
    col = g.collar(pair.a.collar_width)
    assert np.allclose(b[:, col], pair.a.a0[:, col], atol=1e-14)
    assert norms(divergence(b, g), g)["L2"] <= 1e-10 * norms(b, g)["L2"]


@pytest.mark.parametrize("dim,N", [(1, 33), (2, 16)])
def test_projection_enforces_bound(dim, N):
    *_, prob = setup(dim, N, 4)
    theta = 50 * np.random.default_rng(2).standard_normal(prob.n_params)
    proj = prob.project(theta)
    assert np.max(pointwise_norm(prob.field(proj))) <= prob.pa.M * (1 + 1e-12)
    small = 1e-6 * theta
    assert np.array_equal(prob.project(small), small)


def test_metric_is_identity_at_zero_length():
    *_, prob = setup(1, 33, 4, metric_length=0.0)
    v = np.arange(prob.n_params, dtype=float)
    assert np.allclose(prob.precondition(v), v)
    *_, smooth = setup(1, 33, 4)
    # the smoothing metric damps oscillatory directions more than smooth ones
    osc = (-1.0) ** np.arange(smooth.n_params)
    flat = np.ones(smooth.n_params)
    assert np.linalg.norm(smooth.precondition(osc)) < np.linalg.norm(smooth.precondition(flat))


def test_zero_difference_converges_immediately():
    *_, prob = setup(1, 33, 8, delta=0.0, alpha=0.0)
    res = projected_gradient(prob, max_iter=5)
    assert res.converged and res.iterations == 0 and np.all(res.theta == 0)


def test_descent_is_monotone_and_reduces_error():
    g, pair, fam, obs, _ = setup(1, 33, 32)
    b, res = adjoint_reconstruct(obs, pair.a, fam, 1.0, 32, iterations=25)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-12 * h[:-1])
    assert h[-1] < 1e-2 * h[0]
    err0 = norms(pair.diff, g)["L2"]
    assert norms(b - pair.at.a, g)["L2"] < 0.5 * err0
    assert res.extra["alpha"] > 0


def test_mismatched_time_grid_rejected():
    g, pair, fam, obs, _ = setup(1, 33, 8)
    with pytest.raises(ConfigurationError):
        ReconstructionProblem(fam, pair.a, obs, 1.0, 16)
