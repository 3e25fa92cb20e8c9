import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maglab.carleman import (SweepReport, SweepRow, alpha_floor, apply_L, apply_M1, apply_M2,
                             build_beta, check_carleman, check_carleman_y, check_klibanov,
                             compute_I, compute_gamma_plus, conjugation_residual, eval_weights,
                             random_spacetime_field, symmetric_times, time_primitive,
                             verify_assumption, weights_from_callables)
from maglab.errors import ConfigurationError, DomainError
from maglab.grid import Grid


@pytest.fixture
def w1():
    return build_beta(Grid.uniform(1, 33), [-0.5], m=2.0, lam=0.1, s=1.0, T=1.0)


@pytest.fixture
def field1(w1):
    times = symmetric_times(1.0, 32)
    return times, random_spacetime_field(w1.grid, times, np.random.default_rng(4))


# ------------------------------------------------------------------ weights

def test_quadratic_weight_values():
    g = Grid.uniform(1, 9)
    w = build_beta(g, [-0.5], m=2.0, lam=1.0)
    mid = 4  # x = 0.5
    assert np.allclose(w.beta_tilde[[0, mid, -1]], [0.25, 1.0, 2.25])
    assert w.K == pytest.approx(4.5)
    assert w.beta[mid] == pytest.approx(5.5)
    cert = verify_assumption(w)
    assert cert.C0 == pytest.approx(1.0)
    assert cert.eps == pytest.approx(2.0)
    phi, eta, eta_t, _, _ = eval_weights(w, 0.0)
    assert phi[mid] == pytest.approx(np.exp(5.5))
    assert phi[mid] == pytest.approx(244.692, abs=1e-3)
    assert eta[mid] == pytest.approx(np.exp(9) - np.exp(5.5))
    assert eta[mid] == pytest.approx(7858.39, abs=1e-2)
    assert np.all(eta_t == 0)


def test_build_beta_rejections():
    g = Grid.uniform(2, 9)
    with pytest.raises(ConfigurationError):
        build_beta(g, [0.5, 0.5])
    with pytest.raises(ConfigurationError):
        build_beta(g, [1.0, 0.0])  # on the closed boundary
    with pytest.raises(ConfigurationError):
        build_beta(g, [-0.5])
    with pytest.raises(ConfigurationError):
        build_beta(g, [-0.5, -0.5], m=1.0)


def test_weights_positive_and_minimal_at_zero(w1):
    times = np.linspace(-0.99, 0.99, 41)
    phi, eta, *_ = eval_weights(w1, times)
    _, eta0, *_ = eval_weights(w1, 0.0)
    assert np.all(phi > 0) and np.all(eta > 0)
    assert np.all(eta >= eta0[None] * (1 - 1e-14))
    with pytest.raises(DomainError):
        eval_weights(w1, 1.0)


def test_weight_derivatives_match_finite_differences(w1):
    t, eps = 0.3, 1e-6
    g = w1.grid
    _, eta, eta_t, grad_eta, lap_eta = eval_weights(w1, t)
    fd_t = (eval_weights(w1, t + eps)[1] - eval_weights(w1, t - eps)[1]) / (2 * eps)
    assert np.allclose(eta_t, fd_t, rtol=1e-6)
    # eta is smooth in x; compare with the analytic derivatives of the quadratic weight
    x = g.coords[0]
    lam, T = w1.lam, w1.T
    beta = (x + 0.5) ** 2 + w1.K
    phi = np.exp(lam * beta) / (T**2 - t**2)
    assert np.allclose(grad_eta[0], -lam * phi * 2 * (x + 0.5))
    assert np.allclose(lap_eta, -lam * phi * (lam * 4 * (x + 0.5) ** 2 + 2))


def test_alpha_floor_variants(w1):
    corr, printed = alpha_floor(w1)
    assert 0 < corr <= np.min(w1.alpha()) * (1 + 1e-12)
    assert printed > corr  # the smaller exponent gives a larger floor
    lK = w1.lam * w1.K
    assert corr == pytest.approx(np.exp(2 * lK) - np.exp(lK * 1.5))


def test_log_alpha_survives_large_lambda(w1):
    la = w1.log_alpha(lam=200.0)  # e^{2 lam K} alone would overflow
    assert np.all(np.isfinite(la))
    assert la[-1] == pytest.approx(2 * 200 * w1.K + np.log1p(-np.exp(200 * (w1.beta[-1] - 2 * w1.K))))


# -------------------------------------------------------------- certificate

def test_gamma_plus_one_dimensional(w1):
    gp, gm = compute_gamma_plus(w1)
    assert list(gp.nodes) == [32] and list(gm.nodes) == [0]
    cert = verify_assumption(w1)
    assert cert.passed and cert.max_dnu_minus < 0


def test_gamma_plus_two_dimensional_faces():
    g = Grid.uniform(2, 9)
    w = build_beta(g, [-0.5, -0.5])
    gp, gm = compute_gamma_plus(w)
    assert set(gp.faces()) == {"x+", "y+"}
    assert set(gm.faces()) == {"x-", "y-"}
    assert np.array_equal(np.union1d(gp.nodes, gm.nodes), g.boundary)
    assert verify_assumption(w).passed


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.01, 5.0), b=st.floats(0.01, 5.0))
def test_moving_source_left_never_shrinks_gamma_plus(a, b):
    g = Grid.uniform(1, 17)
    near, far = sorted((a, b))
    gp_near = compute_gamma_plus(build_beta(g, [-near]))[0].nodes
    gp_far = compute_gamma_plus(build_beta(g, [-far]))[0].nodes
    assert set(gp_near) <= set(gp_far)


def test_constant_weight_fails_gradient_floor():
    g = Grid.uniform(1, 17)
    w = weights_from_callables(g, lambda x: np.ones_like(x), lambda x: [np.zeros_like(x)],
                               lambda x: np.zeros((1, 1) + x.shape))
    cert = verify_assumption(w)
    assert cert.C0 == 0.0 and not cert.pass_a and not cert.passed
    with pytest.raises(ConfigurationError):
        compute_gamma_plus(w)


def test_concave_weight_fails_pseudoconvexity():
    g = Grid.uniform(1, 17)
    w = weights_from_callables(g, lambda x: -((x + 0.5) ** 2), lambda x: [-2 * (x + 0.5)],
                               lambda x: np.full((1, 1) + x.shape, -2.0), lam=0.1)
    cert = verify_assumption(w)
    assert cert.pass_a and not cert.pass_c


# ---------------------------------------------------------------- operators

def test_weight_free_limit(w1, field1):
    times, q = field1
    w0 = w1.with_params(s=0.0)
    idx = np.flatnonzero(np.abs(times) <= 1 - 2 * (times[1] - times[0]) + 1e-12)
    assert np.allclose(apply_M1(w0, q, times)[idx], apply_L(q, times, w1.grid)[idx])
    assert np.all(apply_M2(w0, q, times) == 0)


def test_conjugation_residual_decreases_with_refinement():
    res = []
    for n, nt in ((33, 64), (65, 128)):
        g = Grid.uniform(1, n)
        w = build_beta(g, [-0.5])
        times = symmetric_times(1.0, nt)
        q = random_spacetime_field(g, times, np.random.default_rng(0))
        res.append(conjugation_residual(w, q, times))
    assert res[1] < 5e-2
    assert res[0] / res[1] > 3.0


def test_I_is_a_positive_quadratic_functional(w1, field1):
    times, q = field1
    assert compute_I(w1, np.zeros_like(q), times) == 0.0
    base = compute_I(w1, q, times)
    assert base > 0
    c = 2.5 - 1.5j
    assert compute_I(w1, c * q, times) == pytest.approx(abs(c) ** 2 * base, rel=1e-12)


# ------------------------------------------------------------------ sweeps

def test_sweep_row_degenerate_cases():
    assert SweepRow(1, 0.1, 0.0, 0.0, 0.0).ratio == 0.0
    assert not SweepRow(1, 0.1, 0.0, 0.0, 0.0).violation
    bad = SweepRow(1, 0.1, 1.0, 0.0, 0.0)
    assert bad.ratio == np.inf and bad.violation
    rep = SweepReport([SweepRow(s, 0.1, 1.0 / s, 1.0, 1.0) for s in (1, 2, 4)])
    assert rep.knee_ok() and rep.violations == 0
    rising = SweepReport([SweepRow(s, 0.1, r, 0.0, 1.0) for s, r in ((1, 1), (2, 3), (4, 2), (8, 2.5))])
    assert not rising.knee_ok()


def test_carleman_zero_field_is_trivially_consistent(w1, field1):
    times, q = field1
    gp, _ = compute_gamma_plus(w1)
    rep = check_carleman(w1, np.zeros_like(q), times, gp)
    assert rep.max_ratio == 0.0 and rep.violations == 0
    assert len(rep.rows) == 8


def test_carleman_ratio_finite_on_random_field(w1, field1):
    times, q = field1
    gp, _ = compute_gamma_plus(w1)
    rep = check_carleman(w1, q, times, gp)
    assert np.isfinite(rep.max_ratio) and rep.max_ratio > 0 and rep.violations == 0


def test_carleman_y_zero_difference(w1, field1):
    times, q = field1
    gp, _ = compute_gamma_plus(w1)
    zero = np.zeros_like(q)
    rep = check_carleman_y(w1, zero, zero, np.zeros((1,) + w1.grid.shape), times, gp)
    assert rep.max_ratio == 0.0 and rep.violations == 0


def test_time_primitive_parity():
    times = symmetric_times(1.0, 16)
    p = np.sin(3 * times)[:, None] * np.ones((1, 5))
    P = time_primitive(p, times)
    assert np.allclose(P[16], 0.0)
    assert np.allclose(P, P[::-1])  # odd integrand gives an even primitive
    exact = (1 - np.cos(3 * times)) / 3
    assert np.allclose(P[:, 0], exact, atol=5e-3)


def test_klibanov_boundedness_and_plateau(w1):
    times = symmetric_times(1.0, 64)
    q = random_spacetime_field(w1.grid, times, np.random.default_rng(2))
    p = np.sin(2 * times)[:, None] * q.real[len(times) // 2][None]
    rep = check_klibanov(w1, p, times)
    assert np.all(rep.lhs <= rep.rhs * 10) and np.isfinite(rep.kappa)
    sc = rep.scaled
    assert sc[-1] <= 2 * sc[3]  # s = 64 versus s = 8
    zero = check_klibanov(w1, np.zeros_like(p), times)
    assert np.all(zero.lhs == 0) and zero.kappa == 0.0
    assert rep.corrected_bound_holds
