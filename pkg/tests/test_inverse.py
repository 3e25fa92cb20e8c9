import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from maglab.carleman import build_beta, compute_gamma_plus
from maglab.errors import ConfigurationError
from maglab.grid import Grid, divergence, gradient, norms
from maglab.inverse import (ObservationSet, StabilityReport, add_noise, check_initial_trace_bound,
                            keystone_y0, linearized_reconstruct, loglog_slope, make_initial_family,
                            make_potential_pair, region_error, simulate_observations,
                            smallest_singular_value, smooth_step, smooth_step_deriv, solve_2x2,
                            solve_difference_chain, stability_ratio)
from maglab.hamiltonian import pointwise_norm


def gamma_plus(g):
    return compute_gamma_plus(build_beta(g, [-0.5] * g.dim))[0]


# ------------------------------------------------------------------ windows

def test_smooth_step_shape():
    s = np.linspace(-0.5, 1.5, 201)
    v = smooth_step(s)
    assert np.all(v[s <= 0] == 0) and np.all(v[s >= 1] == 1)
    assert np.all(np.diff(v) >= 0)
    assert smooth_step(0.5) == pytest.approx(0.5)
    eps = 1e-6
    inner = np.linspace(0.05, 0.95, 19)
    fd = (smooth_step(inner + eps) - smooth_step(inner - eps)) / (2 * eps)
    assert np.allclose(smooth_step_deriv(inner), fd, rtol=1e-6)


@settings(max_examples=50)
@given(A=arrays(np.float64, (2, 2, 3), elements=st.floats(-10, 10)))
def test_smallest_singular_value_matches_svd(A):
    got = smallest_singular_value(A)
    for k in range(3):
        ref = np.linalg.svd(A[:, :, k], compute_uv=False)[-1]
        assert got[k] == pytest.approx(ref, abs=1e-6 * max(1.0, np.abs(A).max()))


# ------------------------------------------------------------ initial family

def test_bump_family_has_identity_jacobian_on_region():
    g = Grid.uniform(2, 32)
    fam = make_initial_family(g, collar=0.1)
    assert fam.preset == "bump" and fam.n == 2
    reg = fam.region
    assert np.allclose(fam.DU0[0, 0][reg], 1) and np.allclose(fam.DU0[0, 1][reg], 0)
    assert fam.mu == pytest.approx(1.0)


@pytest.mark.parametrize("dim,preset", [(1, "sine"), (1, "bump"), (2, "bump")])
def test_family_jacobian_matches_differences(dim, preset):
    errs = []
    for n in ((33, 65) if preset == "sine" else (65, 129)):
        g = Grid.uniform(dim, n)
        # the bump ramp spans the collar; a wide collar reaches the asymptotic rate sooner
        collar = 0.15 if preset == "sine" else 0.24
        fam = make_initial_family(g, preset=preset, collar=collar, check=False)
        inner = ~g.boundary_mask
        e = 0.0
        for j, u in enumerate(fam.u0):
            assert np.all(u.reshape(-1)[g.boundary] == 0)
            e = max(e, np.max(np.abs(gradient(u, g) - fam.DU0[j])[:, inner]))
        errs.append(e)
    assert errs[1] < errs[0] / 3


def test_family_rejections():
    with pytest.raises(ConfigurationError):
        make_initial_family(Grid.uniform(2, 24), n=1)
    with pytest.raises(ConfigurationError):
        make_initial_family(Grid.uniform(1, 24), preset="plane")
    with pytest.raises(ConfigurationError, match="degenerate"):
        make_initial_family(Grid.uniform(2, 24), preset="sine")


def test_one_dimensional_family_floor_positive():
    fam = make_initial_family(Grid.uniform(1, 65))
    assert fam.preset == "sine" and fam.floor > 1e-3


# ---------------------------------------------------------------- potentials

@pytest.mark.parametrize("dim", [1, 2])
def test_pair_is_admissible(dim):
    g = Grid.uniform(dim, 33 if dim == 1 else 24)
    pair = make_potential_pair(g, 7, 0.2, M=2.0)
    col = g.collar(pair.a.collar_width)
    for p in pair:
        assert np.max(pointwise_norm(p.a)) <= 2.0
        assert np.allclose(p.a[:, col], p.a0[:, col], atol=0)
        if dim == 2:
            assert norms(divergence(p.a, g), g)["L2"] <= 1e-10
    assert np.max(np.abs(pair.diff)) > 0


def test_pair_reproducible_and_on_one_line():
    g = Grid.uniform(2, 20)
    a = make_potential_pair(g, 5, 0.1)
    b = make_potential_pair(g, 5, 0.1)
    c = make_potential_pair(g, 5, 0.05)
    assert np.array_equal(a.at.a, b.at.a)
    assert np.array_equal(a.a.a, c.a.a)
    assert np.allclose(a.diff, 2 * c.diff)
    assert not np.array_equal(a.a.a, make_potential_pair(g, 6, 0.1).a.a)


def test_pair_zero_delta_and_rejection():
    g = Grid.uniform(1, 33)
    pair = make_potential_pair(g, 1, 0.0)
    assert np.all(pair.diff == 0)
    with pytest.raises(ConfigurationError):
        make_potential_pair(g, 1, -0.1)


def test_pair_amplitude_clamped_to_bound():
    g = Grid.uniform(1, 33)
    pair = make_potential_pair(g, 2, 5.0, M=1.0)
    assert pair.delta < 5.0
    assert np.max(pointwise_norm(pair.at.a)) <= 1.0 + 1e-12


# ------------------------------------------------------------ chain

def test_identical_pair_gives_zero_chain():
    g = Grid.uniform(1, 33)
    pair = make_potential_pair(g, 3, 0.0)
    fam = make_initial_family(g)
    ch = solve_difference_chain(pair.a, pair.at, fam.u0[0], 1.0, 8)
    assert np.all(ch.ext.u == 0) and np.all(ch.ext.d2u == 0)
    obs, _ = simulate_observations(fam, pair.a, pair.at, gamma_plus(g), 1.0, 8)
    rep = stability_ratio(g, pair.diff, obs)
    assert rep.numerator == 0 and rep.D_sq == 0 and rep.R_lin == 0 and not rep.violation


def test_chain_routes_agree_and_start_at_zero():
    g = Grid.uniform(1, 65)
    pair = make_potential_pair(g, 4, 0.1)
    fam = make_initial_family(g)
    ch = solve_difference_chain(pair.a, pair.at, fam.u0[0], 1.0, 64)
    assert np.all(ch.u.u[0] == ch.ut.u[0])
    for name in ("v", "w", "y"):
        assert ch.gaps[name] < 0.05, ch.gaps
    assert ch.gaps["y0"] < 0.05
    assert ch.ext.times[0] == -1.0 and ch.ext.times[-1] == 1.0


def test_keystone_formula_two_dimensional_form():
    g = Grid.uniform(2, 20)
    pair = make_potential_pair(g, 8, 0.1)
    fam = make_initial_family(g)
    y0 = keystone_y0(pair.a, pair.diff, fam.u0[0], fam.grad(0))
    c1 = pair.a.chi(0.0, 1)
    expect = -2 * c1 * np.sum(pair.diff * fam.grad(0), axis=0)
    expect.reshape(-1)[g.boundary] = 0
    assert np.allclose(y0, expect)


# ------------------------------------------------------------ observations

def test_noise_level_is_relative():
    data = np.ones((2, 2, 50, 40), dtype=complex) * 3.0
    assert np.array_equal(add_noise(data, 0.0, None), data)
    noisy = add_noise(data, 1e-2, np.random.default_rng(0))
    rel = np.sqrt(np.mean(np.abs(noisy - data) ** 2)) / 3.0
    assert rel == pytest.approx(1e-2, rel=0.1)


def test_observation_norm_is_trapezoid():
    g = Grid.uniform(1, 17)
    gp = gamma_plus(g)
    times = np.linspace(0, 1, 11)
    data = np.zeros((1, 2, 11, 1), dtype=complex)
    data[0, 0, :, 0] = times
    obs = ObservationSet(times, gp, data)
    assert obs.norm_sq(0, 1) == pytest.approx(1 / 3, rel=1e-2)
    assert obs.norm_sq(0, 2) == 0.0
    assert len(list(obs.rows())) == 2 * 11


def test_stability_report_degenerate_cases():
    assert StabilityReport(0.0, 0.0).R_sq == 0.0
    bad = StabilityReport(1.0, 0.0)
    assert bad.violation and bad.R_lin == np.inf
    rep = StabilityReport(2.0, 4.0, 3, 0.1)
    assert rep.R_sq == 0.5 and rep.R_lin == 1.0 and rep.row()[0] == 3


def test_loglog_slope_exact_on_power_law():
    x = np.array([1e-3, 1e-2, 1e-1])
    assert loglog_slope(x, 7 * x**-1) == pytest.approx(-1.0)


# ------------------------------------------------------------ reconstruction

def test_linearized_two_dimensional_inverts_jacobian(rng):
    g = Grid.uniform(2, 24)
    fam = make_initial_family(g, collar=0.1)
    d = rng.standard_normal((2,) + g.shape)
    chi1 = 1.3
    y0s = [-2 * chi1 * np.sum(d * fam.DU0[j], axis=0) for j in range(2)]
    res = linearized_reconstruct(fam, y0s, chi1)
    assert np.allclose(res.d[:, fam.region], d[:, fam.region])
    assert np.all(res.d[:, ~fam.region] == 0) and not res.flagged.any()


def test_linearized_one_dimensional_integrates_flux():
    g = Grid.uniform(1, 257)
    x = g.coords[0]
    fam = make_initial_family(g)
    d = np.sin(3 * x) * np.exp(x)
    dd = (3 * np.cos(3 * x) + np.sin(3 * x)) * np.exp(x)
    u0, du0 = fam.u0[0], fam.DU0[0, 0]
    d = d - d[np.flatnonzero(fam.region)[0] - 1]  # vanish where the integration starts
    chi1 = 0.8
    y0 = -chi1 * (2 * d * du0 + dd * u0)
    res = linearized_reconstruct(fam, [y0], chi1, coulomb=False)
    assert region_error(g, fam.region, res.d, d[None]) < 1e-3


def test_solve_2x2_matches_numpy(rng):
    A = rng.standard_normal((2, 2, 5)) + 3 * np.eye(2)[:, :, None]
    b = rng.standard_normal((2, 5))
    x = solve_2x2(A, b)
    for k in range(5):
        assert np.allclose(x[:, k], np.linalg.solve(A[:, :, k], b[:, k]))


def test_region_error_zero_for_exact():
    g = Grid.uniform(1, 17)
    reg = np.ones(g.shape, bool)
    f = np.ones((1,) + g.shape)
    assert region_error(g, reg, f, f) == 0.0
    assert region_error(g, reg, 2 * f, f) == pytest.approx(1.0)


def test_initial_trace_rows_are_finite():
    g = Grid.uniform(1, 33)
    pair = make_potential_pair(g, 5, 0.1)
    fam = make_initial_family(g)
    ch = solve_difference_chain(pair.a, pair.at, fam.u0[0], 1.0, 32, chained=False)
    w = build_beta(g, [-0.5])
    rows = check_initial_trace_bound(w, ch, gamma_plus(g), pair.diff)
    assert len(rows) == 8
    for r in rows:
        assert r.I > 0 and np.isfinite(r.normalized_ratio()) and np.isfinite(r.normalized_ratio(False))
        assert r.I_identity > 0
