"""Admissible potential pairs, the difference chain ``(v, w, y)``, synthetic
Neumann observations, stability ratios and the linearized reconstruction.

Conventions
-----------
``d = a~ - a`` denotes the potential difference.  In 2D both potentials are
discretely divergence free and the keystone identity reads
``y(0) = -2 chi'(0) d . grad u0``.  In 1D a divergence-free field with fixed
boundary values is constant, so 1D pairs are not gauge constrained and the
identity becomes ``y(0) = -chi'(0) (2 d u0' + d' u0)``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import ConfigurationError, InvariantViolation
from .grid import curl, divergence, gradient, neumann_trace, norms, random_smooth_field
from .hamiltonian import (MagneticPotential, TimeProfile, Trajectory, default_collar_width,
                          extend_time_symmetric, interior_values, pointwise_norm,
                          solve_derivative_systems, solve_ibvp)
from .streams import substream

MU_MIN = 1e-3


# --------------------------------------------------------- smooth windows

def smooth_step(s):
    """C-infinity step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    a = _bump_exp(s)
    b = _bump_exp(1.0 - s)
    return a / (a + b)


def smooth_step_deriv(s):
    s = np.asarray(s, dtype=float)
    a, b = _bump_exp(s), _bump_exp(1.0 - s)
    da, db = _bump_exp_deriv(s), _bump_exp_deriv(1.0 - s)
    return (da * b + a * db) / (a + b) ** 2


def _bump_exp(s):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)


def _bump_exp_deriv(s):
    with np.errstate(divide="ignore", over="ignore"):
        safe = np.where(s > 0, s, 1.0)
        return np.where(s > 0, np.exp(-1.0 / safe) / safe**2, 0.0)


def boundary_window(g, margin, ramp):
    """Product of smooth steps: 0 within ``margin`` of the boundary, 1 beyond ``margin + ramp``."""
    out = np.ones(g.shape)
    for x, L in zip(g.mesh(), g.lengths):
        out = out * smooth_step((x - margin) / ramp) * smooth_step((L - x - margin) / ramp)
    return out


def region_mask(g, collar=None):
    """Reconstruction region: nodes farther than the collar width from the boundary."""
    w = default_collar_width(g) if collar is None else collar
    return ~g.collar(w)


# -------------------------------------------------------- initial family

@dataclass
class InitialFamily:
    """Real initial states ``u0_j`` with closed-form Jacobian ``DU0[i, k] = d_k u0_i``."""

    grid: object
    u0: list
    DU0: np.ndarray
    mu1: np.ndarray
    region: np.ndarray
    preset: str
    collar: float

    @property
    def n(self):
        return len(self.u0)

    @property
    def mu(self):
        """Smallest singular value of ``DU0`` over the reconstruction region."""
        return float(np.min(self.mu1[self.region]))

    @property
    def amplitude_floor(self):
        return float(min(np.min(np.abs(u[self.region])) for u in self.u0))

    @property
    def floor(self):
        """The quantity the reconstruction divides by: ``mu`` in 2D, ``min |u0|`` in 1D."""
        return self.mu if self.grid.dim == 2 else self.amplitude_floor

    def grad(self, j):
        return self.DU0[j]


def smallest_singular_value(A):
    """Nodewise smallest singular value of ``A`` with shape ``(n, n, ...)``, n in {1, 2}."""
    if A.shape[0] == 1:
        return np.abs(A[0, 0])
    fro = np.sum(A**2, axis=(0, 1))
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = np.sqrt(np.maximum(fro**2 - 4 * det**2, 0.0))
    return np.sqrt(np.maximum(0.5 * (fro - disc), 0.0))


def _sine_family(g):
    X = g.mesh()
    th = [np.pi * x / L for x, L in zip(X, g.lengths)]
    k = [np.pi / L for L in g.lengths]
    S = np.prod([np.sin(t) for t in th], axis=0)
    dS = []
    for i in range(g.dim):
        others = np.prod([np.sin(th[m]) for m in range(g.dim) if m != i], axis=0) \
            if g.dim > 1 else 1.0
        dS.append(k[i] * np.cos(th[i]) * others)
    u0, DU = [], np.zeros((g.dim, g.dim) + g.shape)
    for j in range(g.dim):
        p = 1 + 0.5 * np.cos(th[j])
        dp = -0.5 * k[j] * np.sin(th[j])
        u0.append(S * p)
        for c in range(g.dim):
            DU[j, c] = dS[c] * p + (S * dp if c == j else 0.0)
    return u0, DU


def _bump_family(g, ramp):
    X = g.mesh()
    b, db = [], []
    for x, L in zip(X, g.lengths):
        lo, hi = smooth_step(x / ramp), smooth_step((L - x) / ramp)
        b.append(lo * hi)
        db.append(smooth_step_deriv(x / ramp) / ramp * hi - lo * smooth_step_deriv((L - x) / ramp) / ramp)
    B = np.prod(b, axis=0)
    dB = []
    for i in range(g.dim):
        others = np.prod([b[m] for m in range(g.dim) if m != i], axis=0) if g.dim > 1 else 1.0
        dB.append(db[i] * others)
    u0, DU = [], np.zeros((g.dim, g.dim) + g.shape)
    for j, (x, L) in enumerate(zip(X, g.lengths)):
        shift = x - 0.5 * L
        u0.append(shift * B)
        for c in range(g.dim):
            DU[j, c] = (B if c == j else 0.0) + shift * dB[c]
    return u0, DU


def make_initial_family(g, n=None, preset=None, collar=None, mu_min=MU_MIN, check=True):
    """Initial states ``u0_1..u0_n`` (``n`` = dimension) and their Jacobian.

    Presets:
      ``sine``: ``u0_j = S(x) (1 + cos(pi x_j / L_j) / 2)`` with ``S`` the product of
      first sine modes (default in 1D).
      ``bump``: ``u0_j = (x_j - L_j/2) B(x)`` with ``B`` a smooth flat-top bump whose
      ramp lies inside the collar, so ``DU0 = I`` on the reconstruction region
      (default in 2D).
    Any family vanishing on the boundary has a degenerate ``DU0`` somewhere,
    so the check is made on the reconstruction region only.
    """
    n = g.dim if n is None else n
    if n != g.dim:
        raise ConfigurationError(f"need one experiment per dimension ({g.dim}), got {n}")
    preset = preset or ("sine" if g.dim == 1 else "bump")
    w = default_collar_width(g) if collar is None else float(collar)
    if preset == "sine":
        u0, DU = _sine_family(g)
    elif preset == "bump":
        u0, DU = _bump_family(g, w)
    else:
        raise ConfigurationError(f"unknown family preset {preset!r}")
    for u in u0:
        u.reshape(-1)[g.boundary] = 0.0
    fam = InitialFamily(g, u0, DU, smallest_singular_value(DU), region_mask(g, w), preset, w)
    if check and fam.floor <= mu_min:
        field = fam.mu1 if g.dim == 2 else np.min(np.abs(u0), axis=0)
        bad = np.flatnonzero((field <= mu_min) & fam.region)
        where = [tuple(int(i) for i in np.unravel_index(k, g.shape)) for k in bad[:5]]
        raise ConfigurationError(
            f"initial family '{preset}' is degenerate on the reconstruction region "
            f"(floor {fam.floor:.3e} <= {mu_min}); first nodes {where}")
    return fam


# -------------------------------------------------------- potential pairs

def default_base_field(g, kappa=0.3):
    """Smooth divergence-free reference ``a0`` (affine, hence exact for the stencils)."""
    X = g.mesh()
    if g.dim == 1:
        return (0.5 + kappa * X[0])[None]
    return np.stack([0.5 + kappa * X[0], 0.25 - kappa * X[1]])


def _unit_sup(v):
    m = float(np.max(pointwise_norm(v)))
    if m == 0:
        raise ConfigurationError("random direction vanished")
    return v / m


def random_direction(g, rng, collar, modes=4):
    """Smooth random field with unit sup-norm vanishing near the boundary.

    2D fields are discrete curls of a windowed stream function, so their
    discrete divergence is zero; the window is zero within ``1.5 collar``
    of the boundary, which keeps the curl zero on the collar.
    """
    win = boundary_window(g, 1.5 * collar, 0.15 * min(g.lengths))
    if g.dim == 1:
        return _unit_sup((win * random_smooth_field(g, rng, modes, complex_values=False))[None])
    psi = win * random_smooth_field(g, rng, modes, complex_values=False)
    return _unit_sup(curl(psi, g))


def _clamp(base, direction, scale, M):
    """Largest ``theta <= scale`` with ``|base + theta direction|_inf <= M``."""
    def ok(th):
        return np.max(pointwise_norm(base + th * direction)) <= M
    if not ok(0.0):
        raise ConfigurationError(f"reference field already exceeds M={M}")
    if ok(scale):
        return scale
    lo, hi = 0.0, scale
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


@dataclass
class PotentialPair:
    a: MagneticPotential
    at: MagneticPotential
    direction: np.ndarray
    delta: float
    amplitude: float
    seed: int

    def __iter__(self):
        return iter((self.a, self.at))

    @property
    def diff(self):
        return self.at.a - self.a.a


def make_potential_pair(g, seed, delta, M=2.0, a0=None, chi=None, T=1.0,
                        amplitude=0.5, collar=None, modes=4):
    """Reference ``a`` and perturbed ``a~ = a + delta e`` in the admissible class.

    ``e`` is a fixed (seeded) unit-sup-norm direction, so a sweep over ``delta``
    moves along one line.  Both fields agree with ``a0`` on the collar, obey
    ``|.|_inf <= M`` (the random parts are scaled back if needed) and, in 2D,
    are exactly divergence free for the discrete divergence.
    """
    if delta < 0:
        raise ConfigurationError("perturbation scale must be nonnegative")
    chi = TimeProfile.sine(T) if chi is None else chi
    w = default_collar_width(g) if collar is None else float(collar)
    base = default_base_field(g) if a0 is None else np.asarray(a0, dtype=float)
    e_a = random_direction(g, substream(seed, "potential"), w, modes)
    amp = _clamp(base, e_a, amplitude, M)
    a = base + amp * e_a
    e_d = random_direction(g, substream(seed, "perturbation"), w, modes)
    dl = _clamp(a, e_d, float(delta), M)
    at = a + dl * e_d if dl > 0 else a.copy()
    pa = MagneticPotential(g, a, chi, M=M, a0=base, collar=w)
    pt = MagneticPotential(g, at, chi, M=M, a0=base, collar=w)
    return PotentialPair(pa, pt, e_d, dl, amp, int(seed))


# ------------------------------------------------------- difference chain

def keystone_y0(p, diff, u0, grad_u0=None):
    """Closed-form ``y(0)``: ``-2 chi'(0) d.grad u0`` (2D) or ``-chi'(0)(2 d u0' + d' u0)`` (1D)."""
    g = p.grid
    c1 = p.chi(0.0, 1)
    gu = gradient(u0, g) if grad_u0 is None else np.asarray(grad_u0)
    out = -2 * c1 * np.sum(diff * gu, axis=0)
    if not p.coulomb:
        out = out - c1 * divergence(diff, g) * u0
    out = out.astype(complex)
    out.reshape(-1)[g.boundary] = 0
    return out


def compute_source_derivatives(pa, pt, ut):
    """``(f, f', f'')`` at the time nodes of ``ut`` (a derivative trajectory under ``a~``).

    ``f = chi d.(2i grad u~ + chi (a~ + a) u~)`` and its first two time
    derivatives; without the gauge condition each gets the extra term
    ``i d_t^k(chi u~) div d``.  Gradients are plain central differences.
    """
    g = pa.grid
    d = pt.a - pa.a
    s = pt.a + pa.a
    dv = divergence(d, g) if not pa.coulomb else None
    ds = np.sum(d * s, axis=0)
    out = [np.zeros_like(ut.u) for _ in range(3)]
    for k, t in enumerate(ut.times):
        c0, c1, c2, _ = pa.chi.derivs(t)
        u, u1, u2 = ut.u[k], ut.du[k], ut.d2u[k]
        g0, g1, g2 = (np.sum(d * gradient(x, g), axis=0) for x in (u, u1, u2))
        out[0][k] = c0 * (2j * g0 + c0 * ds * u)
        out[1][k] = c0 * ds * (2 * c1 * u + c0 * u1) + 2j * (c1 * g0 + c0 * g1)
        out[2][k] = (2j * (c2 * g0 + 2 * c1 * g1 + c0 * g2)
                     + ds * ((2 * c1**2 + 2 * c0 * c2) * u + 4 * c0 * c1 * u1 + c0**2 * u2))
        if dv is not None:
            out[0][k] += 1j * dv * c0 * u
            out[1][k] += 1j * dv * (c1 * u + c0 * u1)
            out[2][k] += 1j * dv * (c2 * u + 2 * c1 * u1 + c0 * u2)
    for f in out:
        f.reshape(len(ut.times), -1)[:, g.boundary] = 0
    return tuple(out)


def _apply_series(p, j, series, times):
    op = p.operator
    out = np.zeros_like(series)
    g = p.grid
    for k, t in enumerate(times):
        out[k] = g.embed(op.deriv(j, p.chi.derivs(t)) @ interior_values(p, series[k]))
    return out


def st_relative_gap(g, times, x, y):
    w = g.weights[None]
    num = trapezoid(np.sum((w * np.abs(x - y) ** 2).reshape(len(times), -1), axis=1), times)
    den = trapezoid(np.sum((w * np.abs(x) ** 2).reshape(len(times), -1), axis=1), times)
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


@dataclass
class DifferenceChain:
    """``v = u - u~`` with ``w = v'``, ``y = v''``; ``ext`` lives on ``[-T, T]``."""

    ext: Trajectory
    u: Trajectory
    ut: Trajectory
    y0_formula: np.ndarray
    chained: Trajectory = None
    gaps: dict = field(default_factory=dict)

    @property
    def y0(self):
        return self.u.d2u[0] - self.ut.d2u[0]


def solve_difference_chain(pa, pt, u0, T, N_t, grad_u0=None, chained=True, y0_tol=0.25):
    """Direct route (two derivative solves) plus, optionally, the chained route."""
    g = pa.grid
    u = solve_derivative_systems(pa, u0, T, N_t)
    ut = solve_derivative_systems(pt, u0, T, N_t)
    v, w, y = u.u - ut.u, u.du - ut.du, u.d2u - ut.d2u
    if np.any(v[0] != 0) or np.any(w[0] != 0):
        raise InvariantViolation("v(0) and w(0) must vanish exactly")
    diff = pt.a - pa.a
    y0f = keystone_y0(pa, diff, np.asarray(u0, dtype=float), grad_u0)
    ref = norms(y[0], g)["L2"]
    gap0 = norms(y[0] - y0f, g)["L2"]
    if ref > 0 and gap0 > y0_tol * ref:
        raise InvariantViolation(f"y(0) departs from its closed form: relative gap {gap0 / ref:.3e}")
    direct = Trajectory(g, u.times, v, w, y)
    chain = DifferenceChain(extend_time_symmetric(direct, "even"), u, ut, y0f)
    chain.gaps["y0"] = gap0 / ref if ref > 0 else 0.0
    if chained:
        f, f1, f2 = compute_source_derivatives(pa, pt, ut)
        times = u.times
        cv = solve_ibvp(pa, np.zeros(g.shape), f, T, N_t).u
        gsrc = f1 - _apply_series(pa, 1, cv, times)
        cw = solve_ibvp(pa, np.zeros(g.shape), gsrc, T, N_t).u
        qsrc = f2 - _apply_series(pa, 2, cv, times) - 2 * _apply_series(pa, 1, cw, times)
        cy = solve_ibvp(pa, y0f, qsrc, T, N_t).u
        chain.chained = Trajectory(g, times, cv, cw, cy)
        for name, a_, b_ in (("v", v, cv), ("w", w, cw), ("y", y, cy)):
            chain.gaps[name] = st_relative_gap(g, times, a_, b_)
    return chain


# ------------------------------------------------------------ observations

@dataclass
class ObservationSet:
    """``data[j, k-1, t, sigma] = d_nu d_t^k (u_j - u~_j)(t, sigma)`` for ``k = 1, 2``."""

    times: np.ndarray
    gamma_plus: object
    data: np.ndarray
    noise: float = 0.0

    @property
    def n_experiments(self):
        return self.data.shape[0]

    def norm_sq(self, j, k):
        """``||.||^2_{L2(0,T; Gamma+)}`` of one observed series."""
        wb = self.gamma_plus.weights
        per_t = np.sum(wb * np.abs(self.data[j, k - 1]) ** 2, axis=1)
        return float(trapezoid(per_t, self.times))

    def rows(self):
        nodes = self.gamma_plus.nodes
        for j in range(self.data.shape[0]):
            for k in (1, 2):
                for it, t in enumerate(self.times):
                    for s, node in enumerate(nodes):
                        z = self.data[j, k - 1, it, s]
                        yield [j + 1, k, float(t), int(node), float(z.real), float(z.imag)]


def boundary_traces(series, g, gamma_plus):
    return np.stack([neumann_trace(x, g, gamma_plus) for x in series])


def add_noise(data, level, rng):
    """Complex Gaussian noise relative to the RMS of each ``(j, k)`` series."""
    if level == 0:
        return data.copy()
    out = data.copy()
    for j in range(data.shape[0]):
        for k in range(data.shape[1]):
            block = data[j, k]
            rms = np.sqrt(np.mean(np.abs(block) ** 2))
            z = rng.standard_normal(block.shape) + 1j * rng.standard_normal(block.shape)
            out[j, k] = block + level * rms * z / np.sqrt(2)
    return out


def simulate_observations(family, pa, pt, gamma_plus, T, N_t, noise=0.0, rng=None,
                          chained=False):
    """Solve the chains of all experiments and record their Neumann traces on ``Gamma+``."""
    g = pa.grid
    chains, data = [], []
    for j, u0 in enumerate(family.u0):
        ch = solve_difference_chain(pa, pt, u0, T, N_t, grad_u0=family.grad(j), chained=chained)
        chains.append(ch)
        data.append([boundary_traces(ch.u.du - ch.ut.du, g, gamma_plus),
                     boundary_traces(ch.u.d2u - ch.ut.d2u, g, gamma_plus)])
    data = np.array(data)
    if noise:
        data = add_noise(data, noise, rng if rng is not None else np.random.default_rng(0))
    return ObservationSet(chains[0].u.times, gamma_plus, data, float(noise)), chains


@dataclass
class StabilityReport:
    numerator: float
    D_sq: float
    seed: int = None
    delta: float = None

    @property
    def D_lin(self):
        return float(np.sqrt(self.D_sq))

    def _ratio(self, den):
        if den == 0:
            return 0.0 if self.numerator == 0 else np.inf
        return self.numerator / den

    @property
    def R_sq(self):
        return self._ratio(self.D_sq)

    @property
    def R_lin(self):
        return self._ratio(self.D_lin)

    @property
    def violation(self):
        return self.numerator > 0 and self.D_sq == 0

    def row(self):
        return [self.seed, self.delta, self.numerator, self.D_sq, self.D_lin, self.R_sq, self.R_lin]


def stability_ratio(g, diff, obs, seed=None, delta=None):
    """``||a~ - a||`` against ``sum_j (||d_nu w_j||^2 + ||d_nu y_j||^2)`` and its square root."""
    num = norms(np.asarray(diff), g)["L2"]
    D = sum(obs.norm_sq(j, k) for j in range(obs.n_experiments) for k in (1, 2))
    return StabilityReport(float(num), float(D), seed, delta)


def loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ------------------------------------------------- linearized reconstruction

@dataclass
class LinearizedResult:
    d: np.ndarray
    flagged: np.ndarray
    cond: np.ndarray


def linearized_reconstruct(family, y0s, chi1, coulomb=None, cond_max=1e8):
    """Recover ``d = a~ - a`` on the reconstruction region from ``y_j(0)``.

    2D: nodewise solve of ``DU0 d = -y(0) / (2 chi'(0))``; nodes with
    condition number above ``cond_max`` are filled from their nearest
    unflagged neighbour.  1D (no gauge): ``(u0^2 d)' = -u0 y(0) / chi'(0)``
    integrated by the trapezoid rule from the left end of the region.
    Zero outside the region.
    """
    g = family.grid
    coulomb = g.dim >= 2 if coulomb is None else coulomb
    y = np.stack([np.real(np.asarray(v)) for v in y0s])
    reg = family.region
    d = np.zeros((g.dim,) + g.shape)
    cond = np.ones(g.shape)
    flagged = np.zeros(g.shape, dtype=bool)
    if not coulomb:
        if g.dim != 1:
            raise ConfigurationError("gauge-free reconstruction is only available in 1D")
        x = g.coords[0]
        u0 = family.u0[0]
        idx = np.flatnonzero(reg)
        lo = idx[0] - 1
        seg = slice(lo, idx[-1] + 1)
        F = cumulative_trapezoid(u0[seg] * y[0][seg], x[seg], initial=0.0)
        d[0, seg] = -F / (chi1 * u0[seg] ** 2)
        d[0, ~reg] = 0.0
        return LinearizedResult(d, flagged, cond)
    rhs = -y / (2 * chi1)
    A = np.moveaxis(family.DU0.reshape(g.dim, g.dim, -1), -1, 0)
    b = rhs.reshape(g.dim, -1).T
    nodes = np.flatnonzero(reg.reshape(-1))
    cn = np.linalg.cond(A[nodes])
    ok = cn <= cond_max
    sol = np.zeros((nodes.size, g.dim))
    sol[ok] = np.linalg.solve(A[nodes[ok]], b[nodes[ok]][..., None])[..., 0]
    if np.any(~ok):
        pts = np.stack(np.unravel_index(nodes, g.shape), axis=1)
        good = pts[ok]
        for i in np.flatnonzero(~ok):
            nn = np.argmin(np.sum((good - pts[i]) ** 2, axis=1))
            sol[i] = sol[np.flatnonzero(ok)[nn]]
    flat = d.reshape(g.dim, -1)
    flat[:, nodes] = sol.T
    cond.reshape(-1)[nodes] = cn
    flagged.reshape(-1)[nodes[~ok]] = True
    return LinearizedResult(d, flagged, cond)


def solve_2x2(A, b):
    """Closed-form inverse applied nodewise: ``A`` has shape ``(2, 2, ...)``."""
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    return np.stack([(A[1, 1] * b[0] - A[0, 1] * b[1]) / det,
                     (A[0, 0] * b[1] - A[1, 0] * b[0]) / det])


def region_error(g, region, est, true):
    """Relative L2 error restricted to the reconstruction region."""
    w = g.weights * region
    num = np.sum(w[None] * (est - true) ** 2)
    den = np.sum(w[None] * true**2)
    return float(np.sqrt(num / den))


# -------------------------------------------------- initial-trace bound

@dataclass
class TraceBoundRow:
    s: float
    lam: float
    I: float
    I_identity: float
    boundary_y: float
    boundary_w: float
    source: float

    def bracket(self, both=True):
        bnd = self.boundary_y + (self.boundary_w if both else 0.0)
        return bnd + self.source / (self.s * self.lam)

    def normalized_ratio(self, both=True):
        br = self.bracket(both)
        if br == 0:
            return 0.0 if self.I == 0 else np.inf
        return self.I / (self.s ** -0.5 / self.lam * br)


def check_initial_trace_bound(weights, chain, gamma_plus, diff, s_list=None, lam_list=None):
    """``I = ||e^{-s eta(0)} y(0)||^2`` against ``s^{-1/2} lam^{-1}`` times the boundary and source bracket.

    The boundary part sums ``rho = y`` and ``rho = w``; the ratio with the
    ``y`` term alone is also available from each row.
    """
    from .carleman import boundary_term, default_sweep, eval_weights

    g = weights.grid
    s_def, l_def = default_sweep(weights.s, weights.lam)
    s_list = s_def if s_list is None else s_list
    lam_list = l_def if lam_list is None else lam_list
    times = chain.ext.times
    y0 = chain.ext.d2u[chain.ext.at_zero()]
    rows = []
    for lam in lam_list:
        for s in s_list:
            ws = weights.with_params(lam=lam, s=s)
            eta0 = eval_weights(ws, 0.0)[1]
            e0 = np.exp(-s * eta0)
            I = float(np.sum(g.weights * np.abs(e0 * y0) ** 2))
            Iid = float(np.sum(g.weights * np.abs(e0 * chain.y0_formula) ** 2))
            src = float(np.sum(g.weights[None] * (e0[None] * diff) ** 2))
            rows.append(TraceBoundRow(s, lam, I, Iid,
                                      boundary_term(ws, chain.ext.d2u, times, gamma_plus),
                                      boundary_term(ws, chain.ext.du, times, gamma_plus), src))
    return rows
