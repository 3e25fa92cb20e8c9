"""Carleman weights, the conjugated operators M1/M2, the functional I(q) and
ratio checks of the weighted estimates.

Space-time fields are arrays of shape ``(len(times), *grid.shape)`` on a
uniform time grid over ``[-T, T]``.  Every space-time quadrature is
restricted to ``|t| <= T - 2 tau`` because ``phi`` and ``eta`` blow up at
``|t| = T``; the integrands carry ``exp(-2 s eta)`` which is negligible there.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ConfigurationError, DomainError
from .grid import BoundarySubset, gradient, laplacian, neumann_trace, random_smooth_field

N_DIRECTIONS = 64


@dataclass(frozen=True, eq=False)
class CarlemanWeights:
    """Base weight ``beta~`` with closed-form gradient and Hessian, plus ``(m, lam, s, T)``."""

    grid: object
    beta_tilde: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    m: float = 2.0
    lam: float = 0.1
    s: float = 1.0
    T: float = 1.0
    x0: tuple = None
    quadratic: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.m * float(np.max(np.abs(self.beta_tilde)))

    @property
    def beta(self):
        return self.beta_tilde + self.K

    @property
    def lap_beta(self):
        return np.trace(self.hess, axis1=0, axis2=1)

    def with_params(self, lam=None, s=None, T=None):
        kw = {k: v for k, v in (("lam", lam), ("s", s), ("T", T)) if v is not None}
        return replace(self, **kw)

    def log_alpha(self, lam=None):
        """``log(e^{2 lam K} - e^{lam beta})`` evaluated without overflow."""
        lam = self.lam if lam is None else lam
        lb = lam * self.beta
        return 2 * lam * self.K + np.log1p(-np.exp(lb - 2 * lam * self.K))

    def alpha(self):
        return np.exp(self.log_alpha())


def build_beta(g, x0, m=2.0, lam=0.1, s=1.0, T=1.0):
    """Quadratic weight ``beta~(x) = |x - x0|^2`` with ``x0`` outside the closed domain."""
    x0 = tuple(float(c) for c in np.atleast_1d(x0))
    if len(x0) != g.dim:
        raise ConfigurationError(f"x0 must have {g.dim} coordinates")
    if m <= 1:
        raise ConfigurationError("m must exceed 1")
    if all(0.0 <= c <= L for c, L in zip(x0, g.lengths)):
        raise ConfigurationError(f"x0={x0} lies in the closed domain")
    X = g.mesh()
    diff = np.stack([x - c for x, c in zip(X, x0)])
    hess = np.zeros((g.dim, g.dim) + g.shape)
    for i in range(g.dim):
        hess[i, i] = 2.0
    return CarlemanWeights(g, np.sum(diff**2, axis=0), 2 * diff, hess, m=float(m),
                           lam=float(lam), s=float(s), T=float(T), x0=x0, quadratic=True)


def weights_from_callables(g, beta, grad, hess, m=2.0, lam=0.1, s=1.0, T=1.0):
    """General weight from closed-form callables of the coordinate arrays."""
    X = g.mesh()
    b = np.broadcast_to(np.asarray(beta(*X), dtype=float), g.shape).copy()
    gr = np.stack([np.broadcast_to(np.asarray(c, dtype=float), g.shape) for c in grad(*X)])
    H = np.asarray(hess(*X), dtype=float)
    hs = np.broadcast_to(H.reshape(H.shape[:2] + (1,) * (H.ndim - 2)) if H.ndim == 2 else H,
                         (g.dim, g.dim) + g.shape).copy()
    return CarlemanWeights(g, b, gr, hs, m=float(m), lam=float(lam), s=float(s), T=float(T))


# -------------------------------------------------------------- certificate

@dataclass
class AssumptionCertificate:
    C0: float
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray
    max_dnu_minus: float
    lam: float
    eps: float
    eps_sampled: float
    n_directions: int
    pass_a: bool
    pass_b: bool
    pass_c: bool
    corner_flags: list = field(default_factory=list)

    @property
    def passed(self):
        return self.pass_a and self.pass_b and self.pass_c


def normal_derivative_beta(w):
    g = w.grid
    grads = w.grad.reshape(g.dim, -1)[:, g.boundary]
    return np.einsum("dk,kd->k", grads, g.normals)


def verify_assumption(w, lam=None):
    """Check the gradient floor (a), the boundary sign (b) and pseudo-convexity (c).

    (c) is certified exactly by the smallest eigenvalue of
    ``lam grad(beta) grad(beta)^T + D^2 beta`` at every node and confirmed on
    ``N_DIRECTIONS`` sampled unit directions.  For the quadratic weight the
    reported ``eps`` is the smallest Hessian eigenvalue (2), which certifies
    the condition for every ``lam > 0``.
    """
    g = w.grid
    lam = w.lam if lam is None else float(lam)
    gnorm = np.sqrt(np.sum(w.grad**2, axis=0))
    C0 = float(np.min(gnorm))
    scale = max(float(np.max(gnorm)), 1.0)
    pass_a = C0 > 1e-12 * scale

    dnu = normal_derivative_beta(w)
    plus = dnu > 0
    max_minus = float(np.max(dnu[~plus])) if np.any(~plus) else -np.inf
    corner = []
    if g.dim == 2:
        multi = np.unravel_index(g.boundary, g.shape)
        for k in np.flatnonzero(~plus):
            i, j = multi[0][k], multi[1][k]
            if i in (0, g.shape[0] - 1) and j in (0, g.shape[1] - 1):
                # other face's normal would give this sign
                alt = np.zeros(2)
                alt[1] = -1.0 if j == 0 else 1.0
                val = float(w.grad.reshape(2, -1)[:, g.boundary[k]] @ alt)
                if val > 0:
                    corner.append(int(g.boundary[k]))
    pass_b = bool(max_minus <= 0)

    G = w.grad.reshape(g.dim, -1).T
    Hs = np.moveaxis(w.hess.reshape(g.dim, g.dim, -1), -1, 0)
    forms = lam * G[:, :, None] * G[:, None, :] + Hs
    eig_min = float(np.min(np.linalg.eigvalsh(forms)))
    hess_min = float(np.min(np.linalg.eigvalsh(Hs)))
    eps = hess_min if (w.quadratic and hess_min > 0) else eig_min
    if g.dim == 1:
        dirs = np.exp(2j * np.pi * np.arange(N_DIRECTIONS) / N_DIRECTIONS)[:, None]
    else:
        th = np.pi * np.arange(N_DIRECTIONS) / N_DIRECTIONS
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1).astype(complex)
    gz = np.einsum("nd,kd->nk", G, dirs)
    hz = np.einsum("nij,ki,kj->nk", Hs, dirs, np.conj(dirs)).real
    sampled = float(np.min(lam * np.abs(gz) ** 2 + hz))
    pass_c = eig_min > 0 and sampled >= eps * (1 - 1e-12) and eig_min >= eps * (1 - 1e-12)
    return AssumptionCertificate(C0, g.boundary[plus], g.boundary[~plus], max_minus, lam,
                                 eps, sampled, N_DIRECTIONS, bool(pass_a), pass_b,
                                 bool(pass_c), corner)


def compute_gamma_plus(w):
    """``(Gamma+, Gamma-)`` with ``Gamma+ = {d beta~/d nu > 0}``."""
    g = w.grid
    plus = normal_derivative_beta(w) > 0
    if not np.any(plus):
        raise ConfigurationError("Gamma+ is empty for this weight")
    gp = BoundarySubset.from_boundary_mask(g, plus)
    return gp, gp.complement()


# --------------------------------------------------------------- weights

def eval_weights(w, t):
    """``(phi, eta, d_t eta, grad eta, Delta eta)`` at time(s) ``t``, closed form.

    Scalar ``t`` gives grid-shaped arrays; an array of times adds a leading axis.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) >= w.T):
        raise DomainError(f"weights are singular at |t| >= T = {w.T}")
    lam = w.lam
    shp = t.shape + (1,) * w.grid.dim
    tt = t.reshape(shp)
    logD = np.log(w.T + tt) + np.log(w.T - tt)
    D = np.exp(logD)
    phi = np.exp(lam * w.beta - logD)
    eta = np.exp(w.log_alpha() - logD)
    eta_t = eta * 2 * tt / D
    grad_eta = -lam * phi[None] * w.grad.reshape((w.grid.dim,) + (1,) * t.ndim + w.grid.shape)
    gb2 = np.sum(w.grad**2, axis=0)
    lap_eta = -lam * phi * (lam * gb2 + w.lap_beta)
    if t.ndim:
        grad_eta = np.moveaxis(grad_eta, 0, 1)
    return phi, eta, eta_t, grad_eta, lap_eta


def random_spacetime_field(g, times, rng, modes=4, temporal=3):
    """Smooth complex space-time sample ``sum_k q_k(x) e^{i k t}`` vanishing on the boundary.

    ``times`` is any array of time nodes; the result has shape ``(len(times), *g.shape)``.
    """
    times = np.asarray(times, dtype=float)
    out = np.zeros((times.size,) + g.shape, dtype=complex)
    for k in range(temporal):
        qk = random_smooth_field(g, rng, modes)
        out += np.exp(1j * k * times).reshape((-1,) + (1,) * g.dim) * qk[None]
    return out


def symmetric_times(T, N_t):
    """``2 N_t + 1`` uniform nodes on ``[-T, T]``."""
    return np.linspace(-T, T, 2 * N_t + 1)


def time_window(w, times):
    """Indices and trapezoid weights of the cutoff window ``|t| <= T - 2 tau``."""
    times = np.asarray(times, dtype=float)
    tau = times[1] - times[0]
    if abs(times[-1] - w.T) > 1e-9 * w.T or abs(times[0] + w.T) > 1e-9 * w.T:
        raise ConfigurationError("space-time fields must span [-T, T] of the weights")
    idx = np.flatnonzero(np.abs(times) <= w.T - 2 * tau + 1e-12 * w.T)
    om = np.full(idx.size, tau)
    om[[0, -1]] *= 0.5
    return idx, om


def _exp_weight(w, times, power=1.0):
    """``exp(-power s eta)`` on every time node (zero at ``|t| = T`` when ``s > 0``)."""
    out = np.zeros((len(times),) + w.grid.shape)
    inside = np.abs(times) < w.T
    if w.s == 0:
        return np.ones_like(out)
    _, eta, *_ = eval_weights(w, times[inside])
    out[inside] = np.exp(-power * w.s * eta)
    return out


def _dt(q, times):
    return np.gradient(q, times, axis=0)


def _lap_series(q, g):
    return np.stack([laplacian(x, g) for x in q])


def _grad_series(q, g):
    return np.stack([gradient(x, g) for x in q])


def apply_L(q, times, g):
    """``L q = i d_t q + Delta q`` (interior nodes)."""
    out = 1j * _dt(q, times) + _lap_series(q, g)
    out.reshape(len(times), -1)[:, g.boundary] = 0
    return out


def _window_mask(w, times):
    idx, _ = time_window(w, times)
    return idx


def apply_M1(w, q, times):
    """``M1 q = i d_t q + Delta q + s^2 |grad eta|^2 q`` on the cutoff window; zero elsewhere."""
    g = w.grid
    idx = _window_mask(w, times)
    _, _, _, grad_eta, _ = eval_weights(w, times[idx])
    out = np.zeros(q.shape, dtype=complex)
    out[idx] = (1j * _dt(q, times)[idx] + _lap_series(q[idx], g)
                + w.s**2 * np.sum(grad_eta**2, axis=1) * q[idx])
    out.reshape(len(times), -1)[:, g.boundary] = 0
    return out


def apply_M2(w, q, times):
    """``M2 q = i s eta_t q + 2 s grad eta . grad q + s (Delta eta) q``."""
    g = w.grid
    idx = _window_mask(w, times)
    _, _, eta_t, grad_eta, lap_eta = eval_weights(w, times[idx])
    gq = _grad_series(q[idx], g)
    out = np.zeros(q.shape, dtype=complex)
    out[idx] = w.s * (1j * eta_t * q[idx] + 2 * np.sum(grad_eta * gq, axis=1) + lap_eta * q[idx])
    out.reshape(len(times), -1)[:, g.boundary] = 0
    return out


def st_norm_sq(w, f, times, vector=False):
    """``||f||^2_{L2(Q_T)}`` over the cutoff window (trapezoid in time and space)."""
    idx, om = time_window(w, times)
    W = w.grid.weights
    sub = np.abs(f[idx]) ** 2
    if vector:
        sub = np.sum(sub, axis=1)
    return float(np.sum(om * np.sum((W * sub).reshape(idx.size, -1), axis=1)))


def conjugation_residual(w, q, times):
    """``||(M1 + M2)(e^{-s eta} q) - e^{-s eta} L q|| / ||e^{-s eta} L q||``."""
    E = _exp_weight(w, times)
    z = E * q
    lhs = apply_M1(w, z, times) + apply_M2(w, z, times)
    rhs = E * apply_L(q, times, w.grid)
    num = st_norm_sq(w, lhs - rhs, times)
    den = st_norm_sq(w, rhs, times)
    return float(np.sqrt(num / den)) if den > 0 else 0.0


def compute_I(w, q, times):
    """Three-term functional ``s^3 lam^4 ||e^{-s eta} phi^{3/2} q||^2
    + s lam ||e^{-s eta} phi^{1/2} |grad q| ||^2 + sum_j ||M_j e^{-s eta} q||^2``."""
    idx, _ = time_window(w, times)
    phi = np.zeros((len(times),) + w.grid.shape)
    phi[idx] = eval_weights(w, times[idx])[0]
    E = _exp_weight(w, times)
    z = E * q
    grad_abs = np.zeros(q.shape)
    grad_abs[idx] = np.sqrt(np.sum(np.abs(_grad_series(q[idx], w.grid)) ** 2, axis=1))
    t1 = w.s**3 * w.lam**4 * st_norm_sq(w, E * phi**1.5 * q, times)
    t2 = w.s * w.lam * st_norm_sq(w, E * phi**0.5 * grad_abs, times)
    t3 = st_norm_sq(w, apply_M1(w, z, times), times) + st_norm_sq(w, apply_M2(w, z, times), times)
    return float(t1 + t2 + t3)


def boundary_term(w, q, times, gamma_plus):
    """``int int_{Gamma+} e^{-2 s eta} phi d_nu beta |d_nu q|^2`` (without the ``s lam`` factor)."""
    g = w.grid
    idx, om = time_window(w, times)
    phi, eta, *_ = eval_weights(w, times[idx])
    nodes = gamma_plus.nodes
    pos = np.searchsorted(g.boundary, nodes)
    dnb = normal_derivative_beta(w)[pos]
    total = 0.0
    for r, k in enumerate(idx):
        dq = neumann_trace(q[k], g, gamma_plus)
        e = np.exp(-2 * w.s * eta[r].reshape(-1)[nodes]) * phi[r].reshape(-1)[nodes]
        total += om[r] * np.sum(gamma_plus.weights * e * dnb * np.abs(dq) ** 2)
    return float(total)


@dataclass
class SweepRow:
    s: float
    lam: float
    I: float
    boundary: float
    source: float

    @property
    def bracket(self):
        return self.s * self.lam * self.boundary + self.source

    @property
    def ratio(self):
        if self.bracket == 0:
            return 0.0 if self.I == 0 else np.inf
        return self.I / self.bracket

    @property
    def violation(self):
        return self.bracket == 0 and self.I > 0


@dataclass
class SweepReport:
    rows: list

    @property
    def max_ratio(self):
        return max((r.ratio for r in self.rows), default=0.0)

    @property
    def violations(self):
        return sum(r.violation for r in self.rows)

    def ratios(self, lam):
        rs = sorted((r for r in self.rows if r.lam == lam), key=lambda r: r.s)
        return np.array([r.s for r in rs]), np.array([r.ratio for r in rs])

    def knee_ok(self, rtol=1e-9):
        """For each ``lam``, the ratio is non-increasing in ``s`` after its maximum."""
        for lam in sorted({r.lam for r in self.rows}):
            _, vals = self.ratios(lam)
            k = int(np.argmax(vals))
            tail = vals[k:]
            if np.any(np.diff(tail) > rtol * np.abs(tail[:-1])):
                return False
        return True

    def table(self):
        return [[r.s, r.lam, r.I, r.boundary, r.source, r.ratio] for r in self.rows]


def default_sweep(s0=1.0, lam0=0.1):
    return [s0 * k for k in (1, 2, 4, 8)], [lam0, 2 * lam0]


def check_carleman(w, q, times, gamma_plus, s_list=None, lam_list=None):
    """Ratio ``I(q) / (s lam B(q) + ||e^{-s eta} L q||^2)`` over an ``(s, lam)`` sweep."""
    s_def, l_def = default_sweep(w.s, w.lam)
    s_list = s_def if s_list is None else s_list
    lam_list = l_def if lam_list is None else lam_list
    Lq = apply_L(q, times, w.grid)
    rows = []
    for lam in lam_list:
        for s in s_list:
            ws = w.with_params(lam=lam, s=s)
            E = _exp_weight(ws, times)
            rows.append(SweepRow(s, lam, compute_I(ws, q, times),
                                 boundary_term(ws, q, times, gamma_plus),
                                 st_norm_sq(ws, E * Lq, times)))
    return SweepReport(rows)


def check_carleman_y(w, y, wfield, diff, times, gamma_plus, s_list=None, lam_list=None):
    """Ratio ``I(y) / (s lam sum_{rho=y,w} B(rho) + ||e^{-s eta}(a~ - a)||^2_{L2(Q_T)})``."""
    s_def, l_def = default_sweep(w.s, w.lam)
    s_list = s_def if s_list is None else s_list
    lam_list = l_def if lam_list is None else lam_list
    diff = np.asarray(diff)
    rows = []
    for lam in lam_list:
        for s in s_list:
            ws = w.with_params(lam=lam, s=s)
            E = _exp_weight(ws, times)
            src = st_norm_sq(ws, E[:, None] * diff[None], times, vector=True)
            bnd = boundary_term(ws, y, times, gamma_plus) + boundary_term(ws, wfield, times, gamma_plus)
            rows.append(SweepRow(s, lam, compute_I(ws, y, times), bnd, src))
    return SweepReport(rows)


# --------------------------------------------------------------- Klibanov

@dataclass
class KlibanovReport:
    s: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    min_alpha: float
    alpha0_corrected: float
    alpha0_printed: float

    @property
    def scaled(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.rhs > 0, self.s * self.lhs / self.rhs, 0.0)

    @property
    def kappa(self):
        return float(np.max(self.scaled))

    @property
    def corrected_bound_holds(self):
        return bool(self.min_alpha >= self.alpha0_corrected * (1 - 1e-12) and self.alpha0_corrected > 0)

    @property
    def printed_bound_holds(self):
        return bool(self.min_alpha >= self.alpha0_printed * (1 - 1e-12))


def alpha_floor(w):
    """``(corrected, printed)`` lower bounds for ``alpha = e^{2 lam K} - e^{lam beta}``.

    Since ``beta <= K + K/m``, ``alpha >= e^{2 lam K} - e^{lam K (1 + 1/m)}``.
    The variant with exponent ``lam K / m`` is reported for comparison only.
    """
    lK = w.lam * w.K
    return (float(np.exp(2 * lK) - np.exp(lK * (1 + 1 / w.m))),
            float(np.exp(2 * lK) - np.exp(lK / w.m)))


def time_primitive(p, times):
    """``int_0^t p`` by cumulative trapezoid (negative orientation for ``t < 0``)."""
    P = cumulative_trapezoid(p, times, axis=0, initial=0.0)
    k0 = int(np.argmin(np.abs(times)))
    return P - P[k0]


def check_klibanov(w, p, times, s_list=(1, 2, 4, 8, 16, 32, 64)):
    """``s int int e^{-2 s eta} |int_0^t p|^2 / ||e^{-s eta} p||^2`` over an ``s`` sweep."""
    P = time_primitive(p, times)
    lhs, rhs = [], []
    for s in s_list:
        ws = w.with_params(s=float(s))
        E = _exp_weight(ws, times)
        lhs.append(st_norm_sq(ws, E * P, times))
        rhs.append(st_norm_sq(ws, E * p, times))
    corr, printed = alpha_floor(w)
    return KlibanovReport(np.asarray(s_list, dtype=float), np.array(lhs), np.array(rhs),
                          float(np.min(w.alpha())), corr, printed)
