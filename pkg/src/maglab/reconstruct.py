"""Least-squares recovery of the potential from Neumann observations.

The objective is differentiated through the discrete augmented
Crank-Nicolson map (discretize, then optimize), so the adjoint gradient is
exact up to round-off.  Parameters:

* 1D: values of ``b - a`` at the nodes outside the collar (box constrained);
* 2D: a stream function ``psi`` supported away from the collar, ``b = a + curl psi``,
  which keeps every iterate discretely divergence free and equal to ``a0``
  on the collar.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, InvariantViolation
from .grid import gradient_matrices, laplacian_matrix, neumann_trace_matrix
from .hamiltonian import initial_derivatives, interior_values, march_augmented, pointwise_norm

ARMIJO_C1 = 1e-4
METRIC_LENGTH = 0.05


class ReconstructionProblem:
    """Objective ``J(b) = 1/2 sum_j sum_k ||d_nu d_t^k u_j[b] - target_jk||^2 + alpha ||b - b_ref||_{H1}^2``.

    ``target_jk = d_nu d_t^k u_j[a] - obs_jk``: the observations are traces of
    ``u_j[a] - u_j[a~]`` with ``a`` known, so the target is the trace of ``u_j[a~]``.
    """

    def __init__(self, family, pa, obs, T, N_t, alpha=None, b_ref=None,
                 metric_length=METRIC_LENGTH):
        g = pa.grid
        self.grid, self.family, self.pa, self.obs = g, family, pa, obs
        self.times = np.linspace(0.0, T, N_t + 1)
        if len(self.times) != len(obs.times) or not np.allclose(self.times, obs.times):
            raise ConfigurationError("observation times do not match the time grid")
        self.P = neumann_trace_matrix(g, obs.gamma_plus)
        wt = np.full(N_t + 1, self.times[1] - self.times[0])
        wt[[0, -1]] *= 0.5
        self.wt = wt
        self.ws = obs.gamma_plus.weights
        self.u0 = [interior_values(pa, u) for u in family.u0]
        ref = [self._traces(pa, x0)[0] for x0 in self.u0]
        self.target = np.array([[r[0] - obs.data[j, 0], r[1] - obs.data[j, 1]]
                                for j, r in enumerate(ref)])
        data_sq = sum(obs.norm_sq(j, k) for j in range(obs.n_experiments) for k in (1, 2))
        self.alpha = 1e-6 * data_sq if alpha is None else float(alpha)
        self.b_ref = pa.a0 if b_ref is None else np.asarray(b_ref)
        self._build_parameter_map()
        self._build_metric(metric_length)
        grads = gradient_matrices(g)
        W = sp.diags(g.weights.ravel())
        self.H1 = (W + sum(G.T @ W @ G for G in grads)).tocsr()
        self.n_evals = 0

    # -- parameterization
    def _build_parameter_map(self):
        g, pa = self.grid, self.pa
        w = pa.collar_width
        if g.dim == 1:
            free = np.flatnonzero(~g.collar(w).ravel())
            self.C = sp.csr_matrix((np.ones(free.size), (free, np.arange(free.size))),
                                   shape=(g.size, free.size))
        else:
            free = np.flatnonzero(~g.collar(w + g.h).ravel())
            Gx, Gy = gradient_matrices(g)
            self.C = sp.vstack([Gy[:, free], -Gx[:, free]]).tocsr()
        self.free = free
        self.n_params = free.size

    def _build_metric(self, length):
        """Smoothing metric ``P = I + (l^2 (-Delta_h))^2`` on the free nodes.

        ``l`` is ``length`` times the largest side; ``length = 0`` gives the
        Euclidean metric.  The Laplacian is closed with zero values outside
        the free set.
        """
        g = self.grid
        ell = float(length) * max(g.lengths)
        lap = laplacian_matrix(g, interior=False)[self.free][:, self.free]
        K = (ell**2) * (-lap)
        self.metric = (sp.identity(self.n_params) + K @ K).tocsc()
        self._metric_lu = spla.splu(self.metric)

    def precondition(self, grad):
        """``P^{-1} grad``: the gradient in the smoothing metric."""
        return self._metric_lu.solve(np.asarray(grad, float))

    def field(self, theta):
        g = self.grid
        return self.pa.a + (self.C @ theta).reshape((g.dim,) + g.shape)

    def potential(self, theta):
        return self.pa.with_field(self.field(theta))

    def project(self, theta):
        """Keep ``|b|_inf <= M``: a box clip in 1D, a radial scale of ``psi`` in 2D."""
        M = self.pa.M
        if self.grid.dim == 1:
            a = self.pa.a[0].ravel()[self.free]
            return np.clip(theta, -M - a, M - a)
        b = self.field(theta)
        if np.max(pointwise_norm(b)) <= M:
            return theta
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            ok = np.max(pointwise_norm(self.field(mid * theta))) <= M
            lo, hi = (mid, hi) if ok else (lo, mid)
        return lo * theta

    # -- forward and adjoint
    def _traces(self, p, x0, keep_steps=False):
        X0 = (x0, *initial_derivatives(p, x0))
        res = march_augmented(p, X0, self.times, keep_steps=keep_steps)
        series = res[0] if keep_steps else res
        tr = [(self.P @ series[k].T).T for k in (1, 2)]
        return (tr, series, res[1]) if keep_steps else (tr, series)

    def _reg(self, b):
        diff = (b - self.b_ref).reshape(self.grid.dim, -1)
        Hd = np.stack([self.H1 @ d for d in diff])
        return self.alpha * float(np.sum(diff * Hd)), 2 * self.alpha * Hd

    def value(self, theta):
        b = self.field(theta)
        p = self.pa.with_field(b)
        J = 0.0
        for j, x0 in enumerate(self.u0):
            tr, _ = self._traces(p, x0)
            for k in (0, 1):
                r = tr[k] - self.target[j, k]
                J += 0.5 * float(np.sum(self.wt[:, None] * self.ws[None] * np.abs(r) ** 2))
        self.n_evals += 1
        return J + self._reg(b)[0]

    def value_and_grad(self, theta):
        g = self.grid
        b = self.field(theta)
        p = self.pa.with_field(b)
        op = p.operator
        D = op.D
        bi = b.reshape(g.dim, -1)[:, g.interior]
        gb = np.zeros((g.dim, g.interior.size))
        J = 0.0
        tau = self.times[1] - self.times[0]

        def sterm(l, z):
            lc = np.conj(l)
            return np.stack([1j * (lc * (Dc @ z) + np.conj(Dc.T @ l) * z) for Dc in D])

        def qterm(l, z):
            return 2 * bi * (np.conj(l) * z)[None]

        for j, x0 in enumerate(self.u0):
            tr, X, steps = self._traces(p, x0, keep_steps=True)
            N = len(self.times) - 1
            gX = np.zeros((N + 1, 3, x0.size), dtype=complex)
            for k in (0, 1):
                r = tr[k] - self.target[j, k]
                J += 0.5 * float(np.sum(self.wt[:, None] * self.ws[None] * np.abs(r) ** 2))
                gX[:, k + 1] = (self.P.T @ (self.wt[:, None] * self.ws[None] * r).T).T
            mu = gX[N].copy()
            for k in range(N - 1, -1, -1):
                st = steps[k]
                H1, H2 = st.Hd
                l2 = st.solve(mu[2], trans="H")
                l1 = st.solve(mu[1] - 2 * (-0.5j * tau) * (H1 @ l2), trans="H")
                l0 = st.solve(mu[0] - (-0.5j * tau) * (H1 @ l1) - (-0.5j * tau) * (H2 @ l2),
                              trans="H")
                c0, c1, c2, _ = st.c
                Z = [X[m][k] + X[m][k + 1] for m in range(3)]
                contrib = (
                    sterm(l0, c0 * Z[0]) + qterm(l0, c0**2 * Z[0])
                    + sterm(l1, c1 * Z[0] + c0 * Z[1]) + qterm(l1, 2 * c0 * c1 * Z[0] + c0**2 * Z[1])
                    + sterm(l2, c2 * Z[0] + 2 * c1 * Z[1] + c0 * Z[2])
                    + qterm(l2, 2 * (c1**2 + c0 * c2) * Z[0] + 4 * c0 * c1 * Z[1] + c0**2 * Z[2]))
                gb += np.real(-0.5j * tau * contrib)
                A = st.A
                mu = gX[k].copy()
                mu[0] += A @ l0 - (-0.5j * tau) * (H1 @ l1) - (-0.5j * tau) * (H2 @ l2)
                mu[1] += A @ l1 - 2 * (-0.5j * tau) * (H1 @ l2)
                mu[2] += A @ l2
            # u''(0) = -i chi'(0) S u0 - L^2 u0 depends on b through S
            gb += np.real(-1j * p.chi(0.0, 1) * sterm(mu[2], x0))
        full = np.zeros((g.dim, g.size))
        full[:, g.interior] = gb
        R, gR = self._reg(b)
        full += gR
        self.n_evals += 1
        return J + R, self.C.T @ full.ravel()


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizeResult:
    theta: np.ndarray
    history: list
    grad_norms: list
    converged: bool
    message: str
    iterations: int = 0
    extra: dict = field(default_factory=dict)


def projected_gradient(problem, theta0=None, max_iter=200, gtol=1e-6, callback=None,
                       max_backtrack=40):
    """Projected variable-metric descent with Barzilai-Borwein steps and Armijo backtracking.

    The search direction is ``-P^{-1} g`` with ``P = problem.metric``; the
    trial step is ``s^T P s / s^T y``.  Stops when the metric gradient norm
    ``(g^T P^{-1} g)^(1/2)`` drops below ``gtol`` times its initial value or
    after ``max_iter`` iterations.
    """
    theta = np.zeros(problem.n_params) if theta0 is None else problem.project(np.asarray(theta0, float))
    P = problem.metric
    J, g = problem.value_and_grad(theta)
    d = problem.precondition(g)
    history, gnorms = [J], [float(np.sqrt(max(np.dot(g, d), 0.0)))]
    g0 = gnorms[0]
    if g0 == 0.0:
        return OptimizeResult(theta, history, gnorms, True, "zero gradient at start", 0)
    step = 0.01 * problem.pa.M / float(np.max(np.abs(d)))
    prev = None
    for it in range(1, max_iter + 1):
        if prev is not None:
            s, y = theta - prev[0], g - prev[1]
            sy = float(np.dot(s, y))
            step = float(np.dot(s, P @ s)) / sy if sy > 0 else 2 * step
        accepted = False
        for _ in range(max_backtrack):
            trial = problem.project(theta - step * d)
            Jt = problem.value(trial)
            if Jt <= J - ARMIJO_C1 * float(np.dot(g, theta - trial)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return OptimizeResult(theta, history, gnorms, False, "line search failed", it - 1)
        prev = (theta, g)
        theta = trial
        Jn, g = problem.value_and_grad(theta)
        if Jn > J * (1 + 1e-12) + 1e-300:
            raise InvariantViolation(f"objective increased at iteration {it}: {J} -> {Jn}")
        J = Jn
        d = problem.precondition(g)
        history.append(J)
        gnorms.append(float(np.sqrt(max(np.dot(g, d), 0.0))))
        if callback is not None:
            callback(it, theta, J)
        if gnorms[-1] <= gtol * g0:
            return OptimizeResult(theta, history, gnorms, True, "gradient tolerance reached", it)
    return OptimizeResult(theta, history, gnorms, False, "iteration cap reached", max_iter)


def adjoint_reconstruct(obs, pa, family, T, N_t, iterations=200, alpha_reg=None, gtol=1e-6,
                        metric_length=METRIC_LENGTH):
    """Recover ``a~`` from observations, starting from the known reference ``a``.

    Returns ``(b, result)`` with ``b`` the recovered field.
    """
    prob = ReconstructionProblem(family, pa, obs, T, N_t, alpha=alpha_reg,
                                 metric_length=metric_length)
    res = projected_gradient(prob, max_iter=iterations, gtol=gtol)
    res.extra["alpha"] = prob.alpha
    return prob.field(res.theta), res


def gradient_check(problem, theta, directions, eps=None):
    """Relative error of the adjoint directional derivative against central differences."""
    _, g = problem.value_and_grad(theta)
    out = []
    for d in directions:
        h = eps if eps is not None else 1e-4 / max(float(np.max(np.abs(d))), 1e-300)
        fd = (problem.value(theta + h * d) - problem.value(theta - h * d)) / (2 * h)
        ad = float(np.dot(g, d))
        out.append(abs(fd - ad) / max(abs(fd), abs(ad), 1e-300))
    return np.array(out)
