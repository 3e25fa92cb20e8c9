"""Magnetic Hamiltonian ``H(t) = (i grad + chi(t) a)^2`` on interior nodes,
its time derivatives, and the Crank-Nicolson propagator.

Unknowns live on interior nodes (homogeneous Dirichlet data on the
boundary).  The first-order term is discretized in the symmetric form

    S = i sum_c (A_c D_c + D_c A_c),   A_c = diag(a_c),

with ``D_c`` the central difference.  ``S`` is Hermitian by construction and
equals ``2i a.grad`` up to O(h^2) when ``div a = 0``, so

    H(t) = L + chi S + chi^2 Q,   L = -Delta_h,   Q = diag(|a|^2).
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DataError, DomainError, NumericalError
from .grid import Grid, divergence, gradient_matrices, laplacian_matrix, norms

RESIDUAL_TOL = 1e-12


# ------------------------------------------------------------- time profile

class TimeProfile:
    """Real time profile with closed-form derivatives up to order three.

    The callables are only consulted on ``[0, T]``; negative times use the
    odd extension ``chi(-t) = -chi(t)`` when ``odd`` is set.
    """

    def __init__(self, funcs, T, odd=True, name="custom"):
        if len(funcs) != 4:
            raise ConfigurationError("need chi and its first three derivatives")
        if T <= 0:
            raise ConfigurationError("horizon T must be positive")
        self._funcs = tuple(funcs)
        self.T = float(T)
        self.odd = bool(odd)
        self.name = name
        c0, c1 = float(funcs[0](0.0)), float(funcs[1](0.0))
        if abs(c0) > 1e-14:
            raise ConfigurationError(f"chi(0) must vanish, got {c0}")
        if c1 == 0.0:
            raise ConfigurationError("chi'(0) must be nonzero")
        ts = np.linspace(0.0, self.T, 4097)
        self._sup = tuple(float(np.max(np.abs(self._funcs[j](ts)))) for j in range(4))

    @classmethod
    def sine(cls, T, omega=None):
        """``chi(t) = sin(omega t)``, default ``omega = pi / (2T)``."""
        if not T > 0:
            raise ConfigurationError("horizon T must be positive")
        w = np.pi / (2.0 * T) if omega is None else float(omega)
        funcs = (lambda t: np.sin(w * t), lambda t: w * np.cos(w * t),
                 lambda t: -w**2 * np.sin(w * t), lambda t: -w**3 * np.cos(w * t))
        prof = cls(funcs, T, name=f"sine(omega={w!r})")
        prof.omega = w
        return prof

    @classmethod
    def from_callables(cls, chi, d1, d2, d3, T, odd=True):
        return cls((chi, d1, d2, d3), T, odd=odd)

    def __call__(self, t, j=0):
        """``chi^(j)(t)`` for scalar or array ``t`` in ``[-T, T]``."""
        if j not in (0, 1, 2, 3):
            raise DomainError(f"derivative order must be 0..3, got {j}")
        t = np.asarray(t, dtype=float)
        if np.any(np.abs(t) > self.T * (1 + 1e-12)):
            raise DomainError(f"time outside [-T, T] with T={self.T}")
        if not self.odd:
            if np.any(t < 0):
                raise DomainError("profile has no extension to negative times")
            out = self._funcs[j](t)
        else:
            # d^j/dt^j of -chi(-t) is (-1)^(j+1) chi^(j)(-t)
            sign = np.where(t < 0, (-1.0) ** (j + 1), 1.0)
            out = sign * self._funcs[j](np.abs(t))
        return float(out) if out.ndim == 0 else out

    def derivs(self, t):
        return tuple(self(t, j) for j in range(4))

    def sup(self, j):
        """``sup_{[0,T]} |chi^(j)|`` from dense sampling (exact at the endpoints)."""
        return self._sup[j]

    def __repr__(self):
        return f"TimeProfile({self.name}, T={self.T})"


# ------------------------------------------------------------ the potential

def default_collar_width(g):
    return max(2.0 * g.h, 0.05 * max(g.lengths))


def pointwise_norm(a):
    return np.sqrt(np.sum(np.asarray(a) ** 2, axis=0))


class MagneticPotential:
    """Static real potential ``a(x)`` paired with a profile ``chi``.

    ``coulomb`` selects whether the discrete divergence is enforced; it
    defaults to ``True`` in 2D.  In 1D every divergence-free field with
    fixed boundary values is constant, so 1D experiments use general
    potentials (the symmetric first-order term keeps ``H`` Hermitian).
    """

    def __init__(self, grid, a, chi, M=None, a0=None, collar=None, coulomb=None):
        a = np.asarray(a, dtype=float)
        if a.ndim == grid.dim:
            a = a[None] if grid.dim == 1 else a
        grid.check(a, vector=True)
        if not np.all(np.isfinite(a)):
            raise ConfigurationError("potential has non-finite entries")
        self.grid = grid
        self.a = a
        self.chi = chi
        self.coulomb = grid.dim >= 2 if coulomb is None else bool(coulomb)
        amax = float(np.max(pointwise_norm(a)))
        self.M = amax if M is None else float(M)
        if amax > self.M * (1 + 1e-12) + 1e-15:
            raise ConfigurationError(f"sup-norm {amax:.6g} exceeds bound M={self.M:.6g}")
        self.collar_width = default_collar_width(grid) if collar is None else float(collar)
        if self.collar_width < 2 * grid.h - 1e-12:
            raise ConfigurationError("collar must be at least two cells wide")
        self.a0 = a.copy() if a0 is None else np.asarray(a0, dtype=float).reshape(a.shape)
        mask = grid.collar(self.collar_width)
        if np.max(np.abs((a - self.a0)[:, mask]), initial=0.0) > 1e-12 * max(self.M, 1.0):
            raise ConfigurationError("potential differs from its boundary reference on the collar")
        if self.coulomb:
            div = norms(divergence(a, grid), grid)["L2"]
            size = norms(a, grid)["L2"]
            if div > 1e-8 * max(size, 1e-300):
                raise ConfigurationError(
                    f"potential violates the Coulomb gauge: |div a| = {div:.3e}, |a| = {size:.3e}")
        self.amax = amax
        self.A = tuple(chi.sup(j) * amax for j in range(4))
        self.C_T = float(np.sqrt(1.0 + grid.dim * self.A[0] ** 2))
        self._op = None

    @property
    def operator(self):
        if self._op is None:
            self._op = HamiltonianOperator(self.grid, self.a)
        return self._op

    def ell(self, j):
        """Constants with ``||H^(j)(t) u||_0 <= ell_j ||u||_1``."""
        A, C = self.A, self.C_T
        if j == 1:
            return 2 * A[1] * C
        if j == 2:
            return 2 * (A[2] * C + A[1] ** 2)
        if j == 3:
            return 2 * (A[3] * C + 3 * A[1] * A[2])
        raise DomainError(f"j must be 1, 2 or 3, got {j}")

    def with_field(self, a, coulomb=None):
        """Same profile, collar and reference, different field."""
        return MagneticPotential(self.grid, a, self.chi, M=self.M, a0=self.a0,
                                 collar=self.collar_width,
                                 coulomb=self.coulomb if coulomb is None else coulomb)


class HamiltonianOperator:
    """Sparse interior matrices ``L``, ``S``, ``Q`` and their time combinations."""

    def __init__(self, grid, a):
        self.grid = grid
        n = grid.interior.size
        self.n = n
        self.I = sp.identity(n, dtype=complex, format="csc")
        self.L = (-laplacian_matrix(grid)).astype(complex).tocsc()
        self.D = [m[grid.interior][:, grid.interior].tocsr() for m in gradient_matrices(grid)]
        ai = np.asarray(a).reshape(grid.dim, -1)[:, grid.interior]
        self.a_int = ai
        S = sp.csr_matrix((n, n), dtype=complex)
        for c in range(grid.dim):
            Ac = sp.diags(ai[c])
            S = S + 1j * (Ac @ self.D[c] + self.D[c] @ Ac)
        self.S = S.tocsc()
        self.Q = sp.diags(np.sum(ai**2, axis=0)).astype(complex).tocsc()
        # one sparsity pattern for all four matrices: time combinations only
        # add data arrays instead of merging sparse structures every step
        pat = (abs(self.L) + abs(self.S) + abs(self.Q) + self.I).tocsc()
        pat.sort_indices()
        self._indices, self._indptr = pat.indices, pat.indptr
        rows = pat.indices
        cols = np.repeat(np.arange(n), np.diff(pat.indptr))
        self._data = {}
        for name, M in (("L", self.L), ("S", self.S), ("Q", self.Q), ("I", self.I)):
            self._data[name] = np.asarray(M.tocsr()[rows, cols]).ravel().astype(complex)

    def combine(self, cL=0.0, cS=0.0, cQ=0.0, cI=0.0):
        """``cL L + cS S + cQ Q + cI I`` as a CSC matrix."""
        d = self._data
        data = cL * d["L"] + cS * d["S"] + cQ * d["Q"] + cI * d["I"]
        return sp.csc_matrix((data, self._indices, self._indptr), shape=(self.n, self.n))

    def H(self, chi):
        """``H`` for a scalar value ``chi`` of the profile."""
        return self.combine(1.0, chi, chi**2)

    def deriv(self, j, c):
        """``H^(j)`` from the tuple ``c = (chi, chi', chi'', chi''')``."""
        if j == 0:
            return self.H(c[0])
        if j == 1:
            return self.combine(cS=c[1], cQ=2 * c[0] * c[1])
        if j == 2:
            return self.combine(cS=c[2], cQ=2 * (c[1] ** 2 + c[0] * c[2]))
        if j == 3:
            return self.combine(cS=c[3], cQ=2 * c[0] * c[3] + 6 * c[1] * c[2])
        raise DomainError(f"j must be 0..3, got {j}")

    def B(self, j, c):
        """``B_j = chi^(j) a.(i grad + chi a)`` in symmetric form."""
        if j not in (1, 2, 3):
            raise DomainError(f"j must be 1, 2 or 3, got {j}")
        return self.combine(cS=0.5 * c[j], cQ=c[j] * c[0])


def interior_values(p, u):
    """Interior values of ``u``; raises if ``u`` does not vanish on the boundary."""
    g = p.grid
    u = np.asarray(u)
    g.check(u)
    bnd = u.reshape(-1)[g.boundary]
    scale = max(1.0, float(np.max(np.abs(u))))
    if np.max(np.abs(bnd)) > 1e-12 * scale:
        raise ConfigurationError("field must vanish on the boundary")
    return u.reshape(-1)[g.interior].astype(complex)


def apply_H(p, t, u):
    """``(-Delta + 2i chi a.grad + chi^2 |a|^2) u`` at interior nodes, 0 on the boundary."""
    c = p.chi.derivs(t)
    return p.grid.embed(p.operator.H(c[0]) @ interior_values(p, u))


def apply_B(j, p, t, u):
    if j not in (1, 2, 3):
        raise DomainError(f"j must be 1, 2 or 3, got {j}")
    return p.grid.embed(p.operator.B(j, p.chi.derivs(t)) @ interior_values(p, u))


def apply_H_deriv(j, p, t, u):
    if j not in (1, 2, 3):
        raise DomainError(f"j must be 1, 2 or 3, got {j}")
    return p.grid.embed(p.operator.deriv(j, p.chi.derivs(t)) @ interior_values(p, u))


# ---------------------------------------------------------- time stepping

class _CNStep:
    """Factorized ``I + (i tau/2) H(t_mid)`` with residual-checked solves."""

    def __init__(self, op, chi, t_mid, tau, order=0):
        self.c = chi.derivs(t_mid)
        self.tau = tau
        self.H = op.H(self.c[0])
        self.Hd = [op.deriv(j, self.c) for j in range(1, order + 1)]
        c0, z = self.c[0], 0.5j * tau
        self.A = op.combine(z, z * c0, z * c0**2, 1.0)
        self.lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")
        self._AH = None

    @property
    def AH(self):
        if self._AH is None:
            self._AH = self.A.conj().T.tocsr()
        return self._AH

    def explicit(self, x):
        return x - 0.5j * self.tau * (self.H @ x)

    def solve(self, rhs, trans="N"):
        A = self.A if trans == "N" else self.AH
        x = self.lu.solve(rhs, trans=trans)
        scale = max(np.linalg.norm(rhs), 1e-300)
        r = rhs - A @ x
        if np.linalg.norm(r) > RESIDUAL_TOL * scale:
            x = x + self.lu.solve(r, trans=trans)
            r = rhs - A @ x
            res = np.linalg.norm(r) / scale
            if res > RESIDUAL_TOL:
                raise NumericalError(f"Crank-Nicolson solve residual {res:.3e}", residual=res)
        return x


def cn_step(p, t_k, tau, u_k, f=None):
    """One Crank-Nicolson step with the midpoint Hamiltonian.

    Solves ``(I + i tau/2 H) u_next = (I - i tau/2 H) u_k + i tau f`` where
    ``H = H(t_k + tau/2)`` and ``f`` is the source at the midpoint.
    """
    step = _CNStep(p.operator, p.chi, t_k + 0.5 * tau, tau)
    rhs = step.explicit(interior_values(p, u_k))
    if f is not None:
        rhs = rhs + 1j * tau * interior_values(p, f)
    return p.grid.embed(step.solve(rhs))


@dataclass
class Trajectory:
    """Snapshots ``u[k] = u(times[k])`` on the full grid (zero on the boundary)."""

    grid: Grid
    times: np.ndarray
    u: np.ndarray
    du: np.ndarray = None
    d2u: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def tau(self):
        return float(self.times[1] - self.times[0])

    @property
    def symmetric(self):
        return bool(self.times[0] < 0)

    @property
    def n_steps(self):
        return len(self.times) - 1

    def series(self, order):
        out = (self.u, self.du, self.d2u)[order]
        if out is None:
            raise ConfigurationError(f"trajectory has no derivative of order {order}")
        return out

    def at_zero(self):
        return int(np.argmin(np.abs(self.times)))


def _source_at_midpoints(p, f, times):
    """Interior source values at the step midpoints, or None."""
    if f is None:
        return None
    g = p.grid
    nt = len(times) - 1
    if callable(f):
        mids = 0.5 * (times[:-1] + times[1:])
        return np.stack([interior_values(p, f(t)) for t in mids])
    arr = np.asarray(f)
    if arr.shape != (nt + 1,) + g.shape:
        raise ConfigurationError(f"source snapshots must have shape {(nt + 1,) + g.shape}")
    flat = arr.reshape(nt + 1, -1)[:, g.interior]
    return 0.5 * (flat[:-1] + flat[1:])


def _time_grid(T, N_t):
    if N_t < 1:
        raise ConfigurationError("need at least one time step")
    return np.linspace(0.0, T, N_t + 1)


def solve_ibvp(p, u0, f, T, N_t):
    """March the Crank-Nicolson scheme on ``[0, T]`` with ``N_t`` steps.

    ``f`` may be None, a callable ``f(t) -> field`` evaluated at the step
    midpoints, or an array of snapshots at the time nodes (averaged).
    """
    g = p.grid
    times = _time_grid(T, N_t)
    tau = times[1] - times[0]
    src = _source_at_midpoints(p, f, times)
    x = interior_values(p, u0)
    out = np.zeros((N_t + 1, g.interior.size), dtype=complex)
    out[0] = x
    for k in range(N_t):
        step = _CNStep(p.operator, p.chi, times[k] + 0.5 * tau, tau)
        rhs = step.explicit(x)
        if src is not None:
            rhs = rhs + 1j * tau * src[k]
        x = step.solve(rhs)
        out[k + 1] = x
    return Trajectory(g, times, _embed_series(g, out))


def _embed_series(g, flat):
    full = np.zeros((flat.shape[0], g.size), dtype=complex)
    full[:, g.interior] = flat
    return full.reshape((flat.shape[0],) + g.shape)


def initial_derivatives(p, u0_int):
    """``u'(0) = -i H(0) u0`` and ``u''(0) = -i H'(0) u0 - H(0)^2 u0``."""
    op = p.operator
    c = p.chi.derivs(0.0)
    H0u = op.H(c[0]) @ u0_int
    d1 = -1j * H0u
    d2 = -1j * (op.deriv(1, c) @ u0_int) - op.H(c[0]) @ H0u
    return d1, d2


def march_augmented(p, X0, times, sources=None, keep_steps=False):
    """March ``(u, u', u'')`` through the block lower-triangular CN system.

    The block system is ``i X' = [[H,0,0],[H1,H,0],[H2,2H1,H]] X + F``; one
    factorization of ``I + i tau/2 H`` per step serves all three blocks.
    ``sources`` (optional) is a list of three arrays of interior midpoint
    values.  Returns the three interior series and optionally the steps.
    """
    nt = len(times) - 1
    tau = times[1] - times[0]
    n = X0[0].size
    order = len(X0) - 1
    series = [np.zeros((nt + 1, n), dtype=complex) for _ in X0]
    x = [np.asarray(v, dtype=complex) for v in X0]
    for s, v in zip(series, x):
        s[0] = v
    steps = []
    for k in range(nt):
        st = _CNStep(p.operator, p.chi, times[k] + 0.5 * tau, tau, order=order)
        new = []
        for blk in range(order + 1):
            rhs = st.explicit(x[blk])
            coupling = np.zeros(n, dtype=complex)
            if blk >= 1:
                coupling += st.Hd[0] @ (x[blk - 1] + new[blk - 1]) * (blk if blk == 1 else 2)
            if blk == 2:
                coupling += st.Hd[1] @ (x[0] + new[0])
            rhs = rhs - 0.5j * tau * coupling
            if sources is not None and sources[blk] is not None:
                rhs = rhs + 1j * tau * sources[blk][k]
            new.append(st.solve(rhs))
        x = new
        for s, v in zip(series, x):
            s[k + 1] = v
        if keep_steps:
            steps.append(st)
    return (series, steps) if keep_steps else series


def solve_derivative_systems(p, u0, T, N_t):
    """Trajectories of ``u``, ``u'`` and ``u''`` for real ``u0`` and ``f = 0``.

    The differentiated systems are solved directly (sources ``-H'u`` and
    ``-H''u - 2H'u'``).  The centered time difference of ``u`` is compared
    with the solved ``u'`` and the result stored in ``meta["cross_check"]``.
    """
    g = p.grid
    u0 = np.asarray(u0)
    if np.iscomplexobj(u0) and np.max(np.abs(u0.imag)) > 1e-14 * max(1.0, np.max(np.abs(u0))):
        raise ConfigurationError("initial state must be real")
    x0 = interior_values(p, u0.real)
    d1, d2 = initial_derivatives(p, x0)
    times = _time_grid(T, N_t)
    u, du, d2u = march_augmented(p, (x0, d1, d2), times)
    traj = Trajectory(g, times, _embed_series(g, u), _embed_series(g, du), _embed_series(g, d2u))
    traj.meta["cross_check"] = derivative_cross_check(traj)
    return traj


def derivative_cross_check(traj):
    """Relative L2 gap between solved ``u'`` and the centered difference of ``u``."""
    g, tau = traj.grid, traj.tau
    fd = (traj.u[2:] - traj.u[:-2]) / (2 * tau)
    w = g.weights[None]
    gap = np.sqrt(np.sum(w * np.abs(fd - traj.du[1:-1]) ** 2))
    ref = np.sqrt(np.sum(w * np.abs(traj.du[1:-1]) ** 2))
    d2 = np.sqrt(np.max(np.sum(w * np.abs(traj.d2u) ** 2, axis=(1,) if g.dim == 1 else (1, 2))))
    d1 = np.sqrt(np.max(np.sum(w * np.abs(traj.du) ** 2, axis=(1,) if g.dim == 1 else (1, 2))))
    scale = (d2 / d1) ** 2 if d1 > 0 else 0.0
    rel = gap / ref if ref > 0 else 0.0
    bound = 5 * (tau**2 + g.h**2) * max(scale, 1.0)
    return {"relative_gap": float(rel), "bound": float(bound), "ok": bool(rel <= bound)}


def extend_time_symmetric(traj, parity="even"):
    """Extend a ``[0, T]`` trajectory to ``[-T, T]`` by conjugate reflection.

    even: ``u(-t) = conj u(t)``; odd: ``u(-t) = -conj u(t)``.  Derivative
    series, if present, are extended with alternating parity.
    """
    if parity not in ("even", "odd"):
        raise ConfigurationError(f"parity must be 'even' or 'odd', got {parity!r}")
    if traj.symmetric:
        raise ConfigurationError("trajectory is already on [-T, T]")
    u0 = traj.u[0]
    scale = max(1.0, float(np.max(np.abs(u0))))
    bad = np.abs(u0.imag) if parity == "even" else np.abs(u0.real)
    if np.max(bad) > 1e-10 * scale:
        raise DataError(f"t=0 snapshot incompatible with {parity} conjugate extension "
                        f"(max defect {np.max(bad):.3e})")

    def ext(arr, sign):
        if arr is None:
            return None
        left = sign * np.conj(arr[:0:-1])
        return np.concatenate([left, arr])

    s = 1.0 if parity == "even" else -1.0
    times = np.concatenate([-traj.times[:0:-1], traj.times])
    return Trajectory(traj.grid, times, ext(traj.u, s), ext(traj.du, -s),
                      ext(traj.d2u, s), dict(traj.meta, parity=parity))
