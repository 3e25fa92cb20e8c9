"""Uniform Cartesian grids on intervals and rectangles, finite-difference
calculus, boundary traces and the discrete divergence-free projector.

Fields are plain numpy arrays shaped like ``grid.shape`` (scalars) or
``(grid.dim, *grid.shape)`` (vector fields).  Node ordering for the sparse
operators is C order of ``grid.shape`` (axis 0 varies slowest).
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError

_AXES = "xy"


class Grid:
    """Uniform node grid on ``[0, L_1] x ... x [0, L_n]``, n in {1, 2}.

    Every axis must share the same spacing ``h``.  Boundary nodes carry an
    outward unit normal; at rectangle corners the x-face normal wins.
    """

    def __init__(self, shape, lengths):
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        lengths = tuple(float(x) for x in np.atleast_1d(lengths))
        if len(shape) not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {len(shape)}")
        if len(lengths) != len(shape):
            raise ConfigurationError("shape and lengths differ in dimension")
        if min(shape) < 8:
            raise ConfigurationError(f"need at least 8 nodes per axis, got {shape}")
        if min(lengths) <= 0:
            raise ConfigurationError("axis lengths must be positive")
        spacings = [L / (n - 1) for L, n in zip(lengths, shape)]
        if not np.allclose(spacings, spacings[0], rtol=1e-12, atol=0):
            raise ConfigurationError(f"spacing must agree across axes, got {spacings}")
        self.shape = shape
        self.lengths = lengths
        self.dim = len(shape)
        self.h = spacings[0]
        self.size = int(np.prod(shape))
        self.coords = tuple(np.linspace(0.0, L, n) for L, n in zip(lengths, shape))

        mask = np.zeros(shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        self.boundary_mask = mask
        self.interior_mask = ~mask
        self.boundary = np.flatnonzero(mask)
        self.interior = np.flatnonzero(~mask)

        normals = np.zeros((self.boundary.size, self.dim))
        faces = []
        multi = np.unravel_index(self.boundary, shape)
        for k in range(self.boundary.size):
            for ax in range(self.dim):  # x-face first: corner priority
                i = multi[ax][k]
                if i == 0:
                    normals[k, ax] = -1.0
                    faces.append(_AXES[ax] + "-")
                    break
                if i == shape[ax] - 1:
                    normals[k, ax] = 1.0
                    faces.append(_AXES[ax] + "+")
                    break
        self.normals = normals
        self.faces = np.array(faces)

        w = np.ones(shape)
        for ax, n in enumerate(shape):
            w1 = np.full(n, self.h)
            w1[[0, -1]] *= 0.5
            w = w * w1.reshape([-1 if a == ax else 1 for a in range(self.dim)])
        self.weights = w

    @classmethod
    def uniform(cls, dim, n, length=1.0):
        """Square grid with ``n`` nodes per axis on ``[0, length]^dim``."""
        return cls((n,) * dim, (length,) * dim)

    def mesh(self):
        """Coordinate arrays, one per axis, each shaped like the grid."""
        return np.meshgrid(*self.coords, indexing="ij")

    def boundary_width(self):
        """Distance from every node to the boundary (array shaped like the grid)."""
        d = np.full(self.shape, np.inf)
        for x, L in zip(self.mesh(), self.lengths):
            d = np.minimum(d, np.minimum(x, L - x))
        return d

    def collar(self, width):
        """Mask of nodes within ``width`` of the boundary."""
        return self.boundary_width() <= width + 1e-12 * max(self.lengths)

    def check(self, f, vector=False):
        want = ((self.dim,) if vector else ()) + self.shape
        f = np.asarray(f)
        if f.shape != want:
            raise ConfigurationError(f"field shape {f.shape} does not match grid {want}")
        return f

    def embed(self, u_int, dtype=complex):
        """Full-grid field from interior values (zero on the boundary)."""
        out = np.zeros(self.size, dtype=dtype)
        out[self.interior] = u_int
        return out.reshape(self.shape)

    def restrict(self, f):
        return np.asarray(f).reshape(-1)[self.interior]

    def __repr__(self):
        return f"Grid(shape={self.shape}, lengths={self.lengths})"


@dataclass
class BoundarySubset:
    """A set of boundary nodes with surface quadrature weights.

    ``nodes`` are flat grid indices; ``normals`` the matching outward normals.
    """

    grid: Grid
    nodes: np.ndarray
    normals: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def from_boundary_mask(cls, grid, select):
        select = np.asarray(select, dtype=bool)
        w = 1.0 if grid.dim == 1 else grid.h
        return cls(grid, grid.boundary[select], grid.normals[select],
                   np.full(int(select.sum()), w))

    @classmethod
    def whole(cls, grid):
        return cls.from_boundary_mask(grid, np.ones(grid.boundary.size, bool))

    def complement(self):
        keep = ~np.isin(self.grid.boundary, self.nodes)
        return BoundarySubset.from_boundary_mask(self.grid, keep)

    @property
    def size(self):
        return self.nodes.size

    def faces(self):
        pos = np.searchsorted(self.grid.boundary, self.nodes)
        return self.grid.faces[pos]


# ---------------------------------------------------------------- operators

def gradient(f, g):
    """Second-order gradient: central inside, 3-point one-sided on the boundary."""
    f = g.check(f)
    if g.dim == 1:
        return np.gradient(f, g.h, edge_order=2)[None]
    return np.stack(np.gradient(f, g.h, edge_order=2))


def laplacian(f, g):
    """3-point / 5-point Laplacian at interior nodes; zero on the boundary."""
    f = g.check(f)
    out = np.zeros_like(f)
    inner = tuple(slice(1, -1) for _ in range(g.dim))
    for ax in range(g.dim):
        lo = list(inner)
        hi = list(inner)
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        out[inner] += f[tuple(lo)] - 2.0 * f[inner] + f[tuple(hi)]
    return out / g.h**2


def divergence(v, g):
    """Sum of second-order derivatives of the components (same stencils as gradient)."""
    v = g.check(v, vector=True)
    out = np.zeros(g.shape, dtype=v.dtype)
    for ax in range(g.dim):
        out += np.gradient(v[ax], g.h, axis=ax, edge_order=2)
    return out


def neumann_trace(f, g, subset):
    """Outward normal derivative at the nodes of ``subset``."""
    if subset.size == 0:
        raise ConfigurationError("empty boundary subset")
    grad = gradient(f, g).reshape(g.dim, -1)[:, subset.nodes]
    return np.einsum("dk,kd->k", grad, subset.normals)


def inner(f1, f2, g):
    """Discrete L2 inner product <f1, f2> (linear in f1, conjugate-linear in f2)."""
    w = g.weights
    if np.ndim(f1) == g.dim + 1:
        w = w[None]
    return np.sum(w * f1 * np.conj(f2))


def dirichlet_form(f1, f2, g):
    """Edge sum ``sum_edges h^n (D+ f1) conj(D+ f2)`` with forward differences.

    For fields vanishing on the boundary this is exactly
    ``-<laplacian(f1), f2>``: the summation-by-parts partner of the
    3-point / 5-point stencil.  The node gradient of :func:`gradient`
    satisfies the same identity only up to O(h^2).
    """
    f1, f2 = g.check(f1), g.check(f2)
    total = 0.0
    for ax in range(g.dim):
        d1 = np.diff(f1, axis=ax) / g.h
        d2 = np.diff(f2, axis=ax) / g.h
        total = total + np.sum(d1 * np.conj(d2))
    return total * g.h**g.dim


def norms(f, g):
    """Trapezoidal L2 norm and H1 norm ``(||f||^2 + ||grad f||^2)^(1/2)``."""
    f = np.asarray(f)
    comps = f if f.ndim == g.dim + 1 else f[None]
    l2sq = 0.0
    gsq = 0.0
    for c in comps:
        l2sq += float(np.sum(g.weights * np.abs(c) ** 2))
        gsq += float(np.sum(g.weights[None] * np.abs(gradient(c, g)) ** 2))
    return {"L2": np.sqrt(l2sq), "H1": np.sqrt(l2sq + gsq)}


# ------------------------------------------------------------ sparse builders

def _d1(n, h):
    rows = [0, 0, 0, n - 1, n - 1, n - 1]
    cols = [0, 1, 2, n - 3, n - 2, n - 1]
    vals = [-3.0, 4.0, -1.0, 1.0, -4.0, 3.0]
    i = np.arange(1, n - 1)
    rows += list(i) + list(i)
    cols += list(i - 1) + list(i + 1)
    vals += [-1.0] * (n - 2) + [1.0] * (n - 2)
    return sp.csr_matrix((np.array(vals) / (2 * h), (rows, cols)), shape=(n, n))


def gradient_matrices(g):
    """Full-grid sparse matrices reproducing :func:`gradient`, one per axis."""
    mats = []
    for ax in range(g.dim):
        m = _d1(g.shape[ax], g.h)
        for other in range(g.dim):
            if other < ax:
                m = sp.kron(sp.identity(g.shape[other]), m)
            elif other > ax:
                m = sp.kron(m, sp.identity(g.shape[other]))
        mats.append(m.tocsr())
    return mats


def laplacian_matrix(g, interior=True):
    """Dirichlet Laplacian; restricted to interior unknowns unless ``interior=False``."""
    mats = []
    for ax in range(g.dim):
        n = g.shape[ax]
        m = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)) / g.h**2
        for other in range(g.dim):
            if other < ax:
                m = sp.kron(sp.identity(g.shape[other]), m)
            elif other > ax:
                m = sp.kron(m, sp.identity(g.shape[other]))
        mats.append(m)
    lap = sum(mats).tocsr()
    if interior:
        return lap[g.interior][:, g.interior].tocsr()
    keep = sp.diags(g.interior_mask.ravel().astype(float))
    return (keep @ lap).tocsr()


def neumann_trace_matrix(g, subset):
    """Sparse map from interior unknowns to normal derivatives on ``subset``."""
    grads = gradient_matrices(g)
    rows = []
    for k, node in enumerate(subset.nodes):
        r = sum(subset.normals[k, ax] * grads[ax][node] for ax in range(g.dim))
        rows.append(r)
    m = sp.vstack(rows).tocsr()
    return m[:, g.interior].tocsr()


def curl(psi, g):
    """Discrete 2D curl ``(d2 psi, -d1 psi)``; exactly divergence-free for :func:`divergence`."""
    if g.dim != 2:
        raise ConfigurationError("curl of a stream function needs a 2D grid")
    d1, d2 = np.gradient(g.check(psi), g.h, edge_order=2)
    return np.stack([d2, -d1])


# --------------------------------------------------------- Leray projection

def neumann_laplacian_matrix(g):
    """Ghost-node Laplacian with homogeneous Neumann conditions on every node.

    Boundary rows use ``2 (f_1 - f_0) / h^2`` per axis; the matrix is
    symmetric in the trapezoidal inner product and annihilates constants.
    """
    mats = []
    for ax in range(g.dim):
        n = g.shape[ax]
        m = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)).tolil()
        m[0, 1] = 2.0
        m[n - 1, n - 2] = 2.0
        m = m.tocsr() / g.h**2
        for other in range(g.dim):
            if other < ax:
                m = sp.kron(sp.identity(g.shape[other]), m)
            elif other > ax:
                m = sp.kron(m, sp.identity(g.shape[other]))
        mats.append(m)
    return sum(mats).tocsr()


def _neumann_step(v, g):
    """``v - grad phi`` with ``Delta_N phi = div v`` (compatible part), zero-mean ``phi``."""
    w = g.weights.ravel()
    rhs = divergence(v, g).ravel()
    rhs = rhs - np.sum(w * rhs) / np.sum(w)
    if not np.any(rhs):
        return v.copy()
    # W Delta_N is symmetric; pin node 0 to remove the constant null space
    A = (sp.diags(w) @ neumann_laplacian_matrix(g)).tolil()
    b = w * rhs
    A[0, :] = 0.0
    A[0, 0] = 1.0
    b[0] = 0.0
    phi = spla.spsolve(A.tocsc(), b)
    phi -= np.sum(w * phi) / np.sum(w)
    return v - gradient(phi.reshape(g.shape), g)


def _orthogonal_step(v, g, rtol, maxiter):
    """W-orthogonal projection onto the kernel of the discrete divergence."""
    div = sp.hstack(gradient_matrices(g)).tocsr()
    winv = 1.0 / np.tile(g.weights.ravel(), g.dim)
    grad_t = -(sp.diags(winv) @ div.T).tocsr()
    poisson = (div @ grad_t).tocsr()
    rhs = div @ v.ravel()
    if np.linalg.norm(rhs) == 0.0:
        return v.copy(), 0
    # -poisson is symmetric positive semidefinite; the system is consistent
    phi, info = spla.cg(-poisson, -rhs, rtol=rtol, atol=0.0,
                        maxiter=maxiter or 20 * g.size)
    return v - (grad_t @ phi).reshape(v.shape), info


def leray_project(v, g, rtol=1e-13, maxiter=None):
    """Project a real vector field onto discretely divergence-free fields.

    Two stages.  First ``v - grad phi`` with ``phi`` the zero-mean solution
    of the Neumann Poisson problem ``Delta phi = div v``; this removes
    gradients of functions with zero normal derivative up to O(h^2).
    The stencils of ``div`` and the Neumann Laplacian differ, so a second,
    W-orthogonal projection onto the kernel of :func:`divergence` makes the
    divergence vanish to solver precision.  The first stage leaves
    divergence-free fields unchanged, so the composition is idempotent.
    """
    v = g.check(v, vector=True)
    if np.iscomplexobj(v):
        raise ConfigurationError("leray_project expects a real field")
    vnorm = norms(v, g)["L2"]
    if vnorm == 0.0:
        return v.copy()
    out, info = _orthogonal_step(_neumann_step(v, g), g, rtol, maxiter)
    resid = norms(divergence(out, g), g)["L2"]
    if resid > 1e-8 * vnorm:
        raise NumericalError(
            f"Poisson solve for the projection stalled (info={info}): "
            f"divergence {resid:.3e} vs field norm {vnorm:.3e}", residual=resid / vnorm)
    return out


# ------------------------------------------------------------ smooth samples

def sine_mode(g, k):
    """Dirichlet eigenfunction ``prod_i sin(k_i pi x_i / L_i)``; a scalar ``k`` applies to every axis."""
    k = np.broadcast_to(np.atleast_1d(k), (g.dim,))
    out = np.ones(g.shape)
    for x, L, ki in zip(g.mesh(), g.lengths, k):
        out = out * np.sin(ki * np.pi * x / L)
    return out


def random_smooth_field(g, rng, modes=5, complex_values=True, decay=2.0):
    """Random combination of low Dirichlet sine modes (vanishes on the boundary).

    Coefficients are drawn in a fixed order so that the same ``rng`` state
    gives the same continuum function on every grid resolution.
    """
    out = np.zeros(g.shape, dtype=complex if complex_values else float)
    for k in np.ndindex(*(modes,) * g.dim):
        k = np.array(k) + 1
        amp = 1.0 / np.sum(k**2) ** (decay / 2)
        c = rng.standard_normal()
        if complex_values:
            c = c + 1j * rng.standard_normal()
        out = out + amp * c * sine_mode(g, k)
    return out
