"""Forward solve, charge conservation and the a-priori bounds on a 1D grid.

Run with ``python demos/forward_and_bounds.py``; takes a few seconds.
"""
import numpy as np

from maglab.diagnostics import check_Bj_symmetry, check_charge_bound, check_derivative_bounds
from maglab.grid import Grid, norms, random_smooth_field
from maglab.hamiltonian import solve_derivative_systems, solve_ibvp
from maglab.inverse import make_potential_pair
from maglab.streams import substream

g = Grid.uniform(1, 129)
pair = make_potential_pair(g, seed=1, delta=0.1)
p = pair.a
print(g, "potential sup-norm", p.amax)

# %% Without a source the Crank-Nicolson propagator keeps the L2 norm.
rng = substream(1, "demo")
u0 = random_smooth_field(g, rng)
traj = solve_ibvp(p, u0, None, 1.0, 256)
charge = np.array([norms(u, g)["L2"] for u in traj.u])
print("relative charge drift", np.max(np.abs(charge / charge[0] - 1)))

# %% With a source the charge grows, but stays below e^{T/2}(|psi0| + |f|).
f0 = random_smooth_field(g, rng)
traj = solve_ibvp(p, u0, lambda t: np.cos(2 * t) * f0, 1.0, 256)
rep = check_charge_bound(traj, u0, lambda t: np.cos(2 * t) * f0)
print(f"charge bound: lhs {rep.lhs:.4f} <= rhs {rep.rhs:.4f} ({rep.passed})")

# %% Time derivatives from the differentiated systems, with their empirical constants.
real0 = np.real(random_smooth_field(g, rng, complex_values=False))
dtraj = solve_derivative_systems(p, real0, 1.0, 256)
for r in check_derivative_bounds(dtraj, real0):
    print(f"{r.name}: empirical constant {r.ratio:.3f}")
print("solved u' against differenced u:", dtraj.meta["cross_check"])

# %% The operators B_j and H^(j) are symmetric in the weighted inner product.
for r in check_Bj_symmetry(p, 0.5, samples=10, rng=rng):
    print(f"{r.name}: asymmetry {r.lhs:.2e}")
