"""Carleman weights: certificate, conjugation residual and the ratio sweep.

Run with ``python demos/carleman_weights.py``.
"""
import numpy as np

from maglab.carleman import (alpha_floor, build_beta, check_carleman, check_klibanov,
                             compute_gamma_plus, conjugation_residual, random_spacetime_field,
                             symmetric_times, verify_assumption)
from maglab.grid import Grid

g = Grid.uniform(1, 65)
w = build_beta(g, [-0.5], m=2.0, lam=0.1, s=1.0, T=1.0)

# %% The quadratic weight |x - x0|^2 passes all three conditions.
cert = verify_assumption(w)
print(f"C0={cert.C0}, eps={cert.eps}, passes a/b/c: {cert.pass_a} {cert.pass_b} {cert.pass_c}")
gp, gm = compute_gamma_plus(w)
print("Gamma+ nodes", gp.nodes, "Gamma- nodes", gm.nodes)

# %% Conjugating i d_t + Delta by the weight gives M1 + M2 up to truncation.
times = symmetric_times(1.0, 128)
q = random_spacetime_field(g, times, np.random.default_rng(0))
print("conjugation residual", conjugation_residual(w, q, times))

# %% I(q) against the boundary and source bracket over the (s, lambda) sweep.
rep = check_carleman(w, q, times, gp)
for s, lam, I, bnd, src, ratio in rep.table():
    print(f"s={s:4g} lam={lam:4g} ratio={ratio:.3e}")
print("non-increasing past the knee:", rep.knee_ok())

# %% The time-primitive estimate: s * LHS / RHS levels off as s grows.
kl = check_klibanov(w, q, times)
print("s * lhs / rhs:", np.round(kl.scaled, 4))
corr, printed = alpha_floor(w)
print(f"min alpha {np.min(w.alpha()):.5f}; floor {corr:.5f} holds, {printed:.5f} does not")
