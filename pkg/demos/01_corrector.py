"""
Correctors and effective matrices on a random torus
===================================================

Generate an i.i.d. Uniform[1, 10] environment, solve the cell problem for the
corrector and read off the effective covariance, the area drift and the
second moment of the jump law.
"""

import numpy as np

from rcmrough import UniformInterval, clusters, gen_env, potential_box_average, sigma_gamma, solve_harmonic

#%%
# A 64 x 64 torus with nearest-neighbor conductances.  Every edge is open, so
# the giant cluster is the whole torus.

env = gen_env(UniformInterval(1, 10), d=2, L=64, seed=7)
labels = clusters(env)
print("sites on the cluster:", labels.giant_size)

#%%
# The corrector solves a weighted Laplace equation; CG stops when every
# site's residual is small relative to its weighted degree.

field = solve_harmonic(env, labels, tol=1e-10)
print(f"CG iterations {field.solver_iters}, residual {field.residual:.1e}")

stats = sigma_gamma(env, labels, field)
np.set_printoptions(precision=4, suppress=True)
print("Sigma^2 =\n", stats.sigma2)
print("Gamma   =\n", stats.gamma)
print("M^2     =\n", stats.m2)

#%%
# Orthogonality of the harmonic part and the corrector: M^2 = Sigma^2 - 2 Gamma.

print("max |M^2 - (Sigma^2 - 2 Gamma)| =", stats.pythagoras_defect)

#%%
# Box-averaging the corrector gives a potential whose increments miss the
# corrector by an error that shrinks as the box grows, roughly like 1/n.

prev = None
for n in (2, 4, 8, 16):
    e = potential_box_average(env, labels, field, n).E_rms
    ratio = "" if prev is None else f"  ratio {e / prev:.3f}"
    print(f"n={n:2d}  E_rms={e:.4f}{ratio}")
    prev = e
