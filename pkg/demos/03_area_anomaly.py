"""
The area anomaly in a Monte Carlo ensemble
==========================================

Run a few thousand walks in lockstep and compare the mean level-2 value at
time T with the drift predicted by the corrector.  The Ito lift picks up
``T Gamma``; the Stratonovich lift picks up ``T Sigma^2 / 2``.  The same run
feeds the full diagnostics report.
"""

import warnings

import numpy as np

from rcmrough import EnsembleSpec, UniformInterval, clusters, gen_env, run_diagnostics, run_ensemble, solve_harmonic

env = gen_env(UniformInterval(1, 10), d=2, L=32, seed=11)
labels = clusters(env)
field = solve_harmonic(env, labels)

spec = EnsembleSpec(K=4000, n_list=(25, 100), T=1.0, p=3.0, master_seed=1, L=32, pvar_walks=100)
run = run_ensemble(spec, env, labels, field)

#%%
# Mean Ito and Stratonovich values at the largest n, with Monte Carlo stderr.

a = len(spec.n_list) - 1
n = spec.n_list[a]
ito = run.snap["XX"][:, a] / n
strat = ito + 0.5 * run.snap["QXX"][:, a] / n
se = lambda x: x.std(axis=0, ddof=1) / np.sqrt(len(x))  # noqa: E731
np.set_printoptions(precision=4, suppress=True)
print("Gamma (solver)      =\n", run.reference.gamma)
print("mean Ito            =\n", ito.mean(axis=0), "\n  stderr\n", se(ito))
print("Sigma^2 / 2 (solver) =\n", 0.5 * run.reference.sigma2)
print("mean Stratonovich   =\n", strat.mean(axis=0), "\n  stderr\n", se(strat))

#%%
# Every diagnostic is a cheap reduction of the same run.  Verdicts are
# trend-plus-threshold rules over n, so a small run like this one can fail
# some of them.

with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    rep = run_diagnostics(spec, env, labels, field, run=run)
for name, verdict in rep.verdicts.items():
    rows = rep.checks[name].get("rows", [])
    stats = ", ".join(f"n={r['n']}: {r['statistic']:.4g}" for r in rows)
    print(f"{name:15s} {str(verdict):5s}  {stats}")
