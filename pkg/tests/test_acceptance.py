"""Acceptance criteria 1-11, each at its stated tolerance.

Every test appends one ``PASS``/``FAIL criterion N`` line to the acceptance
section of the pytest terminal summary (and prints it) before asserting.
Criteria 7 and 8 share one quenched ensemble on a Uniform[1,10] torus.
"""

import itertools
import os
import warnings

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, random_jump_path, random_step_path

from rcmrough.corrector import potential_box_average, sigma_gamma, solve_harmonic
from rcmrough.diagnostics import (
    EnsembleSpec,
    area_anomaly_mc,
    corrector_area_check,
    corrector_pvar_decay,
    gaussianity_check,
    isotropy_check,
    lindeberg_check,
    mixed_q_check,
    qv_limit_check,
    run_ensemble,
    strictly_decreasing,
    ucv_check,
)
from rcmrough.env import Constant, LineModel, LongRangePoly, PercolationWeighted, UniformInterval, clusters, gen_env
from rcmrough.pvar import p2var_exact, pvar_exact
from rcmrough.roughpath import (
    chen_eval,
    chen_window_by_index,
    decompose,
    ito_lift,
    left_point_integral,
    quadratic_covariation,
    quadratic_variation_prefix,
    stratonovich_lift,
)
from rcmrough.walk import position_at, simulate

TOL = 1e-10
THREADS = max(1, min(8, os.cpu_count() or 1))


def report(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def walks(uniform64):
    s = uniform64
    out = []
    for k in range(100):
        path = simulate(s.env, s.labels, 20.0, 500 + k, "uniform")
        out.append(path)
    return out


# ---- 1-3: level-2 algebra on simulated paths


def test_criterion_1_chen(walks):
    rng = np.random.default_rng(1)
    worst = 0.0
    for path in walks:
        X = path.values.astype(float)
        scale = 1 + np.max(np.sum(X**2, axis=1))
        l2s = (ito_lift(path), stratonovich_lift(path))
        for r, s, t in np.sort(rng.uniform(0, path.horizon, (1000, 3)), axis=1):
            xr, xs, xt = (position_at(path, u).astype(float) for u in (r, s, t))
            for l2 in l2s:
                defect = chen_eval(l2, r, t) - chen_eval(l2, r, s) - chen_eval(l2, s, t) - np.outer(xs - xr, xt - xs)
                worst = max(worst, np.max(np.abs(defect)) / scale)
    ok = worst <= 1e-9
    report(1, ok, f"max Chen defect / (1+max|X|^2) = {worst:.2e} <= 1e-9 (100 paths x 1000 triples, Ito and Stratonovich)")
    assert ok


def test_criterion_2_summation_by_parts(walks, uniform64):
    rng = np.random.default_rng(2)
    worst = 0.0
    for path in walks:
        M, R = decompose(path, uniform64.field)
        for X, Y in ((M, R), (path, path)):
            for s, t in np.sort(rng.uniform(0, path.horizon, (100, 2)), axis=1):
                lhs = left_point_integral(X, Y, s, t) + left_point_integral(Y, X, s, t).T
                xy = np.outer(position_at(X, t) - position_at(X, s), position_at(Y, t) - position_at(Y, s))
                q = quadratic_covariation(X, Y, s, t)
                denom = max(1.0, np.max(np.abs(xy)), np.max(np.abs(q)))
                worst = max(worst, np.max(np.abs(lhs - (xy - q))) / denom)
    ok = worst <= 1e-10
    report(2, ok, f"max relative summation-by-parts defect = {worst:.2e} <= 1e-10 (100 paths x 100 windows, pairs (M,R) and (X,X))")
    assert ok


def test_criterion_3_ito_stratonovich(walks):
    worst = 0.0
    for path in walks:
        d = ito_lift(path)
        s = stratonovich_lift(path)
        worst = max(worst, float(np.max(np.abs(s.xx0 - d.xx0 - 0.5 * quadratic_variation_prefix(path)))))
    ok = worst == 0.0
    report(3, ok, f"max |Strat - Ito - Q/2| = {worst} (exact zero required)")
    assert ok


# ---- 4: p-variation DP vs exhaustive enumeration


def enumerate_max(m, incr_p):
    best = 0.0
    for r in range(m):
        for inner in itertools.combinations(range(1, m), r):
            cuts = (0,) + inner + (m,)
            best = max(best, sum(incr_p[a][b] for a, b in zip(cuts[:-1], cuts[1:])))
    return best


def test_criterion_4_pvar_enumeration():
    rng = np.random.default_rng(4)
    worst1 = worst2 = 0.0
    for k in range(500):
        m = int(rng.integers(1, 13))
        path = random_jump_path(rng, m, 2) if k % 2 else random_step_path(rng, m, k=2)
        v = path.values.astype(float)
        dist = np.linalg.norm(v[None, :, :] - v[:, None, :], axis=2)
        for p in (2.5, 3.0, 4.0):
            ref = enumerate_max(m, (dist**p).tolist()) ** (1 / p)
            got = pvar_exact(path, p).value
            worst1 = max(worst1, abs(got - ref) / max(ref, 1e-300))
        if m <= 8:
            l2 = ito_lift(path) if k % 3 else stratonovich_lift(path)
            w = np.array([[np.linalg.norm(chen_window_by_index(l2, a, b)) if a < b else 0.0 for b in range(m + 1)] for a in range(m + 1)])
            for p in (2.5, 3.0, 4.0):
                q = p / 2
                ref = enumerate_max(m, (w**q).tolist()) ** (1 / q)
                got = p2var_exact(l2, q).value
                worst2 = max(worst2, abs(got - ref) / max(ref, 1e-300) if ref > 0 else abs(got))
    ok = worst1 <= 1e-12 and worst2 <= 1e-12
    report(4, ok, f"DP vs enumeration max relative gap: p-var {worst1:.1e}, q-var {worst2:.1e} (<= 1e-12; 500 paths, p in 2.5/3/4)")
    assert ok


# ---- 5-6: corrector identities


def test_criterion_5_pythagoras():
    cases = [
        (UniformInterval(1, 10), 2, 64, 0),
        (UniformInterval(1, 10), 2, 32, 1),
        (PercolationWeighted(0.7, 1, 2), 2, 64, 2),
        (PercolationWeighted(0.6, 1, 3), 2, 32, 3),
        (LongRangePoly(6.0, 2, 1, 2), 2, 16, 4),
        (UniformInterval(1, 10), 3, 12, 5),
        (PercolationWeighted(0.7, 1, 2), 3, 12, 6),
        (LineModel(1, 3), 2, 32, 7),
    ]
    worst = 0.0
    for law, d, L, seed in cases:
        env = gen_env(law, d, L, seed)
        lab = clusters(env)
        st = sigma_gamma(env, lab, solve_harmonic(env, lab, tol=TOL))
        ratio = st.pythagoras_defect / (10 * TOL * np.max(np.abs(st.m2)))
        worst = max(worst, ratio)
    ok = worst <= 1.0
    report(5, ok, f"max ||M2 - (Sigma2 - 2 Gamma)||_max / (10 tol ||M2||_max) = {worst:.3f} <= 1 over {len(cases)} environments")
    assert ok


def test_criterion_6_degenerate_references(constant16, line16):
    env = gen_env(Constant(1.0), 2, 64, 0)
    lab = clusters(env)
    fld = solve_harmonic(env, lab)
    st = sigma_gamma(env, lab, fld)
    chi_inf = float(np.max(np.abs(fld.chi)))
    ok_c = chi_inf <= 1e-8 and np.max(np.abs(st.sigma2 - 2 * np.eye(2))) <= 1e-8 and np.max(np.abs(st.gamma)) <= 1e-8
    line_chi = float(np.max(np.abs(line16.field.chi)))
    line_gamma = float(np.max(np.abs(line16.stats.gamma)))
    ok_l = line_chi == 0.0 and line_gamma == 0.0
    ok = ok_c and ok_l
    report(6, ok, f"Constant: |chi|_inf={chi_inf:.1e}, Sigma2=2I, Gamma=0 (1e-8); LineModel: |chi|_inf={line_chi}, |Gamma|={line_gamma}")
    assert ok


# ---- 7-8: one quenched ensemble


@pytest.fixture(scope="module")
def big_run():
    env = gen_env(UniformInterval(1, 10), 2, 64, 0)
    lab = clusters(env)
    fld = solve_harmonic(env, lab, tol=TOL)
    spec = EnsembleSpec(K=20_000, n_list=(25, 100, 400), T=1.0, p=3.0, master_seed=0, L=64, pvar_walks=200)
    return run_ensemble(spec, env, lab, fld, threads=THREADS)


def test_criterion_7_area_anomaly(big_run):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        chk = area_anomaly_mc(big_run)
    last = chk["rows"][-1]
    T = big_run.spec.T
    ito_z = np.abs(np.asarray(last["ito_mean"]) - T * big_run.reference.gamma) / np.asarray(last["ito_stderr"])
    strat_z = np.abs(np.asarray(last["strat_mean"]) - 0.5 * T * big_run.reference.sigma2) / np.asarray(last["strat_stderr"])
    ok = bool(np.all(ito_z <= 3) and np.all(strat_z <= 3))
    report(7, ok, f"n=400, K=2e4: max |mean Ito - Gamma|/stderr = {ito_z.max():.2f}, max |mean Strat - Sigma2/2|/stderr = {strat_z.max():.2f} (<= 3 componentwise)")
    assert ok


def test_criterion_8a_qv_limit(big_run):
    chk = qv_limit_check(big_run)
    med = [r["median"] for r in chk["rows"]]
    ok = strictly_decreasing(med)
    report("8a", ok, "qv_limit medians " + " > ".join(f"{m:.4f}" for m in med) + " strictly decreasing over n=25,100,400")
    assert ok


def test_criterion_8b_ucv(big_run):
    chk = ucv_check(big_run)
    sig = np.diag(big_run.reference.sigma2)
    zs = []
    for r in chk["rows"]:
        z = np.abs(np.diag(r["mean"]) - big_run.spec.T * sig) / np.diag(r["stderr_matrix"])
        zs.append(float(z.max()))
    ok = all(z <= 3 for z in zs)
    report("8b", ok, "ucv max |mean [M]_ii - T Sigma2_ii|/stderr per n = " + ", ".join(f"{z:.2f}" for z in zs) + " (<= 3)")
    assert ok


def test_criterion_8c_lindeberg(big_run):
    chk = lindeberg_check(big_run)
    v = big_run.spec.direction
    thr = 0.01 * float(v @ big_run.reference.sigma2 @ v) * big_run.spec.T
    final = chk["rows"][-1]["statistic"]
    ok = final <= thr
    report("8c", ok, f"lindeberg statistic at n=400 = {final:.3e} <= 1% of v'Sigma2 v T = {thr:.3e}")
    assert ok


def test_criterion_8d_corrector_pvar(big_run):
    chk = corrector_pvar_decay(big_run)
    means = [r["statistic"] for r in chk["rows"]]
    ratios = [a / b for a, b in zip(means, means[1:])]
    ok = all(r >= 1.5 for r in ratios)
    report("8d", ok, "corrector 3-var means " + ", ".join(f"{m:.4f}" for m in means) + "; drop per 4x in n = " + ", ".join(f"{r:.3f}" for r in ratios) + " (>= 1.5 required)")
    assert ok


def test_criterion_8e_corrector_area(big_run):
    chk = corrector_area_check(big_run)
    med = [r["median"] for r in chk["rows"]]
    ok = strictly_decreasing(med)
    report("8e", ok, "corrector area median deviations " + " > ".join(f"{m:.4f}" for m in med) + " decreasing")
    assert ok


def test_criterion_8f_mixed_q(big_run):
    chk = mixed_q_check(big_run)
    means = [r["statistic"] for r in chk["rows"]]
    thr = chk["criteria"]["threshold"]
    ok = strictly_decreasing(means) and means[-1] <= thr
    report("8f", ok, "mixed-Q means " + ", ".join(f"{m:.4f}" for m in means) + f"; final <= threshold {thr:.4f} required")
    assert ok


# ---- 9-11


def test_criterion_9_transfer_decay():
    ratios = []
    for seed in range(5):
        env = gen_env(UniformInterval(1, 10), 2, 64, seed)
        lab = clusters(env)
        fld = solve_harmonic(env, lab, tol=TOL)
        E = {n: potential_box_average(env, lab, fld, n).E_rms for n in (4, 8, 16)}
        ratios.append((E[8] / E[4], E[16] / E[8]))
    med = np.median(np.array(ratios), axis=0)
    ok = bool(np.all((0.3 <= med) & (med <= 0.8)))
    report(9, ok, f"median E_rms(2n)/E_rms(n) over 5 seeds: n=4 {med[0]:.3f}, n=8 {med[1]:.3f} (in [0.3, 0.8])")
    assert ok


def test_criterion_10_percolation_isotropy():
    stats = []
    for seed in range(20):
        env = gen_env(PercolationWeighted(0.7, 1, 2), 2, 64, 1000 + seed)
        lab = clusters(env)
        stats.append(sigma_gamma(env, lab, solve_harmonic(env, lab, tol=TOL)))
    res = isotropy_check(stats, tol=TOL)
    v = res["verdicts"]
    ok = res["verdict"]
    worst = max(r["defect"] / r["bound"] for r in res["per_env"])
    report(
        10,
        ok,
        f"20 envs: mean Sigma2_12 = {res['offdiag_mean'][0]:.2e} (stderr {res['offdiag_stderr'][0]:.1e}) {v['offdiag_zero']}; "
        f"Sigma2_11-Sigma2_22 = {res['diag_diff_mean'][0]:.2e} (stderr {res['diag_diff_stderr'][0]:.1e}) {v['diag_equal']}; "
        f"max identity defect / bound = {worst:.3f} {v['identity']}",
    )
    assert ok


def test_criterion_11_gaussianity():
    env = gen_env(Constant(1.0), 2, 64, 0)
    lab = clusters(env)
    spec = EnsembleSpec(K=10_000, n_list=(400,), T=1.0, L=64, master_seed=0, pvar_walks=0)
    run = run_ensemble(spec, env, lab, threads=THREADS)
    chk = gaussianity_check(run)
    r = chk["rows"][-1]
    c = chk["criteria"]
    ok = chk["verdict"] is True
    report(
        11,
        ok,
        f"n=400, K=1e4: |mean|={abs(r['mean']):.4f}<={c['mean_bound']:.4f}, |var-1|={abs(r['variance'] - 1):.4f}<={c['var_bound']:.4f}, "
        f"|exkurt|={abs(r['excess_kurtosis']):.4f}<={c['kurt_bound']:.4f}",
    )
    assert ok
