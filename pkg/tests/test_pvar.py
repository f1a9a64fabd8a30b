import itertools

import numpy as np
import pytest
from conftest import random_jump_path, random_step_path
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmrough.pvar import (
    CapExceeded,
    infty_var,
    infty_var2,
    level2_norm,
    one_variation,
    p2var_exact,
    partition_sum,
    pvar_capped,
    pvar_exact,
    pvar_greedy_lower,
    rough_norm,
    sup_deviation,
    uniform_norm,
)
from rcmrough.roughpath import StepPath, chen_window_by_index, ito_lift, stratonovich_lift


def brute_pvar(values, p, incr):
    m = len(values) - 1
    best = 0.0
    for r in range(m):
        for inner in itertools.combinations(range(1, m), r):
            cuts = (0,) + inner + (m,)
            best = max(best, sum(incr(a, b) ** p for a, b in zip(cuts[:-1], cuts[1:])))
    return best ** (1 / p)


def level1_incr(v):
    return lambda a, b: np.linalg.norm(v[b] - v[a])


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("p", [1.0, 2.5, 3.0])
def test_exact_matches_enumeration(seed, p):
    rng = np.random.default_rng(seed)
    path = random_step_path(rng, 10, k=2)
    res = pvar_exact(path, p)
    ref = brute_pvar(path.values, p, level1_incr(path.values))
    assert res.value == pytest.approx(ref, rel=1e-12)
    assert res.method == "exact_dp"
    assert partition_sum(path, p, res.extras["cut_index"]) == pytest.approx(res.value, rel=1e-12)
    assert res.partition[0] == 0 and res.partition[-1] == path.horizon


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("q", [1.0, 1.5])
@pytest.mark.parametrize("kind", ["ito", "strat"])
def test_level2_matches_enumeration(seed, q, kind):
    rng = np.random.default_rng(seed)
    path = random_step_path(rng, 8, k=2)
    l2 = ito_lift(path) if kind == "ito" else stratonovich_lift(path)
    res = p2var_exact(l2, q)
    ref = brute_pvar(path.values, q, lambda a, b: np.linalg.norm(chen_window_by_index(l2, a, b)))
    assert res.value == pytest.approx(ref, rel=1e-12, abs=1e-15)
    spec = p2var_exact(l2, q, norm="spectral")
    ref_s = brute_pvar(path.values, q, lambda a, b: np.linalg.norm(chen_window_by_index(l2, a, b), 2))
    assert spec.value == pytest.approx(ref_s, rel=1e-10, abs=1e-15)
    assert spec.value <= res.value * (1 + 1e-12) <= np.sqrt(2) * spec.value * (1 + 1e-10)


def test_level2_trivial():
    one = StepPath([0.5], [[0.0, 0.0], [1.0, 0.0]], 1.0)
    assert p2var_exact(ito_lift(one), 1.5).value == 0
    empty = StepPath([], [[0.0, 0.0]], 1.0)
    assert p2var_exact(ito_lift(empty), 1.5).value == 0
    with pytest.raises(ValueError):
        p2var_exact(ito_lift(one), 0.5)
    three = StepPath([0.1, 0.2, 0.3], np.zeros((4, 3)), 1.0)
    with pytest.raises(ValueError):
        p2var_exact(ito_lift(three), 1.5, norm="spectral")


def test_monotone_and_alternating():
    rise = StepPath(np.linspace(0.1, 0.9, 9), np.cumsum(np.r_[0.0, np.random.default_rng(0).uniform(0.1, 1, 9)]), 1.0)
    S = rise.values[-1] - rise.values[0]
    for p in (1.5, 2.0, 3.0):
        assert pvar_exact(rise, p).value == pytest.approx(S, rel=1e-14)
        lo, hi = pvar_capped(rise, p, block=4).bounds
        assert lo == pytest.approx(S, rel=1e-14)
    assert pvar_capped(rise, 2.0, block=64).bounds == (pytest.approx(S), pytest.approx(S))
    m = 25
    alt = StepPath(np.linspace(0.01, 0.99, m), [0.0] + [1.0 - k % 2 for k in range(m)], 1.0)
    for p in (1.0, 2.0, 3.0):
        assert pvar_exact(alt, p).value == pytest.approx(m ** (1 / p), rel=1e-14)


def test_monotone_capped_upper_collapses():
    # a long monotone path: the 1-variation caps the upper bound at the rise
    v = np.arange(301, dtype=float)
    lo, hi = pvar_capped(v, 3.0, block=32).bounds
    assert lo == pytest.approx(300) and hi == pytest.approx(300)


def test_cap_and_bad_p():
    rng = np.random.default_rng(1)
    path = random_step_path(rng, 50)
    with pytest.raises(CapExceeded):
        pvar_exact(path, 3, cap=10)
    with pytest.raises(ValueError):
        pvar_exact(path, 0.5)
    with pytest.raises(ValueError):
        pvar_capped(path, 3, block=0)


def test_greedy_below_exact():
    rng = np.random.default_rng(2)
    for _ in range(200):
        path = random_jump_path(rng, 100)
        ex = pvar_exact(path, 3.0).value
        gr = pvar_greedy_lower(path, 3.0)
        assert gr.method == "greedy_lower"
        assert gr.value <= ex * (1 + 1e-12)
        assert partition_sum(path, 3.0, gr.extras["cut_index"]) == pytest.approx(gr.value, rel=1e-12)


def test_capped_interval_contains_exact():
    rng = np.random.default_rng(3)
    for _ in range(50):
        path = random_jump_path(rng, 500)
        ex = pvar_exact(path, 3.0).value
        res = pvar_capped(path, 3.0, block=64)
        lo, hi = res.bounds
        assert res.method == "capped"
        assert lo <= ex * (1 + 1e-12) and ex <= hi * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(0, 40), p=st.floats(1.0, 6.0))
def test_exact_dominates_random_partitions(seed, m, p):
    rng = np.random.default_rng(seed)
    path = random_step_path(rng, m, k=3)
    res = pvar_exact(path, p)
    for _ in range(20):
        inner = np.sort(rng.choice(np.arange(1, max(m, 1)), size=rng.integers(0, max(m - 1, 0) + 1), replace=False)) if m > 1 else []
        cuts = np.r_[0, inner, m].astype(int)
        assert partition_sum(path, p, cuts) <= res.value * (1 + 1e-12)
    if m:
        assert partition_sum(path, p, res.extras["cut_index"]) == pytest.approx(res.value, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(0, 40))
def test_norm_inequalities(seed, m):
    rng = np.random.default_rng(seed)
    path = random_step_path(rng, m, k=2)
    unif = uniform_norm(path)
    iv = infty_var(path)
    x0 = np.linalg.norm(path.values[0])
    assert unif <= iv + x0 + 1e-12
    assert iv + x0 <= 3 * unif + 1e-12
    vals = [pvar_exact(path, p).value for p in (1.0, 2.0, 3.0, 6.0)]
    assert iv <= vals[-1] * (1 + 1e-12)
    assert all(a * (1 + 1e-12) >= b for a, b in zip(vals, vals[1:]))
    assert vals[0] == pytest.approx(one_variation(path), rel=1e-12, abs=1e-14)
    l2 = ito_lift(path)
    assert infty_var2(l2) <= p2var_exact(l2, 1.5).value * (1 + 1e-12) + 1e-15


def test_constant_path_norms():
    path = StepPath([], [[3.0, 4.0]], 1.0)
    assert uniform_norm(path) == 5.0 and infty_var(path) == 0.0
    assert rough_norm(ito_lift(path), 3.0) == 5.0


def test_uniform_norm_window():
    path = StepPath([0.25, 0.5, 0.75], [[0.0], [5.0], [1.0], [2.0]], 1.0)
    assert uniform_norm(path, 0.3, 0.6) == 5.0
    assert uniform_norm(path, 0.5, 1.0) == 2.0
    with pytest.raises(ValueError):
        uniform_norm(path, 0.6, 0.3)


def test_rough_norm_composes():
    rng = np.random.default_rng(4)
    path = random_step_path(rng, 12, k=2)
    l2 = ito_lift(path)
    expect = np.linalg.norm(path.values[0]) + pvar_exact(path, 3).value + np.sqrt(p2var_exact(l2, 1.5).value)
    assert rough_norm(l2, 3) == pytest.approx(expect, rel=1e-14)


def test_level2_norms():
    a = np.array([[1.0, 2.0], [0.0, -1.0]])
    assert level2_norm(a) == pytest.approx(np.sqrt(6))
    assert level2_norm(a, "spectral") == pytest.approx(np.linalg.norm(a, 2), rel=1e-12)
    with pytest.raises(ValueError):
        level2_norm(a, "nuclear")


def test_sup_deviation_candidates():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = rng.integers(0, 30)
        times = np.sort(rng.uniform(0, 2, m))
        vals = np.cumsum(rng.normal(size=(m + 1, 3)), axis=0)
        rate = rng.normal(size=3)
        got = sup_deviation(times, vals, rate, 2.0)
        # dense grid plus left limits approaches the supremum from below
        grid = np.unique(np.r_[np.linspace(0, 2, 4001), times, np.nextafter(times, -1).clip(0)])
        idx = np.searchsorted(times, grid, side="right")
        dense = np.abs(vals[idx] - grid[:, None] * rate).max()
        assert dense <= got + 1e-12
        assert got <= dense + np.abs(rate).max() * 1e-9 + 1e-12
