import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmrough.env import Constant, PercolationWeighted, UniformInterval, clusters, gen_env
from rcmrough.walk import JumpPath, StartError, WalkTables, position_at, read_path_csv, simulate, site_path


@pytest.fixture(scope="module")
def const():
    env = gen_env(Constant(1.0), 2, 16, 0)
    return env, clusters(env)


def test_isolated_start_is_an_error():
    env = gen_env(PercolationWeighted(1e-12, 1, 2), 2, 8, 0)
    lab = clusters(env)
    with pytest.raises(StartError):
        simulate(env, lab, 1.0, 0, "origin")
    with pytest.raises(StartError):
        simulate(env, lab, 1.0, 0, "uniform")


def test_origin_off_giant_is_an_error():
    # find a percolation env whose origin is not on the largest cluster
    for seed in range(200):
        env = gen_env(PercolationWeighted(0.5, 1, 2), 2, 8, seed)
        lab = clusters(env)
        if lab.label.ravel()[0] != lab.giant_id:
            with pytest.raises(StartError):
                simulate(env, lab, 1.0, 0, "origin")
            return
    pytest.fail("no suitable environment found")


def test_unknown_policy(const):
    with pytest.raises(ValueError):
        simulate(*const, 1.0, 0, "center")


def test_bad_horizon(const):
    with pytest.raises(ValueError):
        simulate(*const, 0.0, 0)


def test_constant_jump_count_position_and_variance(const):
    env, lab = const
    T, runs = 1.0, 10_000
    counts = np.empty(runs)
    x1 = np.empty((runs, 2))
    for k in range(runs):
        path = simulate(env, lab, T, k)
        counts[k] = path.n_jumps
        x1[k] = path.values[-1]
    se = counts.std(ddof=1) / np.sqrt(runs)
    assert abs(counts.mean() - 4 * T) <= 3 * se
    se_x = x1.std(axis=0, ddof=1) / np.sqrt(runs)
    assert np.all(np.abs(x1.mean(axis=0)) <= 3 * se_x)
    # per-coordinate variance 2t; stderr of a sample variance ~ sqrt((m4 - s^4) / n)
    var = x1.var(axis=0, ddof=1)
    m4 = np.mean((x1 - x1.mean(axis=0)) ** 4, axis=0)
    se_v = np.sqrt((m4 - var**2) / runs)
    assert np.all(np.abs(var - 2 * T) <= 3 * se_v)


def test_deterministic_and_seed_sensitive():
    env = gen_env(UniformInterval(1, 10), 2, 16, 2)
    lab = clusters(env)
    a = simulate(env, lab, 5.0, 99, "uniform")
    b = simulate(env, lab, 5.0, 99, "uniform")
    c = simulate(env, lab, 5.0, 100, "uniform")
    assert np.array_equal(a.times, b.times) and np.array_equal(a.positions, b.positions) and a.start == b.start
    assert not (len(a.times) == len(c.times) and np.array_equal(a.times, c.times))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), p=st.floats(0.55, 1.0))
def test_path_invariants(seed, p):
    env = gen_env(PercolationWeighted(p, 1, 3), 2, 8, seed % 1000)
    lab = clusters(env)
    path = simulate(env, lab, 3.0, seed, "uniform")
    J = {tuple(z) for z in WalkTables.from_env(env).J}
    assert np.all(np.diff(path.times) > 0)
    if path.n_jumps:
        assert 0 < path.times[0] and path.times[-1] <= path.horizon
    steps = np.diff(path.values, axis=0)
    assert all(tuple(s) in J for s in steps)  # no self-jumps, offsets in J
    # never leaves the starting cluster
    sites = site_path(path, env.L, env.shape)
    assert np.all(lab.label.ravel()[sites] == lab.giant_id)
    assert np.array_equal(sites[1:], path.sites)


def test_jump_probabilities_follow_conductances():
    env = gen_env(UniformInterval(1, 10), 2, 8, 6)
    tables = WalkTables.from_env(env)
    s = 0
    rng = np.random.default_rng(0)
    u = rng.random(200_000) * tables.mu[s]
    k = tables.pick(np.full(len(u), s), u)
    freq = np.bincount(k, minlength=tables.nbr.shape[1]) / len(u)
    w = np.diff(np.concatenate([[0.0], tables.cum[s]])) / tables.mu[s]
    se = np.sqrt(w * (1 - w) / len(u))
    assert np.all(np.abs(freq - w) <= 4 * se)


def test_position_at(const):
    env, lab = const
    path = simulate(env, lab, 2.0, 3)
    assert np.array_equal(position_at(path, 0.0), np.zeros(2))
    assert np.array_equal(position_at(path, np.nextafter(path.times[0], 0)), np.zeros(2))
    assert np.array_equal(position_at(path, path.times[0]), path.positions[0])
    assert np.array_equal(position_at(path, 2.0), path.positions[-1])
    with pytest.raises(ValueError):
        position_at(path, 2.5)
    with pytest.raises(ValueError):
        position_at(path, -0.1)


def test_csv_round_trip(tmp_path, const):
    env, lab = const
    path = simulate(env, lab, 3.0, 4)
    path.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2"
    assert len(lines) == path.n_jumps + 3  # header, t=0, jumps, t=T
    assert lines[1].startswith("0.0,") and lines[-1].startswith("3.0,")
    back = read_path_csv(tmp_path / "p.csv")
    assert np.array_equal(back.times, path.times)
    assert np.array_equal(back.positions, path.positions)
    assert back.horizon == 3.0


def test_jump_path_validation():
    with pytest.raises(ValueError):
        JumpPath(start=(0, 0), horizon=1.0, times=[0.5, 0.4], positions=[[1, 0], [2, 0]])
    with pytest.raises(ValueError):
        JumpPath(start=(0, 0), horizon=1.0, times=[0.5, 1.5], positions=[[1, 0], [2, 0]])
    empty = JumpPath(start=(0, 0), horizon=1.0, times=[], positions=[])
    assert empty.values.shape == (1, 2) and empty.n_jumps == 0
