"""Exact simulation of the variable-speed random walk among conductances.

The walk waits an Exponential(mu(x)) time at ``x`` and then jumps to ``x + z``
with probability ``omega({x, x+z}) / mu(x)``.  Positions are recorded as
unwrapped displacements in ``Z^d``; the torus is only used to look up
conductances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .env import ClusterLabels, Environment
from .seeding import check_seed, rng_from_seed


class StartError(ValueError):
    """The requested starting site cannot host the walk."""


@dataclass
class WalkTables:
    """Per-site sampling tables for the inverse-CDF jump sampler."""

    J: np.ndarray  # (D, d) directed offsets
    nbr: np.ndarray  # (S, D) flat neighbor sites
    cum: np.ndarray  # (S, D) inclusive cumulative conductances
    mu: np.ndarray  # (S,)
    last_pos: np.ndarray  # (S,) last offset index with positive conductance

    @classmethod
    def from_env(cls, env: Environment) -> "WalkTables":
        cached = getattr(env, "_walk_tables", None)
        if cached is not None:
            return cached
        J, nbr, w = env.neighbor_table()
        cum = np.cumsum(w, axis=1)
        mu = cum[:, -1].copy()
        D = w.shape[1]
        last_pos = D - 1 - np.argmax((w > 0)[:, ::-1], axis=1)
        tables = cls(J, nbr, cum, mu, last_pos)
        env._walk_tables = tables
        return tables

    def pick(self, site, u_scaled):
        """Offset index for uniform draws ``u_scaled`` in ``[0, mu(site))``."""
        rows = self.cum[site]
        if rows.ndim == 1:
            k = int(np.count_nonzero(rows <= u_scaled))
            return min(k, int(self.last_pos[site]))
        k = np.count_nonzero(rows <= u_scaled[:, None], axis=1)
        return np.minimum(k, self.last_pos[site])


@dataclass
class JumpPath:
    """Jump skeleton of one walk: ``X_t = positions[k]`` on ``[times[k], times[k+1])``."""

    start: tuple
    horizon: float
    times: np.ndarray  # (m,) strictly increasing, in (0, horizon]
    positions: np.ndarray  # (m, d) displacement after each jump
    seed: int | None = None
    sites: np.ndarray | None = field(default=None, repr=False)  # flat torus site after each jump
    start_site: int | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.positions = np.asarray(self.positions)
        if self.positions.ndim == 1:
            self.positions = self.positions.reshape(len(self.times), len(self.start))
        if len(self.times) != len(self.positions):
            raise ValueError("times and positions must have the same length")
        if len(self.times) and (np.any(np.diff(self.times) <= 0) or self.times[0] <= 0 or self.times[-1] > self.horizon):
            raise ValueError("jump times must be strictly increasing in (0, horizon]")

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    @property
    def values(self) -> np.ndarray:
        """Path value before the first jump and after each jump, shape ``(m+1, d)``."""
        return np.vstack([np.zeros((1, self.positions.shape[1]), dtype=self.positions.dtype), self.positions])

    def to_csv(self, path) -> None:
        write_path_csv(path, self.times, self.values, self.horizon)


def write_path_csv(path, times, values, horizon) -> None:
    """Rows ``t,x1,...,xd`` at t=0, at every jump, and at t=T."""
    d = values.shape[1]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
        out.writerow([repr(0.0)] + [_fmt(v) for v in values[0]])
        for t, row in zip(times, values[1:]):
            out.writerow([repr(float(t))] + [_fmt(v) for v in row])
        out.writerow([repr(float(horizon))] + [_fmt(v) for v in values[-1]])


def read_path_csv(path) -> JumpPath:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t" or len(body) < 2:
        raise ValueError(f"{path}: not a path CSV")
    data = np.array([[float(v) for v in row] for row in body])
    vals = data[:, 1:]
    integral = np.all(vals == np.round(vals))
    vals = vals.astype(np.int64) if integral else vals
    return JumpPath(
        start=(0,) * vals.shape[1],
        horizon=float(data[-1, 0]),
        times=data[1:-1, 0],
        positions=vals[1:-1],
    )


def _fmt(v) -> str:
    return str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def choose_start(labels: ClusterLabels, tables: WalkTables, policy: str, rng: np.random.Generator, size=None):
    """Flat start site(s) under ``policy`` in {'origin', 'uniform'}."""
    if policy == "origin":
        if labels.label.ravel()[0] != labels.giant_id or labels.giant_id < 0:
            raise StartError("origin is not in the giant cluster")
        start = 0 if size is None else np.zeros(size, dtype=np.int64)
    elif policy == "uniform":
        giant = labels.giant_sites()
        if len(giant) == 0:
            raise StartError("environment has no cluster to start on")
        start = giant[rng.integers(0, len(giant), size=size)]
    else:
        raise ValueError(f"unknown start policy {policy!r}; use 'origin' or 'uniform'")
    if np.any(tables.mu[start] <= 0):
        raise StartError("start site is isolated (mu = 0)")
    return start


def simulate(env: Environment, labels: ClusterLabels, T: float, seed: int, start_policy: str = "origin") -> JumpPath:
    """Sequential inverse-CDF reference sampler for one walk on ``[0, T]``.

    Draw order per step: one standard exponential, then (if the jump happens
    before ``T``) one uniform.  For ``start_policy='uniform'`` a single integer
    draw picking the start precedes the loop.
    """
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    seed = check_seed(seed)
    rng = rng_from_seed(seed)
    tables = WalkTables.from_env(env)
    s = s0 = int(choose_start(labels, tables, start_policy, rng))
    J, nbr, mu = tables.J, tables.nbr, tables.mu
    d = env.d

    times, pos, sites = [], [], []
    t = 0.0
    x = np.zeros(d, dtype=np.int64)
    while True:
        t_next = t + rng.standard_exponential() / mu[s]
        if t_next > T:
            break
        k = tables.pick(s, rng.random() * mu[s])
        t = t_next
        x = x + J[k]
        s = int(nbr[s, k])
        times.append(t)
        pos.append(x)
        sites.append(s)
    positions = np.array(pos, dtype=np.int64).reshape(len(times), d)
    return JumpPath(
        start=env.site(s0),
        horizon=float(T),
        times=np.array(times),
        positions=positions,
        seed=seed,
        sites=np.array(sites, dtype=np.int64),
        start_site=s0,
    )


def position_at(path: JumpPath, t: float) -> np.ndarray:
    """Right-continuous value ``X_t``; ``X_0 = 0``."""
    if not 0 <= t <= path.horizon:
        raise ValueError(f"t = {t} outside [0, {path.horizon}]")
    k = int(np.searchsorted(path.times, t, side="right"))
    return path.values[k]


def site_path(path: JumpPath, L: int, shape: tuple) -> np.ndarray:
    """Flat torus sites visited: before the first jump and after each jump."""
    start = np.array(path.start, dtype=np.int64)
    coords = (start[None, :] + path.values.astype(np.int64)) % L
    return np.ravel_multi_index(tuple(coords.T), shape)
