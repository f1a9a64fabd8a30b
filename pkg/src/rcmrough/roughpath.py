"""Level-2 calculus on piecewise-constant jump paths.

A path here is anything with ``times`` (jump times, shape ``(m,)``),
``values`` (value before the first jump and after each jump, shape
``(m+1, k)`` or ``(m+1,)``) and ``horizon``.  Window quantities are read off
prefix accumulators:

* Ito lift ``XX_{s,t} = sum_{s<r<=t} X_{s,r-} (x) X_{r-,r}``,
  ``XX_{s,t} = XX_{0,t} - XX_{0,s} - X_{0,s} (x) X_{s,t}``;
* left-point integral ``I_{s,t}(f,g) = sum_{s<u<=t} f_{u-} g_{u-,u} - f_s g_{s,t}``;
* quadratic covariation ``Q_{s,t}(f,g) = sum_{s<u<=t} f_{u-,u} g_{u-,u}``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numba
import numpy as np

from .walk import JumpPath

COMPENSATED_THRESHOLD = 1_000_000


class SkeletonMismatch(ValueError):
    """Two paths that must share a jump skeleton do not."""


@dataclass
class StepPath:
    """Real-valued piecewise-constant path on a fixed jump skeleton."""

    times: np.ndarray
    values: np.ndarray
    horizon: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.values) != len(self.times) + 1:
            raise ValueError("values must hold one more row than times")

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    def at(self, t: float) -> np.ndarray:
        return self.values[_index(self, t)]


def _index(path, t: float) -> int:
    if not 0 <= t <= path.horizon:
        raise ValueError(f"time {t} outside [0, {path.horizon}]")
    return int(np.searchsorted(path.times, t, side="right"))


def _vals2d(path) -> np.ndarray:
    v = np.asarray(path.values, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def _check_window(path, s: float, t: float) -> tuple[int, int]:
    if not 0 <= s <= t <= path.horizon:
        raise ValueError(f"window ({s}, {t}) not inside [0, {path.horizon}]")
    return _index(path, s), _index(path, t)


def _check_skeleton(f, g) -> None:
    if f.horizon != g.horizon or len(f.times) != len(g.times) or not np.array_equal(f.times, g.times):
        raise SkeletonMismatch("paths do not share a jump skeleton")


@numba.njit(cache=True)
def _neumaier_cumsum(a):
    out = np.empty_like(a)
    s = np.zeros(a.shape[1])
    c = np.zeros(a.shape[1])
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            x = a[i, j]
            t = s[j] + x
            if abs(s[j]) >= abs(x):
                c[j] += (s[j] - t) + x
            else:
                c[j] += (x - t) + s[j]
            s[j] = t
            out[i, j] = s[j] + c[j]
    return out


def prefix_sum(terms: np.ndarray) -> np.ndarray:
    """Cumulative sums with a leading zero row, shape ``(m+1,) + terms.shape[1:]``.

    Plain summation in jump order; Neumaier compensation beyond
    ``COMPENSATED_THRESHOLD`` terms.
    """
    m = terms.shape[0]
    flat = terms.reshape(m, int(np.prod(terms.shape[1:])))
    if m > COMPENSATED_THRESHOLD:
        acc = _neumaier_cumsum(np.ascontiguousarray(flat))
    else:
        acc = np.cumsum(flat, axis=0)
    out = np.zeros((m + 1, flat.shape[1]))
    out[1:] = acc
    return out.reshape((m + 1,) + terms.shape[1:])


# --------------------------------------------------------------------------
# two-parameter accumulators


class IntegralAccumulator:
    """Prefix form of ``I(f, g)``: O(m) setup, O(1) per window."""

    def __init__(self, f, g):
        _check_skeleton(f, g)
        self.f = _vals2d(f)
        self.g = _vals2d(g)
        self.path = f
        dg = np.diff(self.g, axis=0)
        self.prefix = prefix_sum(self.f[:-1, :, None] * dg[:, None, :])

    def window(self, s: float, t: float) -> np.ndarray:
        i, j = _check_window(self.path, s, t)
        return self.prefix[j] - self.prefix[i] - np.outer(self.f[i], self.g[j] - self.g[i])


class CovariationAccumulator:
    """Prefix form of ``Q(f, g)``; additive over adjacent windows."""

    def __init__(self, f, g):
        _check_skeleton(f, g)
        self.path = f
        df = np.diff(_vals2d(f), axis=0)
        dg = np.diff(_vals2d(g), axis=0)
        self.prefix = prefix_sum(df[:, :, None] * dg[:, None, :])

    def window(self, s: float, t: float) -> np.ndarray:
        i, j = _check_window(self.path, s, t)
        return self.prefix[j] - self.prefix[i]

    def as_path(self) -> StepPath:
        """The one-parameter path ``t -> Q_{0,t}`` flattened to ``k*k`` columns."""
        return StepPath(self.path.times, self.prefix.reshape(len(self.prefix), -1), self.path.horizon)


def _squeeze(f, g, out):
    if np.ndim(f.values) == 1 and np.ndim(g.values) == 1:
        return float(out[0, 0])
    return out


def left_point_integral(f, g, s: float, t: float):
    """``I_{s,t}(f, g)`` by direct summation over the jumps in ``(s, t]``."""
    _check_skeleton(f, g)
    i, j = _check_window(f, s, t)
    fv, gv = _vals2d(f), _vals2d(g)
    dg = np.diff(gv[i : j + 1], axis=0)
    out = fv[i:j].T @ dg - np.outer(fv[i], gv[j] - gv[i])
    return _squeeze(f, g, out)


def quadratic_covariation(f, g, s: float, t: float):
    """``Q_{s,t}(f, g) = sum_{s<u<=t} f_{u-,u} (x) g_{u-,u}``."""
    _check_skeleton(f, g)
    i, j = _check_window(f, s, t)
    df = np.diff(_vals2d(f)[i : j + 1], axis=0)
    dg = np.diff(_vals2d(g)[i : j + 1], axis=0)
    return _squeeze(f, g, df.T @ dg)


# --------------------------------------------------------------------------
# lifts


@dataclass
class Level2Path:
    """Lifted path: ``xx0[k] = XX_{0, t_k}`` (``xx0[0] = 0``)."""

    base: object
    xx0: np.ndarray  # (m+1, d, d)
    kind: str = "ito"

    @property
    def times(self) -> np.ndarray:
        return self.base.times

    @property
    def horizon(self) -> float:
        return self.base.horizon

    @property
    def values(self) -> np.ndarray:
        return _vals2d(self.base)

    def to_csv(self, path) -> None:
        """Rows ``t, X (d entries), XX_{0,t} (d*d entries, row-major)`` at jump times."""
        X = self.values
        d = X.shape[1]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + [f"xx{i + 1}{j + 1}" for i in range(d) for j in range(d)])
            for k, t in enumerate(self.times, start=1):
                out.writerow([repr(float(t))] + [repr(float(v)) for v in X[k]] + [repr(float(v)) for v in self.xx0[k].ravel()])


def ito_lift(path) -> Level2Path:
    X = _vals2d(path)
    dX = np.diff(X, axis=0)
    left = X[:-1] - X[0]
    xx0 = prefix_sum(left[:, :, None] * dX[:, None, :])
    return Level2Path(path, xx0, "ito")


def quadratic_variation_prefix(path) -> np.ndarray:
    """``Q_{0,t_k}(X, X)`` for every k, shape ``(m+1, d, d)``."""
    dX = np.diff(_vals2d(path), axis=0)
    return prefix_sum(dX[:, :, None] * dX[:, None, :])


def stratonovich_lift(path) -> Level2Path:
    """Ito lift plus half the quadratic variation (piecewise-linear chain integral)."""
    ito = ito_lift(path)
    return Level2Path(path, ito.xx0 + 0.5 * quadratic_variation_prefix(path), "stratonovich")


def chen_eval(l2: Level2Path, s: float, t: float) -> np.ndarray:
    """``XX_{s,t} = XX_{0,t} - XX_{0,s} - X_{0,s} (x) X_{s,t}``."""
    i, j = _check_window(l2.base, s, t)
    X = l2.values
    return l2.xx0[j] - l2.xx0[i] - np.outer(X[i] - X[0], X[j] - X[i])


def chen_window_by_index(l2: Level2Path, i: int, j: int) -> np.ndarray:
    X = l2.values
    return l2.xx0[j] - l2.xx0[i] - np.outer(X[i] - X[0], X[j] - X[i])


# --------------------------------------------------------------------------
# rescaling and decomposition


def rescale(path, n: float, horizon: float | None = None):
    """Diffusive rescaling ``X^n_t = X_{nt} / sqrt(n)`` on ``[0, horizon]``.

    ``horizon`` defaults to ``T / n``; jumps after ``n * horizon`` are dropped.
    """
    if not n > 0:
        raise ValueError("scale n must be positive")
    if horizon is None:
        horizon = path.horizon / n
    if n * horizon > path.horizon * (1 + 1e-15):
        raise ValueError(f"rescaled horizon {horizon} needs original time {n * horizon} > {path.horizon}")
    keep = int(np.searchsorted(path.times, n * horizon, side="right"))
    vals = _vals2d(path)[: keep + 1] / np.sqrt(n)
    times = path.times[:keep] / n
    if isinstance(path, JumpPath):
        return JumpPath(
            start=path.start,
            horizon=float(horizon),
            times=times,
            positions=vals[1:],
            seed=path.seed,
            sites=None if path.sites is None else path.sites[:keep],
            start_site=path.start_site,
        )
    return StepPath(times, vals, float(horizon))


def rescale_lift(l2: Level2Path, n: float, horizon: float | None = None) -> Level2Path:
    """Rescale the base path and divide the level-2 accumulator by ``n``."""
    base = rescale(l2.base, n, horizon)
    return Level2Path(base, l2.xx0[: base.n_jumps + 1] / n, l2.kind)


def decompose(path: JumpPath, fld, start_site=None, L: int | None = None):
    """Martingale/corrector split ``X = M + R`` along one walk.

    ``R_t = chi(site_t) - chi(site_0)`` and ``M = X - R``; both are returned as
    :class:`StepPath` on the walk's skeleton.
    """
    L = L or fld.L
    shape = (L,) * fld.d
    if start_site is None:
        start_site = path.start_site if path.start_site is not None else np.ravel_multi_index(tuple(int(c) % L for c in path.start), shape)
    elif np.ndim(start_site) > 0:
        start_site = np.ravel_multi_index(tuple(int(c) % L for c in start_site), shape)
    start = np.array(np.unravel_index(int(start_site), shape))
    X = _vals2d(path)
    sites = np.ravel_multi_index(tuple(((start[None, :] + X.astype(np.int64)) % L).T), shape)
    chi = fld.chi[sites]
    if np.any(np.isnan(chi)):
        raise RuntimeError("walk left the solved cluster")
    R = chi - chi[0]
    M = X - R
    return StepPath(path.times, M, path.horizon), StepPath(path.times, R, path.horizon)
