"""p-variation of jump paths and of their level-2 lifts.

For a piecewise-constant path the supremum over partitions of ``[0, T]`` is
attained on partitions whose cut points are ``0``, jump times and ``T``, so an
exact value is a longest-path dynamic program over those candidates::

    V[0] = 0,   V[j] = max_{i<j} V[i] + |Xi(t_i, t_j)|^p,   value = V[m]^(1/p).

``V`` is nondecreasing, which lets the inner loop stop as soon as
``V[i] + (bound on |Xi|)^p`` cannot beat the running best; the bound is the
diameter of the values seen so far.  Level-2 increments use the Frobenius norm
by default (``norm="spectral"`` gives the operator norm for d = 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

EXACT_CAP = 20_000
_SLACK = 1.0 + 1e-12

NORMS = {"frobenius": 0, "spectral": 1}


class CapExceeded(ValueError):
    """Too many jumps for the exact dynamic program."""


@dataclass
class VariationResult:
    value: float
    p: float
    method: str
    partition: np.ndarray | None = None  # cut times, starting at 0 and ending at T
    bounds: tuple | None = None  # (lower, upper) for capped results
    extras: dict = field(default_factory=dict)


def _values(path) -> tuple[np.ndarray, np.ndarray | None, float | None]:
    if hasattr(path, "values") and hasattr(path, "times"):
        v = np.asarray(path.values, dtype=np.float64)
        times, horizon = np.asarray(path.times, dtype=np.float64), float(path.horizon)
    else:
        v = np.asarray(path, dtype=np.float64)
        times = horizon = None
    if v.ndim == 1:
        v = v[:, None]
    return np.ascontiguousarray(v.reshape(len(v), -1)), times, horizon


def _cut_times(idx: np.ndarray, times, horizon) -> np.ndarray | None:
    if times is None:
        return None
    t = np.concatenate([[0.0], times])[idx]
    if t[-1] != horizon:
        t = np.concatenate([t, [horizon]])
    return t


# --------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _pvar_dp(v, p):
    n, k = v.shape
    V = np.zeros(n)
    back = np.zeros(n, dtype=np.int64)
    lo = v[0].copy()
    hi = v[0].copy()
    for j in range(1, n):
        diag2 = 0.0
        for c in range(k):
            if v[j, c] < lo[c]:
                lo[c] = v[j, c]
            if v[j, c] > hi[c]:
                hi[c] = v[j, c]
            diag2 += (hi[c] - lo[c]) ** 2
        bound = (np.sqrt(diag2) * _SLACK) ** p
        best = -1.0
        arg = j - 1
        for i in range(j - 1, -1, -1):
            if V[i] + bound < best:
                break
            d2 = 0.0
            for c in range(k):
                d2 += (v[j, c] - v[i, c]) ** 2
            cand = V[i] + np.sqrt(d2) ** p
            if cand > best:
                best = cand
                arg = i
        V[j] = best
        back[j] = arg
    return V, back


@numba.njit(cache=True)
def _mat_norm(a, d, kind):
    f2 = 0.0
    for c in range(d * d):
        f2 += a[c] * a[c]
    if kind == 0 or d != 2:
        return np.sqrt(f2)
    det = a[0] * a[3] - a[1] * a[2]
    disc = f2 * f2 - 4.0 * det * det
    if disc < 0.0:
        disc = 0.0
    return np.sqrt(0.5 * (f2 + np.sqrt(disc)))


@numba.njit(cache=True)
def _p2var_dp(X, XX, q, kind):
    # X: (n, d) level-1 values; XX: (n, d*d) prefix XX_{0,t}
    n, d = X.shape
    V = np.zeros(n)
    back = np.zeros(n, dtype=np.int64)
    loX = X[0].copy()
    hiX = X[0].copy()
    loXX = XX[0].copy()
    hiXX = XX[0].copy()
    maxabs = 0.0
    w = np.empty(d * d)
    for j in range(1, n):
        dX2 = 0.0
        r2 = 0.0
        for c in range(d):
            if X[j, c] < loX[c]:
                loX[c] = X[j, c]
            if X[j, c] > hiX[c]:
                hiX[c] = X[j, c]
            dX2 += (hiX[c] - loX[c]) ** 2
            r2 += (X[j, c] - X[0, c]) ** 2
        if np.sqrt(r2) > maxabs:
            maxabs = np.sqrt(r2)
        dXX2 = 0.0
        for c in range(d * d):
            if XX[j, c] < loXX[c]:
                loXX[c] = XX[j, c]
            if XX[j, c] > hiXX[c]:
                hiXX[c] = XX[j, c]
            dXX2 += (hiXX[c] - loXX[c]) ** 2
        bound = ((np.sqrt(dXX2) + maxabs * np.sqrt(dX2)) * _SLACK) ** q
        best = -1.0
        arg = j - 1
        for i in range(j - 1, -1, -1):
            if V[i] + bound < best:
                break
            for a in range(d):
                xa = X[i, a] - X[0, a]
                for b in range(d):
                    w[a * d + b] = XX[j, a * d + b] - XX[i, a * d + b] - xa * (X[j, b] - X[i, b])
            cand = V[i] + _mat_norm(w, d, kind) ** q
            if cand > best:
                best = cand
                arg = i
        V[j] = best
        back[j] = arg
    return V, back


def _trace(back: np.ndarray) -> np.ndarray:
    idx = [len(back) - 1]
    while idx[-1] > 0:
        idx.append(int(back[idx[-1]]))
    return np.array(idx[::-1], dtype=np.int64)


# --------------------------------------------------------------------------
# one-parameter paths


def pvar_exact(path, p: float, cap: int = EXACT_CAP) -> VariationResult:
    """Exact p-variation norm over partitions with cuts at 0, jump times and T."""
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    v, times, horizon = _values(path)
    m = len(v) - 1
    if m > cap:
        raise CapExceeded(f"{m} jumps exceed the exact-method cap {cap}; use pvar_greedy_lower or pvar_capped")
    if m == 0:
        return VariationResult(0.0, p, "exact_dp", _cut_times(np.array([0]), times, horizon))
    V, back = _pvar_dp(v, float(p))
    idx = _trace(back)
    return VariationResult(float(V[-1] ** (1.0 / p)), p, "exact_dp", _cut_times(idx, times, horizon), extras={"cut_index": idx})


def partition_sum(path, p: float, cut_index) -> float:
    """``(sum |X_{c_k, c_{k+1}}|^p)^(1/p)`` for candidate indices ``cut_index``."""
    v, _, _ = _values(path)
    inc = np.diff(v[np.asarray(cut_index)], axis=0)
    total = 0.0
    for row in inc:
        total += float(np.sqrt(np.sum(row**2))) ** p
    return total ** (1.0 / p)


def _extrema(proj: np.ndarray) -> np.ndarray:
    """Indices of local extrema of a scalar sequence, endpoints included."""
    n = len(proj)
    if n <= 2:
        return np.arange(n)
    step = np.diff(proj)
    nz = np.flatnonzero(step)
    if len(nz) == 0:
        return np.array([0, n - 1])
    keep = [0]
    sign = np.sign(step[nz])
    for a in range(1, len(nz)):
        if sign[a] != sign[a - 1]:
            keep.append(int(nz[a]))  # value index where the direction turns
    keep.append(n - 1)
    return np.unique(np.array(keep, dtype=np.int64))


def pvar_greedy_lower(path, p: float, direction=None) -> VariationResult:
    """Certified lower bound: the partition at local extrema of a scalar projection."""
    v, times, horizon = _values(path)
    if direction is None:
        direction = np.zeros(v.shape[1])
        direction[int(np.argmax(np.ptp(v, axis=0)))] = 1.0
    proj = v @ np.asarray(direction, dtype=np.float64)
    idx = _extrema(proj)
    value = partition_sum(v, p, idx) if len(idx) > 1 else 0.0
    return VariationResult(value, p, "greedy_lower", _cut_times(idx, times, horizon), extras={"cut_index": idx})


def one_variation(path) -> float:
    v, _, _ = _values(path)
    return float(np.sum(np.sqrt(np.sum(np.diff(v, axis=0) ** 2, axis=1))))


def pvar_capped(path, p: float, block: int = 1024) -> VariationResult:
    """Rigorous interval ``[lower, upper]`` for the p-variation of long paths.

    Blocks of at most ``block`` jumps are solved exactly.  Lower bound: the
    best of the concatenated block partitions, the block-boundary skeleton,
    the extrema partition and the single interval.  Upper bound: each interval
    of an arbitrary partition splits into a tail inside one block, a skeleton
    increment and a head inside another block, so
    ``||X||_p^p <= 3^(p-1) (sum_b V_b^p + V_skel^p)``; also ``||X||_p <= ||X||_1``.
    """
    if block < 1:
        raise ValueError("block must be positive")
    v, times, horizon = _values(path)
    m = len(v) - 1
    if m <= block:
        res = pvar_exact(v, p, cap=max(block, 1))
        return VariationResult(res.value, p, "capped", bounds=(res.value, res.value))
    edges = list(range(0, m, block)) + [m]
    block_p = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        block_p += pvar_exact(v[a : b + 1], p, cap=block).value ** p
    skel = pvar_exact(v[edges], p, cap=len(edges)).value
    single = float(np.sqrt(np.sum((v[-1] - v[0]) ** 2)))
    greedy = pvar_greedy_lower(v, p).value
    lower = max(block_p ** (1.0 / p), skel, single, greedy)
    upper = min((3.0 ** (p - 1) * (block_p + skel**p)) ** (1.0 / p), one_variation(v))
    upper = max(upper, lower)
    return VariationResult(lower, p, "capped", bounds=(lower, upper))


# --------------------------------------------------------------------------
# two-parameter (level-2) functions


def p2var_exact(l2, q: float, norm: str = "frobenius", cap: int = EXACT_CAP) -> VariationResult:
    """q-variation norm of ``(s, t) -> XX_{s,t}`` (no square root applied)."""
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    X = np.ascontiguousarray(np.asarray(l2.values, dtype=np.float64))
    if X.ndim == 1:
        X = X[:, None]
    d = X.shape[1]
    m = len(X) - 1
    if m > cap:
        raise CapExceeded(f"{m} jumps exceed the exact-method cap {cap}")
    if norm == "spectral" and d != 2:
        raise ValueError("spectral norm mode is implemented for d = 2")
    times = np.asarray(l2.times, dtype=np.float64)
    if m == 0:
        return VariationResult(0.0, q, "exact_dp", np.array([0.0, l2.horizon]))
    XX = np.ascontiguousarray(l2.xx0.reshape(m + 1, d * d))
    V, back = _p2var_dp(X, XX, float(q), NORMS[norm])
    idx = _trace(back)
    return VariationResult(float(V[-1] ** (1.0 / q)), q, "exact_dp", _cut_times(idx, times, l2.horizon), extras={"cut_index": idx})


def level2_norm(a: np.ndarray, norm: str = "frobenius") -> float:
    a = np.asarray(a, dtype=np.float64)
    if norm == "frobenius":
        return float(np.sqrt(np.sum(a**2)))
    if norm == "spectral":
        return float(_mat_norm(a.ravel(), a.shape[0], 1)) if a.shape == (2, 2) else float(np.linalg.norm(a, 2))
    raise ValueError(f"unknown norm {norm!r}")


# --------------------------------------------------------------------------
# uniform-type norms


def uniform_norm(path, s: float = 0.0, t: float | None = None) -> float:
    """``sup_{u in [s, t]} |X_u|``."""
    v, times, horizon = _values(path)
    if times is None:
        return float(np.max(np.sqrt(np.sum(v**2, axis=1))))
    t = horizon if t is None else t
    if not 0 <= s <= t <= horizon:
        raise ValueError(f"window ({s}, {t}) not inside [0, {horizon}]")
    i = int(np.searchsorted(times, s, side="right"))
    j = int(np.searchsorted(times, t, side="right"))
    return float(np.max(np.sqrt(np.sum(v[i : j + 1] ** 2, axis=1))))


@numba.njit(cache=True)
def _diameter(v):
    n, k = v.shape
    best = 0.0
    for j in range(n):
        for i in range(j):
            d2 = 0.0
            for c in range(k):
                d2 += (v[j, c] - v[i, c]) ** 2
            if d2 > best:
                best = d2
    return np.sqrt(best)


def infty_var(path) -> float:
    """``sup_{s<t} |X_t - X_s|``: the diameter of the visited values."""
    v, _, _ = _values(path)
    if v.shape[1] == 1:
        return float(np.ptp(v[:, 0]))
    return float(_diameter(v))


def infty_var2(l2, norm: str = "frobenius") -> float:
    """``sup_{s<t} |XX_{s,t}|`` over candidate cut points."""
    X = np.asarray(l2.values, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    best = 0.0
    for i in range(len(X)):
        w = l2.xx0[i:] - l2.xx0[i] - np.einsum("a,nb->nab", X[i] - X[0], X[i:] - X[i])
        if norm == "frobenius":
            val = np.sqrt(np.sum(w**2, axis=(1, 2))).max()
        else:
            val = max(level2_norm(a, norm) for a in w)
        best = max(best, float(val))
    return best


def rough_norm(l2, p: float, norm: str = "frobenius") -> float:
    """Homogeneous ``|X_0| + ||X||_{p-var} + ||XX||_{p/2-var}^{1/2}``."""
    X = np.asarray(l2.values, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    return float(np.sqrt(np.sum(X[0] ** 2)) + pvar_exact(l2.base, p).value + np.sqrt(p2var_exact(l2, p / 2, norm).value))


def sup_deviation(times, values, rate, horizon: float) -> float:
    """``sup_{t<=T} max_entries |Y_t - rate * t|`` for a piecewise-constant ``Y``.

    The supremum is attained at a jump time, at the left limit there, at 0 or
    at ``T``, so only those candidates are evaluated.
    """
    times = np.asarray(times, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64).reshape(len(times) + 1, -1)
    rate = np.asarray(rate, dtype=np.float64).reshape(1, -1)
    cands = [np.abs(vals[0]).max(), np.abs(vals[-1] - rate[0] * horizon).max()]
    if len(times):
        drift = times[:, None] * rate
        cands.append(np.abs(vals[:-1] - drift).max())  # left limits
        cands.append(np.abs(vals[1:] - drift).max())
    return float(max(cands))
