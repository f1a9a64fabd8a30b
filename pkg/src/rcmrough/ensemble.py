"""Vectorized lockstep simulation of many walks with on-the-fly functionals.

All walkers of a batch advance one jump per step; each step draws one standard
exponential per active walker and then one uniform per walker whose jump falls
inside the horizon.  With a single walker this is exactly the draw sequence of
:func:`rcmrough.walk.simulate`, which serves as the reference sampler.

Along the way every walker accumulates, in unscaled time,

* ``X``, the Ito lift ``XX_{0,t}`` and ``Q(X, X)``;
* the corrector part ``R_t = chi(site_t) - chi(site_0)``, ``M = X - R``;
* ``Q(M, M)``, ``Q(M, R)`` and ``I(R, R)``;
* running suprema of ``|Q(M,M)_t - Sigma^2 t|`` and ``|I(R,R)_{0,t} - Gamma t|``
  over jump times and their left limits;
* Lindeberg sums of ``(v . dM)^2`` above the scale-dependent cutoff.

Snapshots of every quantity are taken when a walker passes each horizon
``n * T``.  The first ``record`` walkers additionally keep their full ``R``
and ``Q(M, R)`` paths for p-variation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .walk import WalkTables

SNAPSHOT_MATRICES = ("XX", "QXX", "QMM", "IRR", "QMR")
SNAPSHOT_VECTORS = ("X", "R")


@dataclass
class StackedTables:
    """Walk tables of ``E`` environments with global site ids ``e * S + s``."""

    J: np.ndarray
    nbr: np.ndarray
    cum: np.ndarray
    mu: np.ndarray
    last_pos: np.ndarray
    chi: np.ndarray
    n_sites: int

    @classmethod
    def build(cls, envs, fields) -> "StackedTables":
        parts = [WalkTables.from_env(e) for e in envs]
        S = envs[0].n_sites
        J = parts[0].J
        for p in parts[1:]:
            if not np.array_equal(p.J, J):
                raise ValueError("stacked environments must share the jump range")
        nbr = np.concatenate([p.nbr + i * S for i, p in enumerate(parts)])
        return cls(
            J=J,
            nbr=nbr,
            cum=np.concatenate([p.cum for p in parts]),
            mu=np.concatenate([p.mu for p in parts]),
            last_pos=np.concatenate([p.last_pos for p in parts]),
            chi=np.concatenate([f.chi_filled() for f in fields]),
            n_sites=S,
        )

    def pick(self, site, u_scaled):
        k = np.count_nonzero(self.cum[site] <= u_scaled[:, None], axis=1)
        return np.minimum(k, self.last_pos[site])


@dataclass
class BatchResult:
    horizons: np.ndarray
    snap: dict  # name -> (K, nH, ...) arrays
    qv_sup: np.ndarray  # (K, nH)
    area_sup: np.ndarray  # (K, nH)
    lind: np.ndarray  # (K, nH)
    n_jumps: np.ndarray  # (K, nH)
    start: np.ndarray  # (K,) global start sites
    records: dict = field(default_factory=dict)  # walker -> (times, R, QMR)


def _maxabs_dev(acc, ref, tt):
    """Entrywise ``max |acc - ref * t|`` for column-major ``acc`` of shape ``(d*d, K)``."""
    out = np.abs(acc[0] - ref[0] * tt)
    for c in range(1, len(ref)):
        np.maximum(out, np.abs(acc[c] - ref[c] * tt), out=out)
    return out


def _outer_add(acc, a, b, d):
    for i in range(d):
        for j in range(d):
            acc[i * d + j] += a[i] * b[j]


def run_batch(
    tables: StackedTables,
    starts: np.ndarray,
    horizons,
    rng: np.random.Generator,
    sigma2: np.ndarray,
    gamma: np.ndarray,
    v: np.ndarray,
    delta: float,
    scales,
    record: int = 0,
) -> BatchResult:
    """Advance all walkers to ``max(horizons)`` in lockstep.

    ``scales[a]`` is the diffusive scale attached to ``horizons[a]``; it sets
    the Lindeberg cutoff ``|v . dM| > delta * sqrt(scale)``.  Internally every
    per-walker quantity is stored column-major (entries x walkers).
    """
    H = np.asarray(horizons, dtype=np.float64)
    if np.any(np.diff(H) < 0):
        raise ValueError("horizons must be sorted")
    scales = np.asarray(scales, dtype=np.float64)
    nH = len(H)
    K = len(starts)
    d = tables.J.shape[1]
    JT = tables.J.T.astype(np.float64).copy()  # (d, D)
    chiT = np.ascontiguousarray(tables.chi.T)  # (d, sites)
    v = np.asarray(v, dtype=np.float64)
    cut2 = delta**2 * scales  # compare squares
    s2 = np.asarray(sigma2, dtype=np.float64).ravel()
    gm = np.asarray(gamma, dtype=np.float64).ravel()

    snap = {name: np.zeros((K, nH, d, d)) for name in SNAPSHOT_MATRICES}
    snap.update({name: np.zeros((K, nH, d)) for name in SNAPSHOT_VECTORS})
    out_qv = np.zeros((K, nH))
    out_area = np.zeros((K, nH))
    out_lind = np.zeros((K, nH))
    out_jumps = np.zeros((K, nH), dtype=np.int64)

    gid = np.arange(K)
    site = np.asarray(starts, dtype=np.int64).copy()
    t = np.zeros(K)
    X = np.zeros((d, K))
    R = np.zeros((d, K))
    acc = {name: np.zeros((d * d, K)) for name in SNAPSHOT_MATRICES}
    qv_sup = np.zeros(K)
    area_sup = np.zeros(K)
    lind = np.zeros((nH, K))
    jumps = np.zeros(K, dtype=np.int64)
    ptr = np.zeros(K, dtype=np.int64)
    rec_t, rec_g, rec_R, rec_Q = [], [], [], []

    while len(gid):
        tn = t + rng.standard_exponential(len(gid)) / tables.mu[site]
        # snapshot every horizon the walker passes before its next jump
        while True:
            passing = np.flatnonzero((ptr < nH) & (tn > H[np.minimum(ptr, nH - 1)]))
            if len(passing) == 0:
                break
            g, a = gid[passing], ptr[passing]
            Ha = H[a]
            snap["X"][g, a] = X[:, passing].T
            snap["R"][g, a] = R[:, passing].T
            for name in SNAPSHOT_MATRICES:
                snap[name][g, a] = acc[name][:, passing].T.reshape(-1, d, d)
            out_qv[g, a] = np.maximum(qv_sup[passing], _maxabs_dev(acc["QMM"][:, passing], s2, Ha))
            out_area[g, a] = np.maximum(area_sup[passing], _maxabs_dev(acc["IRR"][:, passing], gm, Ha))
            out_lind[g, a] = lind[a, passing]
            out_jumps[g, a] = jumps[passing]
            ptr[passing] += 1

        keep = ptr < nH
        if not keep.all():
            idx = np.flatnonzero(keep)
            gid, site, t, tn = gid[idx], site[idx], t[idx], tn[idx]
            X, R, lind = X[:, idx], R[:, idx], lind[:, idx]
            acc = {name: a[:, idx] for name, a in acc.items()}
            qv_sup, area_sup, jumps, ptr = qv_sup[idx], area_sup[idx], jumps[idx], ptr[idx]
            if len(gid) == 0:
                break

        u = rng.random(len(gid)) * tables.mu[site]
        k = tables.pick(site, u)
        new_site = tables.nbr[site, k]
        dX = JT[:, k]
        dR = chiT[:, new_site] - chiT[:, site]
        dM = dX - dR

        # left limits at the jump time
        np.maximum(qv_sup, _maxabs_dev(acc["QMM"], s2, tn), out=qv_sup)
        np.maximum(area_sup, _maxabs_dev(acc["IRR"], gm, tn), out=area_sup)

        _outer_add(acc["XX"], X, dX, d)
        _outer_add(acc["QXX"], dX, dX, d)
        _outer_add(acc["QMM"], dM, dM, d)
        _outer_add(acc["IRR"], R, dR, d)
        _outer_add(acc["QMR"], dM, dR, d)
        X += dX
        R += dR
        t = tn
        site = new_site
        jumps += 1

        np.maximum(qv_sup, _maxabs_dev(acc["QMM"], s2, tn), out=qv_sup)
        np.maximum(area_sup, _maxabs_dev(acc["IRR"], gm, tn), out=area_sup)
        w = (v @ dM) ** 2
        for a in range(nH):
            lind[a] += np.where((ptr <= a) & (w > cut2[a]), w, 0.0)

        if record:
            sel = np.flatnonzero(gid < record)
            if len(sel):
                rec_g.append(gid[sel])
                rec_t.append(t[sel])
                rec_R.append(R[:, sel].T)
                rec_Q.append(acc["QMR"][:, sel].T)
    records = {}
    if record and rec_g:
        g_all = np.concatenate(rec_g)
        order = np.argsort(g_all, kind="stable")
        g_all = g_all[order]
        t_all = np.concatenate(rec_t)[order]
        R_all = np.concatenate(rec_R)[order]
        Q_all = np.concatenate(rec_Q)[order]
        bounds = np.searchsorted(g_all, np.arange(min(record, K) + 1))
        for w_id in range(min(record, K)):
            a, b = bounds[w_id], bounds[w_id + 1]
            records[w_id] = (t_all[a:b], R_all[a:b], Q_all[a:b])
    for w_id in range(min(record, K)):
        records.setdefault(w_id, (np.zeros(0), np.zeros((0, d)), np.zeros((0, d * d))))

    return BatchResult(H, snap, out_qv, out_area, out_lind, out_jumps, np.asarray(starts), records)
