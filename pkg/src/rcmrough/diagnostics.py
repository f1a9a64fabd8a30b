"""Monte Carlo checks of the invariance-principle ingredients.

An :class:`EnsembleRun` simulates ``K`` walks to the largest horizon
``max(n) * T`` once and snapshots every functional at each ``n * T``; all
checks below are cheap reductions of that run.  Verdicts are pure functions
of the stored per-``n`` rows, so a saved report can be re-judged without
rerunning anything (:func:`recompute_verdicts`).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from .corrector import CocycleField, HomogenizedStats, sigma_gamma, solve_harmonic
from .ensemble import SNAPSHOT_MATRICES, SNAPSHOT_VECTORS, BatchResult, StackedTables, run_batch
from .env import ClusterLabels, Environment, clusters, gen_env, law_from_dict, law_to_dict
from .pvar import EXACT_CAP, pvar_capped, pvar_exact
from .roughpath import StepPath
from .seeding import ENV_STREAMS, WALK_STREAMS, check_seed, rng_from_seed, stream_seed
from .walk import WalkTables, choose_start

REPORT_SCHEMA_VERSION = 1
EPS_GUARD = 1e-12
CHECKS = (
    "qv_limit",
    "ucv",
    "lindeberg",
    "corrector_pvar",
    "corrector_area",
    "mixed_q",
    "area_anomaly",
    "gaussianity",
)


@dataclass
class EnsembleSpec:
    """What to simulate.  ``law`` is only needed for annealed runs or when no
    environment is passed to :func:`run_ensemble`."""

    K: int
    n_list: tuple = (25, 100, 400)
    T: float = 1.0
    p: float = 3.0
    master_seed: int = 0
    mode: str = "quenched"
    law: object = None
    d: int = 2
    L: int = 64
    env_seed: int = 0
    v: tuple | None = None  # Lindeberg / Gaussianity direction, default e1
    delta: float = 0.5
    pvar_walks: int = 200
    batch_size: int = 5000
    start: str = "uniform"
    tol: float = 1e-10
    max_iters: int = 20000

    def __post_init__(self):
        self.n_list = tuple(sorted(int(n) if float(n).is_integer() else float(n) for n in self.n_list))
        self.validate()

    def validate(self) -> None:
        if self.K < 100:
            raise ValueError(f"K must be at least 100, got {self.K}")
        if not self.n_list or min(self.n_list) <= 0:
            raise ValueError("n_list must hold positive scales")
        if len(set(self.n_list)) != len(self.n_list):
            raise ValueError("n_list entries must be distinct")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.p > 2:
            raise ValueError(f"p must exceed 2, got {self.p}")
        if self.mode not in ("quenched", "annealed"):
            raise ValueError(f"mode must be 'quenched' or 'annealed', got {self.mode!r}")
        if self.mode == "annealed" and self.law is None:
            raise ValueError("annealed mode needs a law")
        if self.batch_size < 1 or self.pvar_walks < 0:
            raise ValueError("batch_size must be positive and pvar_walks nonnegative")
        check_seed(self.master_seed, "master_seed")
        if self.v is not None and len(self.v) != self.d:
            raise ValueError(f"v must have {self.d} entries")

    @property
    def direction(self) -> np.ndarray:
        if self.v is None:
            e = np.zeros(self.d)
            e[0] = 1.0
            return e
        return np.asarray(self.v, dtype=np.float64)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["law"] = None if self.law is None else law_to_dict(self.law)
        out["n_list"] = list(self.n_list)
        out["v"] = None if self.v is None else list(self.v)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleSpec":
        data = dict(data)
        if data.get("law") is not None:
            data["law"] = law_from_dict(data["law"])
        if data.get("v") is not None:
            data["v"] = tuple(data["v"])
        return cls(**data)


@dataclass
class EnsembleRun:
    spec: EnsembleSpec
    reference: HomogenizedStats
    horizons: np.ndarray
    snap: dict
    qv_sup: np.ndarray
    area_sup: np.ndarray
    lind: np.ndarray
    n_jumps: np.ndarray
    records: dict
    provenance: dict
    env_stats: list = field(default_factory=list)  # annealed: per-walk stats

    @property
    def K(self) -> int:
        return len(self.qv_sup)

    @property
    def n_array(self) -> np.ndarray:
        return np.asarray(self.spec.n_list, dtype=np.float64)


# --------------------------------------------------------------------------
# running the ensemble


def _average_stats(all_stats) -> HomogenizedStats:
    return HomogenizedStats(
        sigma2=np.mean([s.sigma2 for s in all_stats], axis=0),
        gamma=np.mean([s.gamma for s in all_stats], axis=0),
        m2=np.mean([s.m2 for s in all_stats], axis=0),
        m2_scalar=float(np.mean([s.m2_scalar for s in all_stats])),
        density=float(np.mean([s.density for s in all_stats])),
        provenance={"averaged_over": len(all_stats)},
    )


def _prepare_env(env, spec):
    labels = clusters(env)
    fld = solve_harmonic(env, labels, tol=spec.tol, max_iters=spec.max_iters)
    return labels, fld, sigma_gamma(env, labels, fld)


def _batch_starts(rng, policy, members, size):
    """One start per walker, drawn from the batch generator in walker order.

    ``members`` is a single (env, labels) pair shared by the whole batch, or
    one pair per walker (stacked tables, global site ``i * S + s``).
    """
    if not isinstance(members, list):
        env, labels = members
        return np.atleast_1d(choose_start(labels, WalkTables.from_env(env), policy, rng, size=size))
    out = np.empty(len(members), dtype=np.int64)
    S = members[0][0].n_sites
    for i, (env, labels) in enumerate(members):
        out[i] = i * S + int(choose_start(labels, WalkTables.from_env(env), policy, rng))
    return out


def run_ensemble(
    spec: EnsembleSpec,
    env: Environment | None = None,
    labels: ClusterLabels | None = None,
    fld: CocycleField | None = None,
    threads: int = 1,
) -> EnsembleRun:
    """Simulate ``spec.K`` walks in batches with derived seeds.

    Batch ``b`` draws from ``stream_seed(master_seed, b)``; in annealed mode
    walker ``g`` lives in ``gen_env(law, d, L, stream_seed(master_seed,
    ENV_STREAMS + g))`` and the reference statistics are the average over all
    those environments.  Results do not depend on ``threads``.
    """
    master = check_seed(spec.master_seed, "master_seed")
    n = np.asarray(spec.n_list, dtype=np.float64)
    H = n * spec.T
    v = spec.direction
    K, B = spec.K, spec.batch_size
    bounds = [(o, min(o + B, K)) for o in range(0, K, B)]
    prov = {"master_seed": master, "mode": spec.mode, "batch_seeds": []}

    if spec.mode == "quenched":
        if env is None:
            if spec.law is None:
                raise ValueError("quenched run needs an environment or a law")
            env = gen_env(spec.law, spec.d, spec.L, spec.env_seed)
        if labels is None:
            labels = clusters(env)
        if fld is None:
            fld = solve_harmonic(env, labels, tol=spec.tol, max_iters=spec.max_iters)
        elif fld.env_hash and fld.env_hash != env.content_hash():
            raise ValueError("corrector field was solved for a different environment")
        reference = sigma_gamma(env, labels, fld)
        tables = StackedTables.build([env], [fld])
        prov.update(env_hash=env.content_hash(), solver_residual=fld.residual, solver_iters=fld.solver_iters)
        env_stats = []
        members_of = lambda a, b: (env, labels)  # noqa: E731
        tables_of = lambda a, b: tables  # noqa: E731
    else:
        prepared = []
        for g in range(K):
            e = gen_env(spec.law, spec.d, spec.L, stream_seed(master, ENV_STREAMS + g))
            lab, f, st = _prepare_env(e, spec)
            prepared.append((e, lab, f, st))
        env_stats = [p[3] for p in prepared]
        reference = _average_stats(env_stats)
        prov.update(
            env_hashes_sha256=_digest([p[0].content_hash() for p in prepared]),
            solver_residual=max(p[2].residual for p in prepared),
        )
        members_of = lambda a, b: [(p[0], p[1]) for p in prepared[a:b]]  # noqa: E731
        tables_of = lambda a, b: StackedTables.build([p[0] for p in prepared[a:b]], [p[2] for p in prepared[a:b]])  # noqa: E731

    def one(bi):
        a, b = bounds[bi]
        seed = stream_seed(master, WALK_STREAMS + bi)
        rng = rng_from_seed(seed)
        starts = _batch_starts(rng, spec.start, members_of(a, b), b - a)
        record = max(0, min(b - a, spec.pvar_walks - a))
        res = run_batch(tables_of(a, b), starts, H, rng, reference.sigma2, reference.gamma, v, spec.delta, n, record=record)
        return seed, res

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(bounds))))
    else:
        results = [one(bi) for bi in range(len(bounds))]

    parts: list[BatchResult] = []
    records = {}
    for (a, _), (seed, res) in zip(bounds, results):
        prov["batch_seeds"].append(seed)
        parts.append(res)
        for w, rec in res.records.items():
            records[a + w] = rec

    snap = {name: np.concatenate([r.snap[name] for r in parts]) for name in SNAPSHOT_MATRICES + SNAPSHOT_VECTORS}
    return EnsembleRun(
        spec=spec,
        reference=reference,
        horizons=H,
        snap=snap,
        qv_sup=np.concatenate([r.qv_sup for r in parts]),
        area_sup=np.concatenate([r.area_sup for r in parts]),
        lind=np.concatenate([r.lind for r in parts]),
        n_jumps=np.concatenate([r.n_jumps for r in parts]),
        records=records,
        provenance=prov,
        env_stats=env_stats,
    )


def _digest(items) -> str:
    h = hashlib.sha256()
    for it in items:
        h.update(it.encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# summaries and verdict rules


def _summary(x: np.ndarray) -> dict:
    x = np.asarray(x, dtype=np.float64)
    k = len(x)
    return {
        "statistic": float(x.mean()),
        "stderr": float(x.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
        "median": float(np.median(x)),
        "q75": float(np.quantile(x, 0.75)),
        "count": k,
    }


def _matrix_summary(a: np.ndarray) -> tuple[list, list]:
    k = len(a)
    mean = a.mean(axis=0)
    se = a.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(mean)
    return mean.tolist(), se.tolist()


def _all_zero(values) -> bool:
    return all(v == 0 for v in values)


def strictly_decreasing(values) -> bool:
    """Trend verdict; a sequence of exact zeros counts as converged."""
    values = list(values)
    return _all_zero(values) or all(b < a for a, b in zip(values, values[1:]))


def _rule_qv_limit(chk, ref, spec):
    return strictly_decreasing(r["median"] for r in chk["rows"]), {"rule": "medians strictly decreasing over n"}


def _rule_ucv(chk, ref, spec):
    sig = np.asarray(ref["sigma2"])
    C = 1.2 * float(np.trace(sig))
    ok_bound = all(r["trace_mean"] <= C * spec["T"] for r in chk["rows"])
    ok_match = True
    for r in chk["rows"]:
        mean, se = np.asarray(r["mean"]), np.asarray(r["stderr_matrix"])
        dev = np.abs(np.diag(mean) - spec["T"] * np.diag(sig))
        ok_match &= bool(np.all(dev <= 3 * np.diag(se)))
    return ok_bound and ok_match, {"C": C, "rule": "trace mean <= C*T and diag within 3 stderr of T*Sigma2_ii"}


def _rule_lindeberg(chk, ref, spec):
    v = np.asarray(chk["v"])
    scale = float(v @ np.asarray(ref["sigma2"]) @ v) * spec["T"]
    vals = [r["statistic"] for r in chk["rows"]]
    thr = 0.01 * scale
    return bool(vals[-1] <= thr and vals[-1] <= vals[0]), {"threshold": thr}


def _rule_corrector_pvar(chk, ref, spec):
    rows = chk["rows"]
    means = [r["statistic"] for r in rows]
    if _all_zero(means):
        return True, {"rule": "all zero"}
    ok = True
    for a, b in zip(rows, rows[1:]):
        need = 1.5 ** math.log(b["n"] / a["n"], 4)
        ok &= b["statistic"] <= a["statistic"] / need
    return bool(ok), {"rule": "mean drops by 1.5x per 4x in n"}


def _rule_corrector_area(chk, ref, spec):
    trend = strictly_decreasing(r["median"] for r in chk["rows"])
    last = chk["rows"][-1]
    dev = np.abs(np.asarray(last["end_mean"]) - spec["T"] * np.asarray(ref["gamma"]))
    sanity = bool(np.all(dev <= 3 * np.asarray(last["end_stderr"])))
    return trend and sanity, {"trend": trend, "end_mean_matches_gamma": sanity}


def _rule_mixed_q(chk, ref, spec):
    sig = np.asarray(ref["sigma2"])
    gam = np.asarray(ref["gamma"])
    thr = 0.1 * math.sqrt(spec["T"] * np.linalg.norm(sig, 2) * np.linalg.norm(2 * gam, 2) + EPS_GUARD)
    vals = [r["statistic"] for r in chk["rows"]]
    trend = strictly_decreasing(vals)
    return bool(trend and vals[-1] <= thr), {"threshold": thr, "trend": trend}


def _rule_area_anomaly(chk, ref, spec):
    T = spec["T"]
    last = chk["rows"][-1]
    ito = np.abs(np.asarray(last["ito_mean"]) - T * np.asarray(ref["gamma"])).max()
    strat = np.abs(np.asarray(last["strat_mean"]) - 0.5 * T * np.asarray(ref["sigma2"])).max()
    ok_i = bool(ito <= 3 * np.max(last["ito_stderr"]))
    ok_s = bool(strat <= 3 * np.max(last["strat_stderr"]))
    return ok_i and ok_s, {"ito": ok_i, "stratonovich": ok_s, "ito_dev": float(ito), "strat_dev": float(strat)}


def _rule_gaussianity(chk, ref, spec):
    if chk.get("skipped"):
        return None, {"skipped": chk["skipped"]}
    r = chk["rows"][-1]
    K = r["count"]
    ok = (
        abs(r["mean"]) <= 3 / math.sqrt(K)
        and abs(r["variance"] - 1) <= 3 * math.sqrt(2 / K)
        and abs(r["excess_kurtosis"]) <= 3 * math.sqrt(24 / K)
    )
    return bool(ok), {"mean_bound": 3 / math.sqrt(K), "var_bound": 3 * math.sqrt(2 / K), "kurt_bound": 3 * math.sqrt(24 / K)}


RULES = {
    "qv_limit": _rule_qv_limit,
    "ucv": _rule_ucv,
    "lindeberg": _rule_lindeberg,
    "corrector_pvar": _rule_corrector_pvar,
    "corrector_area": _rule_corrector_area,
    "mixed_q": _rule_mixed_q,
    "area_anomaly": _rule_area_anomaly,
    "gaussianity": _rule_gaussianity,
}


def _judge(name, chk, run: EnsembleRun):
    ref = run.reference.to_dict()
    verdict, info = RULES[name](chk, ref, run.spec.to_dict())
    chk["verdict"] = verdict
    chk["criteria"] = info
    return chk


# --------------------------------------------------------------------------
# checks


def _require_reference(run: EnsembleRun):
    if run.reference is None:
        raise ValueError("this check needs a solved corrector field")


def qv_limit_check(run: EnsembleRun) -> dict:
    """``sup_{t<=T} |[M^n]_t - Sigma^2 t|`` (max over entries) per walk and n."""
    _require_reference(run)
    rows = [{"n": n, **_summary(run.qv_sup[:, a] / n)} for a, n in enumerate(run.spec.n_list)]
    return _judge("qv_limit", {"rows": rows}, run)


def ucv_check(run: EnsembleRun) -> dict:
    """Mean of ``[M^n]_T`` per n with entrywise stderr."""
    _require_reference(run)
    rows = []
    for a, n in enumerate(run.spec.n_list):
        Q = run.snap["QMM"][:, a] / n
        mean, se = _matrix_summary(Q)
        tr = np.trace(Q, axis1=1, axis2=2)
        rows.append({"n": n, **_summary(tr), "trace_mean": float(tr.mean()), "mean": mean, "stderr_matrix": se})
    return _judge("ucv", {"rows": rows}, run)


def lindeberg_check(run: EnsembleRun) -> dict:
    """Mean of ``sum (v . dM^n)^2 1{|v . dM^n| > delta}`` on ``[0, T]``.

    ``v`` and ``delta`` are fixed when the ensemble runs (``spec.v``,
    ``spec.delta``) because the truncated sums are accumulated on the fly.
    """
    v = run.spec.direction
    rows = [{"n": n, **_summary(run.lind[:, a] / n)} for a, n in enumerate(run.spec.n_list)]
    return _judge("lindeberg", {"rows": rows, "v": v.tolist(), "delta": run.spec.delta}, run)


def _recorded_window(run: EnsembleRun, w: int, n: float):
    t, R, Q = run.records[w]
    k = int(np.searchsorted(t, n * run.spec.T, side="right"))
    return t[:k] / n, R[:k], Q[:k]


def _variation(path, p):
    if path.n_jumps <= EXACT_CAP:
        return pvar_exact(path, p).value, "exact"
    return pvar_capped(path, p).bounds[0], "lower_bound"


def _per_n_variation(run: EnsembleRun, which: str) -> tuple[list, set]:
    p = run.spec.p
    T = run.spec.T
    out, methods = [], set()
    walkers = sorted(run.records)
    for n in run.spec.n_list:
        vals = []
        for w in walkers:
            t, R, Q = _recorded_window(run, w, n)
            if which == "R":
                v = np.vstack([np.zeros((1, R.shape[1])), R]) / math.sqrt(n)
                val, how = _variation(StepPath(t, v, T), p)
            else:
                v = np.vstack([np.zeros((1, Q.shape[1])), Q]) / n
                val, how = _variation(StepPath(t, v, T), p / 2)
                val = math.sqrt(val)
            vals.append(val)
            methods.add(how)
        out.append((n, np.array(vals)))
    return out, methods


def corrector_pvar_decay(run: EnsembleRun) -> dict:
    """Mean of ``||R^n||_{p-var,[0,T]}`` over the recorded walks."""
    _require_reference(run)
    if not run.records:
        raise ValueError("no recorded walks; set pvar_walks > 0")
    per_n, methods = _per_n_variation(run, "R")
    rows = [{"n": n, **_summary(vals)} for n, vals in per_n]
    return _judge("corrector_pvar", {"rows": rows, "p": run.spec.p, "methods": sorted(methods)}, run)


def corrector_area_check(run: EnsembleRun) -> dict:
    """``sup_{t<=T} |I(R^n,R^n)_{0,t} - t Gamma|`` per walk, plus the mean at T."""
    _require_reference(run)
    rows = []
    for a, n in enumerate(run.spec.n_list):
        mean, se = _matrix_summary(run.snap["IRR"][:, a] / n)
        rows.append({"n": n, **_summary(run.area_sup[:, a] / n), "end_mean": mean, "end_stderr": se})
    return _judge("corrector_area", {"rows": rows}, run)


def mixed_q_check(run: EnsembleRun) -> dict:
    """Mean of ``||Q(M^n, R^n)||_{p/2-var}^{1/2}`` over the recorded walks."""
    _require_reference(run)
    if not run.records:
        raise ValueError("no recorded walks; set pvar_walks > 0")
    per_n, methods = _per_n_variation(run, "Q")
    rows = [{"n": n, **_summary(vals)} for n, vals in per_n]
    return _judge("mixed_q", {"rows": rows, "p": run.spec.p, "methods": sorted(methods)}, run)


def mixed_edge_sum(env: Environment, labels: ClusterLabels, fld: CocycleField) -> np.ndarray:
    """Cluster average of ``sum_z omega (dPhi)^i (dchi)^j``; zero for an exact corrector."""
    J, nbr, w = env.neighbor_table()
    sites = labels.giant_sites()
    chi = fld.chi_filled()
    dchi = chi[nbr[sites]] - chi[sites][:, None, :]  # (S_c, D, d)
    dphi = J[None, :, :] - dchi
    return np.einsum("sk,ski,skj->ij", w[sites], dphi, dchi) / len(sites)


def area_anomaly_mc(run: EnsembleRun, target_stderr: float | None = None) -> dict:
    """Mean Ito and Stratonovich level-2 values at ``T`` for every n.

    Warns with a required-K estimate when the stderr at the largest n exceeds
    ``target_stderr`` (default 10% of ``max |T Gamma|``, floor 1e-3).
    """
    _require_reference(run)
    T = run.spec.T
    rows = []
    for a, n in enumerate(run.spec.n_list):
        ito = run.snap["XX"][:, a] / n
        strat = ito + 0.5 * run.snap["QXX"][:, a] / n
        im, ise = _matrix_summary(ito)
        sm, sse = _matrix_summary(strat)
        # headline column: trace of the Ito level-2 value
        rows.append({"n": n, **_summary(np.trace(ito, axis1=1, axis2=2)),
                     "ito_mean": im, "ito_stderr": ise, "strat_mean": sm, "strat_stderr": sse})
    chk = {"rows": rows, "notes": []}
    if target_stderr is None:
        target_stderr = max(0.1 * float(np.abs(T * run.reference.gamma).max()), 1e-3)
    se = float(np.max(rows[-1]["ito_stderr"]))
    if se > target_stderr:
        need = int(math.ceil(run.K * (se / target_stderr) ** 2))
        msg = f"K={run.K} gives stderr {se:.3g} > target {target_stderr:.3g}; about K={need} needed"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        chk["notes"].append(msg)
    return _judge("area_anomaly", chk, run)


def gaussianity_check(run: EnsembleRun) -> dict:
    """Moments of ``v . X^n_T`` standardized by ``sqrt(v' Sigma^2 v T)`` at every n."""
    _require_reference(run)
    v = run.spec.direction
    scale2 = float(v @ run.reference.sigma2 @ v) * run.spec.T
    if not np.any(v) or scale2 <= 0:
        return _judge("gaussianity", {"rows": [], "skipped": "degenerate direction (v' Sigma^2 v = 0)"}, run)
    rows = []
    for a, n in enumerate(run.spec.n_list):
        y = run.snap["X"][:, a] @ v / math.sqrt(n) / math.sqrt(scale2)
        rows.append({
            "n": n,
            **_summary(y),
            "mean": float(y.mean()),
            "variance": float(y.var(ddof=1)),
            "excess_kurtosis": float(sps.kurtosis(y, fisher=True)),
        })
    return _judge("gaussianity", {"rows": rows}, run)


CHECK_FUNCS = {
    "qv_limit": qv_limit_check,
    "ucv": ucv_check,
    "lindeberg": lindeberg_check,
    "corrector_pvar": corrector_pvar_decay,
    "corrector_area": corrector_area_check,
    "mixed_q": mixed_q_check,
    "area_anomaly": area_anomaly_mc,
    "gaussianity": gaussianity_check,
}


# --------------------------------------------------------------------------
# isotropy over independent environments


def isotropy_check(all_stats, tol: float = 1e-10) -> dict:
    """Scalar structure of ``Sigma^2``, ``Gamma`` over independent environments.

    Per environment ``sigma2``, ``gamma`` and ``m2`` are diagonal means, with
    ``m2`` taken per coordinate (``M^2_ii``).  The identity
    ``gamma = -(m2 - sigma2) / 2`` is checked per environment to
    ``10 * tol * m2``.  The row ``identity_with_mean_mu`` repeats it with
    ``m2`` replaced by the mean weighted degree, for information only.
    """
    all_stats = list(all_stats)
    E = len(all_stats)
    if E == 0:
        raise ValueError("need at least one environment")
    if E < 20:
        warnings.warn(f"isotropy over {E} < 20 environments", RuntimeWarning, stacklevel=2)
    S = np.array([s.sigma2 for s in all_stats])
    d = S.shape[1]
    off = np.array([S[:, i, j] for i in range(d) for j in range(i + 1, d)]).T  # (E, pairs)
    diffs = np.array([S[:, i, i] - S[:, j, j] for i in range(d) for j in range(i + 1, d)]).T

    def mse(a):
        m = a.mean(axis=0)
        se = a.std(axis=0, ddof=1) / math.sqrt(E) if E > 1 else np.zeros_like(m)
        return m, se

    off_m, off_se = mse(off)
    dif_m, dif_se = mse(diffs)
    per_env = []
    for s in all_stats:
        sig = float(np.mean(np.diag(s.sigma2)))
        gam = float(np.mean(np.diag(s.gamma)))
        m2 = float(np.mean(np.diag(s.m2)))
        per_env.append({
            "sigma2": sig,
            "gamma": gam,
            "m2": m2,
            "defect": abs(gam + (m2 - sig) / 2),
            "bound": 10 * tol * m2,
            "defect_with_mean_mu": abs(gam + (s.m2_scalar - sig) / 2),
        })
    ok_off = bool(np.all(np.abs(off_m) <= 3 * off_se))
    ok_diag = bool(np.all(np.abs(dif_m) <= 3 * dif_se))
    ok_id = all(r["defect"] <= r["bound"] for r in per_env)
    scal = np.array([[r["sigma2"], r["gamma"], r["m2"]] for r in per_env])
    sm, sse = mse(scal)
    return {
        "n_envs": E,
        "sigma2": float(sm[0]), "sigma2_stderr": float(sse[0]),
        "gamma": float(sm[1]), "gamma_stderr": float(sse[1]),
        "m2": float(sm[2]), "m2_stderr": float(sse[2]),
        "offdiag_mean": off_m.tolist(), "offdiag_stderr": off_se.tolist(),
        "diag_diff_mean": dif_m.tolist(), "diag_diff_stderr": dif_se.tolist(),
        "per_env": per_env,
        "verdicts": {"offdiag_zero": ok_off, "diag_equal": ok_diag, "identity": ok_id},
        "verdict": ok_off and ok_diag and ok_id,
    }


# --------------------------------------------------------------------------
# report


@dataclass
class DiagnosticsReport:
    spec: dict
    reference: dict
    checks: dict
    provenance: dict
    schema_version: int = REPORT_SCHEMA_VERSION

    @property
    def verdicts(self) -> dict:
        return {name: chk.get("verdict") for name, chk in self.checks.items()}

    @property
    def failed(self) -> list:
        return [name for name, v in self.verdicts.items() if v is False]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "kind": "diagnostics_report",
            "spec": self.spec,
            "reference": self.reference,
            "checks": self.checks,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, data: dict) -> "DiagnosticsReport":
        if data.get("kind") != "diagnostics_report":
            raise ValueError("not a diagnostics report")
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')}")
        return cls(data["spec"], data["reference"], data["checks"], data["provenance"], data["schema_version"])

    @classmethod
    def load(cls, path) -> "DiagnosticsReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path) -> None:
        """One row per (check, n)."""
        cols = ["check", "n", "statistic", "stderr", "median", "q75", "count", "verdict"]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(cols)
            for name, chk in self.checks.items():
                for r in chk.get("rows", []):
                    out.writerow([name] + [r.get(c, "") for c in cols[1:-1]] + [chk.get("verdict")])


def recompute_verdicts(report: DiagnosticsReport) -> dict:
    """Re-judge every check from its stored rows."""
    out = {}
    for name, chk in report.checks.items():
        if name in RULES:
            out[name] = RULES[name](chk, report.reference, report.spec)[0]
    return out


def run_diagnostics(spec: EnsembleSpec, env=None, labels=None, fld=None, checks=CHECKS, threads: int = 1, run=None) -> DiagnosticsReport:
    unknown = set(checks) - set(CHECK_FUNCS)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    if run is None:
        run = run_ensemble(spec, env, labels, fld, threads=threads)
    results = {name: CHECK_FUNCS[name](run) for name in checks}
    return DiagnosticsReport(
        spec=spec.to_dict(),
        reference=run.reference.to_dict(),
        checks=json.loads(json.dumps(results, default=_jsonable)),
        provenance=run.provenance,
    )


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
