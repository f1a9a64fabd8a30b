"""Harmonic coordinates, corrector and homogenized matrices on the torus.

The corrector solves the periodic cell problem on the giant cluster ``C``::

    (L chi^j)(x) = (L Pi^j)(x) = sum_z omega(x, x+z) z_j,    x in C,

so that ``Phi = Pi - chi`` is harmonic.  Writing ``A = diag(mu) - W`` for the
(positive semidefinite) weighted graph Laplacian this is ``A chi^j = -b^j``,
solved by Jacobi-preconditioned conjugate gradients on the mean-zero subspace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .env import ClusterLabels, Environment

FIELD_SCHEMA_VERSION = 1


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class SiteError(ValueError):
    """A site outside the solved cluster was queried."""


# --------------------------------------------------------------------------
# linear algebra


def cluster_system(env: Environment, labels: ClusterLabels):
    """Laplacian restricted to the giant cluster plus the drift right-hand side.

    Returns ``(sites, A, mu, b)`` where ``sites`` are flat torus indices in
    ascending order, ``A`` is the sparse ``N x N`` Laplacian, ``mu`` the
    weighted degrees and ``b[:, j] = sum_z omega(x, x+z) z_j``.
    """
    if labels.giant_size == 0:
        raise SolverError("no cluster to solve on", float("nan"), 0)
    J, nbr, w = env.neighbor_table()
    sites = labels.giant_sites()
    N = len(sites)
    local = np.full(env.n_sites, -1, dtype=np.int64)
    local[sites] = np.arange(N)

    w_c = w[sites]
    nb_c = nbr[sites]
    rows = np.repeat(np.arange(N), w_c.shape[1])
    cols = local[nb_c.ravel()]
    vals = w_c.ravel()
    on = vals > 0
    if np.any(cols[on] < 0):
        raise SolverError("giant cluster is not closed under positive edges", float("nan"), 0)
    mu = w_c.sum(axis=1)
    W = sp.csr_matrix((vals[on], (rows[on], cols[on])), shape=(N, N))
    A = (sp.diags(mu) - W).tocsr()
    b = w_c @ J.astype(np.float64)
    return sites, A, mu, b


def pcg(A, rhs, diag, tol, max_iters, scale):
    """Jacobi-preconditioned CG for a consistent singular SPD system.

    Stops once ``max |rhs - A x| / scale <= tol`` componentwise.
    """
    x = np.zeros_like(rhs)
    r = rhs - A @ x
    err = np.max(np.abs(r) / scale) if len(r) else 0.0
    if err <= tol:
        return x, err, 0
    z = r / diag
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iters + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if it % 50 == 0:
            # guard against drift of the recursive residual
            r = rhs - A @ x
        err = np.max(np.abs(r) / scale)
        if err <= tol:
            r_true = rhs - A @ x
            err = np.max(np.abs(r_true) / scale)
            if err <= tol:
                return x, err, it
            r = r_true
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("conjugate gradients did not converge", float(err), max_iters)


def sym_eigvals(A: np.ndarray) -> np.ndarray:
    """Closed-form ascending eigenvalues of a symmetric 1x1, 2x2 or 3x3 matrix.

    The 3x3 branch goes through the characteristic cubic, so a repeated
    eigenvalue is only resolved to about sqrt(eps) times the matrix scale.
    """
    A = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    d = A.shape[0]
    if d == 1:
        return A[0].copy()
    if d == 2:
        m = 0.5 * (A[0, 0] + A[1, 1])
        r = np.hypot(0.5 * (A[0, 0] - A[1, 1]), A[0, 1])
        return np.array([m - r, m + r])
    if d == 3:
        p1 = A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2
        q = np.trace(A) / 3
        p2 = (A[0, 0] - q) ** 2 + (A[1, 1] - q) ** 2 + (A[2, 2] - q) ** 2 + 2 * p1
        if p2 == 0:
            return np.full(3, q)
        p = np.sqrt(p2 / 6)
        Bm = (A - q * np.eye(3)) / p
        r = np.clip(np.linalg.det(Bm) / 2, -1.0, 1.0)
        phi = np.arccos(r) / 3
        e1 = q + 2 * p * np.cos(phi)
        e3 = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
        return np.sort(np.array([e3, 3 * q - e1 - e3, e1]))
    raise ValueError("closed form only for d <= 3")


# --------------------------------------------------------------------------
# corrector


@dataclass
class CocycleField:
    """Corrector ``chi`` on the giant cluster, gauge ``chi(base_site) = 0``."""

    chi: np.ndarray  # (S, d); NaN off the cluster
    residual: float
    solver_iters: int
    cluster_id: int
    base_site: int
    tol: float
    L: int
    d: int
    env_hash: str = ""
    provenance: dict = field(default_factory=dict)

    @property
    def on_cluster(self) -> np.ndarray:
        return ~np.isnan(self.chi[:, 0])

    def chi_filled(self) -> np.ndarray:
        """``chi`` with zeros off the cluster, for table lookups."""
        return np.where(self.on_cluster[:, None], self.chi, 0.0)

    def to_json(self) -> str:
        data = {
            "schema_version": FIELD_SCHEMA_VERSION,
            "kind": "cocycle_field",
            "env_hash": self.env_hash,
            "tol": self.tol,
            "residual": self.residual,
            "solver_iters": self.solver_iters,
            "cluster_id": self.cluster_id,
            "base_site": self.base_site,
            "L": self.L,
            "d": self.d,
            "chi": [None if np.isnan(row[0]) else [float(v) for v in row] for row in self.chi],
            "provenance": self.provenance,
        }
        return json.dumps(data)

    @classmethod
    def from_json(cls, text: str) -> "CocycleField":
        data = json.loads(text)
        if data.get("kind") != "cocycle_field" or data.get("schema_version") != FIELD_SCHEMA_VERSION:
            raise ValueError("not a cocycle field document")
        d = data["d"]
        chi = np.array([[np.nan] * d if row is None else row for row in data["chi"]], dtype=float)
        return cls(
            chi=chi,
            residual=data["residual"],
            solver_iters=data["solver_iters"],
            cluster_id=data["cluster_id"],
            base_site=data["base_site"],
            tol=data["tol"],
            L=data["L"],
            d=d,
            env_hash=data["env_hash"],
            provenance=data.get("provenance", {}),
        )


def solve_harmonic(env: Environment, labels: ClusterLabels, tol: float = 1e-10, max_iters: int = 20000) -> CocycleField:
    """Corrector on the giant cluster by preconditioned conjugate gradients.

    ``tol`` bounds the harmonicity defect of ``Phi = Pi - chi`` pointwise,
    relative to the local weighted degree: ``|L Phi(x)| <= tol * mu(x)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    sites, A, mu, b = cluster_system(env, labels)
    N, d = b.shape
    chi_c = np.zeros((N, d))
    iters = 0
    for j in range(d):
        rhs = -b[:, j]
        rhs = rhs - rhs.mean()  # exact zero-sum in exact arithmetic; remove rounding
        x, _, it = pcg(A, rhs, mu, tol, max_iters, mu)
        chi_c[:, j] = x
        iters = max(iters, it)
    chi_c -= chi_c.mean(axis=0)
    chi_c -= chi_c[0]  # sites are ascending, so sites[0] is the lowest lexicographic site
    residual = float(np.max(np.abs(A @ chi_c + b) / mu[:, None]))
    chi = np.full((env.n_sites, d), np.nan)
    chi[sites] = chi_c
    return CocycleField(
        chi=chi,
        residual=residual,
        solver_iters=iters,
        cluster_id=labels.giant_id,
        base_site=int(sites[0]),
        tol=tol,
        L=env.L,
        d=d,
        env_hash=env.content_hash(),
    )


def harmonic_defect(env: Environment, labels: ClusterLabels, fld: CocycleField) -> np.ndarray:
    """``|(L Phi)(x)| / mu(x)`` at every cluster site, shape ``(N, d)``."""
    sites, A, mu, b = cluster_system(env, labels)
    return np.abs(A @ fld.chi[sites] + b) / mu[:, None]


def corrector_eval(fld: CocycleField, x, z_base, shape=None) -> np.ndarray:
    """Cocycle value ``chi(x) - chi(z_base)``; sites as flat indices or coordinates."""
    shape = shape or (fld.L,) * fld.d
    xs = _as_flat(x, shape)
    zs = _as_flat(z_base, shape)
    for s in (xs, zs):
        if not fld.on_cluster[s]:
            raise SiteError(f"site {np.unravel_index(s, shape)} is not on the solved cluster")
    return fld.chi[xs] - fld.chi[zs]


def _as_flat(x, shape) -> int:
    if np.ndim(x) == 0:
        return int(x)
    L = shape[0]
    return int(np.ravel_multi_index(tuple(int(c) % L for c in x), shape))


# --------------------------------------------------------------------------
# homogenized matrices


@dataclass
class HomogenizedStats:
    sigma2: np.ndarray
    gamma: np.ndarray
    m2: np.ndarray
    m2_scalar: float
    density: float
    provenance: dict = field(default_factory=dict)

    @property
    def pythagoras_defect(self) -> float:
        """``max |M^2 - (Sigma^2 - 2 Gamma)|``."""
        return float(np.max(np.abs(self.m2 - (self.sigma2 - 2 * self.gamma))))

    def to_dict(self) -> dict:
        return {
            "schema_version": FIELD_SCHEMA_VERSION,
            "kind": "homogenized_stats",
            "sigma2": self.sigma2.tolist(),
            "gamma": self.gamma.tolist(),
            "m2": self.m2.tolist(),
            "m2_scalar": self.m2_scalar,
            "density": self.density,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HomogenizedStats":
        if data.get("kind") != "homogenized_stats":
            raise ValueError("not a homogenized stats document")
        return cls(
            sigma2=np.array(data["sigma2"]),
            gamma=np.array(data["gamma"]),
            m2=np.array(data["m2"]),
            m2_scalar=data["m2_scalar"],
            density=data["density"],
            provenance=data.get("provenance", {}),
        )


def sigma_gamma(env: Environment, labels: ClusterLabels, fld: CocycleField) -> HomogenizedStats:
    """Cluster averages of ``omega * dPhi (x) dPhi`` and ``omega * dchi (x) dchi``.

    Every site of the cluster sums over all of its incident edges, so each
    undirected edge enters twice, once from each endpoint.
    """
    if fld.cluster_id != labels.giant_id or fld.L != env.L:
        raise ValueError("corrector field was solved on a different environment or cluster")
    J, nbr, w = env.neighbor_table()
    sites = labels.giant_sites()
    chi = fld.chi_filled()
    Jf = J.astype(np.float64)
    d = env.d
    sig = np.zeros((d, d))
    gam = np.zeros((d, d))
    m2 = np.zeros((d, d))
    for j in range(len(J)):
        wj = w[sites, j]
        dchi = chi[nbr[sites, j]] - chi[sites]
        dphi = Jf[j] - dchi
        sig += np.einsum("n,ni,nj->ij", wj, dphi, dphi)
        gam += np.einsum("n,ni,nj->ij", wj, dchi, dchi)
        m2 += wj.sum() * np.outer(Jf[j], Jf[j])
    N = len(sites)
    sig /= N
    gam *= -0.5 / N
    m2 /= N
    sig = 0.5 * (sig + sig.T)
    gam = 0.5 * (gam + gam.T)
    return HomogenizedStats(
        sigma2=sig,
        gamma=gam,
        m2=m2,
        m2_scalar=float(w[sites].sum() / N),
        density=N / env.n_sites,
    )


# --------------------------------------------------------------------------
# box-averaged potential


@dataclass
class PotentialField:
    n: int
    phi_n: np.ndarray  # (S, d), NaN off the cluster
    E: np.ndarray  # (S, 2d, d) error field at nearest-neighbor offsets, NaN where undefined
    offsets: np.ndarray  # (2d, d)
    E_rms: float


def box_sum(g: np.ndarray, n: int, d: int) -> np.ndarray:
    """Periodic sums of ``g`` over ``{-n..n}^d`` boxes centered at every site.

    ``g`` has the torus axes first; trailing axes are carried along.
    """
    out = g
    for axis in range(d):
        acc = np.zeros_like(out)
        for k in range(-n, n + 1):
            acc += np.roll(out, -k, axis=axis)
        out = acc
    return out


def potential_box_average(env: Environment, labels: ClusterLabels, fld: CocycleField, n: int) -> PotentialField:
    """Box-averaged potential ``phi_n`` and its error field ``E_n``.

    ``phi_n(tau_z omega) = -mean_{x in B_n, z+x in C} (chi(z+x) - chi(z))`` and
    ``E_n(z, x) = phi_n(tau_{z+x} omega) - phi_n(tau_z omega) - (chi(z+x) - chi(z))``
    for nearest-neighbor offsets ``x`` with ``z, z+x`` on the cluster.
    """
    if not 1 <= n <= env.L // 4:
        raise ValueError(f"box radius n = {n} outside [1, L/4 = {env.L // 4}]")
    d, shape = env.d, env.shape
    on = fld.on_cluster.reshape(shape)
    chi = fld.chi_filled().reshape(shape + (d,))
    count = box_sum(on.astype(np.float64), n, d)
    total = box_sum(chi * on[..., None], n, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(count[..., None] > 0, total / count[..., None], 0.0)
    phi = np.where(on[..., None], chi - avg, np.nan)  # phi_n(tau_z) = chi(z) - box average

    nn = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    axes = tuple(range(d))
    E = np.full(shape + (len(nn), d), np.nan)
    for k, x in enumerate(nn):
        shifted = tuple(int(-c) for c in x)
        phi_x = np.roll(phi, shifted, axis=axes)  # phi at z + x
        chi_x = np.roll(chi, shifted, axis=axes)
        on_x = np.roll(on, shifted, axis=axes)
        both = on & on_x
        val = phi_x - phi - (chi_x - chi)
        E[..., k, :] = np.where(both[..., None], val, np.nan)
    sq = np.nansum(E**2, axis=-1)
    defined = ~np.isnan(E[..., 0])
    E_rms = float(np.sqrt(sq[defined].mean())) if defined.any() else 0.0
    S = env.n_sites
    return PotentialField(n=n, phi_n=phi.reshape(S, d), E=E.reshape(S, len(nn), d), offsets=nn, E_rms=E_rms)


# --------------------------------------------------------------------------
# finite-volume reporting


def corrector_moments(fld: CocycleField, orders=(1, 2, 4)) -> dict:
    """Cluster averages of ``|chi - mean chi|^k`` (Euclidean norm) for each order."""
    chi = fld.chi[fld.on_cluster]
    r = np.sqrt(np.sum((chi - chi.mean(axis=0)) ** 2, axis=1))
    return {int(k): float(np.mean(r**k)) for k in orders}


def size_comparison(law, d: int, sizes=(32, 64), seed: int = 0, tol: float = 1e-10) -> dict:
    """Homogenized matrices at two (or more) torus sizes and their differences.

    No finite-size rate is asserted; the differences are reported as they are.
    """
    from .env import clusters, gen_env

    rows = {}
    for L in sizes:
        env = gen_env(law, d, L, seed)
        labels = clusters(env)
        st = sigma_gamma(env, labels, solve_harmonic(env, labels, tol=tol))
        rows[L] = st
    first, last = rows[sizes[0]], rows[sizes[-1]]
    return {
        "stats": {L: st.to_dict() for L, st in rows.items()},
        "sigma2_diff": (last.sigma2 - first.sigma2).tolist(),
        "gamma_diff": (last.gamma - first.gamma).tolist(),
    }
