"""Finite periodic conductance environments and their cluster structure.

An :class:`Environment` lives on the torus ``(Z/LZ)^d``.  Every undirected
edge ``{x, x+z}`` is stored exactly once, under the offset ``z`` taken from the
lexicographically positive half of the jump range ``J``.  The conductance
array therefore has shape ``(len(J)//2, L, ..., L)`` and is indexed as
``cond[k][x]`` for the edge ``{x, x + offsets[k]}``; this is also the on-disk
layout (direction-major, lexicographic vertex order, C order).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .seeding import check_seed, rng_from_seed

ENV_MAGIC = b"RCMENV01"
ENV_SCHEMA_VERSION = 1


class ParameterError(ValueError):
    """Invalid law or geometry parameter; ``field`` names the offender."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# --------------------------------------------------------------------------
# conductance laws


@dataclass(frozen=True)
class Constant:
    c: float = 1.0
    kind = "Constant"
    uniformly_elliptic = True

    def validate(self, d: int) -> None:
        if not np.isfinite(self.c) or self.c <= 0:
            raise ParameterError("c", f"must be a positive finite conductance, got {self.c}")

    def bounds(self):
        return self.c, self.c


@dataclass(frozen=True)
class UniformInterval:
    a: float
    b: float
    kind = "UniformInterval"
    uniformly_elliptic = True

    def validate(self, d: int) -> None:
        _check_interval(self.a, self.b)

    def bounds(self):
        return self.a, self.b


@dataclass(frozen=True)
class PercolationWeighted:
    p: float
    a: float
    b: float
    kind = "PercolationWeighted"
    uniformly_elliptic = False

    def validate(self, d: int) -> None:
        if not 0 < self.p <= 1:
            raise ParameterError("p", f"open-edge probability must lie in (0, 1], got {self.p}")
        _check_interval(self.a, self.b)

    def bounds(self):
        return self.a, self.b


@dataclass(frozen=True)
class LineModel:
    a: float
    b: float
    kind = "LineModel"
    uniformly_elliptic = True

    def validate(self, d: int) -> None:
        _check_interval(self.a, self.b)

    def bounds(self):
        return self.a, self.b


@dataclass(frozen=True)
class LongRangePoly:
    alpha: float
    R: int
    a: float
    b: float
    kind = "LongRangePoly"
    uniformly_elliptic = True

    def validate(self, d: int) -> None:
        if not self.alpha > d + 2:
            raise ParameterError("alpha", f"must exceed d + 2 = {d + 2}, got {self.alpha}")
        if int(self.R) != self.R or self.R < 1:
            raise ParameterError("R", f"truncation radius must be a positive integer, got {self.R}")
        _check_interval(self.a, self.b)

    def bounds(self):
        # conductances are scaled by |z|^-alpha, so the stored range is wider than [a, b]
        return self.a * float(self.R) ** (-self.alpha), self.b


LAWS = {cls.kind: cls for cls in (Constant, UniformInterval, PercolationWeighted, LineModel, LongRangePoly)}
ConductanceLaw = Constant | UniformInterval | PercolationWeighted | LineModel | LongRangePoly


def _check_interval(a: float, b: float) -> None:
    if not np.isfinite(a) or a <= 0:
        raise ParameterError("a", f"must be positive and finite, got {a}")
    if not np.isfinite(b) or b < a:
        raise ParameterError("b", f"must be finite and >= a = {a}, got {b}")


def law_to_dict(law) -> dict:
    out = {"kind": law.kind}
    out.update({k: v for k, v in law.__dict__.items()})
    return out


def law_from_dict(data: dict):
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in LAWS:
        raise ParameterError("kind", f"unknown conductance law {kind!r}; expected one of {sorted(LAWS)}")
    cls = LAWS[kind]
    try:
        law = cls(**data)
    except TypeError as exc:
        raise ParameterError(kind, str(exc)) from None
    return canonical_law(law)


def canonical_law(law):
    """Same law with float parameters (and an int ``R``), so headers and hashes
    do not depend on whether a parameter was written as ``1`` or ``1.0``."""
    params = {k: (int(v) if k == "R" else float(v)) for k, v in law.__dict__.items()}
    return type(law)(**params)


def law_tag(law) -> str:
    params = ",".join(f"{k}={v!r}" for k, v in law.__dict__.items())
    return f"{law.kind}({params})"


# --------------------------------------------------------------------------
# jump range


def positive_half(offsets) -> np.ndarray:
    """Offsets whose first nonzero coordinate is positive, in lexicographic order."""
    keep = []
    for z in offsets:
        nz = [c for c in z if c != 0]
        if nz and nz[0] > 0:
            keep.append(tuple(int(c) for c in z))
    return np.array(sorted(keep), dtype=np.int64)


def nearest_neighbor_offsets(d: int) -> np.ndarray:
    return np.eye(d, dtype=np.int64)[::-1].copy()


def ball_offsets(d: int, R: int) -> np.ndarray:
    rng_ = range(-R, R + 1)
    ball = [z for z in itertools.product(rng_, repeat=d) if 0 < sum(c * c for c in z) <= R * R]
    return positive_half(ball)


def second_moment_weight(d: int, alpha: float, R: int) -> float:
    """``sum_{0<|z|<=R} |z|^2 * |z|^-alpha`` by direct summation over the ball."""
    r = np.arange(-R, R + 1)
    grids = np.meshgrid(*([r] * d), indexing="ij")
    r2 = sum(g.astype(float) ** 2 for g in grids)
    mask = (r2 > 0) & (r2 <= R * R)
    return float(np.sum(r2[mask] ** (1.0 - alpha / 2.0)))


def truncation_error(d: int, alpha: float, R: int, R_far: int = 200) -> float:
    """Relative loss of the second-moment weight when the jump range is cut at ``R``.

    The untruncated sum is approximated by direct summation up to ``R_far``
    plus the radial integral of the remaining tail.
    """
    if alpha <= d + 2:
        return float("inf")
    near = second_moment_weight(d, alpha, R)
    far = second_moment_weight(d, alpha, R_far)
    sphere = 2 * np.pi ** (d / 2) / _gamma(d / 2)
    # sum_{|z|>R_far} |z|^{2-alpha} ~ sphere * int_{R_far}^inf r^{d+1-alpha} dr
    tail = sphere * R_far ** (d + 2 - alpha) / (alpha - d - 2)
    total = far + tail
    return float((total - near) / total)


def _gamma(x: float) -> float:
    from math import gamma

    return gamma(x)


# --------------------------------------------------------------------------
# environment


@dataclass(eq=False)
class Environment:
    """Immutable periodic conductance field on ``(Z/LZ)^d``."""

    d: int
    L: int
    offsets: np.ndarray  # (P, d) positive half of the jump range
    cond: np.ndarray  # (P, L, ..., L)
    law: object = None
    seed: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.cond = np.ascontiguousarray(self.cond, dtype=np.float64)
        P = len(self.offsets)
        if self.offsets.shape != (P, self.d):
            raise ParameterError("offsets", f"expected shape ({P}, {self.d}), got {self.offsets.shape}")
        if self.cond.shape != (P,) + (self.L,) * self.d:
            raise ParameterError("cond", f"shape {self.cond.shape} does not match offsets and L")
        if not np.all(np.isfinite(self.cond)) or np.any(self.cond < 0):
            raise ParameterError("cond", "conductances must be finite and nonnegative")
        if len(positive_half(self.offsets)) != P or not np.array_equal(positive_half(self.offsets), self.offsets):
            raise ParameterError("offsets", "must be the sorted positive half of a symmetric jump range")
        if np.any(2 * np.abs(self.offsets) >= self.L):
            raise ParameterError("L", "jump range wraps around the torus; need 2*|z_i| < L")
        if self.law is not None:
            self.law = canonical_law(self.law)
        self.cond.setflags(write=False)
        self.offsets.setflags(write=False)
        self._lookup = {tuple(int(c) % self.L for c in z): (k, 1) for k, z in enumerate(self.offsets)}
        self._lookup.update({tuple(int(-c) % self.L for c in z): (k, -1) for k, z in enumerate(self.offsets)})

    # -- geometry

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def shape(self) -> tuple:
        return (self.L,) * self.d

    @property
    def law_tag(self) -> str:
        return law_tag(self.law) if self.law is not None else "unspecified"

    @property
    def jump_range(self) -> np.ndarray:
        """All directed offsets ``J = -J``, sorted lexicographically."""
        return np.array(sorted(map(tuple, np.concatenate([self.offsets, -self.offsets]))), dtype=np.int64)

    def wrap(self, x) -> tuple:
        return tuple(int(c) % self.L for c in x)

    def flat(self, x) -> int:
        return int(np.ravel_multi_index(self.wrap(x), self.shape))

    def site(self, flat_index: int) -> tuple:
        return tuple(int(c) for c in np.unravel_index(int(flat_index), self.shape))

    # -- conductances

    def conductance(self, x, y) -> float:
        """``omega({x, y})`` for torus vertices; 0 if ``y - x`` is outside the jump range."""
        x = self.wrap(x)
        y = self.wrap(y)
        key = tuple((b - a) % self.L for a, b in zip(x, y))
        hit = self._lookup.get(key)
        if hit is None:
            return 0.0
        k, sign = hit
        base = x if sign > 0 else y
        return float(self.cond[(k,) + base])

    def directed_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """``(J, W)`` with ``W[j][x] = omega({x, x + J[j]})`` on the full torus."""
        J = self.jump_range
        W = np.empty((len(J),) + self.shape)
        index = {tuple(z): k for k, z in enumerate(self.offsets)}
        for j, z in enumerate(J):
            z = tuple(int(c) for c in z)
            if z in index:
                W[j] = self.cond[index[z]]
            else:
                k = index[tuple(-c for c in z)]
                # edge {x, x - z_k} is stored at x - z_k
                W[j] = np.roll(self.cond[k], shift=tuple(-c for c in z), axis=tuple(range(self.d)))
        return J, W

    def mu_field(self) -> np.ndarray:
        """Weighted degree at every vertex."""
        mu = np.zeros(self.shape)
        axes = tuple(range(self.d))
        for k, z in enumerate(self.offsets):
            mu += self.cond[k]
            mu += np.roll(self.cond[k], shift=tuple(int(c) for c in z), axis=axes)
        return mu

    def neighbor_table(self):
        """Flat-site tables ``(J, nbr, w)`` with ``nbr[s, j]`` the site reached by offset ``J[j]``."""
        J, W = self.directed_weights()
        S = self.n_sites
        coords = np.array(np.unravel_index(np.arange(S), self.shape))  # (d, S)
        nbr = np.empty((S, len(J)), dtype=np.int64)
        for j, z in enumerate(J):
            nbr[:, j] = np.ravel_multi_index(tuple((coords + z[:, None]) % self.L), self.shape)
        w = W.reshape(len(J), S).T.copy()
        return J, nbr, w

    def edges(self):
        """Iterate ``(x, y, omega)`` over stored edges, ``y = x + z`` unwrapped."""
        for k, z in enumerate(self.offsets):
            for x in itertools.product(range(self.L), repeat=self.d):
                yield x, tuple(a + b for a, b in zip(x, z)), float(self.cond[(k,) + x])

    # -- serialization

    def header(self) -> dict:
        return {
            "schema_version": ENV_SCHEMA_VERSION,
            "d": self.d,
            "L": self.L,
            "law": law_to_dict(self.law) if self.law is not None else None,
            "law_tag": self.law_tag,
            "seed": self.seed,
            "offsets": self.offsets.tolist(),
            "dtype": "<f8",
            "shape": list(self.cond.shape),
            "provenance": self.provenance,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
        body = self.cond.astype("<f8", copy=False).tobytes(order="C")
        return ENV_MAGIC + struct.pack("<I", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Environment":
        if blob[:8] != ENV_MAGIC:
            raise ValueError("not an environment file (bad magic)")
        (hlen,) = struct.unpack("<I", blob[8:12])
        head = json.loads(blob[12 : 12 + hlen])
        if head.get("schema_version") != ENV_SCHEMA_VERSION:
            raise ValueError(f"unsupported environment schema {head.get('schema_version')}")
        body = np.frombuffer(blob[12 + hlen :], dtype="<f8")
        cond = body.reshape(head["shape"]).astype(np.float64)
        law = law_from_dict(head["law"]) if head["law"] is not None else None
        return cls(
            d=head["d"],
            L=head["L"],
            offsets=np.array(head["offsets"], dtype=np.int64).reshape(-1, head["d"]),
            cond=cond,
            law=law,
            seed=head["seed"],
            provenance=head.get("provenance", {}),
        )

    def save(self, path) -> str:
        blob = self.to_bytes()
        Path(path).write_bytes(blob)
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def load(cls, path) -> "Environment":
        return cls.from_bytes(Path(path).read_bytes())

    def content_hash(self) -> str:
        """sha256 of geometry, law and conductances (provenance excluded)."""
        h = hashlib.sha256()
        meta = {k: v for k, v in self.header().items() if k != "provenance"}
        h.update(json.dumps(meta, sort_keys=True).encode())
        h.update(self.cond.astype("<f8", copy=False).tobytes())
        return h.hexdigest()

    def bit_equal(self, other: "Environment") -> bool:
        return (
            self.d == other.d
            and self.L == other.L
            and np.array_equal(self.offsets, other.offsets)
            and self.cond.tobytes() == other.cond.tobytes()
        )


def gen_env(law, d: int, L: int, seed: int) -> Environment:
    """Sample a periodic environment; deterministic in ``(law, d, L, seed)``."""
    if d not in (2, 3):
        raise ParameterError("d", f"dimension must be 2 or 3, got {d}")
    if int(L) != L or L < 4 or L % 2:
        raise ParameterError("L", f"side length must be an even integer >= 4, got {L}")
    seed = check_seed(seed)
    law.validate(d)
    rng = rng_from_seed(seed)
    shape = (L,) * d

    if isinstance(law, LongRangePoly):
        if 2 * law.R >= L:
            raise ParameterError("R", f"truncation radius {law.R} too large for L = {L}; need 2R < L")
        offsets = ball_offsets(d, law.R)
    else:
        offsets = nearest_neighbor_offsets(d)
    P = len(offsets)
    full = (P,) + shape

    if isinstance(law, Constant):
        cond = np.full(full, float(law.c))
    elif isinstance(law, UniformInterval):
        cond = rng.uniform(law.a, law.b, size=full)
    elif isinstance(law, PercolationWeighted):
        is_open = rng.random(full) < law.p
        cond = np.where(is_open, rng.uniform(law.a, law.b, size=full), 0.0)
    elif isinstance(law, LineModel):
        cond = np.empty(full)
        for k, z in enumerate(offsets):
            axis = int(np.flatnonzero(z)[0])
            lines = rng.uniform(law.a, law.b, size=(L,) * (d - 1))
            cond[k] = np.expand_dims(lines, axis)
    elif isinstance(law, LongRangePoly):
        norms = np.sqrt((offsets.astype(float) ** 2).sum(axis=1))
        scale = norms ** (-law.alpha)
        cond = rng.uniform(law.a, law.b, size=full) * scale.reshape((P,) + (1,) * d)
    else:
        raise ParameterError("law", f"unsupported law {law!r}")

    return Environment(d=d, L=L, offsets=offsets, cond=cond, law=law, seed=seed)


def mu(env, x) -> float:
    """Weighted degree ``mu(x)``: sum of the conductances incident to ``x``."""
    x = env.wrap(x)
    total = 0.0
    for k, z in enumerate(env.offsets):
        total += env.cond[(k,) + x]
        total += env.cond[(k,) + env.wrap(np.subtract(x, z))]
    return float(total)


class EnvironmentView:
    """Read-only translate ``tau_z omega`` of a base environment."""

    def __init__(self, base: Environment, z):
        self.base = base
        self.z = tuple(int(c) % base.L for c in z)

    d = property(lambda self: self.base.d)
    L = property(lambda self: self.base.L)
    offsets = property(lambda self: self.base.offsets)

    def conductance(self, x, y) -> float:
        return self.base.conductance(np.add(x, self.z), np.add(y, self.z))

    def shift(self, w) -> "EnvironmentView":
        return EnvironmentView(self.base, np.add(self.z, w))

    def materialize(self) -> Environment:
        axes = tuple(range(1, self.d + 1))
        cond = np.roll(self.base.cond, shift=tuple(-c for c in self.z), axis=axes)
        return Environment(self.d, self.L, self.base.offsets, cond, self.base.law, self.base.seed)


def shift_view(env, z) -> EnvironmentView:
    if isinstance(env, EnvironmentView):
        return env.shift(z)
    return EnvironmentView(env, z)


# --------------------------------------------------------------------------
# clusters


@dataclass
class ClusterLabels:
    label: np.ndarray  # per-vertex cluster id, -1 where mu = 0
    giant_id: int
    giant_size: int
    sizes: np.ndarray

    @property
    def giant_mask(self) -> np.ndarray:
        return self.label == self.giant_id

    def giant_sites(self) -> np.ndarray:
        """Flat indices of the giant cluster, ascending."""
        return np.flatnonzero(self.giant_mask.ravel())


@numba.njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@numba.njit(cache=True)
def _union_find(n, src, dst):
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for e in range(src.shape[0]):
        a = _find(parent, src[e])
        b = _find(parent, dst[e])
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    for i in range(n):
        parent[i] = _find(parent, i)
    return parent


def positive_edges(env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """Flat endpoint arrays of all edges with strictly positive conductance."""
    S = env.n_sites
    coords = np.array(np.unravel_index(np.arange(S), env.shape))
    src, dst = [], []
    for k, z in enumerate(env.offsets):
        w = env.cond[k].ravel()
        on = np.flatnonzero(w > 0)
        y = np.ravel_multi_index(tuple((coords[:, on] + z[:, None]) % env.L), env.shape)
        src.append(on)
        dst.append(y)
    return np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64)


def clusters(env: Environment) -> ClusterLabels:
    """Label connected components of the positive-conductance graph.

    Cluster ids are assigned in order of each cluster's lowest flat vertex
    index, so the largest-cluster tie-break (lowest id) picks the cluster with
    the lexicographically smallest representative.
    """
    S = env.n_sites
    src, dst = positive_edges(env)
    roots = _union_find(S, src, dst)
    active = env.mu_field().ravel() > 0
    label = np.full(S, -1, dtype=np.int64)
    # first occurrence of each root in flat order defines the id order
    uniq, first = np.unique(roots[active], return_index=True)
    order = np.argsort(first)
    remap = np.full(S, -1, dtype=np.int64)
    remap[uniq[order]] = np.arange(len(uniq))
    label[active] = remap[roots[active]]
    sizes = np.bincount(label[active], minlength=len(uniq)) if len(uniq) else np.zeros(0, dtype=np.int64)
    if len(sizes) == 0:
        return ClusterLabels(label.reshape(env.shape), -1, 0, sizes)
    giant = int(np.argmax(sizes))  # argmax returns the lowest id among ties
    return ClusterLabels(label.reshape(env.shape), giant, int(sizes[giant]), sizes)
