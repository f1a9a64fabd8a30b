"""Run configuration: one TOML file, validated against a fixed schema.

Layout and defaults::

    master_seed = 0            # u64; --seed overrides
    checks = [...]             # subset of diagnostics.CHECKS, default all

    [env]
    d = 2
    L = 64
    seed = <master_seed>       # environment seed, defaults to master_seed
    [env.law]
    kind = "UniformInterval"   # Constant | UniformInterval | PercolationWeighted | LineModel | LongRangePoly
    a = 1.0
    b = 10.0

    [solver]
    tol = 1e-10
    max_iters = 20000

    [ensemble]
    K = 1000
    n_list = [25, 100, 400]
    T = 1.0
    p = 3.0
    mode = "quenched"          # or "annealed"
    v = [1, 0]                 # default e1
    delta = 0.5
    pvar_walks = 200
    batch_size = 5000
    start = "uniform"          # or "origin"

    [simulate]
    T = 100.0
    walks = 1
    start = "origin"

    [lift]
    kind = "both"              # ito | stratonovich | both
    n = 1.0                    # diffusive rescaling

    [pvar]
    p = 3.0
    level = 1                  # 1: path p-variation, 2: level-2 rough norm
    norm = "frobenius"         # or "spectral" (d = 2 only)
    cap = 20000

    [verify]
    require = []               # checks that must pass; empty = every judged check

Unknown keys anywhere are rejected; the error names the offending key path.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .diagnostics import CHECKS, EnsembleSpec
from .env import ParameterError, law_from_dict
from .seeding import check_seed

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


# key -> (type or tuple of types, default); nested dicts are sections
SCHEMA = {
    "master_seed": (int, 0),
    "checks": (list, list(CHECKS)),
    "env": {
        "d": (int, 2),
        "L": (int, 64),
        "seed": (int, None),
        "law": (dict, {"kind": "UniformInterval", "a": 1.0, "b": 10.0}),
    },
    "solver": {"tol": (float, 1e-10), "max_iters": (int, 20000)},
    "ensemble": {
        "K": (int, 1000),
        "n_list": (list, [25, 100, 400]),
        "T": (float, 1.0),
        "p": (float, 3.0),
        "mode": (str, "quenched"),
        "v": (list, None),
        "delta": (float, 0.5),
        "pvar_walks": (int, 200),
        "batch_size": (int, 5000),
        "start": (str, "uniform"),
    },
    "simulate": {"T": (float, 100.0), "walks": (int, 1), "start": (str, "origin")},
    "lift": {"kind": (str, "both"), "n": (float, 1.0)},
    "pvar": {"p": (float, 3.0), "level": (int, 1), "norm": (str, "frobenius"), "cap": (int, 20000)},
    "verify": {"require": (list, [])},
}

LAW_KEYS = {
    "Constant": {"c"},
    "UniformInterval": {"a", "b"},
    "PercolationWeighted": {"p", "a", "b"},
    "LineModel": {"a", "b"},
    "LongRangePoly": {"alpha", "R", "a", "b"},
}


def _typecheck(path, value, typ):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(path, f"expected {typ.__name__}, got {type(value).__name__}")
    return value


def _merge(schema, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a table")
    unknown = set(data) - set(schema)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(prefix + key, "unknown key")
    out = {}
    for key, spec in schema.items():
        path = prefix + key
        if isinstance(spec, dict):
            out[key] = _merge(spec, data.get(key, {}), path + ".")
        else:
            typ, default = spec
            out[key] = _typecheck(path, data[key], typ) if key in data else copy.deepcopy(default)
    return out


def _check_law(law: dict) -> dict:
    kind = law.get("kind")
    if kind not in LAW_KEYS:
        raise ConfigError("env.law.kind", f"unknown law {kind!r}; expected one of {sorted(LAW_KEYS)}")
    extra = set(law) - LAW_KEYS[kind] - {"kind"}
    if extra:
        raise ConfigError(f"env.law.{sorted(extra)[0]}", f"unknown key for {kind}")
    try:
        law_from_dict(law)
    except ParameterError as exc:
        raise ConfigError(f"env.law.{exc.field}", str(exc)) from None
    return law


def resolve(data: dict, seed: int | None = None) -> dict:
    """Fill defaults, validate, and apply a ``--seed`` override."""
    cfg = _merge(SCHEMA, data)
    if seed is not None:
        cfg["master_seed"] = seed
    try:
        check_seed(cfg["master_seed"], "master_seed")
    except (TypeError, ValueError) as exc:
        raise ConfigError("master_seed", str(exc)) from None
    if cfg["env"]["seed"] is None:
        cfg["env"]["seed"] = cfg["master_seed"]
    try:
        check_seed(cfg["env"]["seed"], "seed")
    except (TypeError, ValueError) as exc:
        raise ConfigError("env.seed", str(exc)) from None
    _check_law(cfg["env"]["law"])
    bad = [c for c in cfg["checks"] if c not in CHECKS]
    if bad:
        raise ConfigError("checks", f"unknown check {bad[0]!r}; expected a subset of {list(CHECKS)}")
    bad = [c for c in cfg["verify"]["require"] if c not in CHECKS]
    if bad:
        raise ConfigError("verify.require", f"unknown check {bad[0]!r}")
    if cfg["lift"]["kind"] not in ("ito", "stratonovich", "both"):
        raise ConfigError("lift.kind", "must be 'ito', 'stratonovich' or 'both'")
    if cfg["pvar"]["level"] not in (1, 2):
        raise ConfigError("pvar.level", "must be 1 or 2")
    if cfg["pvar"]["norm"] not in ("frobenius", "spectral"):
        raise ConfigError("pvar.norm", "must be 'frobenius' or 'spectral'")
    if cfg["simulate"]["start"] not in ("origin", "uniform"):
        raise ConfigError("simulate.start", "must be 'origin' or 'uniform'")
    try:
        ensemble_spec(cfg)
    except ValueError as exc:
        raise ConfigError("ensemble", str(exc)) from None
    return cfg


def load(path, seed: int | None = None) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not valid TOML: {exc}") from None
    return resolve(data, seed)


def config_hash(cfg: dict) -> str:
    blob = json.dumps({"schema_version": CONFIG_SCHEMA_VERSION, **cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def section_hash(cfg: dict, *keys) -> str:
    """Hash of selected top-level entries, so e.g. the environment file only
    depends on the ``env`` section."""
    part = {k: cfg[k] for k in keys}
    return hashlib.sha256(json.dumps(part, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def ensemble_spec(cfg: dict) -> EnsembleSpec:
    e = cfg["ensemble"]
    return EnsembleSpec(
        K=e["K"],
        n_list=tuple(e["n_list"]),
        T=e["T"],
        p=e["p"],
        master_seed=cfg["master_seed"],
        mode=e["mode"],
        law=law_from_dict(cfg["env"]["law"]),
        d=cfg["env"]["d"],
        L=cfg["env"]["L"],
        env_seed=cfg["env"]["seed"],
        v=None if e["v"] is None else tuple(float(x) for x in e["v"]),
        delta=e["delta"],
        pvar_walks=e["pvar_walks"],
        batch_size=e["batch_size"],
        start=e["start"],
        tol=cfg["solver"]["tol"],
        max_iters=cfg["solver"]["max_iters"],
    )
