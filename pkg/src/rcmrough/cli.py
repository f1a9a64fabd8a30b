"""Command-line pipeline: gen-env -> solve -> simulate -> lift -> pvar -> diagnose -> verify.

Every command reads the same TOML config (``--config``, see
:mod:`rcmrough.config`) and writes into ``--out`` (default ``./run``)::

    env.rcmenv             environment (binary, hash-stamped header)
    field.json stats.json  corrector and homogenized matrices
    paths/                 walk CSVs + manifest.json
    lifts/                 level-2 CSVs + manifest.json
    pvar.csv pvar.json     variation norms per walk
    report.json report.csv diagnostics

Exit codes: 0 ok, 1 a verdict failed, 2 usage or config error, 3 integrity
error (an input does not match the config or its upstream artifact).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, config_hash, ensemble_spec, load, resolve, section_hash
from .corrector import CocycleField, sigma_gamma, solve_harmonic
from .diagnostics import DiagnosticsReport, recompute_verdicts, run_diagnostics
from .env import Environment, ParameterError, clusters, gen_env, law_from_dict
from .pvar import CapExceeded, pvar_capped, pvar_exact, rough_norm
from .roughpath import ito_lift, rescale, stratonovich_lift
from .seeding import SIM_STREAMS, stream_seed
from .walk import StartError, read_path_csv, simulate

MANIFEST_SCHEMA_VERSION = 1


class IntegrityError(RuntimeError):
    pass


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing input {path}; run the upstream command first")
    return path


# --------------------------------------------------------------------------
# loading with integrity checks


def _load_env(path, cfg) -> Environment:
    env = Environment.load(_need(path))
    want = cfg["env"]
    law = law_from_dict(want["law"])
    if (env.d, env.L, env.seed, env.law) != (want["d"], want["L"], want["seed"], law):
        raise IntegrityError(f"{path} was generated from a different env config (d, L, seed or law differ)")
    return env


def _load_field(path, env: Environment) -> CocycleField:
    fld = CocycleField.from_json(_need(path).read_text())
    if fld.env_hash != env.content_hash():
        raise IntegrityError(f"{path} was solved for a different environment")
    return fld


def _load_manifest(directory, kind) -> dict:
    path = _need(Path(directory) / "manifest.json")
    man = _read_json(path)
    if man.get("kind") != kind or man.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise IntegrityError(f"{path} is not a {kind} manifest")
    for item in man["files"]:
        f = Path(directory) / item["file"]
        if sha256_file(_need(f)) != item["sha256"]:
            raise IntegrityError(f"{f} does not match its manifest hash")
    return man


# --------------------------------------------------------------------------
# commands


def cmd_gen_env(cfg, out: Path, args) -> int:
    e = cfg["env"]
    env = gen_env(law_from_dict(e["law"]), e["d"], e["L"], e["seed"])
    env.provenance = {"tool": f"rcmrough {__version__}", "env_config_hash": section_hash(cfg, "env")}
    digest = env.save(out / "env.rcmenv")
    print(json.dumps({"env": str(out / "env.rcmenv"), "file_sha256": digest, "content_hash": env.content_hash()}))
    return 0


def cmd_solve(cfg, out: Path, args) -> int:
    env = _load_env(args.env or out / "env.rcmenv", cfg)
    labels = clusters(env)
    fld = solve_harmonic(env, labels, tol=cfg["solver"]["tol"], max_iters=cfg["solver"]["max_iters"])
    fld.provenance = {"solver_config_hash": section_hash(cfg, "env", "solver")}
    (out / "field.json").write_text(fld.to_json())
    st = sigma_gamma(env, labels, fld)
    st.provenance = {"env_hash": env.content_hash(), "field_sha256": sha256_file(out / "field.json"), "residual": fld.residual}
    _write_json(out / "stats.json", st.to_dict())
    print(json.dumps({"residual": fld.residual, "iterations": fld.solver_iters, "sigma2": st.sigma2.tolist(), "gamma": st.gamma.tolist()}))
    return 0


def cmd_simulate(cfg, out: Path, args) -> int:
    env = _load_env(args.env or out / "env.rcmenv", cfg)
    labels = clusters(env)
    sim = cfg["simulate"]
    pdir = out / "paths"
    pdir.mkdir(parents=True, exist_ok=True)
    files = []
    for w in range(sim["walks"]):
        seed = stream_seed(cfg["master_seed"], SIM_STREAMS + w)
        path = simulate(env, labels, sim["T"], seed, sim["start"])
        name = f"walk_{w:04d}.csv"
        path.to_csv(pdir / name)
        files.append({"file": name, "seed": seed, "start": list(path.start), "n_jumps": path.n_jumps, "sha256": sha256_file(pdir / name)})
    _write_json(pdir / "manifest.json", {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "paths",
        "env_hash": env.content_hash(),
        "config_hash": section_hash(cfg, "master_seed", "env", "simulate"),
        "horizon": sim["T"],
        "files": files,
    })
    print(json.dumps({"walks": len(files), "dir": str(pdir)}))
    return 0


def cmd_lift(cfg, out: Path, args) -> int:
    pdir = Path(args.paths or out / "paths")
    man = _load_manifest(pdir, "paths")
    lc = cfg["lift"]
    ldir = out / "lifts"
    ldir.mkdir(parents=True, exist_ok=True)
    kinds = ("ito", "stratonovich") if lc["kind"] == "both" else (lc["kind"],)
    files = []
    for item in man["files"]:
        base = rescale(read_path_csv(pdir / item["file"]), lc["n"])
        for kind in kinds:
            l2 = ito_lift(base) if kind == "ito" else stratonovich_lift(base)
            name = item["file"].replace(".csv", f"_{kind}.csv")
            l2.to_csv(ldir / name)
            files.append({"file": name, "source": item["file"], "kind": kind, "sha256": sha256_file(ldir / name)})
    _write_json(ldir / "manifest.json", {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "lifts",
        "config_hash": section_hash(cfg, "lift"),
        "paths_manifest_sha256": sha256_file(pdir / "manifest.json"),
        "env_hash": man["env_hash"],
        "n": lc["n"],
        "files": files,
    })
    print(json.dumps({"lifts": len(files), "dir": str(ldir)}))
    return 0


def cmd_pvar(cfg, out: Path, args) -> int:
    pdir = Path(args.paths or out / "paths")
    man = _load_manifest(pdir, "paths")
    pc = cfg["pvar"]
    p = pc["p"]
    rows = []
    for item in man["files"]:
        path = rescale(read_path_csv(pdir / item["file"]), cfg["lift"]["n"])
        row = {"walk": item["file"], "p": p, "level": pc["level"], "n_jumps": path.n_jumps}
        if pc["level"] == 1:
            if path.n_jumps <= pc["cap"]:
                val = pvar_exact(path, p, cap=pc["cap"]).value
                row.update(value=val, lower=val, upper=val, method="exact")
            else:
                res = pvar_capped(path, p)
                row.update(value=res.bounds[0], lower=res.bounds[0], upper=res.bounds[1], method="capped")
        else:
            try:
                val = rough_norm(ito_lift(path), p, pc["norm"]) if path.n_jumps <= pc["cap"] else None
            except CapExceeded:
                val = None
            row.update(value=val, lower=val, upper=val, method="exact" if val is not None else "cap_exceeded")
        rows.append(row)
    cols = ["walk", "p", "level", "n_jumps", "value", "lower", "upper", "method"]
    with open(out / "pvar.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join("" if r[c] is None else str(r[c]) for c in cols) + "\n")
    _write_json(out / "pvar.json", {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "pvar",
        "config_hash": section_hash(cfg, "lift", "pvar"),
        "paths_manifest_sha256": sha256_file(pdir / "manifest.json"),
        "env_hash": man["env_hash"],
        "csv_sha256": sha256_file(out / "pvar.csv"),
    })
    print(json.dumps({"rows": len(rows), "csv": str(out / "pvar.csv")}))
    return 0


def cmd_diagnose(cfg, out: Path, args) -> int:
    spec = ensemble_spec(cfg)
    if spec.mode == "quenched":
        env = _load_env(args.env or out / "env.rcmenv", cfg)
        fpath = Path(args.field or out / "field.json")
        fld = _load_field(fpath, env)
        rep = run_diagnostics(spec, env=env, fld=fld, checks=cfg["checks"], threads=args.threads)
        rep.provenance["field_sha256"] = sha256_file(fpath)
    else:
        rep = run_diagnostics(spec, checks=cfg["checks"], threads=args.threads)
    rep.provenance["config_hash"] = config_hash(cfg)
    rep.provenance["tool"] = f"rcmrough {__version__}"
    rep.save(out / "report.json")
    rep.to_csv(out / "report.csv")
    print(json.dumps({"report": str(out / "report.json"), "verdicts": rep.verdicts}))
    return 0


def cmd_verify(cfg, out: Path, args) -> int:
    rpath = Path(args.report or out / "report.json")
    try:
        rep = DiagnosticsReport.load(_need(rpath))
    except (KeyError, ValueError) as exc:
        raise IntegrityError(f"{rpath}: {exc}") from None
    prov = rep.provenance
    env_path = Path(args.env) if args.env else out / "env.rcmenv"
    field_path = Path(args.field) if args.field else out / "field.json"
    if prov.get("mode") == "quenched":
        if args.env or env_path.exists():
            env = Environment.load(_need(env_path))
            if env.content_hash() != prov.get("env_hash"):
                raise IntegrityError(f"{rpath} and {env_path} come from different environments")
            if args.field or field_path.exists():
                _load_field(field_path, env)
                if "field_sha256" in prov and sha256_file(field_path) != prov["field_sha256"]:
                    raise IntegrityError(f"{rpath} was computed from a different {field_path.name}")
    again = recompute_verdicts(rep)
    if again != {k: v for k, v in rep.verdicts.items() if k in again}:
        raise IntegrityError(f"{rpath}: stored verdicts disagree with its own summaries")
    required = cfg["verify"]["require"] or [k for k, v in again.items() if v is not None]
    missing = [k for k in required if k not in again]
    if missing:
        raise IntegrityError(f"{rpath} lacks required checks {missing}")
    failed = [k for k in required if again[k] is False]
    for k in required:
        print(f"{'PASS' if again[k] else ('SKIP' if again[k] is None else 'FAIL')} {k}")
    if failed:
        print("failed verdicts: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "gen-env": cmd_gen_env,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "lift": cmd_lift,
    "pvar": cmd_pvar,
    "diagnose": cmd_diagnose,
    "verify": cmd_verify,
}


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    def add_globals(p, suppress):
        default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--config", metavar="PATH", default=default(None), help="TOML run configuration")
        p.add_argument("--seed", metavar="U64", type=_u64, default=default(None), help="override master_seed")
        p.add_argument("--out", metavar="DIR", default=default("run"), help="artifact directory (default ./run)")
        p.add_argument("--threads", metavar="N", type=_positive, default=default(1), help="worker threads")

    parser = argparse.ArgumentParser(prog="rcmrough", description="Random conductance walks, rough lifts and diagnostics.")
    parser.add_argument("--version", action="version", version=f"rcmrough {__version__}")
    add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        add_globals(sp, suppress=True)
        if name in ("solve", "simulate", "diagnose", "verify"):
            sp.add_argument("--env", metavar="PATH", help="environment file (default OUT/env.rcmenv)")
        if name in ("diagnose", "verify"):
            sp.add_argument("--field", metavar="PATH", help="corrector field (default OUT/field.json)")
        if name in ("lift", "pvar"):
            sp.add_argument("--paths", metavar="DIR", help="path directory (default OUT/paths)")
        if name == "verify":
            sp.add_argument("report", nargs="?", help="report JSON (default OUT/report.json)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load(args.config, args.seed) if args.config else resolve({}, args.seed)
        if args.threads > 1:
            import numba

            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ParameterError, StartError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        if "schema" in str(exc) or "not a" in str(exc):
            print(f"integrity error: {exc}", file=sys.stderr)
            return 3
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
