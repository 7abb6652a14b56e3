"""``kpzlab`` command line.

    kpzlab <subcommand> [--config FILE] [--seed U64] [--out DIR] [--workers N] [--profile quick|default|paper]
    kpzlab rerun MANIFEST [--out DIR] [--workers N]

Each run writes one CSV per table and ``manifest.json`` into ``--out``.  The
exit code is 0 exactly when every gating verdict passes.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time

from . import __version__
from .experiments import PROFILES, RUNNERS, ConfigError, Report, resolve_params, run

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SEED_ENV = "KPZLAB_SEED"
DEFAULT_SEED = 20240101
U64_MAX = 2 ** 64 - 1


def _atomic_write(path: str, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def table_bytes(table) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(table.header)
    w.writerows(table.rows)
    return buf.getvalue().encode("utf-8")


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def resolve_seed(cli_seed: int | None) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            seed = int(env.strip(), 0)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    else:
        seed = DEFAULT_SEED if cli_seed is None else cli_seed
    if not 0 <= seed <= U64_MAX:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")
    return seed


def write_outputs(out_dir: str, subcommand: str, profile: str, params: dict, seed: int, workers: int,
                  report: Report, wall: float) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for t in report.tables:
        data = table_bytes(t)
        name = f"{t.name}.csv"
        _atomic_write(os.path.join(out_dir, name), data)
        files[t.name] = {"file": name, "sha256": hashlib.sha256(data).hexdigest(), "rows": len(t.rows)}
    manifest = {
        "subcommand": subcommand,
        "profile": profile,
        "params": params,
        "seed": seed,
        "workers": workers,
        "version": __version__,
        "seeds": report.seeds,
        "wall_clock_seconds": round(wall, 3),
        "verdicts": [{"name": v.name, "passed": v.passed, "gating": v.gating, "detail": v.detail}
                     for v in report.verdicts],
        "passed": report.passed,
        "notes": report.notes,
        "tables": files,
    }
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return manifest


def _print_summary(subcommand: str, report: Report, out_dir: str):
    for v in report.verdicts:
        tag = "PASS" if v.passed else "FAIL"
        gate = "" if v.gating else " (non-gating)"
        print(f"[{tag}] {subcommand}: {v.name}{gate} {v.detail}".rstrip())
    for n in report.notes:
        print(f"note: {n}")
    print(f"outputs in {out_dir}")


def execute(subcommand: str, params: dict, seed: int, workers: int, out_dir: str, profile: str) -> tuple:
    t0 = time.perf_counter()
    report = run(subcommand, params, seed, workers)
    manifest = write_outputs(out_dir, subcommand, profile, params, seed, workers, report,
                             time.perf_counter() - t0)
    return report, manifest


def rerun(manifest_path: str, out_dir: str | None, workers: int | None) -> int:
    with open(manifest_path) as fh:
        old = json.load(fh)
    sub = old["subcommand"]
    params = resolve_params(sub, old.get("profile", "default"), old["params"])
    out_dir = out_dir or os.path.join(os.path.dirname(os.path.abspath(manifest_path)), "rerun")
    report, new = execute(sub, params, int(old["seed"]), workers or int(old.get("workers", 1)), out_dir,
                          old.get("profile", "default"))
    _print_summary(sub, report, out_dir)
    mismatched = [k for k, v in old["tables"].items()
                  if new["tables"].get(k, {}).get("sha256") != v["sha256"]]
    if mismatched or set(new["tables"]) != set(old["tables"]):
        print(f"rerun differs from manifest in: {', '.join(sorted(mismatched)) or 'table set'}")
        return 1
    print("rerun reproduced every table byte-for-byte")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kpzlab", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"kpzlab {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML file of parameter overrides")
        sp.add_argument("--seed", type=int, help=f"root seed (unsigned 64-bit); {SEED_ENV} overrides it")
        sp.add_argument("--out", default=None, help="output directory (default: runs/<subcommand>)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--profile", choices=PROFILES, default="default")
    rp = sub.add_parser("rerun", help="repeat a run from its manifest and compare tables")
    rp.add_argument("manifest")
    rp.add_argument("--out", default=None)
    rp.add_argument("--workers", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.subcommand == "rerun":
            return rerun(args.manifest, args.out, args.workers)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        params = resolve_params(args.subcommand, args.profile, load_config(args.config))
        seed = resolve_seed(args.seed)
        out_dir = args.out or os.path.join("runs", args.subcommand)
        report, _ = execute(args.subcommand, params, seed, args.workers, out_dir, args.profile)
    except (ConfigError, tomllib.TOMLDecodeError, OSError) as exc:
        print(f"kpzlab: error: {exc}", file=sys.stderr)
        return 2
    _print_summary(args.subcommand, report, out_dir)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
