"""Command-line experiment runner.

    hamlearn run --config sweep.json [--jobs N] [--out DIR]
    hamlearn table --results DIR [--format csv|pretty]
    hamlearn check

``run`` sweeps every (system, kernel, method, sparsity) cell of a JSON
config and writes ``errors.csv``, per-seed trajectory dumps and
``manifest.json`` into the output directory.  Exit codes: 0 success,
1 config error, 2 partial failure, 3 total failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import platform
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .benchmarks import METHODS, RE_UNITS, CellResult, generate_dataset, run_seed, seeds_for
from .dynamics import IntegratorOptions
from .kernels import ContractError, KernelSpec
from .one_step import GRADIENT_MODES, OneStepOptions
from .systems import SYSTEMS
from .two_step import Ridges

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "run",
    "render_table",
    "rows_from_table_csv",
    "read_errors",
    "main",
    "ERRORS_HEADER",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_PARTIAL",
    "EXIT_TOTAL",
]

log = logging.getLogger("hamlearn")

ERRORS_HEADER = ["system", "kernel", "method", "sparsity", "variable", "phase", "mean", "std", "n_seeds", "n_diverged"]
EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_TOTAL = 0, 1, 2, 3
SEED_OFFSET_ENV = "HAMLEARN_SEED_OFFSET"

_KERNEL_ALIASES = {"gaussian": "gaussian_state", "poly": "separable_polynomial", "addpolygauss": "additive_poly_gaussian"}
_CONFIG_KEYS = {
    "systems", "kernels", "methods", "sparsities", "seeds", "ridges", "integrator", "output_dir",
    "gradient_mode", "re_unit", "N", "t_final", "save_trajectories",
}
_INTEGRATOR_KEYS = {"rtol", "atol", "max_step", "blowup"}
_SAFE_NAME = re.compile(r"^[A-Za-z0-9_.\-]+$")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``line`` points into the config file when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = source or "<config>"
        prefix = f"{where}:{line}: " if line is not None else f"{where}: "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class ExperimentConfig:
    systems: tuple
    kernels: dict  # system id -> tuple of KernelSpec
    methods: tuple
    sparsities: tuple
    seeds: tuple
    ridges: Ridges = Ridges()
    integrator: IntegratorOptions = IntegratorOptions()
    output_dir: str = "results"
    gradient_mode: str = "full"
    re_unit: str = "percent"
    N: int = 200
    t_final: float = 40.0
    save_trajectories: bool = True
    seed_offset: int = 0

    def cells(self) -> list:
        """Sweep cells in deterministic config order."""
        out = []
        for system in self.systems:
            for kernel, method, sparsity in itertools.product(self.kernels[system], self.methods, self.sparsities):
                out.append((system, kernel, method, sparsity))
        return out

    def run_seeds(self) -> list:
        return [s + self.seed_offset for s in self.seeds]

    def to_dict(self) -> dict:
        integ = self.integrator.to_dict()
        if math.isinf(integ["max_step"]):
            integ["max_step"] = None
        return {
            "systems": list(self.systems),
            "kernels": {s: [k.to_dict() for k in ks] for s, ks in self.kernels.items()},
            "methods": list(self.methods),
            "sparsities": list(self.sparsities),
            "seeds": list(self.seeds),
            "ridges": self.ridges.to_dict(),
            "integrator": integ,
            "output_dir": self.output_dir,
            "gradient_mode": self.gradient_mode,
            "re_unit": self.re_unit,
            "N": self.N,
            "t_final": self.t_final,
            "save_trajectories": self.save_trajectories,
            "seed_offset": self.seed_offset,
        }


# ---------------------------------------------------------------- config


def _key_line(text: str | None, key: str) -> int | None:
    if not text:
        return None
    pat = re.compile(r'"' + re.escape(key) + r'"\s*:')
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return i
    return None


def _nonempty_list(raw, key, err):
    val = raw.get(key)
    if not isinstance(val, list):
        raise err(f"'{key}' must be a list", key)
    if not val:
        raise err(f"'{key}' must not be empty", key)
    return val


def _kernel_spec(desc, err, key="kernels") -> KernelSpec:
    try:
        if isinstance(desc, str):
            return KernelSpec(_KERNEL_ALIASES.get(desc, desc))
        if isinstance(desc, dict):
            d = dict(desc)
            if "family" in d:
                d["family"] = _KERNEL_ALIASES.get(d["family"], d["family"])
            return KernelSpec.from_dict(d)
    except (ContractError, TypeError, ValueError) as exc:
        raise err(f"bad kernel descriptor {desc!r}: {exc}", key) from None
    raise err(f"kernel descriptor must be a family name or an object, got {desc!r}", key)


def _seed_offset(env) -> int:
    raw = env.get(SEED_OFFSET_ENV, "")
    if raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_OFFSET_ENV} must be an integer, got {raw!r}") from None


def parse_config(raw, text: str | None = None, source: str | None = None, env=None) -> ExperimentConfig:
    """Validate a decoded JSON object into an :class:`ExperimentConfig`."""

    def err(msg, key=None):
        return ConfigError(msg, _key_line(text, key) if key else None, source)

    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", 1 if text else None, source)
    unknown = sorted(set(raw) - _CONFIG_KEYS)
    if unknown:
        raise err(f"unknown key {unknown[0]!r}; expected some of {sorted(_CONFIG_KEYS)}", unknown[0])

    systems = _nonempty_list(raw, "systems", err)
    for s in systems:
        if s not in SYSTEMS:
            raise err(f"unknown system {s!r}; expected one of {sorted(SYSTEMS)}", "systems")
    if len(set(systems)) != len(systems):
        raise err("duplicate entry in 'systems'", "systems")

    kraw = raw.get("kernels")
    if isinstance(kraw, dict):
        extra = sorted(set(kraw) - set(systems))
        if extra:
            raise err(f"kernels given for system {extra[0]!r} which is not in 'systems'", "kernels")
        per_system = {s: kraw.get(s) for s in systems}
    else:
        per_system = {s: kraw for s in systems}
    kernels = {}
    for s, descs in per_system.items():
        if not isinstance(descs, list) or not descs:
            raise err(f"'kernels' must give a non-empty list for {s!r}", "kernels")
        specs = tuple(_kernel_spec(d, err) for d in descs)
        allowed = SYSTEMS[s].kernels
        for k in specs:
            if k.family not in allowed:
                raise err(f"kernel family {k.family!r} is not valid for {s}; allowed: {list(allowed)}", "kernels")
        if len({k.name for k in specs}) != len(specs):
            raise err(f"kernel families repeat for {s}", "kernels")
        kernels[s] = specs

    methods = _nonempty_list(raw, "methods", err)
    for mth in methods:
        if mth not in METHODS:
            raise err(f"unknown method {mth!r}; expected one of {list(METHODS)}", "methods")
    if len(set(methods)) != len(methods):
        raise err("duplicate entry in 'methods'", "methods")

    sparsities = _nonempty_list(raw, "sparsities", err)
    for a in sparsities:
        if isinstance(a, bool) or not isinstance(a, (int, float)) or not 0 <= a < 1:
            raise err(f"sparsity must be a number in [0, 1), got {a!r}", "sparsities")
    sparsities = [float(a) for a in sparsities]
    if len(set(sparsities)) != len(sparsities):
        raise err("duplicate entry in 'sparsities'", "sparsities")

    seeds = raw.get("seeds", 10)
    if isinstance(seeds, bool):
        raise err("'seeds' must be a count or a list of integers", "seeds")
    if isinstance(seeds, int):
        if seeds < 1:
            raise err("'seeds' count must be at least 1", "seeds")
        seeds = list(range(seeds))
    elif isinstance(seeds, list):
        if not seeds:
            raise err("'seeds' must not be empty", "seeds")
        if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
            raise err("'seeds' list must hold nonnegative integers", "seeds")
        if len(set(seeds)) != len(seeds):
            raise err("duplicate entry in 'seeds'", "seeds")
    else:
        raise err("'seeds' must be a count or a list of integers", "seeds")

    rraw = raw.get("ridges", {})
    if not isinstance(rraw, dict):
        raise err("'ridges' must be an object", "ridges")
    bad = sorted(set(rraw) - set(Ridges().to_dict()))
    if bad:
        raise err(f"unknown ridge {bad[0]!r}; expected some of {sorted(Ridges().to_dict())}", bad[0])
    try:
        ridges = Ridges(**{k: float(v) for k, v in rraw.items()})
    except (TypeError, ValueError) as exc:
        raise err(f"bad ridges: {exc}", "ridges") from None

    iraw = raw.get("integrator", {})
    if not isinstance(iraw, dict):
        raise err("'integrator' must be an object", "integrator")
    bad = sorted(set(iraw) - _INTEGRATOR_KEYS)
    if bad:
        raise err(f"unknown integrator option {bad[0]!r}; expected some of {sorted(_INTEGRATOR_KEYS)}", bad[0])
    try:
        opts = {k: (math.inf if v is None and k == "max_step" else float(v)) for k, v in iraw.items()}
        integrator = IntegratorOptions(**opts)
    except (TypeError, ValueError) as exc:
        raise err(f"bad integrator options: {exc}", "integrator") from None

    output_dir = raw.get("output_dir", "results")
    if not isinstance(output_dir, str) or not output_dir:
        raise err("'output_dir' must be a non-empty string", "output_dir")
    gradient_mode = raw.get("gradient_mode", "full")
    if gradient_mode not in GRADIENT_MODES:
        raise err(f"'gradient_mode' must be one of {list(GRADIENT_MODES)}", "gradient_mode")
    re_unit = raw.get("re_unit", "percent")
    if re_unit not in RE_UNITS:
        raise err(f"'re_unit' must be one of {sorted(RE_UNITS)}", "re_unit")
    N = raw.get("N", 200)
    if isinstance(N, bool) or not isinstance(N, int) or N < 2:
        raise err("'N' must be an integer >= 2", "N")
    t_final = raw.get("t_final", 40.0)
    if isinstance(t_final, bool) or not isinstance(t_final, (int, float)) or not t_final > 0:
        raise err("'t_final' must be a positive number", "t_final")
    save = raw.get("save_trajectories", True)
    if not isinstance(save, bool):
        raise err("'save_trajectories' must be true or false", "save_trajectories")

    return ExperimentConfig(
        systems=tuple(systems), kernels=kernels, methods=tuple(methods), sparsities=tuple(sparsities),
        seeds=tuple(seeds), ridges=ridges, integrator=integrator, output_dir=output_dir,
        gradient_mode=gradient_mode, re_unit=re_unit, N=N, t_final=float(t_final), save_trajectories=save,
        seed_offset=_seed_offset(os.environ if env is None else env),
    )


def load_config(path, env=None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, str(path)) from None
    return parse_config(raw, text, str(path), env)


# ------------------------------------------------------------------- run


def _fmt(x) -> str:
    """Full-precision text for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _safe_path(out: Path, name: str) -> Path:
    if not _SAFE_NAME.match(name):
        raise ValueError(f"refusing unsafe file name {name!r}")
    path = out / name
    if path.resolve().parent != out.resolve():
        raise ValueError(f"{name!r} would land outside {out}")
    return path


def traj_filename(system, kernel_name, method, sparsity, seed) -> str:
    return f"traj_{system}_{kernel_name}_{method}_{float(sparsity)!r}_{seed}.csv"


def _write_trajectory(path: Path, traj: np.ndarray, m: int):
    header = ["t"] + [f"truth_{i}" for i in range(1, 2 * m + 1)] + [f"pred_{i}" for i in range(1, 2 * m + 1)]
    header.append("observed_flag")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in traj:
        w.writerow([_fmt(v) for v in row[:-1]] + [str(int(row[-1]))])
    path.write_text(buf.getvalue())


def _run_cell(job):
    """Worker: one sweep cell.  Trajectory files are written here, one per seed."""
    cfg_dict, system, kernel_dict, method, sparsity, out = job
    kernel = KernelSpec.from_dict(kernel_dict)
    ridges = Ridges(**cfg_dict["ridges"])
    integ = dict(cfg_dict["integrator"])
    integ["max_step"] = math.inf if integ["max_step"] is None else integ["max_step"]
    integrator = IntegratorOptions(**integ)
    one = OneStepOptions(gradient_mode=cfg_dict["gradient_mode"])
    out = Path(out)
    t0 = time.perf_counter()
    seeds_info = []
    results = []
    seeds = [s + cfg_dict["seed_offset"] for s in cfg_dict["seeds"]]
    for seed in seeds_for(sparsity, seeds):
        ds = generate_dataset(system, N=cfg_dict["N"], t_final=cfg_dict["t_final"], sparsity=sparsity, seed=seed)
        res = run_seed(ds, kernel, method, ridges, integrator, one, keep_trajectory=cfg_dict["save_trajectories"])
        results.append(res)
        info = {"seed": seed, "failed": res.failed, "diverged": res.diverged, "message": res.message,
                "wall_time_s": res.wall_time}
        if res.optimizer is not None:
            info["optimizer"] = res.optimizer
        seeds_info.append(info)
        if res.trajectory is not None:
            _write_trajectory(_safe_path(out, traj_filename(system, kernel.name, method, sparsity, seed)),
                              res.trajectory, ds.m)
    cell = CellResult(system, kernel, method, float(sparsity), results)
    rows = [r.__dict__ for r in cell.rows(cfg_dict["re_unit"])] if cell.succeeded else []
    return {
        "system": system, "kernel": kernel.name, "method": method, "sparsity": float(sparsity),
        "rows": rows, "seeds": seeds_info, "wall_time_s": time.perf_counter() - t0,
        "status": "ok" if len(cell.succeeded) == len(results) else ("partial" if cell.succeeded else "failed"),
    }


def write_errors(path: Path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ERRORS_HEADER)
    for r in rows:
        w.writerow([r["system"], r["kernel"], r["method"], _fmt(r["sparsity"]), r["variable"], r["phase"],
                    _fmt(r["mean"]), _fmt(r["std"]), _fmt(r["n_seeds"]), _fmt(r["n_diverged"])])
    path.write_text(buf.getvalue())


def run(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> int:
    """Execute every cell and persist results; returns the process exit code."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = config.to_dict()
    cells = config.cells()
    job_list = [(cfg_dict, s, k.to_dict(), m, a, str(out)) for s, k, m, a in cells]
    t0 = time.perf_counter()
    if jobs > 1 and len(job_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, job_list))
    else:
        results = []
        for job in job_list:
            log.info("cell %s/%s/%s/%s", job[1], job[2]["family"], job[3], job[4])
            results.append(_run_cell(job))
    wall = time.perf_counter() - t0

    # single aggregator, config order, independent of completion order
    rows = [r for cell in results for r in cell["rows"]]
    write_errors(_safe_path(out, "errors.csv"), rows)

    failures = []
    for cell in results:
        for s in cell["seeds"]:
            if s["failed"]:
                failures.append({k: cell[k] for k in ("system", "kernel", "method", "sparsity")}
                                | {"seed": s["seed"], "message": s["message"]})
    n_failed_cells = sum(c["status"] == "failed" for c in results)
    if results and n_failed_cells == len(results):
        code = EXIT_TOTAL
    elif failures:
        code = EXIT_PARTIAL
    else:
        code = EXIT_OK
    manifest = {
        "config": cfg_dict,
        "versions": {"hamlearn": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "re_unit": config.re_unit,
        "wall_time_s": wall,
        "jobs": jobs,
        "cells": [{k: v for k, v in c.items() if k != "rows"} for c in results],
        "failures": failures,
        "exit_code": code,
    }
    _safe_path(out, "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=False) + "\n")
    return code


# ----------------------------------------------------------------- table

_COLUMNS = [(m, ph) for m in METHODS for ph in ("interpolation", "extrapolation")]


def read_errors(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ERRORS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            r = dict(r)
            r["sparsity"] = float(r["sparsity"])
            r["mean"] = float(r["mean"])
            r["std"] = float(r["std"])
            r["n_seeds"] = int(r["n_seeds"])
            r["n_diverged"] = int(r["n_diverged"])
            rows.append(r)
    return rows


def _blocks(rows):
    blocks = {}
    for r in rows:
        key = (r["system"], r["kernel"], r["variable"])
        blocks.setdefault(key, {}).setdefault(r["sparsity"], {})[(r["method"], r["phase"])] = r
    return blocks


def _table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["system", "kernel", "variable", "sparsity"]
    for m, ph in _COLUMNS:
        header += [f"{m}_{ph}_mean", f"{m}_{ph}_std"]
    for m in METHODS:
        header += [f"{m}_n_seeds", f"{m}_n_diverged"]
    w.writerow(header)
    for (system, kernel, variable), by_sp in _blocks(rows).items():
        for sp in sorted(by_sp):
            cells = by_sp[sp]
            line = [system, kernel, variable, _fmt(sp)]
            for key in _COLUMNS:
                r = cells.get(key)
                line += [_fmt(r["mean"]), _fmt(r["std"])] if r else ["", ""]
            for m in METHODS:
                r = cells.get((m, "interpolation")) or cells.get((m, "extrapolation"))
                line += [_fmt(r["n_seeds"]), _fmt(r["n_diverged"])] if r else ["", ""]
            w.writerow(line)
    return buf.getvalue()


def rows_from_table_csv(text: str) -> list:
    """Parse ``table --format csv`` output back into errors-schema rows."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        for m, ph in _COLUMNS:
            if rec[f"{m}_{ph}_mean"] == "":
                continue
            rows.append({
                "system": rec["system"], "kernel": rec["kernel"], "method": m, "sparsity": float(rec["sparsity"]),
                "variable": rec["variable"], "phase": ph, "mean": float(rec[f"{m}_{ph}_mean"]),
                "std": float(rec[f"{m}_{ph}_std"]), "n_seeds": int(rec[f"{m}_n_seeds"]),
                "n_diverged": int(rec[f"{m}_n_diverged"]),
            })
    return rows


def _pm(r) -> str:
    return "—" if r is None else f"{r['mean']:.6g} ± {r['std']:.6g}"


def _table_pretty(rows, unit: str | None) -> str:
    lines = []
    heads = ["sparsity"] + [f"{m} {ph[:6]}." for m, ph in _COLUMNS]
    for (system, kernel, variable), by_sp in _blocks(rows).items():
        body = [[f"{sp:.6g}"] + [_pm(by_sp[sp].get(key)) for key in _COLUMNS] for sp in sorted(by_sp)]
        widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(heads)]
        title = f"{system}  kernel={kernel}  variable={variable}"
        if unit:
            title += f"  (relative error, {unit})"
        lines.append(title)
        lines.append("  ".join(h.ljust(w) for h, w in zip(heads, widths)))
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
        lines.append("")
    return "\n".join(lines)


def render_table(results_dir, fmt: str = "pretty") -> str:
    results_dir = Path(results_dir)
    rows = read_errors(results_dir / "errors.csv")
    if fmt == "csv":
        return _table_csv(rows)
    unit = None
    manifest = results_dir / "manifest.json"
    if manifest.exists():
        try:
            unit = json.loads(manifest.read_text()).get("re_unit")
        except (json.JSONDecodeError, AttributeError):
            unit = None
    return _table_pretty(rows, unit)


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hamlearn", description="Kernel Hamiltonian identification experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a sweep from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--jobs", type=int, default=1, help="parallel worker processes across cells")
    p_run.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p_tab = sub.add_parser("table", help="render errors.csv as tables")
    p_tab.add_argument("--results", required=True)
    p_tab.add_argument("--format", choices=("pretty", "csv"), default="pretty")
    sub.add_parser("check", help="run the property suite on small instances")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        if args.jobs < 1:
            print("error: --jobs must be at least 1", file=sys.stderr)
            return EXIT_CONFIG
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        code = run(cfg, args.out, args.jobs)
        if code != EXIT_OK:
            print(f"finished with failures (exit {code}); see manifest.json", file=sys.stderr)
        return code
    if args.command == "table":
        try:
            sys.stdout.write(render_table(args.results, args.format))
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    from .checks import run_checks

    ok = True
    for res in run_checks():
        print(res.line(), flush=True)
        ok &= res.passed
    return EXIT_OK if ok else EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
