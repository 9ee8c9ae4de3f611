"""Command-line front end: run experiment grids and write EOC tables.

::

    madmm solve --config example2.cfg --levels 4..6 --out results/
    madmm eoc --in results/records.json --out table.csv

A config file is plain ``key = value`` lines (``#`` starts a comment).
Recognised keys are listed in :data:`CONFIG_KEYS`; command-line flags and
``--set key=value`` override the file.

``MADMM_NUM_THREADS`` sets how many (algorithm, level) cells run
concurrently (default 1). Output is independent of it.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .admm import ALGORITHMS, ROW_FIELDS, RunRecord, SolverConfig, run
from .errors import MadmmError
from .fem import l2_error
from .problems import PROBLEMS, error_against_reference, get_problem, reference_solution

THREADS_ENV = "MADMM_NUM_THREADS"
TABLE_FIELDS = ("algorithm", "level", "h", "state_dofs", "control_dofs", "E", "EOC",
                "eta", "iterations", "termination")
RECORDS_SCHEMA = 1

CONFIG_KEYS = {
    "problem": "example1 or example2",
    "algorithm": "comma-separated subset of classical, inexact, madmm",
    "levels": "a..b or comma-separated target levels",
    "sigma": "penalty parameter (absolute)",
    "sigma_factor": "penalty as a multiple of alpha (used when sigma is absent)",
    "tau": "dual step length",
    "eta_tol": "termination tolerance",
    "max_iter": "iteration limit",
    "xi_scale": "scale c of the inexactness schedule c/(k+1)^p",
    "xi_power": "power p of the inexactness schedule",
    "start_level": "first level of the mADMM schedule",
    "eta_norm": "l2 or euclidean",
    "eta5": "plain, lumped or mass",
    "classical_tau": "dual step of the classical driver",
    "reference_level": "level of the data reference mesh (example2)",
    "error_reference_level": "level of the reference solve used for E when no exact control exists",
    "output_dir": "directory for results",
}

_FLOAT_KEYS = {"sigma", "sigma_factor", "tau", "eta_tol", "xi_scale", "xi_power", "classical_tau"}
_INT_KEYS = {"max_iter", "start_level", "reference_level", "error_reference_level"}


def parse_levels(text: str) -> list:
    """``"4..6"`` -> ``[4, 5, 6]``; ``"4,6"`` -> ``[4, 6]``."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        levels = list(range(int(lo), int(hi) + 1))
    else:
        levels = [int(t) for t in text.replace(" ", "").split(",") if t]
    return levels


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    problem: str = "example2"
    algorithms: tuple = ("madmm",)
    levels: tuple = (4, 5, 6)
    solver: dict = field(default_factory=dict)
    sigma_factor: Optional[float] = None
    reference_level: Optional[int] = None
    error_reference_level: Optional[int] = None
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if not self.algorithms:
            raise ValueError("at least one algorithm is required")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {alg!r}")
        if not self.levels:
            raise ValueError("levels must be nonempty")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if min(self.levels) < 0:
            raise ValueError("levels must be nonnegative")
        for alg in self.algorithms:
            self.solver_config(alg, 1.0)  # surfaces invalid solver options early

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        solver = {}
        kwargs = {}
        for key, value in values.items():
            if value is None:
                continue
            if key not in CONFIG_KEYS:
                raise ValueError(f"unknown key {key!r}")
            if key == "problem":
                kwargs["problem"] = str(value)
            elif key == "algorithm":
                kwargs["algorithms"] = tuple(a.strip() for a in str(value).split(",") if a.strip())
            elif key == "levels":
                kwargs["levels"] = tuple(parse_levels(value) if isinstance(value, str) else value)
            elif key == "output_dir":
                kwargs["output_dir"] = str(value)
            elif key == "sigma_factor":
                kwargs["sigma_factor"] = float(value)
            elif key in ("reference_level", "error_reference_level"):
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                solver[key] = float(value)
            elif key in _INT_KEYS:
                solver[key] = int(value)
            else:
                solver[key] = str(value)
        return cls(solver=solver, **kwargs)

    def problem_spec(self):
        if self.problem == "example2":
            ref = self.reference_level
            if ref is None:
                ref = max(9, max(self.levels) + 2)
            return get_problem("example2", reference_level=ref)
        return get_problem(self.problem)

    def solver_config(self, algorithm: str, alpha: float) -> SolverConfig:
        opts = dict(self.solver)
        if "sigma" not in opts and self.sigma_factor is not None:
            opts["sigma"] = self.sigma_factor * alpha
        return SolverConfig(algorithm=algorithm, **opts)


def compute_eoc(E1: float, E2: float, h1: float, h2: float) -> float:
    """``(log E1 - log E2) / (log h1 - log h2)``."""
    for name, v in (("E1", E1), ("E2", E2), ("h1", h1), ("h2", h2)):
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{name} must be positive and finite, got {v}")
    if h1 == h2:
        raise ValueError("h1 and h2 must differ")
    return (math.log(E1) - math.log(E2)) / (math.log(h1) - math.log(h2))


@dataclass
class EocRow:
    algorithm: str
    level: int
    h: float
    state_dofs: int
    control_dofs: int
    E: float
    EOC: Optional[float]
    eta: float
    iterations: int
    termination: str
    wall_time: float = 0.0


@dataclass
class Cell:
    """One (algorithm, level) solve with its error."""

    algorithm: str
    level: int
    h: float
    E: float
    record: Optional[RunRecord]
    error: str = ""

    @property
    def converged(self) -> bool:
        return self.record is not None and self.record.converged

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "level": self.level, "h": self.h, "E": self.E,
                "error": self.error,
                "record": None if self.record is None else self.record.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Cell":
        rec = None if d["record"] is None else RunRecord.from_dict(d["record"])
        return cls(d["algorithm"], int(d["level"]), float(d["h"]), float(d["E"]), rec,
                   d.get("error", ""))


@dataclass
class EocTable:
    rows: list

    @classmethod
    def from_cells(cls, cells) -> "EocTable":
        rows = []
        for alg in sorted({c.algorithm for c in cells}, key=ALGORITHMS.index):
            prev = None
            for c in sorted((c for c in cells if c.algorithm == alg), key=lambda c: c.level):
                rec = c.record
                eoc = None
                if prev is not None:
                    try:
                        eoc = compute_eoc(prev.E, c.E, prev.h, c.h)
                    except ValueError:
                        eoc = None
                last = rec.rows[-1] if rec is not None and rec.rows else None
                rows.append(EocRow(
                    algorithm=alg, level=c.level, h=c.h,
                    state_dofs=last.state_dofs if last else 0,
                    control_dofs=last.control_dofs if last else 0,
                    E=c.E, EOC=eoc,
                    eta=last.eta if last else float("nan"),
                    iterations=rec.iterations if rec is not None else 0,
                    termination=rec.termination if rec is not None else f"error: {c.error}",
                    wall_time=rec.wall_time if rec is not None else 0.0,
                ))
                prev = c
        return cls(rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_FIELDS)
            for r in self.rows:
                w.writerow([r.algorithm, r.level, _fmt(r.h), r.state_dofs, r.control_dofs,
                            _fmt(r.E), "" if r.EOC is None else _fmt(r.EOC), _fmt(r.eta),
                            r.iterations, r.termination])


def _fmt(x) -> str:
    return repr(float(x))


def write_iterations_csv(record: Optional[RunRecord], path) -> None:
    """Per-iteration rows in :data:`ROW_FIELDS` order (no timings)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in [] if record is None else record.rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v
                        for v in (getattr(r, f) for f in ROW_FIELDS)])


def emit(cells, out_dir, fmt: str = "all", metadata: Optional[dict] = None) -> list:
    """Write results below ``out_dir``.

    ``csv``: ``table.csv`` and ``iterations_<alg>_L<level>.csv``;
    ``json``: ``records.json``; ``plotdata``: whitespace-separated
    ``eta_<alg>_L<level>.dat`` (k, eta) and ``error_<alg>.dat`` (h, E).
    Wall times and timestamps go to ``metadata.json`` only.
    """
    if fmt not in ("csv", "json", "plotdata", "all"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    cells = sorted(cells, key=lambda c: (ALGORITHMS.index(c.algorithm), c.level))
    if fmt in ("csv", "all"):
        EocTable.from_cells(cells).write_csv(out / "table.csv")
        written.append(out / "table.csv")
        for c in cells:
            p = out / f"iterations_{c.algorithm}_L{c.level}.csv"
            write_iterations_csv(c.record, p)
            written.append(p)
    if fmt in ("json", "all"):
        p = out / "records.json"
        p.write_text(json.dumps({"schema_version": RECORDS_SCHEMA,
                                 "cells": [c.to_dict() for c in cells]}, indent=1))
        written.append(p)
    if fmt in ("plotdata", "all"):
        pd = out / "plotdata"
        pd.mkdir(exist_ok=True)
        for c in cells:
            p = pd / f"eta_{c.algorithm}_L{c.level}.dat"
            rows = [] if c.record is None else c.record.rows
            p.write_text("".join(f"{r.k} {_fmt(r.eta)}\n" for r in rows))
            written.append(p)
        for alg in dict.fromkeys(c.algorithm for c in cells):
            p = pd / f"error_{alg}.dat"
            p.write_text("".join(f"{_fmt(c.h)} {_fmt(c.E)}\n" for c in cells if c.algorithm == alg))
            written.append(p)
    meta = dict(metadata or {})
    meta["timings"] = [{"algorithm": c.algorithm, "level": c.level,
                        "wall_time": None if c.record is None else c.record.wall_time}
                       for c in cells]
    (out / "metadata.json").write_text(json.dumps(meta, indent=1))
    written.append(out / "metadata.json")
    return written


def load_cells(path) -> list:
    data = json.loads(Path(path).read_text())
    if data.get("schema_version") != RECORDS_SCHEMA:
        raise ValueError(f"unsupported records schema {data.get('schema_version')!r}")
    return [Cell.from_dict(d) for d in data["cells"]]


def _num_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None):
    """Solve every (algorithm, level) cell and measure ``E``.

    ``E`` is the L2 distance to the exact control when the problem has
    one, otherwise to a reference solve on ``error_reference_level``
    (default: finest level + 3). Driver failures are recorded per cell.

    Returns ``(EocTable, cells)``.
    """
    problem = config.problem_spec()
    ref = None
    if problem.exact_u is None:
        ref_level = config.error_reference_level
        if ref_level is None:
            ref_level = max(config.levels) + 3
        if ref_level <= max(config.levels):
            raise ValueError("error reference level must be finer than every solved level")
        ref_cfg = config.solver_config("madmm", problem.alpha)
        ref_cfg.eta_tol = min(ref_cfg.eta_tol, 1e-9)
        ref_cfg.max_iter = max(ref_cfg.max_iter, 500)
        ref = reference_solution(problem, ref_level, ref_cfg)

    def solve(alg, level):
        try:
            rec = run(problem, level, config.solver_config(alg, problem.alpha))
        except (MadmmError, ValueError, ArithmeticError, RuntimeError) as exc:
            return Cell(alg, level, problem.mesh(level).h, float("nan"), None, str(exc))
        if ref is None:
            E = l2_error(rec.final.u, problem.exact_u, rec.mesh)
        else:
            E = error_against_reference(rec.final.u, rec.mesh, *ref)
        return Cell(alg, level, rec.mesh.h, E, rec)

    jobs = [(alg, lev) for alg in config.algorithms for lev in config.levels]
    threads = _num_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(lambda j: solve(*j), jobs))
    else:
        cells = [solve(*j) for j in jobs]
    return EocTable.from_cells(cells), cells


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="madmm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run an experiment grid")
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--problem", choices=sorted(PROBLEMS))
    s.add_argument("--algorithm", help="comma-separated algorithms")
    s.add_argument("--levels", help="a..b or comma-separated levels")
    s.add_argument("--out", help="output directory")
    s.add_argument("--format", default="all", choices=["csv", "json", "plotdata", "all"])
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")

    e = sub.add_parser("eoc", help="recompute the EOC table from records.json")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "eoc":
        EocTable.from_cells(load_cells(args.inp)).write_csv(args.out)
        return 0

    values = read_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            print(f"--set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for key, flag in (("problem", args.problem), ("algorithm", args.algorithm),
                      ("levels", args.levels), ("output_dir", args.out)):
        if flag is not None:
            values[key] = flag
    try:
        config = ExperimentConfig.from_mapping(values)
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2

    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        table, cells = run_experiment(config)
    except MadmmError as exc:
        # only the shared reference solve can fail outside a cell
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1
    out = config.output_dir or "results"
    emit(cells, out, args.format, metadata={
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "version": __version__,
        "threads": _num_threads(),
    })
    w = max(len(f) for f in TABLE_FIELDS)
    print(" ".join(f"{f:>{w}}" for f in TABLE_FIELDS[:-1]))
    for r in table.rows:
        eoc = "" if r.EOC is None else f"{r.EOC:.4f}"
        print(" ".join(f"{v:>{w}}" for v in (
            r.algorithm, r.level, f"{r.h:.4g}", r.state_dofs, r.control_dofs,
            f"{r.E:.3e}", eoc, f"{r.eta:.2e}", r.iterations)), r.termination)
    return 0 if all(c.converged for c in cells) else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
