"""Command-line driver for the convergence experiments.

Example::

    python -m semilinear_dpg --problem ex2 --mode adaptive --max-elements 20000 \\
        --out ex2_adaptive.csv --fields ex2_fields
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass, fields as dc_fields

import numpy as np

from .adaptivity import ConvergenceRecord, adapt_loop
from .mesh2d import build_lshape, build_unit_square, write_mesh
from .problems import PROBLEMS

log = logging.getLogger(__name__)

EXIT_OK, EXIT_NEWTON, EXIT_CONFIG = 0, 2, 3

CSV_COLUMNS = (
    "step", "N", "dofs", "newton_iters", "res_dual", "res_rho", "res_gamma", "Res",
    "err_grad_u", "err_q", "err_r", "err_u_L2", "err_U",
)
_ERROR_COLUMNS = CSV_COLUMNS[8:]
RATE_QUANTITIES = ("Res", "res_dual", "res_rho", "res_gamma", "err_U", "err_grad_u",
                   "err_q", "err_r", "err_u_L2")

DEFAULT_N0 = {"ex1": 2, "ex2": 2}
MESHES = {"ex1": build_unit_square, "ex2": build_lshape}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "ex1"
    mode: str = "uniform"
    theta: float = 0.5
    n0: int | None = None
    max_elements: int = 100_000
    max_steps: int | None = None
    tol: float = 1e-6
    out: str | None = None
    fields: str | None = None
    rate_window: int = 4
    seed: int = 0

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.mode not in ("uniform", "adaptive"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie in (0, 1)")
        if not self.tol > 0.0:
            raise ConfigError("tol must be positive")
        if self.n0 is not None and self.n0 < 1:
            raise ConfigError("n0 must be at least 1")
        if self.max_elements < 1:
            raise ConfigError("max-elements must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max-steps must be positive")
        if self.rate_window < 2:
            raise ConfigError("rate-window must be at least 2")
        return self

    @property
    def initial_n(self) -> int:
        return self.n0 if self.n0 is not None else DEFAULT_N0[self.problem]


@dataclass
class RateReport:
    window: int
    slopes: dict

    def __str__(self):
        lines = [f"rates vs N over the last {self.window} steps"]
        for k, v in self.slopes.items():
            lines.append(f"  {k:<12s} {v: .4f}")
        return "\n".join(lines)


def estimate_rates(records, k: int = 4, quantities=RATE_QUANTITIES) -> RateReport:
    """Least-squares slopes of log(quantity) against log(N) over the last k records.

    Quantities that are missing or non-positive in the window are skipped.
    """
    recs = list(records)[-k:] if k else list(records)
    if len(recs) < 2:
        raise ValueError("need at least two records to estimate rates")
    N = np.array([float(_get(r, "N")) for r in recs])
    slopes = {}
    for q in quantities:
        try:
            vals = np.array([float(_get(r, q)) for r in recs])
        except (KeyError, AttributeError, TypeError, ValueError):
            continue
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            continue
        slopes[q] = float(np.polyfit(np.log(N), np.log(vals), 1)[0])
    return RateReport(len(recs), slopes)


def _get(rec, key):
    return rec[key] if isinstance(rec, dict) else getattr(rec, key)


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.17e}"


def record_row(rec: ConvergenceRecord, with_errors: bool) -> list:
    row = []
    for col in CSV_COLUMNS:
        if col in _ERROR_COLUMNS and not with_errors:
            row.append("")
        else:
            row.append(_fmt(getattr(rec, col)))
    return row


def read_csv(path) -> list:
    """Rows of a convergence CSV as dicts with numeric values (None when empty)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: (None if v == "" else (int(v) if k in ("step", "N", "dofs", "newton_iters") else float(v)))
                        for k, v in row.items()})
    return out


def export_fields(mesh, dofmap, x, path) -> dict:
    """Write ``<path>.mesh``, ``<path>.u.txt`` (x y u per vertex) and
    ``<path>.qr.txt`` (q r per element).  Returns the written paths."""
    u, _, q, r = dofmap.split(np.asarray(x))
    paths = {
        "mesh": f"{path}.mesh",
        "vertices": f"{path}.u.txt",
        "elements": f"{path}.qr.txt",
    }
    write_mesh(mesh, paths["mesh"])
    with open(paths["vertices"], "w") as fh:
        for (px, py), val in zip(mesh.vertices, u):
            fh.write(f"{float(px)!r} {float(py)!r} {float(val)!r}\n")
    with open(paths["elements"], "w") as fh:
        for a, b in zip(q, r):
            fh.write(f"{float(a)!r} {float(b)!r}\n")
    return paths


def run(config: RunConfig, stream=None):
    """Run one experiment; returns ``(exit_code, loop_result)``."""
    config.validate()
    np.random.seed(config.seed)
    problem = PROBLEMS[config.problem]()
    mesh = MESHES[config.problem](config.initial_n)
    with_errors = problem.has_exact

    fh = open(config.out, "w", newline="") if config.out else None
    try:
        writer = csv.writer(fh, lineterminator="\n") if fh else None
        if writer:
            writer.writerow(CSV_COLUMNS)
            fh.flush()

        def on_record(rec):
            if writer:
                writer.writerow(record_row(rec, with_errors))
                fh.flush()
            if stream is not None:
                print(
                    f"step {rec.step:3d}  N={rec.N:8d}  newton={rec.newton_iters}  "
                    f"Res={rec.Res:.4e}  err_U={rec.err_U:.4e}  err_L2={rec.err_u_L2:.4e}",
                    file=stream,
                    flush=True,
                )

        result = adapt_loop(
            problem,
            mesh,
            mode=config.mode,
            theta=config.theta,
            max_elements=config.max_elements,
            max_steps=config.max_steps,
            tol=config.tol,
            on_record=on_record,
        )
    finally:
        if fh:
            fh.close()

    if config.fields and result.meshes:
        dofmap, x = result.solution
        export_fields(result.mesh, dofmap, x, config.fields)
    if stream is not None and len(result.records) >= 2:
        print(estimate_rates(result.records, config.rate_window), file=stream)
    if result.failed:
        if stream is not None:
            print(f"error: {result.message}", file=stream)
        return EXIT_NEWTON, result
    return EXIT_OK, result


def _read_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _coerce(cfg: dict) -> RunConfig:
    types = {f.name: f.type for f in dc_fields(RunConfig)}
    kwargs = {}
    for k, v in cfg.items():
        if k not in types:
            raise ConfigError(f"unknown configuration key {k!r}")
        if v is None:
            continue
        t = str(types[k])
        try:
            if "int" in t:
                kwargs[k] = int(v)
            elif "float" in t:
                kwargs[k] = float(v)
            else:
                kwargs[k] = str(v)
        except ValueError:
            raise ConfigError(f"bad value {v!r} for {k}") from None
    return RunConfig(**kwargs)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="semilinear-dpg",
        description="DPG / least-squares solver for semilinear elliptic model problems.",
    )
    p.add_argument("--problem", choices=sorted(PROBLEMS))
    p.add_argument("--mode", choices=("uniform", "adaptive"))
    p.add_argument("--theta", type=float, help="bulk parameter (default 0.5)")
    p.add_argument("--n0", type=int, help="initial subdivisions per unit square")
    p.add_argument("--max-elements", type=int, help="stop before exceeding this (default 1e5)")
    p.add_argument("--max-steps", type=int, help="maximal number of solved meshes")
    p.add_argument("--tol", type=float, help="Newton tolerance (default 1e-6)")
    p.add_argument("--out", help="convergence CSV path")
    p.add_argument("--fields", help="path stem for field export of the final mesh")
    p.add_argument("--rate-window", type=int, help="trailing steps used for rates (default 4)")
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p.add_argument("--config", help="key=value configuration file; flags override it")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _read_config_file(args.config) if args.config else {}
        flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose") and v is not None}
        cfg.update(flags)
        config = _coerce(cfg).validate()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, _ = run(config, stream=sys.stdout)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
