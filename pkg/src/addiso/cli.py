"""Command-line front end.

Commands::

    addiso fit --input data.csv [--format json|csv]
    addiso simulate --config run.cfg
    addiso reproduce-table --config run.cfg          # preset = table1 | table2
    addiso oracle-check --config run.cfg             # ns = 200, 800, 3200
    addiso quantile-curves --config run.cfg          # quantiles = 0.25, 0.5, 0.75

Config files hold one ``key = value`` per line (``#`` starts a comment) with
keys named after `RunConfig` fields; command-line flags take precedence.
Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backfit import FitConfig, backfit, build_dataset
from .oracle import NNLSCyclingError
from .simulation import (
    SimConfig,
    component_fn,
    mise_experiment,
    oracle_property_experiment,
    preset_configs,
    quantile_curves,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

COMMANDS = ("fit", "simulate", "reproduce-table", "oracle-check", "quantile-curves")


class InputError(Exception):
    """Bad input file, config or flag (exit code 2)."""


class NumericalFailure(Exception):
    """A fit or experiment did not produce a trustworthy result (exit code 3)."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none") else text.strip()


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


@dataclass
class RunConfig:
    """Everything a command needs; built from defaults, a config file, then flags."""

    command: str = "fit"
    input: str | None = None
    output: str | None = None
    format: str | None = None
    # fitting
    tol: float | None = None
    max_cycles: int = 500
    # simulation
    n: int = 200
    rho: float = 0.0
    noise_sd: float = 0.5
    m1: str = "cubic"
    m2: str | None = "half_sine"
    reps: int = 1000
    master_seed: int = 20080401
    grid_points: int = 101
    centering: str = "data"
    per_unit_length: bool = True
    workers: int = 1
    # command specific
    preset: str = "table1"
    ns: tuple[int, ...] = (200, 800, 3200)
    rhos: tuple[float, ...] | None = None
    table_ns: tuple[int, ...] | None = None
    quantiles: tuple[float, ...] = (0.25, 0.5, 0.75)
    component: int = 0

    def fit_config(self) -> FitConfig:
        return FitConfig(tol=self.tol, max_cycles=self.max_cycles)

    def sim_config(self, **overrides) -> SimConfig:
        m2 = None if self.m2 is None else component_fn(self.m2)
        return SimConfig(
            n=self.n, rho=self.rho, noise_sd=self.noise_sd,
            m1=component_fn(self.m1), m2=m2, reps=self.reps,
            master_seed=self.master_seed, grid_points=self.grid_points,
            centering=self.centering, per_unit_length=self.per_unit_length,
            fit=self.fit_config(), **overrides)


_PARSERS = {
    "command": str, "input": _opt_str, "output": _opt_str, "format": _opt_str,
    "tol": _opt_float, "max_cycles": int, "n": int, "rho": float,
    "noise_sd": float, "m1": str, "m2": _opt_str, "reps": int,
    "master_seed": int, "grid_points": int, "centering": str,
    "per_unit_length": _bool, "workers": int, "preset": str, "ns": _ints,
    "rhos": _floats, "table_ns": _ints, "quantiles": _floats, "component": int,
}


def read_config_file(path: str | Path) -> dict:
    """Parse a flat ``key = value`` file into typed RunConfig overrides."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}, line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _PARSERS:
            raise InputError(f"{path}, line {lineno}: unknown key {key!r}")
        try:
            out[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise InputError(f"{path}, line {lineno}: bad value for {key}: {exc}") from None
    return out


def read_csv_dataset(path: str | Path):
    """Read ``y, x1, ..., xd`` from a CSV file with a header row."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path} is not valid UTF-8: {exc.reason}") from None
    rows = [(i, r) for i, r in enumerate(rows, start=1) if any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path} is empty")
    _, header = rows[0]
    width = len(header)
    if width < 2:
        raise InputError(f"{path}, line 1: need a y column and at least one covariate")
    data = []
    for lineno, row in rows[1:]:
        if len(row) != width:
            raise InputError(f"{path}, line {lineno}: expected {width} fields, "
                             f"found {len(row)}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}, line {lineno}, column {col}: "
                                 f"non-numeric value {cell.strip()!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}, line {lineno}, column {col}: "
                                 f"non-finite value {cell.strip()!r}")
            vals.append(v)
        data.append(vals)
    if not data:
        raise InputError(f"{path} has a header but no data rows")
    arr = np.array(data)
    return arr[:, 0], arr[:, 1:], header


def _g(v) -> str:
    return "%.17g" % v


def _write(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    try:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {output}: {exc.strerror}") from None


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json_text(obj) -> str:
    # float repr is the shortest string that round-trips exactly
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def fit_report(fit, names: Sequence[str] | None = None) -> dict:
    """Plain-data form of an AdditiveFit."""
    names = names or [f"x{j + 1}" for j in range(fit.d)]
    return {
        "c_hat": fit.c_hat,
        "components": [
            {"name": name, "knots": comp.knots.tolist(), "levels": comp.levels.tolist(),
             "block_weights": comp.block_weights.tolist()}
            for name, comp in zip(names, fit.components)
        ],
        "n_cycles": fit.n_cycles,
        "converged": fit.converged,
        "final_objective": fit.final_objective,
    }


def cmd_fit(cfg: RunConfig) -> int:
    if cfg.input is None:
        raise InputError("fit needs --input")
    y, x, header = read_csv_dataset(cfg.input)
    try:
        dataset = build_dataset(y, x)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    fit = backfit(dataset, cfg.fit_config())
    if not all(np.isfinite(c.levels).all() for c in fit.components):
        raise NumericalFailure("fit produced non-finite levels")
    report = fit_report(fit, header[1:])
    if cfg.format == "csv":
        rows = [["intercept", "", _g(fit.c_hat), ""]]
        for comp in report["components"]:
            for k, l, w in zip(comp["knots"], comp["levels"], comp["block_weights"]):
                rows.append([comp["name"], _g(k), _g(l), _g(w)])
        _write(_csv_text(["component", "knot", "level", "block_weight"], rows), cfg.output)
    else:
        _write(_json_text(report), cfg.output)
    if not fit.converged:
        raise NumericalFailure(f"backfitting did not converge in {fit.n_cycles} cycles")
    return EXIT_OK


def _check_report(report) -> None:
    if report.failures:
        raise NumericalFailure(f"{report.failures} replication(s) failed")


def cmd_simulate(cfg: RunConfig) -> int:
    report = mise_experiment(cfg.sim_config(), workers=cfg.workers)
    if cfg.format == "csv":
        header, rows = _table_rows([(cfg.n, cfg.rho, report)])
        _write(_csv_text(header, rows), cfg.output)
    else:
        _write(_json_text(report.to_dict()), cfg.output)
    _check_report(report)
    return EXIT_OK


def _table_rows(entries):
    header = ["n", "rho"]
    for m in ("m1", "m2"):
        header += [f"{m}_backfit", f"{m}_oracle", f"{m}_ratio"]
    for m in ("m1", "m2"):
        header += [f"{m}_se_backfit", f"{m}_se_oracle", f"{m}_se_ratio"]
    rows = []
    for n, rho, report in entries:
        comps = list(report.components)
        row = [str(n), repr(float(rho))]
        for j in range(2):
            c = comps[j] if j < len(comps) else None
            row += [""] * 3 if c is None else [_g(c.mise_backfit), _g(c.mise_oracle),
                                                _g(c.ratio)]
        for j in range(2):
            c = comps[j] if j < len(comps) else None
            row += [""] * 3 if c is None else [_g(c.se_backfit), _g(c.se_oracle),
                                                _g(c.se_ratio)]
        rows.append(row)
    return header, rows


def cmd_reproduce_table(cfg: RunConfig) -> int:
    kwargs = {}
    if cfg.table_ns is not None:
        kwargs["ns"] = cfg.table_ns
    if cfg.rhos is not None:
        kwargs["rhos"] = cfg.rhos
    configs = preset_configs(cfg.preset, cfg.reps, cfg.master_seed,
                             noise_sd=cfg.noise_sd, centering=cfg.centering,
                             per_unit_length=cfg.per_unit_length,
                             fit=cfg.fit_config(), **kwargs)
    entries = []
    for sc in configs:
        logger.info("running n=%d rho=%g", sc.n, sc.rho)
        entries.append((sc.n, sc.rho, mise_experiment(sc, workers=cfg.workers)))
    if cfg.format == "json":
        _write(_json_text([{"n": n, "rho": rho, **r.to_dict()} for n, rho, r in entries]),
               cfg.output)
    else:
        header, rows = _table_rows(entries)
        _write(_csv_text(header, rows), cfg.output)
    for _, _, r in entries:
        _check_report(r)
    return EXIT_OK


def cmd_oracle_check(cfg: RunConfig) -> int:
    report = oracle_property_experiment(cfg.ns, cfg.sim_config(), workers=cfg.workers)
    if cfg.format == "csv":
        d = len(report.decreasing)
        header = ["n"] + [f"m{j + 1}_median_sup" for j in range(d)] \
            + [f"m{j + 1}_normalized" for j in range(d)]
        rows = [[str(n)] + [_g(v) for v in med] + [_g(v) for v in nrm]
                for n, med, nrm in zip(report.ns, report.median_sup, report.normalized)]
        _write(_csv_text(header, rows), cfg.output)
    else:
        _write(_json_text(report.to_dict()), cfg.output)
    return EXIT_OK


def cmd_quantile_curves(cfg: RunConfig) -> int:
    curves = quantile_curves(cfg.sim_config(), cfg.quantiles, component=cfg.component)
    if cfg.format == "json":
        _write(_json_text([{"quantile": c.quantile, "rep_index": c.rep_index,
                            "distance": c.distance, "x": c.grid.tolist(),
                            "backfit": c.backfit.tolist(), "oracle": c.oracle.tolist(),
                            "truth": c.truth.tolist()} for c in curves]), cfg.output)
    else:
        rows = []
        for c in curves:
            for series in ("backfit", "oracle", "truth"):
                vals = getattr(c, series)
                rows.extend([_g(x), _g(v), series, repr(c.quantile)]
                            for x, v in zip(c.grid, vals))
        _write(_csv_text(["x", "value", "series", "quantile"], rows), cfg.output)
    return EXIT_OK


HANDLERS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "reproduce-table": cmd_reproduce_table,
    "oracle-check": cmd_oracle_check,
    "quantile-curves": cmd_quantile_curves,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="addiso", description="Additive isotone regression tools.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--input", help="CSV input with header; first column is y")
    p.add_argument("--output", help="output file (default: stdout)")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="master seed for simulations")
    p.add_argument("--reps", type=int, help="Monte Carlo replications")
    p.add_argument("--tol", type=float, help="backfitting tolerance (absolute)")
    p.add_argument("--max-cycles", type=int, help="backfitting cycle limit")
    p.add_argument("--format", choices=("json", "csv"), help="output format")
    p.add_argument("--preset", choices=("table1", "table2"),
                   help="table preset for reproduce-table")
    p.add_argument("--workers", type=int, help="worker processes for simulations")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    values["command"] = args.command
    flags = {"input": args.input, "output": args.output, "master_seed": args.seed,
             "reps": args.reps, "tol": args.tol, "max_cycles": args.max_cycles,
             "format": args.format, "preset": args.preset, "workers": args.workers}
    values.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig(**values)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InputError as exc:
        print(f"addiso: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return HANDLERS[cfg.command](cfg)
    except InputError as exc:
        print(f"addiso: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"addiso: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NNLSCyclingError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"addiso: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, IndexError) as exc:
        # configuration rejected by the library (bad rho, unknown preset, ...)
        print(f"addiso: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
