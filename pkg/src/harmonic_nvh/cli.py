"""Command-line batch runner.

Subcommands::

    run <scenario.yaml> -o <dir> [--seed N ...] [--controller NAME]
    compare <run-dir> <run-dir> ... [-o comparison.csv]
    probe <scenario.yaml> -o <probe-log.csv> [--speeds ...] [--torques ...] [--quiet]
    identify <probe-log.csv> -o <lut-dir>
    plotdata <run-dir> [--seed N] [-o amplitudes.dat]

Exit codes: 0 success, 2 configuration or input error (with file:line when
known), 3 numerical blow-up (with the step index). ``HC_MAX_WORKERS`` caps
the worker pool used for multi-seed runs.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import Indicators
from .errors import (
    AnalysisError,
    ConfigurationError,
    HarmonicControlError,
    IdentificationError,
    NumericalBlowUp,
    ScenarioError,
    UsageError,
)
from .lut import DEFAULT_SPEED_GRID, DEFAULT_TORQUE_GRID, FLOAT_FMT, OperatingPoint, ProbeRecord, identify_offline
from .scenario import CONTROLLERS, Scenario, dump_scenario, load_scenario
from .sim import SimResult, collect_probes, simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
WORKERS_ENV = "HC_MAX_WORKERS"

INDICATOR_COLUMNS = ["scenario", "controller", "seed", "order"] + Indicators.names()
PROBE_COLUMNS = ["speed_rpm", "torque_pu", "order", "theta_u_s", "theta_u_c", "y_s", "y_c"]


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def fmt(v: float) -> str:
    """17-significant-digit decimal; non-finite values as ``inf``/``-inf``/``nan``."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return FLOAT_FMT % v


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in r])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise CliError(f"missing file {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CliError(f"{path}: empty file")
    return rows[0], rows[1:]


def max_workers(n_jobs: int) -> int:
    raw = os.environ.get(WORKERS_ENV)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise CliError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
        if cap < 1:
            raise CliError(f"{WORKERS_ENV} must be >= 1")
    return max(1, min(cap, n_jobs))


# -- run ----------------------------------------------------------------------


def load_for_run(path: str, controller: str | None) -> Scenario:
    sc = load_scenario(path)
    if controller is not None:
        if controller not in CONTROLLERS:
            raise CliError(f"unknown controller {controller!r}; expected one of {', '.join(CONTROLLERS)}")
        sc = replace(sc, controller=controller)
    if sc.lut.dir is not None and not Path(sc.lut.dir).is_absolute():
        sc = replace(sc, lut=replace(sc.lut, dir=str((Path(path).parent / sc.lut.dir).resolve())))
    return sc


def _run_one(args: tuple[Scenario, int]) -> SimResult:
    sc, seed = args
    return simulate(sc, seed)


def run_seeds(sc: Scenario, seeds: Sequence[int]) -> list[SimResult]:
    jobs = [(sc, s) for s in seeds]
    workers = max_workers(len(jobs))
    if workers == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def indicator_rows(res: SimResult) -> list[list]:
    rows = []
    for m in res.series.orders:
        ind = res.indicators(m)
        rows.append([res.scenario.name, res.scenario.controller, str(res.seed), str(m)] + ind.values())
    return rows


def write_run(out: Path, results: list[SimResult]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    sc = results[0].scenario
    (out / "scenario.yaml").write_text(dump_scenario(sc))
    rows = []
    for res in results:
        tag = f"seed{res.seed}"
        tr = res.trace
        write_csv(out / f"trace_{tag}.csv", tr.columns(), tr.table())
        ser = res.series
        amp_header = ["time_s"] + [f"amp_m{m}" for m in ser.orders] + [f"phase_m{m}_rad" for m in ser.orders]
        write_csv(out / f"amplitudes_{tag}.csv", amp_header, np.column_stack([ser.time, ser.amplitude, ser.phase]))
        rows += indicator_rows(res)
        if res.lut_before is not None and res.scenario.controller == "td_delta_adaptive_lut":
            res.lut_before.save(out / "lut_before")
            res.lut_after.save(out / f"lut_after_{tag}")
    write_csv(out / "indicators.csv", INDICATOR_COLUMNS, rows)


def cmd_run(ns: argparse.Namespace) -> int:
    sc = load_for_run(ns.scenario, ns.controller)
    seeds = ns.seed if ns.seed else list(sc.seeds)
    if len(set(seeds)) != len(seeds):
        raise CliError("seeds must be distinct")
    results = run_seeds(sc, seeds)
    out = Path(ns.output)
    write_run(out, results)
    for res in results:
        print(f"seed {res.seed}: {res.trace.scalars.shape[0]} steps, {len(res.series)} periods -> {out}")
    return EXIT_OK


# -- compare ------------------------------------------------------------------


def load_indicator_columns(run_dir: Path) -> list[tuple[str, list[str]]]:
    header, rows = read_csv(run_dir / "indicators.csv")
    if header != INDICATOR_COLUMNS:
        raise CliError(f"{run_dir / 'indicators.csv'}: unexpected header")
    if not rows:
        raise CliError(f"{run_dir / 'indicators.csv'}: no indicator rows")
    cols = []
    for r in rows:
        label = run_dir.name or str(run_dir)
        if len(rows) > 1:
            label += f"[seed={r[2]},m={r[3]}]"
        cols.append((label, r[4:]))
    return cols


def comparison_table(run_dirs: Sequence[str]) -> tuple[list[str], list[list[str]]]:
    if not run_dirs:
        raise CliError("compare needs at least one run directory")
    cols = []
    for d in run_dirs:
        cols += load_indicator_columns(Path(d))
    header = ["indicator"] + [c[0] for c in cols]
    body = [[name] + [c[1][i] for c in cols] for i, name in enumerate(Indicators.names())]
    return header, body


def aligned(header: list[str], body: list[list[str]]) -> str:
    table = [header] + body
    widths = [max(len(r[j]) for r in table) for j in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table)


def cmd_compare(ns: argparse.Namespace) -> int:
    header, body = comparison_table(ns.runs)
    out = Path(ns.output)
    write_csv(out, header, body)
    text = aligned(header, body)
    out.with_suffix(".txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


# -- probe / identify ---------------------------------------------------------


def cmd_probe(ns: argparse.Namespace) -> int:
    sc = load_for_run(ns.scenario, None)
    if ns.quiet:
        sc = replace(sc, noise=replace(sc.noise, speed_rpm=0.0, current_a=0.0, y=0.0))
    recs = collect_probes(sc, ns.speeds, ns.torques, seed=ns.seed_value)
    write_probe_log(Path(ns.output), recs)
    print(f"{len(recs)} probe records -> {ns.output}")
    return EXIT_OK


def write_probe_log(path: Path, recs: Sequence[ProbeRecord]) -> None:
    rows = [[r.op.speed_rpm, r.op.torque_pu, str(r.order), *r.theta_u, *r.y] for r in recs]
    write_csv(path, PROBE_COLUMNS, rows)


def read_probe_log(path: Path) -> list[ProbeRecord]:
    header, rows = read_csv(path)
    if header != PROBE_COLUMNS:
        raise CliError(f"{path}:1: expected header {','.join(PROBE_COLUMNS)}")
    out = []
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(PROBE_COLUMNS):
            raise CliError(f"{path}:{lineno}: expected {len(PROBE_COLUMNS)} columns, got {len(r)}")
        try:
            v = [float(c) for c in r]
        except ValueError as exc:
            raise CliError(f"{path}:{lineno}: {exc}") from None
        if v[2] != int(v[2]):
            raise CliError(f"{path}:{lineno}: order must be an integer")
        out.append(ProbeRecord(OperatingPoint(v[0], v[1]), int(v[2]), (v[3], v[4]), (v[5], v[6])))
    return out


def cmd_identify(ns: argparse.Namespace) -> int:
    recs = read_probe_log(Path(ns.probe_log))
    if not recs:
        raise CliError(f"{ns.probe_log}: no probe records")
    orders = sorted({r.order for r in recs})
    speeds = sorted({r.op.speed_rpm for r in recs})
    torques = sorted({r.op.torque_pu for r in recs})
    lut = identify_offline(recs, orders, speeds, torques)
    written = lut.save(ns.output)
    print(f"identified orders {orders} on {len(speeds)}x{len(torques)} grid -> {len(written)} files in {ns.output}")
    return EXIT_OK


# -- plotdata -----------------------------------------------------------------


def cmd_plotdata(ns: argparse.Namespace) -> int:
    run_dir = Path(ns.run)
    if ns.seed is None:
        files = sorted(run_dir.glob("amplitudes_seed*.csv"))
        if not files:
            raise CliError(f"no amplitudes_seed*.csv in {run_dir}")
        src = files[0]
    else:
        src = run_dir / f"amplitudes_seed{ns.seed}.csv"
    header, rows = read_csv(src)
    amp_cols = [i for i, h in enumerate(header) if h.startswith("amp_m")]
    lines = [f"# per-period harmonic amplitudes from {src.name}", "# one block per order (gnuplot: index N), columns: time_s amplitude"]
    for i in amp_cols:
        lines.append("")
        lines.append("")
        lines.append(f"# order {header[i][len('amp_m'):]}")
        lines += [f"{r[0]} {r[i]}" for r in rows]
    text = "\n".join(lines) + "\n"
    if ns.output:
        Path(ns.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="harmonic-nvh", description="Harmonic NVH controller simulations.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, action="append", help="noise seed; repeat for a batch (default: scenario seeds)")
    p.add_argument("--controller", help=f"override the controller ({', '.join(CONTROLLERS)})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="merge indicator tables of completed runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("-o", "--output", default="comparison.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("probe", help="record steady-state probe responses for offline identification")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--speeds", type=float, nargs="+", default=list(DEFAULT_SPEED_GRID))
    p.add_argument("--torques", type=float, nargs="+", default=list(DEFAULT_TORQUE_GRID))
    p.add_argument("--seed", dest="seed_value", type=int, default=0)
    p.add_argument("--quiet", action="store_true", help="switch all noise sources off")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("identify", help="fit a feedforward LUT from a probe log")
    p.add_argument("probe_log")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("plotdata", help="emit per-order amplitude blocks for gnuplot")
    p.add_argument("run")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_plotdata)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except NumericalBlowUp as exc:
        print(f"error: numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, IdentificationError, AnalysisError, UsageError, HarmonicControlError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
