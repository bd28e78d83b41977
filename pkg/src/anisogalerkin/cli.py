"""Batch front-end: ``anisogalerkin {check,solve,sweep,mms,verify} --config PATH``.

Exit codes: 0 ok, 1 a verdict failed, 2 usage or parse error, 3 runtime failure.
Every artifact is written by this process alone, in a fixed order, so equal
configs (and seeds and thread counts) give byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import struct
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .exponents import ExponentReport, InadmissibleExponentError, validate
from .field_dsl import FieldEvalError, ParseError, parse
from .monitor import EstimateReport, boundedness_verdict, instrument
from .solver import (BoundaryConditionError, GalerkinSystem, Problem, SolverConfig, SolverError,
                     manufactured_forcing, solve, sweep)
from .verify import run_properties, select

log = logging.getLogger("anisogalerkin")

EXIT_OK, EXIT_VERDICT, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

# an mms error may stall at the time-integration floor; rises below this are noise
MMS_PLATEAU_RTOL = 1e-6

SERIES_COLUMNS = ("t", "l2_sq", "grad_l2_sq", "dissipation_rate", "modular", "hessian_weighted_rate",
                  "ut_l2_sq", "dissipation_integral", "work_integral")


class UsageError(Exception):
    pass


# -- building blocks from a config --------------------------------------------

def build_problem(cfg: RunConfig) -> Problem:
    p = cfg.problem
    return Problem.from_strings(p.lengths, p.exponents, p.forcing, p.initial, p.T, p.eps,
                                cfg.exponents.grid, cfg.exponents.time_grid, p.lipschitz)


def build_solver_config(cfg: RunConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(modes=s.modes, nodes=s.nodes, integrator=s.integrator, dt=s.dt,
                        dt_min=s.dt_min, dt_max=s.dt_max, tol=s.tol, kappa=s.kappa,
                        snapshots=s.snapshots)


def exponent_report(cfg: RunConfig, prob: Problem) -> ExponentReport:
    return validate(prob.exponents, slow_mode=cfg.exponents.slow_mode)


def r_values(cfg: RunConfig, r_star: float) -> list[float]:
    """Absolute ``monitor.r_list`` plus ``monitor.r_fractions`` of ``r*``."""
    rs = set(cfg.monitor.r_list)
    if r_star > 0:
        rs |= {f * r_star for f in cfg.monitor.r_fractions}
    return sorted(rs)


# -- writers ---------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        return "unbounded" if math.isinf(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_snapshots(path: Path, times: np.ndarray, coeffs: np.ndarray, lengths) -> None:
    """``uint64`` LE header length, UTF-8 JSON header, then LE float64 row-major data."""
    header = {"dtype": "<f8", "order": "C", "shape": list(coeffs.shape),
              "modes": list(coeffs.shape[1:]), "lengths": [float(v) for v in lengths],
              "times": [float(t) for t in times]}
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(coeffs, dtype="<f8").tobytes(order="C"))


def read_snapshots(path: str | Path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", data[:8])
    header = json.loads(data[8:8 + n].decode("utf-8"))
    coeffs = np.frombuffer(data[8 + n:], dtype="<f8").reshape(header["shape"])
    return header, coeffs


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands --------------------------------------------------------------------

def cmd_check(cfg: RunConfig, force: bool = False, threads: int = 1) -> int:
    report = exponent_report(cfg, build_problem(cfg))
    write_json(_outdir(cfg) / "exponent_report.json", report.to_dict())
    for v in report.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'}  {v.name}  ({v.detail})")
    print(f"r_star = {report.r_star!r}")
    return EXIT_OK if report.passed else EXIT_VERDICT


def _admissible(cfg: RunConfig, prob: Problem, force: bool) -> ExponentReport | None:
    report = exponent_report(cfg, prob)
    if not report.passed:
        msg = "exponents fail: " + ", ".join(report.failures)
        if not force:
            print(msg + " (use --force to run anyway)", file=sys.stderr)
            return None
        log.warning("%s; continuing because of --force", msg)
    return report


def cmd_solve(cfg: RunConfig, force: bool = False, threads: int = 1) -> int:
    prob = build_problem(cfg)
    report = _admissible(cfg, prob, force)
    if report is None:
        return EXIT_VERDICT
    scfg = build_solver_config(cfg)
    system = GalerkinSystem(prob, scfg)
    traj = solve(prob, scfg, force=True, system=system)
    est = instrument(traj, prob, r_values(cfg, report.r_star), system=system,
                     r_star=report.r_star if report.r_star > 0 else math.inf)
    out = _outdir(cfg)
    write_snapshots(out / "snapshots.bin", traj.times, traj.coeffs, prob.domain.lengths)
    write_json(out / "estimate_report.json", est.to_dict())
    write_csv(out / "monitors.csv", SERIES_COLUMNS,
              zip(*(est.series[k if k != "t" else "t"] for k in SERIES_COLUMNS)))
    summary = {"modes": list(traj.coeffs.shape[1:]),
               "final_leading_coefficient": float(traj.final.flat[0]), **traj.summary()}
    write_json(out / "run_summary.json", summary)
    print(f"solved to T={prob.horizon:g} in {summary['steps']} steps; "
          f"final leading coefficient {summary['final_leading_coefficient']:.12g}")
    return EXIT_OK


def _sweep_rows(points, r_list, dim):
    header = ["value", "status", "steps", *EstimateReport.SCALARS,
              *(f"higher_int[{r!r}]" for r in r_list), *(f"second_order_W12[{i + 1}]" for i in range(dim))]
    rows = []
    for pt in points:
        if pt.report is None:
            rows.append([pt.value, pt.error, None] + [None] * (len(header) - 3))
            continue
        rep = pt.report
        rows.append([pt.value, "ok", pt.summary.get("steps"), *(getattr(rep, k) for k in rep.SCALARS),
                     *(rep.higher_int[r] for r in r_list), *rep.second_order_W12])
    return header, rows


def cmd_sweep(cfg: RunConfig, force: bool = False, threads: int = 1) -> int:
    axis, values = cfg.sweep.axis, list(cfg.sweep.values)
    if axis is None or not values:
        raise UsageError("sweep needs sweep.axis and sweep.values")
    if len(values) < 3:
        raise UsageError("a boundedness sweep needs at least three values")
    prob = build_problem(cfg)
    report = _admissible(cfg, prob, force)
    if report is None:
        return EXIT_VERDICT
    r_list = r_values(cfg, report.r_star)
    points = sweep(prob, build_solver_config(cfg), axis, values, r_list, threads=threads, force=True)
    out = _outdir(cfg)
    header, rows = _sweep_rows(points, r_list, prob.dim)
    write_csv(out / "sweep.csv", header, rows)

    ok = [pt.report for pt in points if pt.report is not None]
    failed = [{"value": pt.value, "error": pt.error} for pt in points if pt.report is None]
    verdicts = {}
    for name in cfg.monitor.fields:
        if len(ok) < 3:
            verdicts[name] = {"field": name, "passed": False, "trend": "insufficient data"}
        else:
            verdicts[name] = boundedness_verdict(ok, name, cfg.monitor.slack).to_dict()
    write_json(out / "verdicts.json", {"axis": axis, "values": values, "r_list": r_list,
                                       "failed_runs": failed, "verdicts": verdicts})
    for name, v in verdicts.items():
        print(f"{'PASS' if v['passed'] else 'FAIL'}  {name}: {v['trend']}")
    for f in failed:
        print(f"FAIL  run {axis}={f['value']!r}: {f['error']}")
    passed = not failed and all(v["passed"] for v in verdicts.values())
    return EXIT_OK if passed else EXIT_VERDICT


def cmd_mms(cfg: RunConfig, force: bool = False, threads: int = 1) -> int:
    if cfg.problem.u_exact is None:
        raise UsageError("mms needs problem.u_exact")
    base = build_problem(cfg)
    u = parse(cfg.problem.u_exact, base.dim)
    try:
        forcing = manufactured_forcing(u, base)
    except BoundaryConditionError as exc:
        raise UsageError(f"problem.u_exact violates the boundary condition: {exc}") from exc
    prob = dataclasses.replace(base, forcing=forcing, initial=u)
    if _admissible(cfg, prob, force) is None:
        return EXIT_VERDICT
    modes = sorted(cfg.mms.modes)
    points = sweep(prob, build_solver_config(cfg), "modes", modes, threads=threads, force=True, u_exact=u)
    rows, prev, monotone = [], None, True
    for pt in points:
        if pt.report is None:
            rows.append([pt.value, None, None, pt.error])
            monotone = False
            continue
        err = pt.summary["l2_error"]
        order = None
        if prev is not None and err > 0 and prev[1] > 0:
            order = math.log(prev[1] / err) / math.log(pt.value / prev[0])
        if prev is not None and err > prev[1] * (1 + MMS_PLATEAU_RTOL):
            monotone = False
        rows.append([pt.value, err, order, "ok"])
        prev = (pt.value, err)
    write_csv(_outdir(cfg) / "convergence.csv", ["modes", "l2_error", "observed_order", "status"], rows)
    for row in rows:
        print("  ".join(_cell(v) for v in row))
    return EXIT_OK if monotone else EXIT_VERDICT


def cmd_verify(cfg: RunConfig, force: bool = False, threads: int = 1) -> int:
    names = select(cfg.verify.suites)
    results = run_properties(names, cfg.seed, cfg.verify.tolerances)
    write_json(_outdir(cfg) / "verify_report.json",
               {"seed": cfg.seed, "properties": [r.to_dict() for r in results]})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  measured={r.measured:.3e}  tol={r.tolerance:.1e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERDICT


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "sweep": cmd_sweep, "mms": cmd_mms,
            "verify": cmd_verify}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anisogalerkin", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, metavar="PATH")
    ap.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    ap.add_argument("--force", action="store_true", help="run even if exponent checks fail")
    ap.add_argument("--seed", type=int, metavar="U64")
    ap.add_argument("--threads", type=int, default=1, metavar="K")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _print_parse_error(exc: ParseError) -> None:
    print(f"parse error: {exc.args[0]}", file=sys.stderr)
    print(f"  {exc.text}", file=sys.stderr)
    print("  " + " " * len(exc.text.encode()[: exc.offset].decode("utf-8", "ignore")) + "^", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1 or (args.seed is not None and not 0 <= args.seed < 2**64):
        print("--threads must be >= 1 and --seed an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.output_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        return COMMANDS[args.command](cfg, force=args.force, threads=args.threads)
    except ParseError as exc:
        _print_parse_error(exc)
        return EXIT_USAGE
    except (ConfigError, UsageError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, InadmissibleExponentError, FieldEvalError, ValueError, ArithmeticError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
