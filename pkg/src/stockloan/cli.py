"""Command-line entry point.

    stockloan perpetual     [--config PATH] [--set key=value ...] [--output text|csv|json] [--out PATH]
    stockloan finite        ...
    stockloan sweep         --axis NAME --values SPEC [--mode finite|perpetual] [--workers N] ...
    stockloan tables        [--skip-finite] ...
    stockloan oracle-check  ...

Exit status: 0 success, 1 solver failure (or a failed oracle check),
2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, oracle, perpetual, reference
from .config import RunSettings, load_settings
from .errors import ConfigError, StockLoanError
from .finite import SWEEP_AXES, SWEEP_COLUMNS, Scenario, bank_cost_pde, fee_finite, solve_indifference, sweep

SCHEMA_VERSION = "1.0"

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


def _num(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return None
    elif isinstance(x, np.integer):
        x = int(x)
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    return _num(obj)


def parse_values(spec: str, step: float = 10.0) -> list:
    """``"0.01,0.05"`` or an inclusive range ``"80..140"`` / ``"80..140:5"``."""
    spec = spec.strip()
    if ".." in spec:
        rng, _, st = spec.partition(":")
        lo, hi = (float(x) for x in rng.split(".."))
        st = float(st) if st else step
        if st <= 0 or hi < lo:
            raise ConfigError(f"bad range {spec!r}")
        n = int(math.floor((hi - lo) / st + 1e-9)) + 1
        return [lo + i * st for i in range(n)]
    try:
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad value list {spec!r}") from None


# ---------------------------------------------------------------- commands


def cmd_perpetual(settings: RunSettings, args):
    sc = replace(settings.scenario, T=None)
    quote = perpetual.fee(sc.loan, sc.collateral, sc.pref)
    complete = perpetual.complete_market_fee(sc.loan, sc.collateral)
    row = {
        "L": sc.L,
        "v0": sc.v0,
        "fee": quote.fee,
        "bank_cost": quote.bank_cost,
        "v_star": quote.boundary,
        "p0": quote.p0,
        "complete_market_fee": complete.fee,
        "complete_market_threshold": complete.boundary,
        "branch": quote.diagnostics["branch"],
    }
    return [row], {"diagnostics": quote.diagnostics}


def cmd_finite(settings: RunSettings, args):
    sc = settings.scenario
    if sc.T is None:
        raise ConfigError("finite mode needs [loan] horizon in years")
    quote = fee_finite(sc.loan, sc.collateral, sc.pref, settings.grid)
    b = quote.boundary
    row = {
        "L": sc.L,
        "v0": sc.v0,
        "fee": quote.fee,
        "bank_cost": quote.bank_cost,
        "p0": quote.p0,
        "v_star_at_0": b.levels[0],
        "v_star_at_mid": float(b.at(sc.T / 2)),
        "v_star_at_T": b.levels[-1],
        "psor_max_iters": quote.diagnostics["psor_max_iters"],
        "max_residual": quote.diagnostics["max_residual"],
    }
    extra = {
        "diagnostics": quote.diagnostics,
        "boundary": {"times": b.times, "levels": b.levels},
    }
    return [row], extra


def cmd_sweep(settings: RunSettings, args):
    values = parse_values(args.values, args.step)
    base = settings.scenario
    if args.mode == "perpetual":
        base = replace(base, T=None)
    elif base.T is None:
        raise ConfigError("finite sweep needs [loan] horizon in years")
    rows = sweep(base, args.axis, values, settings.grid, mode=args.mode, workers=args.workers)
    return rows, {"axis": args.axis, "mode": args.mode}


def _table_rows(include_finite: bool, grid):
    rows = []
    for case, spec in reference.PERPETUAL_CASES.items():
        for i, L in enumerate(reference.LOAN_AMOUNTS):
            sc = Scenario(**reference.PERPETUAL_BASE, delta=spec["delta"], L=L,
                          rho=spec["rho"] if spec["rho"] is not None else 0.0,
                          gamma=spec["gamma"] if spec["gamma"] is not None else 1.0)
            if spec["gamma"] is None:
                q = perpetual.complete_market_fee(sc.loan, sc.collateral)
            else:
                q = perpetual.fee(sc.loan, sc.collateral, sc.pref)
            rows.append(_cell("perpetual", case, L, "fee", q.fee, reference.PERPETUAL_FEE[case][i]))
            if case in reference.PERPETUAL_THRESHOLD:
                rows.append(_cell("perpetual", case, L, "threshold", q.boundary,
                                  reference.PERPETUAL_THRESHOLD[case][i]))
    if include_finite:
        for i, L in enumerate(reference.LOAN_AMOUNTS):
            sc = Scenario(**reference.FINITE_SCENARIO, L=L)
            q = fee_finite(sc.loan, sc.collateral, sc.pref, grid)
            rows.append(_cell("finite", "", L, "fee", q.fee, reference.FINITE_FEE[i]))
    return rows


def _cell(table, case, L, quantity, computed, ref):
    return {
        "table": table,
        "case": case,
        "L": L,
        "quantity": quantity,
        "computed": computed,
        "reference": ref,
        "deviation": computed - ref,
    }


def cmd_tables(settings: RunSettings, args):
    return _table_rows(not args.skip_finite, settings.grid), {}


def cmd_oracle_check(settings: RunSettings, args):
    """Cross-check the configured finite-horizon scenario against the oracles."""
    sc = settings.scenario
    if sc.T is None:
        raise ConfigError("oracle-check needs a finite horizon")
    loan, col, pref = sc.loan, sc.collateral, sc.pref
    rows = []
    sol, boundary, p0 = solve_indifference(loan, col, pref, settings.grid)
    k = pref.gamma * (1 - col.rho**2)
    F_tree = oracle.tree_stopping_F(loan, col, pref, settings.tree_steps)
    p_tree = -math.log(F_tree) / k
    rows.append(_check("tree_p0", p0, p_tree, 0.05))
    cost = bank_cost_pde(boundary, loan, col, settings.grid)
    est, se = oracle.mc_barrier_cost(boundary, loan, col, settings.paths)
    rows.append(_check("mc_bank_cost", cost, est, 3 * se if se > 0 else 1e-9, stderr=se))
    rows.append(_check("complementarity", sol.max_residual, 0.0, 1e-7))
    return rows, {}


def _check(name, value, ref, tol, stderr=None):
    row = {"check": name, "value": value, "reference": ref, "tolerance": tol,
           "passed": bool(abs(value - ref) <= tol)}
    if stderr is not None:
        row["stderr"] = stderr
    return row


COMMANDS = {
    "perpetual": cmd_perpetual,
    "finite": cmd_finite,
    "sweep": cmd_sweep,
    "tables": cmd_tables,
    "oracle-check": cmd_oracle_check,
}


# ------------------------------------------------------------------ output


def format_csv(rows) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    fields = list(rows[0].keys())
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _csv_cell(row[k]) for k in fields})
    return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip form
    return v


def format_text(rows) -> str:
    if not rows:
        return "(no rows)\n"
    fields = list(rows[0].keys())

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            v = float(v)
            if not math.isfinite(v):
                return str(v)
            return f"{v:.3e}" if 0 < abs(v) < 1e-3 else f"{v:.4f}"
        return str(v)

    cells = [[fmt(r[f]) for f in fields] for r in rows]
    widths = [max(len(f), *(len(c[i]) for c in cells)) for i, f in enumerate(fields)]
    lines = ["  ".join(f.rjust(w) for f, w in zip(fields, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def format_json(command, settings, rows, extra, elapsed) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "command": command,
        "parameters": settings.echo(),
        "results": rows,
        "elapsed_seconds": elapsed,
        **extra,
    }
    return json.dumps(_clean(doc), indent=2) + "\n"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    common.add_argument("--output", choices=("text", "csv", "json"), default="text")
    common.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")

    p = argparse.ArgumentParser(prog="stockloan", description="Stock-loan fee valuation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("perpetual", parents=[common], help="closed-form perpetual fee")
    sub.add_parser("finite", parents=[common], help="finite-maturity fee by finite differences")
    sw = sub.add_parser("sweep", parents=[common], help="fee along one parameter axis")
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, help='comma list or inclusive range "lo..hi[:step]"')
    sw.add_argument("--step", type=float, default=10.0, help="range step when --values has none")
    sw.add_argument("--mode", choices=("finite", "perpetual"), default="finite")
    sw.add_argument("--workers", type=int, default=1)
    tb = sub.add_parser("tables", parents=[common], help="benchmark tables with deviations")
    tb.add_argument("--skip-finite", action="store_true", help="only the closed-form table")
    sub.add_parser("oracle-check", parents=[common], help="tree and Monte Carlo cross-checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config, args.overrides)
        t0 = time.perf_counter()
        rows, extra = COMMANDS[args.command](settings, args)
        elapsed = time.perf_counter() - t0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StockLoanError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    if args.output == "csv":
        text = format_csv(rows)
    elif args.output == "json":
        text = format_json(args.command, settings, rows, extra, elapsed)
    else:
        text = format_text(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)

    if args.command == "oracle-check" and not all(r["passed"] for r in rows):
        return EXIT_SOLVER
    if args.command == "sweep" and any(r.get("error") for r in rows):
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
