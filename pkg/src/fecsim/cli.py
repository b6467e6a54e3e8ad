"""Command-line entry point: fit, solve, thresholds, simulate, and sweep.

Exit codes: 0 success, 1 a simulated run hit the overload bound (sweeps keep
going and flag the row), 2 malformed input. All CSV outputs start with ``#``
provenance comments capturing the inputs that produced them.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from fecsim import engine, metrics
from fecsim.config import RunConfig, load_config
from fecsim.engine import ConfigError, PoissonArrivals
from fecsim.model import ClassSpec, OverloadError, SystemSpec, normalized_load
from fecsim.solver import (
    SolverError,
    build_thresholds,
    code_functions_of_queue,
    solve_class_at_load,
    thresholds_to_csv,
)
from fecsim.strategies import StaticStrategy
from fecsim.traces import fit_params, read_params_file, read_trace_csv, write_params_file

EXIT_OK = 0
EXIT_OVERLOADED = 1
EXIT_INPUT_ERROR = 2


class _CliError(Exception):
    pass


def _parse_floats(raw: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise _CliError(f"expected comma-separated numbers, got {raw!r}") from exc


def _solve_classes(args) -> list[ClassSpec]:
    params = read_params_file(args.params)
    sizes = args.file_size
    share = 1.0 / len(sizes)
    return [
        ClassSpec("read", size, share, args.k_max, args.r_max, params)
        for size in sizes
    ]


def cmd_fit(args) -> int:
    records = read_trace_csv(args.trace)
    params = fit_params(records)
    header = [f"fitted from {args.trace} ({len(records)} records)"]
    write_params_file(params, args.out, header_lines=header)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    if bool(args.load) == bool(args.queue):
        raise _CliError("exactly one of --load or --queue is required")
    classes = _solve_classes(args)
    L = args.threads
    rows = []
    if args.load:
        for lam_bar in _parse_floats(args.load):
            if not 0 < lam_bar < L:
                raise _CliError(f"--load {lam_bar} must lie strictly in (0, threads)")
            for cid, cls in enumerate(classes):
                opt = solve_class_at_load(cls, lam_bar, L)
                rows.append((cid, cls.file_size, "load", lam_bar, opt))
    else:
        for q in _parse_floats(args.queue):
            if q < 0:
                raise _CliError(f"--queue {q} must be >= 0")
            for cid, cls in enumerate(classes):
                opt = code_functions_of_queue(cls, q, L)
                rows.append((cid, cls.file_size, "queue", q, opt))
    out = _open_out(args.out)
    try:
        out.write(f"# params={args.params} threads={L}\n")
        out.write("class_id,file_size_mb,input_kind,input_value,n,k,r\n")
        for cid, size, kind, value, opt in rows:
            out.write(f"{cid},{size!r},{kind},{value!r},{opt.n!r},{opt.k!r},{opt.r!r}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_thresholds(args) -> int:
    classes = _solve_classes(args)
    tables = [build_thresholds(cls, args.threads) for cls in classes]
    out = _open_out(args.out)
    try:
        out.write(f"# params={args.params} threads={args.threads} k_max={args.k_max} r_max={args.r_max}\n")
        thresholds_to_csv(tables, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _run_config(config: RunConfig, seed: int | None = None, arrivals=None, strategy=None):
    return engine.run(
        config.spec,
        arrivals if arrivals is not None else config.arrivals,
        config.sampler_factory(),
        strategy if strategy is not None else config.strategy_factory(),
        horizon=config.horizon,
        warmup=config.warmup,
        seed=config.seed if seed is None else seed,
        leftover_policy=config.leftover_policy,
        overload_bound=config.overload_bound,
    )


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    result = _run_config(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    provenance = [f"config={config.compact_json()}", f"seed={result.seed}"]
    with open(out_dir / "requests.csv", "w", newline="") as fh:
        engine.records_to_csv(result, fh, header_lines=provenance)
    k_max = max(c.k_max for c in config.spec.classes)
    strategy_name = result.strategy_name
    rate = config.raw.get("arrivals", {}).get("rate_per_ms", float("nan"))
    try:
        summary = metrics.summarize(result)
        row = metrics.SummaryRow("simulate", strategy_name, rate, summary, overloaded=result.overloaded)
    except ValueError:
        row = metrics.SummaryRow("simulate", strategy_name, rate, None, overloaded=result.overloaded)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        metrics.write_summary_csv([row], fh, k_max=k_max, header_lines=provenance)
    print(f"wrote {out_dir / 'requests.csv'} and {out_dir / 'summary.csv'}")
    if result.overloaded:
        print("run flagged OVERLOADED", file=sys.stderr)
        return EXIT_OVERLOADED
    return EXIT_OK


def _sweep_strategies(tokens: list[str], config: RunConfig) -> list[tuple[str, object]]:
    pairs = []
    for token in tokens:
        if token == "tofec" or token == "greedy":
            base = dict(config.raw.get("strategy", {}))
            entry = {"kind": token}
            if token == "tofec" and "alpha" in base:
                entry["alpha"] = base["alpha"]
            from fecsim.config import _build_strategy_factory

            factory = _build_strategy_factory(entry, config.spec)
            pairs.append((token, factory))
        elif token.startswith("static:"):
            n_raw, _, k_raw = token[len("static:"):].partition("x")
            try:
                n, k = int(n_raw), int(k_raw)
            except ValueError as exc:
                raise _CliError(f"bad static code token {token!r}; use static:NxK") from exc
            codes = [(n, k)] * len(config.spec.classes)
            pairs.append((f"static({n},{k})", lambda codes=codes: StaticStrategy(codes)))
        elif token == "static-grid":
            if len(config.spec.classes) != 1:
                raise _CliError("static-grid sweeps require a single-class config")
            for code in config.spec.classes[0].code_grid():
                codes = [tuple(code)]
                pairs.append((f"static({code.n},{code.k})", lambda codes=codes: StaticStrategy(codes)))
        else:
            raise _CliError(f"unknown strategy token {token!r}")
    return pairs


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    rates = _parse_floats(args.rates)
    if not rates:
        raise _CliError("--rates must name at least one arrival rate")
    strategies = _sweep_strategies([t.strip() for t in args.strategies.split(",") if t.strip()], config)
    k_max = max(c.k_max for c in config.spec.classes)
    rows = []
    any_overloaded = False
    for rate in rates:
        for name, factory in strategies:
            if args.skip_infeasible and name.startswith("static("):
                codes = factory().codes
                if normalized_load(rate, config.spec.classes, codes) >= config.spec.thread_count:
                    continue
            result = _run_config(config, arrivals=PoissonArrivals(rate), strategy=factory())
            try:
                summary = metrics.summarize(result)
            except ValueError:
                summary = None
            overloaded = result.overloaded
            any_overloaded = any_overloaded or overloaded
            rows.append(metrics.SummaryRow("sweep", name, rate, summary, overloaded=overloaded))
    provenance = [f"config={config.compact_json()}", f"rates={rates}", f"seed={config.seed}"]
    out = _open_out(args.out)
    try:
        metrics.write_summary_csv(rows, out, k_max=k_max, header_lines=provenance)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OVERLOADED if any_overloaded else EXIT_OK


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout
    return open(path, "w", newline="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fecsim",
        description="Simulate and analyze backlog-adaptive erasure-coded storage access.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the task-delay law from a trace CSV")
    p_fit.add_argument("trace", help="trace CSV (chunk_size_mb,delay_ms[,op_type,timestamp])")
    p_fit.add_argument("-o", "--out", required=True, help="output params file")
    p_fit.set_defaults(func=cmd_fit)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("params", help="fitted params file (key=value)")
    common.add_argument("--file-size", type=float, action="append", required=True,
                        help="file size in MB; repeat for multiple classes")
    common.add_argument("--threads", type=int, required=True, help="thread count L")
    common.add_argument("--k-max", type=int, default=6)
    common.add_argument("--r-max", type=float, default=2.0)
    common.add_argument("-o", "--out", default=None, help="output CSV (default stdout)")

    p_solve = sub.add_parser("solve", parents=[common],
                             help="continuous optimal (n,k,r) at given loads or backlogs")
    p_solve.add_argument("--load", help="comma-separated normalized loads (0, threads)")
    p_solve.add_argument("--queue", help="comma-separated mean queue lengths")
    p_solve.set_defaults(func=cmd_solve)

    p_thr = sub.add_parser("thresholds", parents=[common],
                           help="build backlog threshold tables as CSV")
    p_thr.set_defaults(func=cmd_thresholds)

    p_sim = sub.add_parser("simulate", help="run one configured simulation")
    p_sim.add_argument("config", help="run config JSON")
    p_sim.add_argument("-o", "--out-dir", required=True, help="directory for requests.csv/summary.csv")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="sweep arrival rates across strategies")
    p_sweep.add_argument("config", help="base run config JSON (arrivals swept)")
    p_sweep.add_argument("--rates", required=True, help="comma-separated arrival rates (req/ms)")
    p_sweep.add_argument("--strategies", required=True,
                         help="comma-separated: tofec, greedy, static:NxK, static-grid")
    p_sweep.add_argument("--skip-infeasible", action="store_true",
                         help="skip static codes whose normalized load exceeds the thread count")
    p_sweep.add_argument("-o", "--out", default=None, help="summary CSV (default stdout)")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (_CliError, ConfigError, SolverError, OverloadError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
