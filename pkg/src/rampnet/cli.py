"""Command line front end: collect, fit, run, sweep, report."""

from __future__ import annotations

import argparse
import csv
import sys

from . import harness, network, sysid
from .mpc import MpcConfig, horizon_sweep
from .sysid import SparseModel


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise harness.UsageError(f"bad seed list '{text}'; expected e.g. 1,2,3")


def _parse_horizons(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s.strip() != ""]


def _load_config(path: str | None) -> network.NetworkConfig:
    if path is None:
        return network.load_config(network.benchmark_config_path())
    return network.load_config(path)


def _cmd_collect(args) -> int:
    config = _load_config(args.config)
    paths = harness.collect(config, args.controller, _parse_seeds(args.seeds),
                            args.out)
    for p in paths:
        print(p)
    return 0


def _cmd_fit(args) -> int:
    log = harness.load_logs(args.logs)
    if args.method == "sindyc":
        library = sysid.FeatureLibrarySpec(polynomial_order=args.order)
        model = sysid.discover_sindyc(
            log, library=library, ridge=args.ridge, threshold=args.threshold,
            smooth_window=args.smooth_window,
            provenance={"logs": str(args.logs)})
    else:
        model = sysid.discover_dmdc(log, provenance={"logs": str(args.logs)})
    model.save(args.out)
    active = model.active_count()
    print(f"{args.method} model -> {args.out}")
    print(f"columns: {model.n_columns}, active per state: {active.tolist()}")
    report = sysid.fit_report(model, log)
    print(report.summary())
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    sindyc = SparseModel.load(args.sindyc_model)
    dmdc = SparseModel.load(args.dmdc_model)
    mpc_config = MpcConfig(horizon=args.horizon)
    results = harness.run_scenarios(
        config, sindyc, dmdc, _parse_seeds(args.seeds),
        mpc_config=mpc_config, max_threads=args.threads)
    paths = harness.report(results, args.out, config,
                           models={"sindyc": sindyc, "dmdc": dmdc})
    for res in results:
        print(f"{res.scenario:>11}: |occ-target| {res.average_deviation:7.3f} %   "
              f"flow {res.average_flow:7.1f} veh/h   "
              f"green {res.average_green_pct:5.1f} %")
    print(f"report -> {paths['summary']}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args.config)
    model = SparseModel.load(args.model)
    rows = horizon_sweep(model, config, _parse_horizons(args.horizons),
                         seeds=_parse_seeds(args.seeds))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"N={row['horizon']}: deviation {row['mean_abs_deviation_pct']:.3f} %  "
              f"flow {row['mean_flow_vph']:.1f} veh/h  "
              f"solve {row['mean_solve_ms']:.1f} ms")
    print(f"sweep -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    config = _load_config(args.config)
    results = harness.load_raw_results(args.results)
    paths = harness.report(results, args.out, config, write_raw=False)
    print(f"report -> {paths['summary']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rampnet",
        description="Ramp metering lab: simulate, identify, control, compare.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="run excitation episodes, write CSV logs")
    p.add_argument("--config", help="network config (default: shipped benchmark)")
    p.add_argument("--controller", default="alinea",
                   choices=harness.FEEDBACK_CONTROLLERS)
    p.add_argument("--seeds", required=True, help="comma separated, e.g. 1,2,3,4")
    p.add_argument("--out", required=True, help="directory for episode CSVs")
    p.set_defaults(func=_cmd_collect)

    p = sub.add_parser("fit", help="identify a model from collected logs")
    p.add_argument("--logs", required=True, help="directory of episode CSVs")
    p.add_argument("--method", default="sindyc", choices=("sindyc", "dmdc"))
    p.add_argument("--order", type=int, default=2, help="polynomial order")
    p.add_argument("--ridge", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=2e-4)
    p.add_argument("--smooth-window", type=int, default=None,
                   help="odd moving-average width applied before differencing")
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("run", help="run the five-scenario comparison")
    p.add_argument("--config")
    p.add_argument("--sindyc-model", required=True)
    p.add_argument("--dmdc-model", required=True)
    p.add_argument("--seeds", required=True, help="evaluation seeds, e.g. 5,6,7")
    p.add_argument("--horizon", type=int, default=4, help="MPC horizon length")
    p.add_argument("--threads", type=int, default=None,
                   help="episode worker threads (default: RAMPNET_THREADS)")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="evaluate a range of MPC horizons")
    p.add_argument("--config")
    p.add_argument("--model", required=True, help="model JSON to control with")
    p.add_argument("--horizons", default="3:7", help="range lo:hi or list 3,5,7")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="rebuild report tables from raw episodes")
    p.add_argument("--config")
    p.add_argument("--results", required=True, help="raw/ directory from a run")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.UsageError, network.ConfigError,
            sysid.InsufficientDataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
