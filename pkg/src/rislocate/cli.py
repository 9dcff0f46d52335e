"""Command-line entry point: ``ris-locate bench|crlb-map|locate|simulate``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import harness
from .errors import InvalidInput, RisLocateError
from .scenario import FarFieldWarning, SystemConfig


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _grid(text: str) -> tuple:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("grid must look like 10x10") from exc
    return nx, ny


def _common(parser: argparse.ArgumentParser, trials: int) -> None:
    parser.add_argument("--config", type=Path, help="flat key-value file (JSON, YAML or key = value)")
    parser.add_argument("--seed", type=_u64, help="overrides rng_seed")
    parser.add_argument("--trials", type=int, default=trials)
    parser.add_argument("--out", type=Path, default=Path("results"),
                        help="output directory, or a .csv file path")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config field; repeatable")
    parser.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ris-locate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="FPB vs CPP gain distribution and solve-time scaling")
    _common(p, 200)
    p.add_argument("--kind", choices=("cdf", "timing", "all"), default="all")
    p.add_argument("--sizes", type=_ints, default=(32, 64, 128, 256), help="segment lengths for timing")
    p.add_argument("--no-timing", action="store_true", help="leave wall-clock columns empty")

    p = sub.add_parser("crlb-map", help="CRLB over a grid of the area of interest")
    _common(p, 1)
    p.add_argument("--grid", type=_grid, default=(10, 10))
    p.add_argument("--snr-db", type=_floats, default=(6.0,))
    p.add_argument("--phases", choices=("random", "fpb"), default="fpb")

    p = sub.add_parser("locate", help="Monte Carlo localization (CDF over random UEs or RMSE at probe points)")
    _common(p, 200)
    p.add_argument("--snr-db", type=_floats, help="default 8 dB, or -10..30 dB in 2 dB steps with --probe-points")
    p.add_argument("--probe-points", action="store_true",
                   help="RMSE and CRLB at the five probe points instead of random UEs")

    p = sub.add_parser("simulate", help="one protocol run with tensor and schedule dumps")
    _common(p, 1)
    p.add_argument("--snr-db", type=float, default=8.0)
    p.add_argument("--ue", type=_floats, help="UE position x,y (default: random in the area)")
    p.add_argument("--binary", action="store_true", help="dump tensors as raw complex128 instead of CSV")
    return parser


def load_config(args) -> SystemConfig:
    changes = {}
    for item in args.set:
        if "=" not in item:
            raise InvalidInput(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        changes[key.strip()] = value.strip()
    with warnings.catch_warnings():
        # only the final configuration should report far-field violations
        if changes:
            warnings.simplefilter("ignore", FarFieldWarning)
        cfg = SystemConfig.from_file(args.config) if args.config else SystemConfig()
    if changes:
        cfg = SystemConfig.from_dict({**cfg.to_dict(), **changes})
    if args.seed is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    return cfg


def _target(out: Path, default_name: str) -> tuple[Path, Path]:
    """CSV path and the directory for side files."""
    if out.suffix.lower() == ".csv":
        return out, out.parent
    return out / default_name, out


def _write(table, csv_path: Path, outdir: Path) -> None:
    harness.emit_csv(table, csv_path)
    if table.summary:
        harness.emit_summary(table, outdir / (csv_path.stem + "_summary.csv"))


def cmd_bench(args, cfg) -> list[Path]:
    written = []
    csv_path, outdir = _target(args.out, "bench_cdf.csv")
    if args.kind in ("cdf", "all"):
        spec = harness.ExperimentSpec("beamform-cdf", trials=args.trials, record_timing=not args.no_timing)
        table = harness.monte_carlo(spec, cfg)
        _write(table, csv_path, outdir)
        for method in ("FPB", "CPP"):
            vals = np.sort([r[5] for r in table.rows if r[0] == method])
            dat = outdir / f"{csv_path.stem}_{method.lower()}.dat"
            harness.emit_two_column(vals, (np.arange(len(vals)) + 1) / len(vals), dat)
            written.append(dat)
        written.append(csv_path)
    if args.kind in ("timing", "all"):
        spec = harness.ExperimentSpec("beamform-timing", trials=args.trials, sizes=args.sizes,
                                      record_timing=not args.no_timing)
        table = harness.monte_carlo(spec, cfg)
        path = csv_path if args.kind == "timing" and args.out.suffix.lower() == ".csv" else outdir / "bench_timing.csv"
        _write(table, path, outdir)
        written.append(path)
    return written


def cmd_crlb_map(args, cfg) -> list[Path]:
    csv_path, outdir = _target(args.out, f"crlb_map_{args.phases}.csv")
    spec = harness.ExperimentSpec("crlb-map", trials=1, snr_list_db=args.snr_db, grid=args.grid, phases=args.phases)
    table = harness.monte_carlo(spec, cfg)
    _write(table, csv_path, outdir)
    return [csv_path]


def cmd_locate(args, cfg) -> list[Path]:
    kind = "rmse-vs-snr" if args.probe_points else "loc-cdf"
    csv_path, outdir = _target(args.out, "rmse_vs_snr.csv" if args.probe_points else "locate.csv")
    snr = args.snr_db or (harness.DEFAULT_SNR_SWEEP if args.probe_points else (8.0,))
    spec = harness.ExperimentSpec(kind, trials=args.trials, snr_list_db=snr)
    table = harness.monte_carlo(spec, cfg)
    _write(table, csv_path, outdir)
    if args.probe_points:
        return [csv_path]
    errs = np.sort([float(v) for v in table.column("fine_err_m") if v != ""])
    dat = outdir / f"{csv_path.stem}_fine_cdf.dat"
    harness.emit_two_column(errs, (np.arange(len(errs)) + 1) / max(len(errs), 1), dat)
    return [csv_path, dat]


def cmd_simulate(args, cfg) -> list[Path]:
    from .scenario import sample_positions

    cfg = cfg.with_snr_db(args.snr_db)
    outdir = args.out if args.out.suffix.lower() != ".csv" else args.out.parent
    outdir.mkdir(parents=True, exist_ok=True)
    rng = harness.trial_rng(cfg.rng_seed, 0)
    ue = np.array(args.ue) if args.ue else sample_positions(rng, cfg, 1)[0]
    if ue.shape != (2,):
        raise InvalidInput("--ue expects two numbers x,y")
    trace = harness.run_protocol(ue, cfg, rng)
    raw = trace.raw
    trace.schedule.to_csv(outdir / "schedule.csv")
    if args.binary:
        raw.dump_binary(outdir / "tensor_raw.bin")
    else:
        raw.dump_csv(outdir / "tensor_raw.csv")
    table = harness.Table(["true_x", "true_y", "coarse_x", "coarse_y", "fine_x", "fine_y", "coarse_err_m",
                           "fine_err_m", "first_window_gain", "second_window_gain"])
    table.add(true_x=ue[0], true_y=ue[1], coarse_x=trace.coarse.estimate[0], coarse_y=trace.coarse.estimate[1],
              fine_x=trace.fine.final_estimate[0], fine_y=trace.fine.final_estimate[1],
              coarse_err_m=trace.coarse_error, fine_err_m=trace.fine_error,
              first_window_gain=trace.first_window_gain, second_window_gain=trace.second_window_gain)
    path = outdir / "simulate.csv"
    harness.emit_csv(table, path)
    (outdir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [path]


COMMANDS = {"bench": cmd_bench, "crlb-map": cmd_crlb_map, "locate": cmd_locate, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FarFieldWarning)
        status, written = _run(args)
    for message in dict.fromkeys(str(w.message) for w in caught):
        print(f"warning: {message}", file=sys.stderr)
    for path in written:
        print(path)
    return status


def _run(args) -> tuple[int, list]:
    try:
        cfg = load_config(args)
        if args.trials < 1:
            raise InvalidInput("--trials must be >= 1")
        written = COMMANDS[args.command](args, cfg)
        if args.figures:
            from . import report

            written += report.render(args.command, written)
    except RisLocateError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1, []
    except OSError as exc:
        print(json.dumps({"error": "io_error", "message": str(exc)}), file=sys.stderr)
        return 1, []
    return 0, written

if __name__ == "__main__":
    sys.exit(main())
