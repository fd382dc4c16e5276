"""Command-line front end.

Every subcommand writes its numeric outputs plus a RunManifest into the
directory named by --out.  The manifest digest covers the resolved inputs
(file contents, not paths), so two runs with equal manifests are
guaranteed to produce byte-identical numbers.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

import argparse
import csv
import dataclasses
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import runio
from .crossbar import calibrate_sneak_params, parametric_solve
from .defaults import shipped_pair
from .ivtable import StrandPair, load_table, save_table, synthesize_table
from .model import load_crossbar_spec, save_readout_solution
from .montecarlo import load_mc_config, run_mc, save_mc_report
from .nodal import kirchhoff_solve
from .storage import ImageJob, run_storage_benchmark, save_storage_report
from .transport import ContactProbeConfig, iv_sweep, load_quantum_system

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _parse_size(text: str):
    m, sep, n = text.partition("x")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected <m>x<n>, got '{text}'")
    try:
        m, n = int(m), int(n)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected <m>x<n>, got '{text}'") from err
    if m < 1 or n < 1:
        raise argparse.ArgumentTypeError("array dimensions must be positive")
    return m, n


def _parse_rints(text: str):
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"bad resistance list '{text}'") from err
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("resistances must be positive")
    return values


def _table_payload(table) -> dict:
    return {
        "strand_id": table.strand_id,
        "v_grid_v": table.v_grid.tolist(),
        "delta_grid_ev": table.delta_grid.tolist(),
        "current_a": table.current.ravel().tolist(),
    }


def _write_manifest(command: str, payload, seed, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runio.RunManifest(
        command=command, config_digest=runio.digest_payload(payload), seed=seed
    ).write(out)


# --- table generation -------------------------------------------------------


def cmd_iv_gen(args) -> int:
    system = load_quantum_system(args.config)
    config = ContactProbeConfig(
        gamma_contact=args.gamma_contact, gamma_probe=args.gamma_probe
    )
    v_grid = np.linspace(0.0, args.v_max, args.v_points)
    delta_grid = np.linspace(0.0, args.delta_max, args.delta_points)
    table = iv_sweep(
        system,
        config,
        v_grid,
        delta_grid,
        temperature=args.temperature,
        threads=args.threads,
        strand_id=args.strand_id,
    )
    payload = {
        "system": runio.load_json(args.config),
        "gamma_contact": args.gamma_contact,
        "gamma_probe": args.gamma_probe,
        "v_max": args.v_max,
        "v_points": args.v_points,
        "delta_max": args.delta_max,
        "delta_points": args.delta_points,
        "temperature": args.temperature,
        "strand_id": args.strand_id,
    }
    _write_manifest("iv-gen", payload, None, args.out)
    save_table(table, Path(args.out) / "iv_table.json")
    print(f"iv-gen: {table.v_grid.size}x{table.delta_grid.size} grid -> iv_table.json")
    return EXIT_OK


def cmd_iv_synth(args) -> int:
    table = synthesize_table(
        args.r_low,
        args.r_high,
        knee=args.knee,
        delta_sensitivity=args.sensitivity,
        strand_id=args.strand_id,
    )
    payload = {
        "r_low": args.r_low,
        "r_high": args.r_high,
        "knee": args.knee,
        "sensitivity": args.sensitivity,
        "strand_id": args.strand_id,
    }
    _write_manifest("iv-synth", payload, None, args.out)
    save_table(table, Path(args.out) / "iv_table.json")
    print(f"iv-synth: strand '{table.strand_id}' -> iv_table.json")
    return EXIT_OK


# --- readout ----------------------------------------------------------------


def _spec_payload(spec) -> dict:
    return {
        "m": spec.m,
        "n": spec.n,
        "r_int_ohm": spec.r_int,
        "v_in_v": spec.v_in,
        "bits": spec.bits.ravel().tolist(),
        "delta_ev": spec.delta.ravel().tolist(),
        "logic1": _table_payload(spec.pair.logic1_table),
        "logic0": _table_payload(spec.pair.logic0_table),
    }


def _run_readout(args, solver: str) -> int:
    spec = load_crossbar_spec(args.config)
    if solver == "parametric":
        params = calibrate_sneak_params(spec)
        solution = parametric_solve(spec, params, threads=args.threads)
    else:
        solution = kirchhoff_solve(spec, threads=args.threads)
    payload = {"spec": _spec_payload(spec), "solver": solver}
    _write_manifest(solver, payload, None, args.out)
    save_readout_solution(solution, args.out)
    print(
        f"{solver}: power {solution.power:.6e} W in {solution.iterations} sweeps,"
        f" residual {solution.residual:.3e} V"
    )
    if not solution.converged:
        print(f"{solver}: iteration did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_solve(args) -> int:
    return _run_readout(args, args.solver)


def cmd_oracle(args) -> int:
    return _run_readout(args, "kirchhoff")


# --- campaigns ----------------------------------------------------------------


def cmd_mc(args) -> int:
    config = load_mc_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.rint is not None:
        if len(args.rint) != 1:
            raise ValueError("mc takes a single --rint value")
        overrides["r_int"] = args.rint[0]
    if args.delta_max is not None:
        overrides["delta_max"] = args.delta_max
    if args.size is not None:
        overrides["m"], overrides["n"] = args.size
    if args.solver is not None:
        overrides["solver"] = args.solver
    if overrides:
        config = dataclasses.replace(config, **overrides)
    report = run_mc(config, threads=args.threads)
    payload = {
        "m": config.m,
        "n": config.n,
        "r_int_ohm": config.r_int,
        "delta_max_ev": config.delta_max,
        "seed": config.seed,
        "trials": config.trials,
        "p_one": config.p_one,
        "v_in_v": config.v_in,
        "solver": config.solver,
        "per_cell": config.per_cell,
        "logic1": _table_payload(config.pair.logic1_table),
        "logic0": _table_payload(config.pair.logic0_table),
    }
    _write_manifest("mc", payload, config.seed, args.out)
    save_mc_report(report, args.out)
    print(
        f"mc: {report.trials} trials, mean BER {report.ber_mean:.6f},"
        f" {len(report.failed_trials)} failed"
    )
    return EXIT_OK


def _load_store_config(path):
    path = Path(path)
    raw = runio.load_json(path)
    base = path.parent
    jobs = []
    image_digests = []
    for entry in runio.require(raw, "images", path):
        img_path = base / str(runio.require(entry, "path", path))
        payload = img_path.read_bytes()
        job = ImageJob(
            source=payload,
            binarization=str(entry.get("binarization", "raw-bits")),
            level=int(entry.get("level", 128)),
            name=str(entry.get("name", img_path.stem)),
        )
        jobs.append(job)
        image_digests.append(
            {
                "name": job.name,
                "binarization": job.binarization,
                "level": job.level,
                "sha256": hashlib.sha256(payload).hexdigest(),
            }
        )
    sizes = [tuple(int(x) for x in pair) for pair in runio.require(raw, "sizes", path)]
    r_ints = [float(r) for r in runio.require(raw, "r_int_ohm", path)]
    v_in = float(raw.get("v_in_v", 1.0))
    if "logic1_table" in raw or "logic0_table" in raw:
        pair = StrandPair(
            logic0_table=load_table(base / str(runio.require(raw, "logic0_table", path))),
            logic1_table=load_table(base / str(runio.require(raw, "logic1_table", path))),
        )
    else:
        pair = shipped_pair()
    return jobs, sizes, r_ints, v_in, pair, image_digests


def cmd_store(args) -> int:
    jobs, sizes, r_ints, v_in, pair, image_digests = _load_store_config(args.config)
    if args.size is not None:
        sizes = [args.size]
    if args.rint is not None:
        r_ints = args.rint
    solver = args.solver or "parametric"
    report = run_storage_benchmark(
        jobs,
        r_ints=r_ints,
        sizes=sizes,
        pair=pair,
        v_in=v_in,
        solver=solver,
        threads=args.threads,
    )
    payload = {
        "images": image_digests,
        "sizes": [list(s) for s in sizes],
        "r_int_ohm": r_ints,
        "v_in_v": v_in,
        "solver": solver,
        "logic1": _table_payload(pair.logic1_table),
        "logic0": _table_payload(pair.logic0_table),
    }
    _write_manifest("store", payload, None, args.out)
    save_storage_report(report, args.out)
    print(f"store: {len(report.per_tile)} tiles, {report.failures} failed")
    if report.per_tile and report.failures == len(report.per_tile):
        print("store: every tile failed to converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --- plot export --------------------------------------------------------------


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def cmd_plot_data(args) -> int:
    src = Path(args.config)
    if not src.is_dir():
        raise ValueError(f"{src}: expected a report directory")
    out = Path(args.out)
    consumed = {}
    written = []

    def digest_file(name):
        consumed[name] = hashlib.sha256((src / name).read_bytes()).hexdigest()

    if (src / "mc_histogram.csv").exists():
        digest_file("mc_histogram.csv")
        digest_file("mc_trials.csv")
        _, hist = _read_csv_rows(src / "mc_histogram.csv")
        out.mkdir(parents=True, exist_ok=True)
        runio.write_rows_csv(
            out / "histogram.csv",
            ["bin_center_na", "count_logic0", "count_logic1"],
            [
                (0.5 * (float(lo) + float(hi)), int(c0), int(c1))
                for lo, hi, c0, c1 in hist
            ],
        )
        _, trials = _read_csv_rows(src / "mc_trials.csv")
        runio.write_rows_csv(
            out / "ber_series.csv",
            ["trial", "ber"],
            [(int(row[0]), float(row[1])) for row in trials],
        )
        written = ["histogram.csv", "ber_series.csv"]
    elif (src / "storage_summary.json").exists():
        digest_file("storage_summary.json")
        summary = runio.load_json(src / "storage_summary.json")
        out.mkdir(parents=True, exist_ok=True)
        runio.write_rows_csv(
            out / "boxplot.csv",
            [
                "size",
                "r_int_ohm",
                "bit_load_pct",
                "count",
                "min_ber",
                "q1_ber",
                "median_ber",
                "q3_ber",
                "max_ber",
            ],
            [
                (
                    f"{row['m']}x{row['n']}",
                    row["r_int_ohm"],
                    row["bit_load_pct"],
                    row["count"],
                    row["min"],
                    row["q1"],
                    row["median"],
                    row["q3"],
                    row["max"],
                )
                for row in summary["binned_ber"]
            ],
        )
        runio.write_rows_csv(
            out / "power.csv",
            ["size", "r_int_ohm", "power_mean_w"],
            [
                (f"{row['m']}x{row['n']}", row["r_int_ohm"], row["power_mean_w"])
                for row in summary["power_vs_rint"]
            ],
        )
        written = ["boxplot.csv", "power.csv"]
    elif (src / "v_cell.csv").exists():
        for name in ("v_cell", "i_out", "v_normalized"):
            if not (src / f"{name}.csv").exists():
                continue
            digest_file(f"{name}.csv")
            matrix = np.atleast_2d(
                np.loadtxt(src / f"{name}.csv", delimiter=",", ndmin=2)
            )
            runio.write_long_csv(out / f"heat_{name}.csv", matrix)
            written.append(f"heat_{name}.csv")
    else:
        raise ValueError(f"{src}: no recognizable report files")

    _write_manifest("plot-data", {"sources": consumed}, None, out)
    print(f"plot-data: wrote {', '.join(written)}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="xbar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, func, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        if config:
            p.add_argument("--config", required=True, help="input file or directory")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads (default: XBAR_THREADS or 1)",
        )
        return p

    p = add("iv-gen", cmd_iv_gen, "integrate a current table from a quantum system")
    p.add_argument("--strand-id", default="system")
    p.add_argument("--v-max", type=float, default=1.0)
    p.add_argument("--v-points", type=int, default=21)
    p.add_argument("--delta-max", type=float, default=0.2)
    p.add_argument("--delta-points", type=int, default=5)
    p.add_argument("--gamma-contact", type=float, default=1.0)
    p.add_argument("--gamma-probe", type=float, default=0.010)
    p.add_argument("--temperature", type=float, default=300.0)

    p = add("iv-synth", cmd_iv_synth, "synthesize a smooth current table", config=False)
    p.add_argument("--r-low", type=float, required=True)
    p.add_argument("--r-high", type=float, required=True)
    p.add_argument("--knee", type=float, default=0.35)
    p.add_argument("--sensitivity", type=float, default=8.0)
    p.add_argument("--strand-id", default="synth")

    p = add("solve", cmd_solve, "readout via the sneak-path model")
    p.add_argument(
        "--solver", choices=("parametric", "kirchhoff"), default="parametric"
    )

    add("oracle", cmd_oracle, "readout via full nodal analysis")

    p = add("mc", cmd_mc, "seeded variability campaign")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--rint", type=_parse_rints, default=None)
    p.add_argument("--delta-max", type=float, default=None)
    p.add_argument("--size", type=_parse_size, default=None)
    p.add_argument("--solver", choices=("parametric", "kirchhoff"), default=None)

    p = add("store", cmd_store, "image storage benchmark sweep")
    p.add_argument("--rint", type=_parse_rints, default=None)
    p.add_argument("--size", type=_parse_size, default=None)
    p.add_argument("--solver", choices=("parametric", "kirchhoff"), default=None)

    add("plot-data", cmd_plot_data, "export gnuplot-ready columns from a report")

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
