"""Monte Carlo study of read errors under Fermi-level disorder.

Each trial stores a random bit pattern, perturbs every cell's level offset,
solves the readout, and classifies cells against the best threshold that
trial's own current pool admits.  Bit decisions are therefore exactly as
good as a post-fabrication calibration could make them, which is the
operating point the error statistics are meant to describe.

Trials draw from counted generator streams (seed plus trial index), so a
report is reproducible from its configuration alone and trials can run on
any number of threads without coupling their randomness.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from xbar import runio
from xbar.crossbar import calibrate_sneak_params, parametric_solve
from xbar.ivtable import StrandPair, interpolate_current, load_table
from xbar.model import CrossbarSpec
from xbar.nodal import kirchhoff_solve

# fixed sub-stream labels per trial; changing these invalidates every
# previously recorded report
_DELTA_STREAM = 0
_BITS_STREAM = 1

HISTOGRAM_BINS = 64

SOLVERS = ("parametric", "kirchhoff")


@dataclass
class McConfig:
    """One Monte Carlo campaign: array geometry, disorder strength, trial
    count, and the seed everything derives from."""

    m: int
    n: int
    r_int: float
    pair: StrandPair
    delta_max: float
    seed: int
    trials: int = 1000
    p_one: float = 0.5
    v_in: float = 1.0
    solver: str = "parametric"
    per_cell: bool = True  # False draws one offset per trial for the array

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("array dimensions must be at least 1x1")
        if self.r_int <= 0:
            raise ValueError("interconnect resistance must be positive")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if not 0.0 <= self.p_one <= 1.0:
            raise ValueError("p_one must lie in [0, 1]")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver '{self.solver}', expected {SOLVERS}")
        d_hi = min(
            self.pair.logic0_table.delta_grid[-1],
            self.pair.logic1_table.delta_grid[-1],
        )
        if not 0.0 <= self.delta_max <= d_hi:
            raise ValueError(
                f"delta_max {self.delta_max:.6g} outside the tables' range [0, {d_hi:.6g}]"
            )


class ThresholdResult(NamedTuple):
    """Best cut through a labeled current pool.

    polarity +1 reads currents above the threshold as logic 1, -1 reads
    them as logic 0.  single_class marks pools where one label is absent,
    in which case the sentinel threshold classifies everything correctly
    by convention.
    """

    threshold: float
    ber: float
    polarity: int
    single_class: bool


def sample_deltas(config: McConfig, trial: int) -> np.ndarray:
    """Level offsets for one trial, uniform on [0, delta_max].

    The stream is keyed by (seed, trial), independent of execution order."""
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(trial, _DELTA_STREAM))
    )
    if config.per_cell:
        return rng.uniform(0.0, config.delta_max, size=(config.m, config.n))
    return np.full((config.m, config.n), rng.uniform(0.0, config.delta_max))


def sample_bits(config: McConfig, trial: int) -> np.ndarray:
    """Stored pattern for one trial; each cell is logic 1 with p_one."""
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(trial, _BITS_STREAM))
    )
    return (rng.random((config.m, config.n)) < config.p_one).astype(np.int8)


def optimal_threshold(currents, labels) -> ThresholdResult:
    """Exhaustive scan for the misclassification-minimizing cut.

    Candidates are the midpoints between consecutive distinct sorted
    currents plus the two outside sentinels, each tried with both polarity
    assignments.  Ties prefer the cut with the widest gap around it.
    """
    c = np.asarray(currents, dtype=float).ravel()
    y = np.asarray(labels).ravel().astype(np.int8)
    if c.size != y.size:
        raise ValueError("currents and labels must have equal length")
    if c.size == 0:
        raise ValueError("empty current pool")
    n1 = int(np.count_nonzero(y))
    n0 = y.size - n1
    if n0 == 0:
        return ThresholdResult(-np.inf, 0.0, 1, True)
    if n1 == 0:
        return ThresholdResult(np.inf, 0.0, 1, True)

    order = np.argsort(c, kind="stable")
    cs = c[order]
    ys = y[order]
    # cut index k means the threshold sits between cs[k] and cs[k+1];
    # k = -1 and k = size-1 are the outside sentinels
    boundary = np.nonzero(np.diff(cs) > 0)[0]
    cuts = np.concatenate([[-1], boundary, [c.size - 1]])
    ones_le = np.concatenate([[0], np.cumsum(ys)])[cuts + 1]
    errors_high = 2 * ones_le + n0 - (cuts + 1)  # ones below + zeros above
    errors = np.minimum(errors_high, c.size - errors_high)
    polarity = np.where(errors_high <= c.size - errors_high, 1, -1)

    gaps = np.full(cuts.size, np.inf)
    interior = (cuts >= 0) & (cuts < c.size - 1)
    gaps[interior] = cs[cuts[interior] + 1] - cs[cuts[interior]]
    best_err = errors.min()
    candidates = np.nonzero(errors == best_err)[0]
    pick = candidates[np.argmax(gaps[candidates])]

    k = cuts[pick]
    if k < 0:
        threshold = -np.inf
    elif k >= c.size - 1:
        threshold = np.inf
    else:
        threshold = 0.5 * (cs[k] + cs[k + 1])
    return ThresholdResult(
        float(threshold), best_err / c.size, int(polarity[pick]), False
    )


def compute_ber(i_out, bits, threshold: float, polarity: int = 1, mask=None) -> float:
    """Fraction of cells whose thresholded reading disagrees with the
    stored bit; mask=False positions (padding) are left out of the count."""
    i_out = np.asarray(i_out, dtype=float)
    bits = np.asarray(bits)
    reads_one = (i_out > threshold) == (polarity == 1)
    wrong = reads_one != (bits == 1)
    if mask is not None:
        wrong = wrong[np.asarray(mask, dtype=bool)]
    if wrong.size == 0:
        raise ValueError("no cells left to grade")
    return float(np.mean(wrong))


@dataclass
class McReport:
    """Per-trial error rates and thresholds plus pooled current histograms.

    Failed trials (solver did not converge) keep their slot as NaN in the
    per-trial arrays and are listed by index; aggregate numbers cover the
    successful trials only.
    """

    trials: int
    solver: str
    ber_samples: np.ndarray
    threshold_samples: np.ndarray
    polarity_samples: np.ndarray
    v_mean_samples: np.ndarray
    ber_mean: float
    mean_cell_voltage: float
    hist_edges_na: np.ndarray
    hist_counts0: np.ndarray
    hist_counts1: np.ndarray
    failed_trials: tuple


def run_mc(config: McConfig, threads: int | None = None) -> McReport:
    """Run the campaign and aggregate; trial order never affects values."""
    threads = runio.resolve_threads(threads)
    params = None
    if config.solver == "parametric":
        probe = CrossbarSpec(
            m=config.m,
            n=config.n,
            r_int=config.r_int,
            bits=np.zeros((config.m, config.n), dtype=np.int8),
            pair=config.pair,
            v_in=config.v_in,
        )
        # calibration depends on geometry and tables only, never on the
        # sampled bits or offsets, so one fit serves every trial
        params = calibrate_sneak_params(probe)

    # histogram support: currents can never exceed the strongest cell's
    # full-bias current, so the bin range is known before any trial runs
    i_top = max(
        float(interpolate_current(config.pair.logic1_table, config.v_in, 0.0)),
        float(interpolate_current(config.pair.logic0_table, config.v_in, 0.0)),
    )
    edges = np.linspace(0.0, i_top, HISTOGRAM_BINS + 1)

    def run_trial(t):
        bits = sample_bits(config, t)
        delta = sample_deltas(config, t)
        spec = CrossbarSpec(
            m=config.m,
            n=config.n,
            r_int=config.r_int,
            bits=bits,
            pair=config.pair,
            delta=delta,
            v_in=config.v_in,
        )
        if config.solver == "parametric":
            sol = parametric_solve(spec, params, threads=1)
        else:
            sol = kirchhoff_solve(spec, threads=1)
        if not sol.converged:
            return None
        cut = optimal_threshold(sol.i_out.ravel(), bits.ravel())
        pooled = np.clip(sol.i_out.ravel(), edges[0], edges[-1])
        h0, _ = np.histogram(pooled[bits.ravel() == 0], bins=edges)
        h1, _ = np.histogram(pooled[bits.ravel() == 1], bins=edges)
        return cut, float(sol.v_cell.mean()), h0, h1

    if threads == 1 or config.trials == 1:
        outcomes = [run_trial(t) for t in range(config.trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_trial, range(config.trials)))

    ber = np.full(config.trials, np.nan)
    thr = np.full(config.trials, np.nan)
    pol = np.zeros(config.trials, dtype=int)
    v_mean = np.full(config.trials, np.nan)
    h0 = np.zeros(HISTOGRAM_BINS, dtype=np.int64)
    h1 = np.zeros(HISTOGRAM_BINS, dtype=np.int64)
    failed = []
    for t, outcome in enumerate(outcomes):
        if outcome is None:
            failed.append(t)
            continue
        cut, v_bar, t0, t1 = outcome
        ber[t] = cut.ber
        thr[t] = cut.threshold
        pol[t] = cut.polarity
        v_mean[t] = v_bar
        h0 += t0
        h1 += t1

    ok = ~np.isnan(ber)
    if not np.any(ok):
        raise RuntimeError("every trial failed to converge")
    return McReport(
        trials=config.trials,
        solver=config.solver,
        ber_samples=ber,
        threshold_samples=thr,
        polarity_samples=pol,
        v_mean_samples=v_mean,
        ber_mean=float(ber[ok].mean()),
        mean_cell_voltage=float(v_mean[ok].mean()),
        hist_edges_na=edges * 1e9,
        hist_counts0=h0,
        hist_counts1=h1,
        failed_trials=tuple(failed),
    )


def save_mc_report(report: McReport, out_dir) -> None:
    """JSON summary plus per-trial and histogram CSVs."""
    out = Path(out_dir)
    runio.dump_json(
        {
            "trials": report.trials,
            "solver": report.solver,
            "ber_mean": report.ber_mean,
            "mean_cell_voltage_v": report.mean_cell_voltage,
            "failed_trials": list(report.failed_trials),
        },
        out / "mc_summary.json",
    )
    runio.write_rows_csv(
        out / "mc_trials.csv",
        ["trial", "ber", "threshold_a", "polarity", "mean_cell_voltage_v"],
        [
            (
                t,
                report.ber_samples[t],
                report.threshold_samples[t],
                int(report.polarity_samples[t]),
                report.v_mean_samples[t],
            )
            for t in range(report.trials)
        ],
    )
    runio.write_rows_csv(
        out / "mc_histogram.csv",
        ["bin_low_na", "bin_high_na", "count_logic0", "count_logic1"],
        [
            (
                report.hist_edges_na[k],
                report.hist_edges_na[k + 1],
                int(report.hist_counts0[k]),
                int(report.hist_counts1[k]),
            )
            for k in range(report.hist_counts0.size)
        ],
    )


def load_mc_config(path) -> McConfig:
    """Read a campaign description; table paths resolve relative to it."""
    path = Path(path)
    raw = runio.load_json(path)
    base = path.parent
    logic1 = load_table(base / str(runio.require(raw, "logic1_table", path)))
    logic0 = load_table(base / str(runio.require(raw, "logic0_table", path)))
    return McConfig(
        m=int(runio.require(raw, "m", path)),
        n=int(runio.require(raw, "n", path)),
        r_int=float(runio.require(raw, "r_int_ohm", path)),
        pair=StrandPair(logic0_table=logic0, logic1_table=logic1),
        delta_max=float(runio.require(raw, "delta_max_ev", path)),
        seed=int(runio.require(raw, "seed", path)),
        trials=int(raw.get("trials", 1000)),
        p_one=float(raw.get("p_one", 0.5)),
        v_in=float(raw.get("v_in_v", 1.0)),
        solver=str(raw.get("solver", "parametric")),
        per_cell=bool(raw.get("per_cell", True)),
    )
