"""Calibrated parametric model of the crossbar read.

Instead of solving the whole resistive mesh, each activated row is treated
as a one-dimensional ladder: the cell voltage at column j is the input bias
times a row factor alpha_i (source-side and return-path attenuation,
calibrated once against the nodal reference on a homogeneous linear array)
times an in-row fraction that depends on the actual per-cell conductances.
Measured column currents then pick up a calibrated column factor beta_j.

The in-row fraction comes in two flavors:
  - "quadratic": closed-form second-order expansion of the ladder, cheap
    and j-monotone by construction;
  - "ladder": exact tridiagonal solve of the one-dimensional chain.
Both fold the bitline return path into each cell as a series resistance of
(m - i) segments, which is what makes the 1x1 case exact.  Calibration and
solving must use the same flavor; the shared default keeps that automatic.

Runtime scales with the number of cells instead of the number of mesh
nodes, which is the whole point: bit-error statistics need thousands of
array reads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.linalg import solve_banded

from xbar import runio
from xbar.ivtable import interpolate_current, small_signal_conductance
from xbar.model import CrossbarSpec, ReadoutSolution, SneakParams
from xbar.nodal import (
    ANDERSON_DEPTH,
    DEFAULT_MAX_ITER,
    DEFAULT_RELAX,
    DEFAULT_TOL,
    INIT_BIAS,
    solve_linear_homogeneous,
)

DEFAULT_FRACTION_MODE = "ladder"
FRACTION_MODES = ("quadratic", "ladder")


def default_g_mean(spec: CrossbarSpec) -> float:
    """Average of the two strands' small-signal conductances at the read
    bias, the natural linearization point for a roughly half-loaded array."""
    g1 = small_signal_conductance(spec.pair.logic1_table, spec.v_in, 0.0)
    g0 = small_signal_conductance(spec.pair.logic0_table, spec.v_in, 0.0)
    return 0.5 * (g1 + g0)


def _cell_loads(g_row: np.ndarray, r_int: float, return_segments: int) -> np.ndarray:
    """Dimensionless per-column load of one row's ladder: each cell in
    series with its bitline return path, relative to one segment."""
    return r_int / (1.0 / g_row + return_segments * r_int)


def _quadratic_fractions(c: np.ndarray) -> np.ndarray:
    """Second-order in-row voltage profile, normalized to the source node.

    Column j keeps 1 + sum_{k>j} (k - j)*c_k of the profile accumulated at
    the source, 1 + sum_k (k + 1)*c_k; both follow from expanding the exact
    ladder to second order in the loads."""
    n = c.size
    weights = np.arange(1, n + 1) * c
    tail_c = np.concatenate([np.cumsum(c[::-1])[::-1][1:], [0.0]])
    tail_w = np.concatenate([np.cumsum(weights[::-1])[::-1][1:], [0.0]])
    numer = 1.0 + tail_w - np.arange(1, n + 1) * tail_c
    denom = 1.0 + weights.sum()
    return numer / denom


def _ladder_fractions(c: np.ndarray) -> np.ndarray:
    """Exact in-row voltage profile of the loaded ladder, normalized to the
    source node: wordline nodes joined by unit segments, each node loaded
    to ground by c_j, the first node fed from the source through one
    segment."""
    n = c.size
    diag = 1.0 + c
    diag[:-1] += 1.0
    if n == 1:
        return np.array([1.0 / diag[0]])
    ab = np.zeros((3, n))
    ab[0, 1:] = -1.0
    ab[1] = diag
    ab[2, :-1] = -1.0
    rhs = np.zeros(n)
    rhs[0] = 1.0
    return solve_banded((1, 1), ab, rhs)


def _row_fractions(
    g_row: np.ndarray, r_int: float, return_segments: int, mode: str
) -> np.ndarray:
    c = _cell_loads(g_row, r_int, return_segments)
    if mode == "quadratic":
        return _quadratic_fractions(c)
    if mode == "ladder":
        return _ladder_fractions(c)
    raise ValueError(f"unknown fraction mode '{mode}', expected one of {FRACTION_MODES}")


def _row_chord(spec: CrossbarSpec, i: int, v_abs: np.ndarray) -> np.ndarray:
    # clamp to the stored bias range; mixing states may overshoot it
    g = np.empty(spec.n)
    row_bits = spec.bits[i]
    row_delta = spec.delta[i]
    for bit, table in ((0, spec.pair.logic0_table), (1, spec.pair.logic1_table)):
        mask = row_bits == bit
        if np.any(mask):
            v = np.minimum(v_abs[mask], table.v_grid[-1])
            g[mask] = small_signal_conductance(table, v, row_delta[mask])
    return g


def calibrate_sneak_params(
    spec: CrossbarSpec,
    g_mean: float | None = None,
    fraction_mode: str = DEFAULT_FRACTION_MODE,
) -> SneakParams:
    """Fit the row and column factors against the nodal reference.

    The reference problem is the same array geometry with every cell held
    at the fixed conductance g_mean, which keeps it linear: one sparse
    factorization covers all row activations.  beta_j is the ratio of the
    reference's measured column current to the current its own cell voltage
    would push through g_mean, averaged over activated rows; alpha_i is
    whatever scale makes the in-row fraction reproduce the reference's
    first-column voltage.  Both are clamped to (0, 1].
    """
    if g_mean is None:
        g_mean = default_g_mean(spec)
    if g_mean <= 0:
        raise ValueError("mean conductance must be positive")
    v_ref, i_ref, _ = solve_linear_homogeneous(
        spec.m, spec.n, spec.r_int, g_mean, spec.v_in
    )
    beta = (i_ref / (g_mean * v_ref)).mean(axis=0)
    g_row = np.full(spec.n, g_mean)
    alpha = np.empty(spec.m)
    for i in range(spec.m):
        frac = _row_fractions(g_row, spec.r_int, spec.m - i, fraction_mode)
        alpha[i] = v_ref[i, 0] / (spec.v_in * frac[0])
    tiny = np.finfo(float).tiny
    return SneakParams(
        alpha=np.clip(alpha, tiny, 1.0), beta=np.clip(beta, tiny, 1.0)
    )


def _parametric_row(
    spec: CrossbarSpec,
    params: SneakParams,
    i: int,
    fraction_mode: str,
    tol: float,
    max_iter: int,
    relax: float,
):
    """Picard fixed point of one row: conductances from the tables at the
    latest voltages, voltages from the ladder fraction at the latest
    conductances."""
    full_scale = spec.v_in * params.alpha[i]
    return_segments = spec.m - i

    def run_stage(scale, g_row, cap, stage_tol):
        """Anderson-accelerated Picard at one bias scale: extrapolate from
        the recent residual history; after a residual blow-up, or when the
        residual plateaus (a bounded limit cycle, which never trips the
        blow-up test), drop the history and fall back to a damped step
        whose relaxation halves on every such event.  Heavy damping breaks
        cycles the knee of a steep table can otherwise sustain."""
        state = None
        evaluated = None
        residual = np.inf
        best = np.inf
        converged = False
        history_v, history_r = [], []
        local_relax = relax
        stall = 0
        iterations = 0

        def damped_reset(r):
            nonlocal state, local_relax, stall
            history_v.clear()
            history_r.clear()
            state = state + local_relax * r
            local_relax = max(0.1, 0.5 * local_relax)
            stall = 0

        for iterations in range(1, cap + 1):
            evaluated = scale * _row_fractions(
                g_row, spec.r_int, return_segments, fraction_mode
            )
            if state is None:
                state = evaluated
            else:
                r = evaluated - state
                residual = float(np.max(np.abs(r)))
                if residual <= stage_tol:
                    converged = True
                    break
                if residual > 2.0 * best and history_v:
                    damped_reset(r)
                else:
                    stall = stall + 1 if residual > 0.9 * best else 0
                    best = min(best, residual)
                    if stall >= 8:
                        damped_reset(r)
                    else:
                        history_v.append(state)
                        history_r.append(r)
                        if len(history_v) > ANDERSON_DEPTH + 1:
                            history_v.pop(0)
                            history_r.pop(0)
                        if len(history_v) >= 2:
                            dr = np.stack(
                                [history_r[k + 1] - history_r[k] for k in range(len(history_r) - 1)],
                                axis=1,
                            )
                            dv = np.stack(
                                [history_v[k + 1] - history_v[k] for k in range(len(history_v) - 1)],
                                axis=1,
                            )
                            gamma, *_ = np.linalg.lstsq(dr, r, rcond=None)
                            state = state + r - (dv + dr) @ gamma
                        else:
                            state = evaluated
            g_row = _row_chord(spec, i, np.abs(state))
        return evaluated, g_row, iterations, residual, converged

    g_start = _row_chord(spec, i, np.full(spec.n, INIT_BIAS))
    v, g_row, total, residual, converged = run_stage(
        full_scale, g_start, min(60, max_iter), tol
    )
    if not converged and total < max_iter:
        g_row = g_start
        for level in (0.25, 0.5, 0.75, 1.0):
            remaining = max_iter - total
            if remaining <= 0:
                break
            final = level == 1.0
            cap = remaining if final else max(10, remaining // 8)
            v, g_row, used, residual, converged = run_stage(
                level * full_scale, g_row, cap, tol if final else 10.0 * tol
            )
            total += used
    return v, total, converged, residual


def readout_currents(
    v_cell: np.ndarray, params: SneakParams, spec: CrossbarSpec
) -> np.ndarray:
    """Measurable column currents: each cell's table current at its solved
    voltage, attenuated by the column factor."""
    out = np.empty((spec.m, spec.n))
    for bit, table in ((0, spec.pair.logic0_table), (1, spec.pair.logic1_table)):
        mask = spec.bits == bit
        if np.any(mask):
            out[mask] = interpolate_current(table, v_cell[mask], spec.delta[mask])
    return out * params.beta[None, :]


def normalized_voltages(
    v_cell: np.ndarray, params: SneakParams, spec: CrossbarSpec
) -> np.ndarray:
    """Cell voltages with the row scale divided out, isolating the in-row
    degradation profile."""
    return v_cell / (spec.v_in * params.alpha[:, None])


def compute_power(spec: CrossbarSpec, solution: ReadoutSolution) -> float:
    """Total power drawn from the source across the m row activations.

    Summing over activations (rather than averaging) keeps the number
    monotone in array size, which is how read cost scales in practice.
    The nodal path reports the source current directly; the parametric
    path recovers it as the sum of measured column currents, which is the
    same number whenever charge is conserved.
    """
    if solution.source_current is not None:
        total = float(np.sum(solution.source_current))
    else:
        total = float(np.sum(solution.i_out))
    return spec.v_in * total


def parametric_solve(
    spec: CrossbarSpec,
    params: SneakParams,
    fraction_mode: str = DEFAULT_FRACTION_MODE,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    relax: float = DEFAULT_RELAX,
    threads: int | None = None,
) -> ReadoutSolution:
    """Read every row of the array through the calibrated ladder model.

    Row solves are independent and run on a thread pool when asked to;
    results merge in row order, so the thread count never changes values.
    """
    if params.alpha.size != spec.m or params.beta.size != spec.n:
        raise ValueError(
            f"params sized {params.alpha.size}x{params.beta.size} do not fit "
            f"a {spec.m}x{spec.n} array"
        )
    threads = runio.resolve_threads(threads)

    def solve_row(i):
        return _parametric_row(spec, params, i, fraction_mode, tol, max_iter, relax)

    if threads == 1 or spec.m == 1:
        rows = [solve_row(i) for i in range(spec.m)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(solve_row, range(spec.m)))

    v_cell = np.vstack([r[0] for r in rows])
    i_out = readout_currents(v_cell, params, spec)
    solution = ReadoutSolution(
        v_cell=v_cell,
        i_out=i_out,
        power=0.0,
        iterations=max(r[1] for r in rows),
        converged=all(r[2] for r in rows),
        residual=max(r[3] for r in rows),
        solver="parametric",
        v_normalized=normalized_voltages(v_cell, params, spec),
    )
    solution.power = compute_power(spec, solution)
    return solution
