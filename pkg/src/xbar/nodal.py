"""Full nodal-analysis reference for the crossbar read.

One wordline is driven at a time.  The source reaches the row through one
interconnect segment, every column is grounded through one segment below
its last cell, undriven rows stay in the network as floating sneak-path
carriers, and each cell conducts between its wordline and bitline node.
Cell nonlinearity is handled by re-linearizing chord conductances between
direct linear solves; the mesh is factored either by exact wordline
elimination ("block") or by general sparse LU ("sparse"), two routes that
must agree.

This solver is the ground truth the parametric model is calibrated
against; it is deliberately free of modeling shortcuts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack, solve_banded
from scipy.sparse.linalg import splu

from xbar import runio
from xbar.ivtable import interpolate_current, small_signal_conductance
from xbar.model import CrossbarSpec, ReadoutSolution

DEFAULT_TOL = 1e-6  # volts, max node-voltage change between iterations
DEFAULT_MAX_ITER = 200
DEFAULT_RELAX = 0.7  # fallback under-relaxation after a residual blow-up
INIT_BIAS = 0.05  # volts, first chord linearization point
ANDERSON_DEPTH = 2  # residual-history length for the mixing step


@dataclass
class RowSolve:
    """Everything the network knows after driving one row: full node
    voltages (for conservation checks), the active row's cell drops, the
    grounded column currents, and convergence bookkeeping."""

    active_row: int
    v_word: np.ndarray  # m x n wordline node voltages
    v_bit: np.ndarray  # m x n bitline node voltages
    v_cell: np.ndarray  # n, drops across the active row's cells
    i_out: np.ndarray  # n, currents through the ground segments
    source_current: float
    g_cell: np.ndarray  # m x n chord conductances used in the last solve
    iterations: int
    converged: bool
    residual: float


def chord_conductances(spec: CrossbarSpec, v_abs: np.ndarray) -> np.ndarray:
    """Per-cell chord conductance from each cell's own table.

    Queries clamp to each table's bias range: mid-iteration states may
    overshoot the physical window, and the linearization point is free."""
    g = np.empty((spec.m, spec.n))
    for bit, table in ((0, spec.pair.logic0_table), (1, spec.pair.logic1_table)):
        mask = spec.bits == bit
        if np.any(mask):
            v = np.minimum(v_abs[mask], table.v_grid[-1])
            g[mask] = small_signal_conductance(table, v, spec.delta[mask])
    return g


def cell_currents(spec: CrossbarSpec, dv: np.ndarray) -> np.ndarray:
    """Nonlinear cell currents; odd in the drop (tables store the forward
    branch, floating rows can see reversed drops)."""
    out = np.empty((spec.m, spec.n))
    v_abs = np.abs(dv)
    for bit, table in ((0, spec.pair.logic0_table), (1, spec.pair.logic1_table)):
        mask = spec.bits == bit
        if np.any(mask):
            out[mask] = interpolate_current(table, v_abs[mask], spec.delta[mask])
    return np.sign(dv) * out


def _assemble(
    m: int,
    n: int,
    g: float,
    v_in: float,
    g_cell: np.ndarray,
    active_row: int | None,
):
    """Sparse conductance matrix over [wordline nodes; bitline nodes].

    active_row = None leaves the source segment out entirely (used by the
    rank-one update path for the linear homogeneous solve).
    """
    mn = m * n
    size = 2 * mn

    # two-node conductances: (p, q, value)
    word_p = (np.arange(m)[:, None] * n + np.arange(n - 1)[None, :]).ravel()
    word_q = word_p + 1
    bit_p = mn + (np.arange(m - 1)[:, None] * n + np.arange(n)[None, :]).ravel()
    bit_q = bit_p + n
    cell_p = np.arange(mn)
    cell_q = mn + cell_p

    p = np.concatenate([word_p, bit_p, cell_p])
    q = np.concatenate([word_q, bit_q, cell_q])
    gv = np.concatenate(
        [
            np.full(word_p.size, g),
            np.full(bit_p.size, g),
            g_cell.ravel(),
        ]
    )

    rows = np.concatenate([p, q, p, q])
    cols = np.concatenate([p, q, q, p])
    vals = np.concatenate([gv, gv, -gv, -gv])

    # one-node conductances to fixed potentials: ground and source segments
    ground_idx = mn + (m - 1) * n + np.arange(n)
    rows = np.concatenate([rows, ground_idx])
    cols = np.concatenate([cols, ground_idx])
    vals = np.concatenate([vals, np.full(n, g)])

    b = np.zeros(size)
    if active_row is not None:
        src = active_row * n
        rows = np.concatenate([rows, [src]])
        cols = np.concatenate([cols, [src]])
        vals = np.concatenate([vals, [g]])
        b[src] = g * v_in

    a = sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsc()
    return a, b


def _solve_mesh_blocks(
    m: int,
    n: int,
    g: float,
    v_in: float,
    g_cell: np.ndarray,
    active_row: int,
) -> np.ndarray:
    """Direct mesh solve by exact elimination of the wordline nodes.

    A wordline node couples only along its own row (tridiagonal) and to
    its own bitline node, so each row block factors independently; what
    remains on the bitline nodes is block tridiagonal with dense n x n
    diagonal blocks and -g*I couplings, swept by block forward
    elimination.  Algebraically identical to factoring the assembled
    sparse matrix, several times faster at read-array sizes.
    """
    eye = np.eye(n)
    deg_w = np.full(n, 2.0)
    deg_w[0] = deg_w[-1] = 1.0
    if n == 1:
        deg_w[0] = 0.0
    # top bit node touches one column segment; the bottom one touches its
    # upper segment plus ground; a lone row touches ground alone
    deg_b = np.full(m, 2.0)
    deg_b[0] = 1.0

    ab = np.zeros((3, n))
    ab[0, 1:] = -g
    ab[2, :-1] = -g
    t_inv = np.empty((m, n, n))
    for i in range(m):
        ab[1] = g * deg_w + g_cell[i]
        if i == active_row:
            ab[1, 0] += g
        t_inv[i] = solve_banded((1, 1), ab, eye)

    u_inv = np.empty((m, n, n))
    for i in range(m):
        d = -g_cell[i, :, None] * t_inv[i] * g_cell[i, None, :]
        d[np.arange(n), np.arange(n)] += g * deg_b[i] + g_cell[i]
        if i:
            d -= (g * g) * u_inv[i - 1]
        # the eliminated blocks stay symmetric positive definite, so a
        # Cholesky inverse beats the general LU route; dpotri fills one
        # triangle and dpotrf has zeroed the other
        c, info = lapack.dpotrf(d, lower=1)
        if info == 0:
            half, info = lapack.dpotri(c, lower=1)
        u_inv[i] = half + np.tril(half, -1).T if info == 0 else np.linalg.inv(d)

    # the only excitation enters through the active row's word block
    t_src = (g * v_in) * t_inv[active_row, :, 0]
    y = np.zeros((m, n))
    y[active_row] = g_cell[active_row] * t_src
    for i in range(active_row + 1, m):
        y[i] = g * (u_inv[i - 1] @ y[i - 1])

    v_bit = np.empty((m, n))
    v_bit[m - 1] = u_inv[m - 1] @ y[m - 1]
    for i in range(m - 2, -1, -1):
        v_bit[i] = u_inv[i] @ (y[i] + g * v_bit[i + 1])

    v_word = np.empty((m, n))
    for i in range(m):
        v_word[i] = t_inv[i] @ (g_cell[i] * v_bit[i])
    v_word[active_row] += t_src
    return np.concatenate([v_word.ravel(), v_bit.ravel()])


def _solve_mesh(
    m: int,
    n: int,
    g: float,
    v_in: float,
    g_cell: np.ndarray,
    active_row: int,
    backend: str,
) -> np.ndarray:
    if backend == "block":
        return _solve_mesh_blocks(m, n, g, v_in, g_cell, active_row)
    if backend == "sparse":
        a, b = _assemble(m, n, g, v_in, g_cell, active_row)
        return splu(a).solve(b)
    raise ValueError(f"unknown backend '{backend}', expected 'block' or 'sparse'")


def kirchhoff_row_solve(
    spec: CrossbarSpec,
    active_row: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    relax: float = DEFAULT_RELAX,
    backend: str = "block",
) -> RowSolve:
    """Drive one row and iterate chord conductances to a fixed point."""
    if not 0 <= active_row < spec.m:
        raise ValueError(f"active row {active_row} outside 0..{spec.m - 1}")
    m, n = spec.m, spec.n
    mn = m * n

    def run_stage(v_source, g_cell, cap, stage_tol):
        """Anderson-accelerated Picard at one source level.

        Each pass solves the mesh linearized at the current state, then
        extrapolates from the recent residual history (depth 2).  Knee
        cells push plain re-linearization into period-2 limit cycles; the
        history sees the cycle and cancels it.  If the residual blows up
        the history is dropped and the next step under-relaxed.

        Returns the last mesh solution together with the conductances it
        was assembled from, so conservation laws hold on the returned
        state to machine precision.
        """
        x = None
        solved = None
        residual = np.inf
        best = np.inf
        converged = False
        history_x, history_r = [], []
        iterations = 0
        for iterations in range(1, cap + 1):
            solved = _solve_mesh(m, n, spec.g_int, v_source, g_cell, active_row, backend)
            if x is None:
                x = solved
            else:
                r = solved - x
                residual = float(np.max(np.abs(r)))
                if residual <= stage_tol:
                    converged = True
                    break
                if residual > 2.0 * best and history_x:
                    history_x.clear()
                    history_r.clear()
                    x = x + relax * r
                else:
                    best = min(best, residual)
                    history_x.append(x)
                    history_r.append(r)
                    if len(history_x) > ANDERSON_DEPTH + 1:
                        history_x.pop(0)
                        history_r.pop(0)
                    if len(history_x) >= 2:
                        dr = np.stack(
                            [history_r[k + 1] - history_r[k] for k in range(len(history_r) - 1)],
                            axis=1,
                        )
                        dx = np.stack(
                            [history_x[k + 1] - history_x[k] for k in range(len(history_x) - 1)],
                            axis=1,
                        )
                        gamma, *_ = np.linalg.lstsq(dr, r, rcond=None)
                        x = x + r - (dx + dr) @ gamma
                    else:
                        x = solved
            dv = x[:mn].reshape(m, n) - x[mn:].reshape(m, n)
            g_cell = chord_conductances(spec, np.abs(dv))
        return solved, g_cell, iterations, residual, converged

    # linearize at the applied bias: the driven row dominates the source
    # current and sits near v_in, and strongly nonlinear tables start one
    # to two sweeps closer than a near-zero-bias chord would
    g_start = chord_conductances(spec, np.full((m, n), spec.v_in))
    x, g_cell, total, residual, converged = run_stage(
        spec.v_in, g_start, min(60, max_iter), tol
    )
    if not converged and total < max_iter:
        # rescue path: ramp the source up in stages, carrying the cell
        # conductances over, so each stage only perturbs the previous
        # solution mildly instead of restarting the oscillation
        g_cell = g_start
        for level in (0.25, 0.5, 0.75, 1.0):
            remaining = max_iter - total
            if remaining <= 0:
                break
            final = level == 1.0
            cap = remaining if final else max(10, remaining // 8)
            x, g_cell, used, residual, converged = run_stage(
                level * spec.v_in, g_cell, cap, tol if final else 10.0 * tol
            )
            total += used

    v_word = x[:mn].reshape(m, n)
    v_bit = x[mn:].reshape(m, n)
    i_out = spec.g_int * x[mn + (m - 1) * n : mn + m * n].copy()
    source_current = spec.g_int * (spec.v_in - x[active_row * n])
    return RowSolve(
        active_row=active_row,
        v_word=v_word,
        v_bit=v_bit,
        v_cell=(v_word - v_bit)[active_row].copy(),
        i_out=i_out,
        source_current=float(source_current),
        g_cell=g_cell,
        iterations=total,
        converged=converged,
        residual=residual,
    )


def kirchhoff_solve(
    spec: CrossbarSpec,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    relax: float = DEFAULT_RELAX,
    threads: int | None = None,
    backend: str = "block",
) -> ReadoutSolution:
    """Readout of the whole array: every row activated in turn.

    Row activations are independent; with threads > 1 they run on a pool
    and are merged back in row order.
    """
    threads = runio.resolve_threads(threads)

    def solve_row(i):
        return kirchhoff_row_solve(
            spec, i, tol=tol, max_iter=max_iter, relax=relax, backend=backend
        )

    if threads == 1 or spec.m == 1:
        rows = [solve_row(i) for i in range(spec.m)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(solve_row, range(spec.m)))

    v_cell = np.vstack([r.v_cell for r in rows])
    i_out = np.vstack([r.i_out for r in rows])
    source_current = np.array([r.source_current for r in rows])
    # total over the m activations, matching the parametric convention
    power = float(spec.v_in * source_current.sum())
    return ReadoutSolution(
        v_cell=v_cell,
        i_out=i_out,
        power=power,
        iterations=max(r.iterations for r in rows),
        converged=all(r.converged for r in rows),
        residual=max(r.residual for r in rows),
        solver="kirchhoff",
        source_current=source_current,
    )


def solve_linear_homogeneous(
    m: int, n: int, r_int: float, g_cell: float, v_in: float = 1.0
):
    """All cells at one fixed conductance, solved for every activated row.

    The system matrix differs between activated rows only by the source
    segment's diagonal stamp, so one factorization of the sourceless
    network plus a rank-one update per row covers the whole array.  This is
    the calibration reference; it bypasses the Picard loop entirely.

    Returns (v_cell, i_out, source_current) with shapes (m, n), (m, n), (m,).
    """
    if min(m, n) < 1 or r_int <= 0 or g_cell <= 0 or v_in <= 0:
        raise ValueError("need positive dimensions, resistances, and bias")
    g = 1.0 / r_int
    a0, _ = _assemble(m, n, g, v_in, np.full((m, n), float(g_cell)), None)
    lu = splu(a0)
    mn = m * n
    v_cell = np.empty((m, n))
    i_out = np.empty((m, n))
    source_current = np.empty(m)
    e = np.zeros(2 * mn)
    for i in range(m):
        src = i * n
        e[src] = 1.0
        s = lu.solve(e)
        e[src] = 0.0
        x = (g * v_in / (1.0 + g * s[src])) * s
        v_word = x[:mn].reshape(m, n)
        v_bit = x[mn:].reshape(m, n)
        v_cell[i] = v_word[i] - v_bit[i]
        i_out[i] = g * x[mn + (m - 1) * n :]
        source_current[i] = g * (v_in - x[src])
    return v_cell, i_out, source_current
