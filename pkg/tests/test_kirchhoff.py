"""Nodal-reference tests.

The solver's own output is checked against things it does not compute
with: closed-form series dividers, an edge-by-edge walk of Kirchhoff's
current law over the solved mesh, Tellegen's theorem for dissipation,
a scalar fixed point solved by bracketing, and the dense homogeneous
shortcut against the full sparse path.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import brentq

from xbar.ivtable import IVTable, StrandPair, small_signal_conductance, synthesize_table
from xbar.model import CrossbarSpec
from xbar.nodal import kirchhoff_row_solve, kirchhoff_solve, solve_linear_homogeneous


def linear_table(resistance, strand_id):
    """Exactly ohmic table: bilinear interpolation reproduces v/R for any
    query, so chord conductance is 1/R everywhere."""
    v = np.array([0.0, 0.5, 1.0])
    d = np.array([0.0, 0.2])
    current = np.tile(v / resistance, (2, 1))
    return IVTable(strand_id=strand_id, v_grid=v, delta_grid=d, current=current)


def linear_pair(r1, r0):
    return StrandPair(
        logic0_table=linear_table(r0, "ohmic-0"),
        logic1_table=linear_table(r1, "ohmic-1"),
    )


def knee_pair(r1=1e10, ratio=12.0):
    t1 = synthesize_table(r1, 20 * r1, strand_id="knee-1")
    t0 = synthesize_table(ratio * r1, 20 * ratio * r1, strand_id="knee-0")
    return StrandPair(logic0_table=t0, logic1_table=t1)


def random_spec(seed, m=8, n=8, r_int=1e5, pair=None):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(m, n)).astype(np.int8)
    return CrossbarSpec(
        m=m, n=n, r_int=r_int, bits=bits, pair=pair or knee_pair(), v_in=1.0
    )


def node_balance(spec, row):
    """Edge walk of the solved mesh: net current into every node, plus the
    per-element dissipation total and the power the source delivers.

    Uses only the stored state (node voltages, final chord conductances)
    and the network topology, never the solver's matrix.
    """
    m, n, g = spec.m, spec.n, spec.g_int
    vw, vb = row.v_word, row.v_bit
    net_w = np.zeros((m, n))
    net_b = np.zeros((m, n))
    dissipated = 0.0

    # wordline segments, every row
    for i in range(m):
        for j in range(n - 1):
            flow = g * (vw[i, j] - vw[i, j + 1])
            net_w[i, j] -= flow
            net_w[i, j + 1] += flow
            dissipated += flow * (vw[i, j] - vw[i, j + 1])
    # bitline segments and the ground tie at the bottom
    for j in range(n):
        for i in range(m - 1):
            flow = g * (vb[i, j] - vb[i + 1, j])
            net_b[i, j] -= flow
            net_b[i + 1, j] += flow
            dissipated += flow * (vb[i, j] - vb[i + 1, j])
        flow = g * vb[m - 1, j]
        net_b[m - 1, j] -= flow
        dissipated += flow * vb[m - 1, j]
    # cells
    for i in range(m):
        for j in range(n):
            flow = row.g_cell[i, j] * (vw[i, j] - vb[i, j])
            net_w[i, j] -= flow
            net_b[i, j] += flow
            dissipated += flow * (vw[i, j] - vb[i, j])
    # driver reaches the selected wordline through one segment
    flow = g * (spec.v_in - vw[row.active_row, 0])
    net_w[row.active_row, 0] += flow
    dissipated += flow * (spec.v_in - vw[row.active_row, 0])

    worst = max(np.max(np.abs(net_w)), np.max(np.abs(net_b)))
    return worst, dissipated, spec.v_in * flow


# ----------------------------------------------------------- series anchors


def test_single_cell_series_divider_exact():
    spec = CrossbarSpec(
        m=1, n=1, r_int=1e4, bits=np.ones((1, 1), np.int8),
        pair=linear_pair(1e6, 1e7), v_in=1.0,
    )
    sol = kirchhoff_solve(spec)
    expected = 1.0 / (1e6 + 2e4)  # cell plus one segment in, one out
    assert sol.converged
    assert abs(sol.i_out[0, 0] - expected) <= 1e-9 * expected
    assert abs(sol.power - expected) <= 1e-9 * expected
    assert abs(sol.source_current[0] - expected) <= 1e-9 * expected


def test_single_cell_nonlinear_fixed_point_matches_bracketing():
    pair = knee_pair(r1=1e9)
    spec = CrossbarSpec(
        m=1, n=1, r_int=1e6, bits=np.ones((1, 1), np.int8), pair=pair, v_in=1.0
    )
    sol = kirchhoff_solve(spec)
    assert sol.converged

    table = pair.logic1_table

    def imbalance(dv):
        g = small_signal_conductance(table, dv, 0.0)
        return dv * (1.0 + 2.0 * spec.r_int * g) - spec.v_in

    dv = brentq(imbalance, 1e-9, spec.v_in, xtol=1e-15)
    i_expected = small_signal_conductance(table, dv, 0.0) * dv
    assert sol.i_out[0, 0] == pytest.approx(i_expected, rel=1e-6)
    assert sol.v_cell[0, 0] == pytest.approx(dv, rel=1e-6)


def test_two_by_one_linear_chain_matches_dense_stamp():
    # small enough to solve by hand-stamped dense matrices in the test
    r_cell, r_int, v_in = 1e6, 1e4, 1.0
    spec = CrossbarSpec(
        m=2, n=1, r_int=r_int, bits=np.ones((2, 1), np.int8),
        pair=linear_pair(r_cell, r_cell), v_in=v_in,
    )
    g, gc = 1.0 / r_int, 1.0 / r_cell
    # unknowns: w0, w1, b0, b1 with the driver on row 0
    a = np.array(
        [
            [g + gc, 0.0, -gc, 0.0],
            [0.0, gc, 0.0, -gc],
            [-gc, 0.0, gc + g, -g],
            [0.0, -gc, -g, gc + g + g],
        ]
    )
    b = np.array([g * v_in, 0.0, 0.0, 0.0])
    x = np.linalg.solve(a, b)
    sol = kirchhoff_row_solve(spec, active_row=0)
    np.testing.assert_allclose(sol.v_word[:, 0], x[:2], rtol=1e-12)
    np.testing.assert_allclose(sol.v_bit[:, 0], x[2:], rtol=1e-12)
    assert sol.i_out[0] == pytest.approx(g * x[3], rel=1e-12)


# --------------------------------------------------------- conservation laws


@pytest.mark.parametrize("seed", range(4))
def test_node_current_balance_on_random_bits(seed):
    rng = np.random.default_rng(100 + seed)
    r_int = float(rng.choice([1e4, 1e5, 1e6]))
    spec = random_spec(seed, m=8, n=8, r_int=r_int)
    for active_row in (0, spec.m - 1):
        row = kirchhoff_row_solve(spec, active_row=active_row)
        assert row.converged
        worst, dissipated, source_power = node_balance(spec, row)
        assert worst <= 1e-9 * row.source_current
        assert dissipated == pytest.approx(source_power, rel=1e-6)


def test_node_current_balance_on_large_array():
    spec = random_spec(7, m=64, n=64, r_int=1e5)
    row = kirchhoff_row_solve(spec, active_row=17)
    assert row.converged
    worst, dissipated, source_power = node_balance(spec, row)
    assert worst <= 1e-9 * row.source_current
    assert dissipated == pytest.approx(source_power, rel=1e-6)


def test_row_outputs_are_linear_readouts_of_the_final_state():
    spec = random_spec(3, m=8, n=8)
    row = kirchhoff_row_solve(spec, active_row=2)
    g = spec.g_int
    np.testing.assert_allclose(row.i_out, g * row.v_bit[-1], rtol=1e-14)
    assert row.source_current == pytest.approx(
        g * (spec.v_in - row.v_word[2, 0]), rel=1e-14
    )


def test_column_currents_sum_to_source_current():
    # charge entering the selected wordline must leave through the bitline
    # grounds; no other element stores or sinks it
    spec = random_spec(5, m=16, n=16, r_int=1e6)
    for active_row in (0, 9):
        row = kirchhoff_row_solve(spec, active_row=active_row)
        assert row.converged
        assert np.sum(row.i_out) == pytest.approx(row.source_current, rel=1e-9)


# ------------------------------------------------------ homogeneous shortcut


def test_homogeneous_shortcut_matches_full_solver():
    g_cell = 1e-6
    pair = linear_pair(1.0 / g_cell, 1.0 / g_cell)
    for r_int in (1e4, 1e6):
        spec = CrossbarSpec(
            m=6, n=5, r_int=r_int, bits=np.ones((6, 5), np.int8), pair=pair, v_in=1.0
        )
        v_ref, i_ref, src_ref = solve_linear_homogeneous(6, 5, r_int, g_cell, 1.0)
        full = kirchhoff_solve(spec)
        np.testing.assert_allclose(full.v_cell, v_ref, rtol=1e-9)
        np.testing.assert_allclose(full.i_out, i_ref, rtol=1e-9)
        np.testing.assert_allclose(full.source_current, src_ref, rtol=1e-9)


def test_homogeneous_shortcut_single_cell_closed_form():
    v, i, src = solve_linear_homogeneous(1, 1, 1e4, 1e-6, 1.0)
    assert v[0, 0] == pytest.approx(1e6 / (1e6 + 2e4), rel=1e-12)
    assert i[0, 0] == pytest.approx(1.0 / (1e6 + 2e4), rel=1e-12)
    assert src[0] == pytest.approx(1.0 / (1e6 + 2e4), rel=1e-12)


def test_homogeneous_shortcut_rejects_bad_arguments():
    with pytest.raises(ValueError):
        solve_linear_homogeneous(0, 4, 1e4, 1e-6, 1.0)
    with pytest.raises(ValueError):
        solve_linear_homogeneous(4, 4, -1.0, 1e-6, 1.0)
    with pytest.raises(ValueError):
        solve_linear_homogeneous(4, 4, 1e4, 0.0, 1.0)


# ------------------------------------------------------------ solver behavior


def test_linear_array_converges_on_second_sweep():
    spec = random_spec(9, m=16, n=16, pair=linear_pair(1e6, 1.2e7))
    sol = kirchhoff_solve(spec)
    assert sol.converged
    assert sol.iterations <= 2
    assert sol.residual <= 1e-12


def test_voltages_bounded_and_collapse_along_selected_row():
    spec = CrossbarSpec(
        m=16, n=16, r_int=1e6, bits=np.ones((16, 16), np.int8),
        pair=knee_pair(), v_in=1.0,
    )
    sol = kirchhoff_solve(spec)
    assert sol.converged
    assert np.all(sol.v_cell >= 0.0)
    assert np.all(sol.v_cell <= spec.v_in + 1e-12)
    drops = np.diff(sol.v_cell, axis=1)
    assert np.all(drops <= 1e-9 * spec.v_in)


def test_thread_count_does_not_change_values():
    spec = random_spec(21, m=12, n=10, r_int=1e5)
    serial = kirchhoff_solve(spec, threads=1)
    pooled = kirchhoff_solve(spec, threads=4)
    np.testing.assert_array_equal(serial.v_cell, pooled.v_cell)
    np.testing.assert_array_equal(serial.i_out, pooled.i_out)
    assert serial.power == pooled.power


def test_solution_metadata():
    spec = random_spec(2, m=4, n=4)
    sol = kirchhoff_solve(spec)
    assert sol.solver == "kirchhoff"
    assert sol.v_cell.shape == (4, 4)
    assert sol.i_out.shape == (4, 4)
    assert sol.source_current.shape == (4,)
    assert sol.power > 0.0
