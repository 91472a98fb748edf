from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from seqjde.bellman import (
    CONTINUE,
    STOP_H0,
    STOP_H1,
    Coefficients,
    backward_induction,
    evaluate_policy,
    extract_regions,
    stopping_costs,
    stopping_cost_tables,
)
from seqjde.verify import scaled_stop_cost


def test_coefficients_validation():
    with pytest.raises(ValueError):
        Coefficients(-1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        Coefficients(float("inf"), 0.0, 0.0, 0.0)
    c = Coefficients.from_array([1, 2, 3, 4])
    np.testing.assert_array_equal(c.as_array(), [1.0, 2.0, 3.0, 4.0])


def _stub_dm(e0, v0, v1=None):
    e0 = np.asarray(e0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    v1 = v0 if v1 is None else np.asarray(v1, dtype=float)
    return SimpleNamespace(e0=e0, e1=1.0 - e0, v0=v0, v1=v1)


def test_stopping_costs_zero_and_degenerate():
    dm = _stub_dm([[0.3]], [[2.0]])
    d0, d1, g = stopping_costs(dm, Coefficients(0, 0, 0, 0), 0, 0)
    assert (d0, d1, g) == (0.0, 0.0, 0.0)
    # posterior certain about H0: only the estimation term and C0 remain
    dm = _stub_dm([[1.0]], [[0.7]], [[5.0]])
    d0, d1, g = stopping_costs(dm, Coefficients(3.0, 11.0, 2.0, 9.0), 0, 0)
    assert d0 == pytest.approx(2.0 * 0.7)
    assert d1 == pytest.approx(3.0)
    assert g == pytest.approx(1.4)


def test_stopping_costs_mean_preset(small_build):
    # hand value: 0.5*235.3 + 0.5*14.9*1.7 = 130.315 at the start state
    dm, _, _ = small_build
    c = Coefficients(125.1, 235.3, 14.9, 74.3)
    d0, d1, g = stopping_costs(dm, c, 0, dm.t0_index)
    assert d0 == pytest.approx(130.315, rel=2e-3)
    assert d1 == pytest.approx(0.5 * 125.1 + 0.5 * 74.3 * 1.7, rel=2e-3)


def test_backward_induction_hand_toy():
    """Two-cell chain, N=2, unrolled by hand.

    With C = (1,1,1,1) and e0 = e1 = 0.5 the stopping cost is
    0.5 + 0.5 v, so v-tables encode g = [[2.2,2.2],[2,2.5],[1,3]].
    """
    v = np.array([[3.4, 3.4], [3.0, 4.0], [1.0, 5.0]])
    dm = _stub_dm(np.full((3, 2), 0.5), v)
    op = SimpleNamespace(
        H=[
            sparse.csr_matrix(np.array([[1.0, 0.0], [0.6, 0.4]])),
            sparse.csr_matrix(np.array([[0.5, 0.5], [0.2, 0.8]])),
        ]
    )
    dm.horizon = 2
    ct = backward_induction(dm, op, Coefficients(1, 1, 1, 1))
    np.testing.assert_allclose(ct.g, [[2.2, 2.2], [2.0, 2.5], [1.0, 3.0]])
    np.testing.assert_allclose(ct.rho[2], [1.0, 3.0])
    np.testing.assert_allclose(ct.d[1], [3.0, 3.6])
    np.testing.assert_allclose(ct.rho[1], [2.0, 2.5])
    np.testing.assert_allclose(ct.d[0], [3.0, 3.2])
    np.testing.assert_allclose(ct.rho[0], [2.2, 2.2])
    assert ct.bellman_residual() == 0.0


def test_constant_g_stops_immediately():
    dm = _stub_dm(np.full((3, 2), 0.5), np.full((3, 2), 3.0))  # g = 2 everywhere
    dm.horizon = 2
    op = SimpleNamespace(H=[sparse.identity(2, format="csr")] * 2)
    ct = backward_induction(dm, op, Coefficients(1, 1, 1, 1))
    np.testing.assert_allclose(ct.rho, 2.0)
    np.testing.assert_allclose(ct.d, 3.0)
    labels = extract_regions(ct).labels
    assert (labels != CONTINUE).all()


def test_rho_below_g(small_build):
    dm, op, _ = small_build
    ct = backward_induction(dm, op, Coefficients(40.0, 80.0, 10.0, 30.0))
    assert (ct.rho <= ct.g + 1e-12).all()
    assert ct.bellman_residual() == 0.0
    assert ct.rho.min() >= 0.0


def test_monotone_backup(small_build, rng):
    """A pointwise-larger continuation value cannot lower the backup."""
    dm, op, _ = small_build
    ct = backward_induction(dm, op, Coefficients(40.0, 80.0, 10.0, 30.0))
    for n in (0, 3, 6):
        bump = rng.uniform(0.0, 0.5, size=ct.rho.shape[1])
        lo = np.minimum(ct.g[n], 1.0 + op.H[n] @ ct.rho[n + 1])
        hi = np.minimum(ct.g[n], 1.0 + op.H[n] @ (ct.rho[n + 1] + bump))
        assert (hi >= lo - 1e-12).all()


def test_coefficient_monotonicity(small_build, rng):
    """Raising any loss weight cannot make the optimal cost cheaper."""
    dm, op, _ = small_build
    i0 = dm.t0_index
    for _ in range(5):
        c = rng.uniform(1.0, 120.0, size=4)
        base = backward_induction(dm, op, Coefficients.from_array(c)).rho[0, i0]
        for i in range(4):
            c2 = c.copy()
            c2[i] *= 1.3
            up = backward_induction(dm, op, Coefficients.from_array(c2)).rho[0, i0]
            assert up >= base - 1e-12


@settings(max_examples=200, deadline=None)
@given(
    e0=st.floats(0.0, 1.0),
    v0=st.floats(0.0, 5.0),
    v1=st.floats(0.0, 5.0),
    a0=st.floats(0.0, 3.0),
    a1=st.floats(0.0, 3.0),
    c=st.tuples(*[st.floats(0.0, 50.0)] * 4),
)
def test_scaling_inequality(e0, v0, v1, a0, a1, c):
    """Elementwise posterior scaling pinches the stop cost between
    min(a0, a1, 1) and max(a0, a1, 1) times its unscaled value."""
    coeff = Coefficients(*c)
    e1 = 1.0 - e0
    g = scaled_stop_cost(coeff, e0, e1, v0, v1)
    g_scaled = scaled_stop_cost(coeff, a0 * e0, a1 * e1, v0, v1)
    lo = min(a0, a1, 1.0) * g
    hi = max(a0, a1, 1.0) * g
    slack = 1e-12 * (1.0 + hi)
    assert lo - slack <= g_scaled <= hi + slack


def test_integrability_bound(small_build):
    """Expected next-step stop cost is bounded by either current stop cost."""
    dm, op, _ = small_build
    coeff = Coefficients(40.0, 80.0, 10.0, 30.0)
    ct = backward_induction(dm, op, coeff)
    for n in range(dm.horizon):
        lookahead = op.H[n] @ ct.g[n + 1]
        assert (lookahead <= ct.dstar0[n] + 1e-3).all()
        assert (lookahead <= ct.dstar1[n] + 1e-3).all()


def test_extract_regions(small_design):
    ct = small_design.cost_tables
    labels = small_design.regions.labels
    # truncation: no continuation at the horizon
    assert (labels[-1] != CONTINUE).all()
    cont = labels[:-1] == CONTINUE
    assert np.array_equal(cont, ct.g[:-1] > ct.d)
    stopped = ~cont
    d0, d1 = ct.dstar0[:-1][stopped], ct.dstar1[:-1][stopped]
    lab = labels[:-1][stopped]
    assert np.array_equal(lab == STOP_H0, d0 <= d1)
    assert np.array_equal(lab == STOP_H1, d0 > d1)


def test_tie_breaks_decide_h0():
    dm = _stub_dm(np.full((2, 2), 0.5), np.full((2, 2), 1.0))
    dm.horizon = 1
    op = SimpleNamespace(H=[sparse.identity(2, format="csr")])
    ct = backward_induction(dm, op, Coefficients(1, 1, 1, 1))
    labels = extract_regions(ct).labels
    assert (labels == STOP_H0).all()


def test_evaluate_policy(small_design):
    test = small_design
    ct, dm = test.cost_tables, test.dm
    tg = dm.spec.t_axis.points()
    labels = test.regions.labels
    # grid nodes agree with the region labels
    for n in (0, 4, dm.horizon):
        for ti in (5, 40, 75):
            act = evaluate_policy(ct, dm, n, float(tg[ti]))
            if labels[n, ti] == CONTINUE:
                assert act.kind == "continue"
            else:
                assert act.kind == "stop"
                assert act.decision == (0 if labels[n, ti] == STOP_H0 else 1)
                want = dm.m0[n, ti] if act.decision == 0 else dm.m1[n, ti]
                assert act.estimate == pytest.approx(want)
            assert not act.clamped
    # horizon always stops
    act = evaluate_policy(ct, dm, dm.horizon, 0.123)
    assert act.kind == "stop" and act.estimate is not None
    # midpoint between two continue cells continues
    n = 1
    cont_cells = np.nonzero(labels[n, :-1] + labels[n, 1:] == 0)[0]
    mid = 0.5 * (tg[cont_cells[0]] + tg[cont_cells[0] + 1])
    assert evaluate_policy(ct, dm, n, float(mid)).kind == "continue"
    # outside the grid clamps and flags
    act = evaluate_policy(ct, dm, 2, 1e9)
    assert act.clamped
    with pytest.raises(ValueError):
        evaluate_policy(ct, dm, dm.horizon + 1, 0.0)
