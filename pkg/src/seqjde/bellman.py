"""Optimal stopping cost tables, regions and policy evaluation.

Given loss coefficients, computes per (n, t): the cost of stopping with
either decision, the continuation cost and the optimal cost-to-go, then
labels each cell CONTINUE / STOP_H0 / STOP_H1 and evaluates the induced
policy at arbitrary statistic values by linear interpolation.

Tie-breaking: equal stopping costs decide H0; equal stop/continue costs
stop.  Both sets are null under the sampling law, so the choices are made
for reproducibility only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DiscretizedModel, TransitionOperator

__all__ = [
    "CONTINUE",
    "STOP_H0",
    "STOP_H1",
    "Coefficients",
    "CostTables",
    "Regions",
    "PolicyAction",
    "stopping_costs",
    "stopping_cost_tables",
    "backward_induction",
    "extract_regions",
    "evaluate_policy",
]

CONTINUE = 0
STOP_H0 = 1
STOP_H1 = 2


@dataclass(frozen=True)
class Coefficients:
    """Loss weights: c0/c1 wrong-decision costs, c2/c3 estimation weights."""

    c0: float
    c1: float
    c2: float
    c3: float

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValueError("coefficients must be finite and non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.c0, self.c1, self.c2, self.c3], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Coefficients":
        c0, c1, c2, c3 = (float(v) for v in arr)
        return cls(c0, c1, c2, c3)


@dataclass
class CostTables:
    """Arrays over (n, t): stopping costs, continuation cost, cost-to-go."""

    rho: np.ndarray  # (N+1, Nt)
    d: np.ndarray  # (N, Nt)
    g: np.ndarray  # (N+1, Nt)
    dstar0: np.ndarray  # (N+1, Nt)
    dstar1: np.ndarray  # (N+1, Nt)

    @property
    def horizon(self) -> int:
        return self.rho.shape[0] - 1

    def bellman_residual(self) -> float:
        """Max deviation of rho from min(g, d); 0 after a clean recursion."""
        res = float(np.abs(self.rho[-1] - self.g[-1]).max())
        if self.horizon:
            res = max(
                res,
                float(np.abs(self.rho[:-1] - np.minimum(self.g[:-1], self.d)).max()),
            )
        return res


@dataclass
class Regions:
    """Cell labels: CONTINUE, STOP_H0 or STOP_H1, per (n, t)."""

    labels: np.ndarray  # (N+1, Nt), int8


@dataclass(frozen=True)
class PolicyAction:
    kind: str  # "continue" | "stop"
    decision: int | None = None
    estimate: float | None = None
    clamped: bool = False


def stopping_cost_tables(dm: DiscretizedModel, coeff: Coefficients):
    """(dstar0, dstar1, g) arrays over all (n, t)."""
    dstar0 = coeff.c1 * dm.e1 + coeff.c2 * dm.e0 * dm.v0
    dstar1 = coeff.c0 * dm.e0 + coeff.c3 * dm.e1 * dm.v1
    return dstar0, dstar1, np.minimum(dstar0, dstar1)


def stopping_costs(dm: DiscretizedModel, coeff: Coefficients, n: int, t_index: int):
    """Stopping costs for deciding H0/H1 and their minimum at one cell."""
    d0 = coeff.c1 * dm.e1[n, t_index] + coeff.c2 * dm.e0[n, t_index] * dm.v0[n, t_index]
    d1 = coeff.c0 * dm.e0[n, t_index] + coeff.c3 * dm.e1[n, t_index] * dm.v1[n, t_index]
    return float(d0), float(d1), float(min(d0, d1))


def backward_induction(
    dm: DiscretizedModel, op: TransitionOperator, coeff: Coefficients
) -> CostTables:
    """Solve the truncated stopping problem exactly on the grid.

    rho_N = g_N and, for n < N, d_n = 1 + H_n rho_{n+1} and
    rho_n = min(g_n, d_n).
    """
    dstar0, dstar1, g = stopping_cost_tables(dm, coeff)
    n_steps = dm.horizon
    rho = np.empty_like(g)
    d = np.empty((n_steps, g.shape[1]))
    rho[n_steps] = g[n_steps]
    for n in range(n_steps - 1, -1, -1):
        d[n] = 1.0 + op.H[n] @ rho[n + 1]
        rho[n] = np.minimum(g[n], d[n])
    return CostTables(rho=rho, d=d, g=g, dstar0=dstar0, dstar1=dstar1)


def extract_regions(ct: CostTables) -> Regions:
    """Label cells from the cost tables.

    Continue where g strictly exceeds d (n < N only); otherwise stop, and
    decide H0 whenever its stopping cost is not larger.
    """
    n_steps = ct.horizon
    labels = np.where(ct.dstar0 <= ct.dstar1, STOP_H0, STOP_H1).astype(np.int8)
    if n_steps:
        labels[:-1][ct.g[:-1] > ct.d] = CONTINUE
    return Regions(labels=labels)


def _interp(row: np.ndarray, t_grid: np.ndarray, t_value: float) -> float:
    return float(np.interp(t_value, t_grid, row))


def evaluate_policy(
    ct: CostTables, dm: DiscretizedModel, n: int, t_value: float
) -> PolicyAction:
    """Policy at an off-grid statistic value via cost interpolation.

    Values outside the t grid clamp to the boundary and flag the action.
    """
    if not 0 <= n <= ct.horizon:
        raise ValueError("time index outside 0..N")
    t_grid = dm.spec.t_axis.points()
    clamped = bool(t_value < t_grid[0] or t_value > t_grid[-1])
    if n < ct.horizon:
        g = _interp(ct.g[n], t_grid, t_value)
        d = _interp(ct.d[n], t_grid, t_value)
        if g > d:
            return PolicyAction(kind="continue", clamped=clamped)
    d0 = _interp(ct.dstar0[n], t_grid, t_value)
    d1 = _interp(ct.dstar1[n], t_grid, t_value)
    decision = 0 if d0 <= d1 else 1
    mean_row = dm.m0[n] if decision == 0 else dm.m1[n]
    return PolicyAction(
        kind="stop",
        decision=decision,
        estimate=_interp(mean_row, t_grid, t_value),
        clamped=clamped,
    )
