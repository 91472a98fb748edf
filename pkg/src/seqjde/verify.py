"""Invariant suite for designed tests.

Checks run against persisted artifacts as well as in-memory designs:
operators are rebuilt from the model/grid blocks when absent, so the suite
also catches discretization drift after config edits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import coeffopt
from .bellman import Coefficients, backward_induction, extract_regions
from .coeffopt import DesignedTest, error_tables
from .grid import build

__all__ = ["CheckResult", "run_invariant_suite", "theorem4_check", "scaled_stop_cost"]

# A region flip at a cell with forward mass mu changes the derivative of
# rho(0, t0) by at most mu * (cost scale); below this mass the effect sits
# orders of magnitude under the 1e-3 relative tolerance of the gradient
# check, so such flips do not count as instability.
REACH_MASS_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _ensure_ops(test: DesignedTest):
    if test.op is None:
        dm, op, fm = build(test.model, test.spec, leakage_tol=test.options.leakage_tol)
        test.op, test.fm = op, fm
        drift = 0.0
        for name in ("e0", "e1", "m0", "m1", "v0", "v1"):
            drift = max(drift, float(np.abs(getattr(dm, name) - getattr(test.dm, name)).max()))
        (test.diagnostics or {}).setdefault("rebuild_drift", drift)
    return test.op, test.fm


def scaled_stop_cost(coeff: Coefficients, e0, e1, v0, v1):
    """min of the two stopping costs for an arbitrary posterior tuple."""
    return np.minimum(
        coeff.c1 * e1 + coeff.c2 * e0 * v0,
        coeff.c0 * e0 + coeff.c3 * e1 * v1,
    )


def _reachable_mass(test: DesignedTest) -> np.ndarray:
    """Forward mass per (n, t) under the pooled transition kernels."""
    op = test.op
    n_t = test.dm.n_t
    mu = np.zeros((test.dm.horizon + 1, n_t))
    mu[0, test.dm.t0_index] = 1.0
    for n in range(test.dm.horizon):
        pooled = (op.H[n] + op.H0[n] + op.H1[n]) / 3.0
        mu[n + 1] = pooled.T @ mu[n]
    return mu


def theorem4_check(test: DesignedTest, coeff: Coefficients, h_rel: float = 1e-4):
    """Finite-difference check of the cost-derivative identity at one C.

    For each strictly positive coefficient, compares the central finite
    difference of rho(0, t0) against the prior-weighted error-table value.
    A coefficient is skipped (stable=False) when the perturbation flips a
    region label on a reachable cell, where the derivative is undefined.
    Returns a list of per-coefficient dicts.
    """
    dm, op = test.dm, test.op
    m0 = dm.t0_index
    reach = _reachable_mass(test) > REACH_MASS_TOL
    _, _, ct, regions, et = coeffopt._dual_eval(dm, op, test.constraints, coeff)
    p = dm.model.priors
    analytic = np.array(
        [
            p.p0 * et.alpha[0, 0, m0],
            p.p1 * et.alpha[1, 0, m0],
            p.p0 * et.beta[0, 0, m0],
            p.p1 * et.beta[1, 0, m0],
        ]
    )
    results = []
    base = coeff.as_array()
    for i in range(4):
        if base[i] <= 0.0:
            results.append({"index": i, "stable": False, "skipped_zero": True})
            continue
        h = h_rel * (1.0 + base[i])
        rhos = []
        labels = []
        ok = True
        for sign in (+1.0, -1.0):
            c = base.copy()
            c[i] += sign * h
            if c[i] < 0.0:
                ok = False
                break
            ct_p = backward_induction(dm, op, Coefficients.from_array(c))
            rhos.append(ct_p.rho[0, m0])
            labels.append(extract_regions(ct_p).labels)
        stable = ok and bool(np.all(labels[0][reach] == labels[1][reach]))
        entry = {"index": i, "stable": stable, "skipped_zero": False}
        if ok:
            fd = (rhos[0] - rhos[1]) / (2.0 * h)
            denom = max(abs(analytic[i]), 1e-12)
            entry.update(
                fd=float(fd),
                analytic=float(analytic[i]),
                rel_err=float(abs(fd - analytic[i]) / denom),
            )
        results.append(entry)
    return results


def _check_bellman(test: DesignedTest) -> CheckResult:
    ct = test.cost_tables
    op = test.op
    res = float(np.abs(ct.rho[-1] - ct.g[-1]).max())
    for n in range(ct.horizon - 1, -1, -1):
        d = 1.0 + op.H[n] @ ct.rho[n + 1]
        res = max(res, float(np.abs(ct.d[n] - d).max()))
        res = max(res, float(np.abs(ct.rho[n] - np.minimum(ct.g[n], d)).max()))
    return CheckResult(
        "bellman_residual", res <= 1e-9, f"max residual {res:.3e} (<= 1e-9)"
    )


def _check_rows(test: DesignedTest) -> CheckResult:
    worst = 0.0
    for mats in (test.op.H, test.op.H0, test.op.H1):
        for m in mats:
            worst = max(worst, float(np.abs(np.asarray(m.sum(axis=1)).ravel() - 1.0).max()))
    return CheckResult(
        "row_stochasticity", worst <= 1e-12, f"max |row sum - 1| = {worst:.3e}"
    )


def _check_lemma1(test: DesignedTest, samples: int, seed: int) -> CheckResult:
    """Randomized scaling inequality of the stopping cost in the posterior.

    For any scaling pair a >= 0 applied elementwise to the posterior tuple,
    the scaled stopping cost is pinched between min(a0, a1, 1) and
    max(a0, a1, 1) times the unscaled one.
    """
    rng = np.random.default_rng(seed)
    dm = test.dm
    n_idx = rng.integers(0, dm.horizon + 1, size=samples)
    t_idx = rng.integers(0, dm.n_t, size=samples)
    e0 = rng.random(samples)
    e1 = 1.0 - e0
    a = rng.uniform(0.0, 2.5, size=(2, samples))
    v0 = dm.v0[n_idx, t_idx]
    v1 = dm.v1[n_idx, t_idx]
    coeff = test.coefficients
    g = scaled_stop_cost(coeff, e0, e1, v0, v1)
    g_scaled = scaled_stop_cost(coeff, a[0] * e0, a[1] * e1, v0, v1)
    lo = np.minimum(np.minimum(a[0], a[1]), 1.0) * g
    hi = np.maximum(np.maximum(a[0], a[1]), 1.0) * g
    slack = 1e-12 * (1.0 + hi)
    violations = int(np.sum((g_scaled < lo - slack) | (g_scaled > hi + slack)))
    return CheckResult(
        "lemma1_scaling",
        violations == 0,
        f"{violations} violations in {samples} samples",
    )


def _check_total_variance(test: DesignedTest) -> CheckResult:
    dm, op = test.dm, test.op
    worst = -np.inf
    for i, (mats, v) in enumerate(((op.H0, dm.v0), (op.H1, dm.v1))):
        for n in range(dm.horizon):
            gap = float((mats[n] @ v[n + 1] - v[n]).max())
            worst = max(worst, gap)
    return CheckResult(
        "total_variance_contraction",
        worst <= 1e-3,
        f"max E[V_next] - V = {worst:.3e} (<= 1e-3)",
    )


def _check_slackness(test: DesignedTest) -> CheckResult:
    dm, op = test.dm, test.op
    et = error_tables(dm, op, test.regions)
    m0 = dm.t0_index
    k = test.constraints.as_array()
    vals = np.array(
        [
            et.alpha[0, 0, m0],
            et.alpha[1, 0, m0],
            et.beta[0, 0, m0],
            et.beta[1, 0, m0],
        ]
    )
    c = test.coefficients.as_array()
    gaps = [abs(vals[i] - k[i]) for i in range(4) if c[i] > 0.0]
    worst = max(gaps) if gaps else 0.0
    return CheckResult(
        "complementary_slackness",
        worst <= 5e-3,
        f"max |error - target| over active coefficients = {worst:.3e} (<= 5e-3)",
    )


def _check_theorem4(test: DesignedTest, seed: int) -> CheckResult:
    """FD identity at points jittered off C*.

    C* itself sits where region labels flip (that is what makes it
    optimal), so the check runs at nearby generic points and requires at
    least one region-stable one.
    """
    rng = np.random.default_rng(seed)
    base = test.coefficients.as_array()
    checked = 0
    worst = 0.0
    for _ in range(8):
        jitter = 1.0 + rng.uniform(-0.15, 0.15, size=4)
        cand = np.maximum(base * jitter, 0.0)
        res = theorem4_check(test, Coefficients.from_array(cand))
        entries = [r for r in res if r["stable"]]
        if not entries:
            continue
        checked += 1
        worst = max(worst, max(r["rel_err"] for r in entries))
        if checked >= 3:
            break
    if checked == 0:
        return CheckResult(
            "theorem4_gradient", False, "no region-stable probe point found"
        )
    return CheckResult(
        "theorem4_gradient",
        worst <= 1e-3,
        f"max relative FD error {worst:.3e} over {checked} stable probes (<= 1e-3)",
    )


def run_invariant_suite(
    test: DesignedTest, lemma_samples: int = 10_000, seed: int = 20260810
) -> list[CheckResult]:
    """All invariant checks; rebuilds transition operators when needed."""
    _ensure_ops(test)
    return [
        _check_bellman(test),
        _check_rows(test),
        _check_lemma1(test, lemma_samples, seed),
        _check_total_variance(test),
        _check_slackness(test),
        _check_theorem4(test, seed),
    ]
