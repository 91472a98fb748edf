"""Selection of loss coefficients meeting error constraints.

The four coefficients act as Lagrange multipliers of the constrained
minimum-run-length problem.  The dual objective

    L(C) = rho_0(t0) - p(H0) C0 k0 - p(H1) C1 k1 - p(H0) C2 k2 - p(H1) C3 k3

is concave in C, its gradient components are the prior-weighted gaps
between the scheme's conditional errors at (0, t0) and their targets, and
its maximum equals the expected run-length.  Two solvers are provided:

  * a discretized linear program over (rho, C) with a small regularizer
    that forces the inequality constraints to bind across the state space,
  * projected gradient ascent on L evaluated through the exact backward
    recursion (independent cross-check).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .bellman import (
    STOP_H0,
    STOP_H1,
    Coefficients,
    CostTables,
    Regions,
    backward_induction,
    extract_regions,
)
from .grid import DiscretizedModel, ForwardMarginals, GridSpec, TransitionOperator, build
from .model import ProblemModel

__all__ = [
    "RegularizationError",
    "SolverError",
    "UnattainableError",
    "NonConvergenceError",
    "Constraints",
    "DesignOptions",
    "LinearProgram",
    "ErrorTables",
    "DesignedTest",
    "epsilon_bound",
    "default_epsilon",
    "assemble_lp",
    "solve_design_lp",
    "error_tables",
    "dual_objective_and_gradient",
    "dual_ascent",
    "design",
]

# C* components below this fraction of the largest one are reported as an
# exact zero: the corresponding constraint is dominated, not active.
ZERO_COEFF_REL = 1e-6


class RegularizationError(ValueError):
    """epsilon at or above the boundedness limit of the regularized LP."""


class SolverError(RuntimeError):
    """LP solver failed numerically."""


class UnattainableError(RuntimeError):
    """Constraints cannot be met within the horizon (unbounded dual)."""


class NonConvergenceError(RuntimeError):
    """Dual ascent exhausted its iteration budget."""

    def __init__(self, msg, last=None, grad_norm=None):
        super().__init__(msg)
        self.last = last
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class Constraints:
    """Targets: k0/k1 error probabilities, k2/k3 mean squared errors."""

    k0: float
    k1: float
    k2: float
    k3: float

    def __post_init__(self):
        if not (0.0 < self.k0 < 1.0 and 0.0 < self.k1 < 1.0):
            raise ValueError("error-probability targets must lie in (0, 1)")
        if not (self.k2 > 0.0 and self.k3 > 0.0):
            raise ValueError("MSE targets must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.k0, self.k1, self.k2, self.k3], dtype=float)

    def weights(self, priors) -> np.ndarray:
        """Prior-weighted targets multiplying each coefficient in L."""
        p = np.array([priors.p0, priors.p1, priors.p0, priors.p1])
        return p * self.as_array()


@dataclass(frozen=True)
class DesignOptions:
    """Solver configuration for `design`.

    ``lp_horizon`` enables the documented big-problem fallback: the LP is
    solved on the system truncated to that horizon (the tail of a long
    test carries almost no mass) and dual ascent then refines C* and
    re-derives the objective on the full-horizon recursion.
    """

    epsilon: float | None = None  # None -> default rule
    solver: str = "lp"  # "lp" | "dual_ascent"
    tol: float = 1e-8
    max_iter: int = 500
    c_init: tuple | None = None
    leakage_tol: float = 1e-3
    lp_horizon: int | None = None

    def __post_init__(self):
        if self.solver not in ("lp", "dual_ascent"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.epsilon is not None and self.epsilon < 0.0:
            raise ValueError("epsilon must be non-negative")
        if self.lp_horizon is not None and self.lp_horizon < 1:
            raise ValueError("lp_horizon must be at least 1")


@dataclass
class LinearProgram:
    """Discretized design LP in maximization form.

    Variables: rho(n, t) in row-major (n, t) order, then C0..C3; all >= 0.
    Rows: the two stopping-cost constraints for every (n, t), then the
    continuation constraints for n < N.
    """

    c: np.ndarray  # objective, maximize c @ x
    a_ub: sparse.csr_matrix
    b_ub: np.ndarray
    m0: int  # variable index of rho(0, t0)
    n_t: int
    horizon: int
    epsilon: float

    @property
    def num_variables(self) -> int:
        return self.n_t * (self.horizon + 1) + 4

    @property
    def num_constraints(self) -> int:
        return self.n_t * (3 * self.horizon + 2)

    @property
    def coeff_offset(self) -> int:
        return self.n_t * (self.horizon + 1)

    def rho_index(self, n: int, t_index: int) -> int:
        return n * self.n_t + t_index

    def dstar0_row(self, n: int, t_index: int) -> int:
        return self.rho_index(n, t_index)

    def dstar1_row(self, n: int, t_index: int) -> int:
        return self.n_t * (self.horizon + 1) + self.rho_index(n, t_index)

    def continuation_row(self, n: int, t_index: int) -> int:
        return 2 * self.n_t * (self.horizon + 1) + self.rho_index(n, t_index)


@dataclass
class ErrorTables:
    """Conditional error probability / MSE of the running scheme.

    alpha[i, n, t] = P(decide H_{1-i} eventually | t_n = t, H_i), and
    beta[i, n, t] the analogous conditional MSE contribution, both via the
    backward Chapman-Kolmogorov recursions under the H_i-conditional
    transition operators.
    """

    alpha: np.ndarray  # (2, N+1, Nt)
    beta: np.ndarray  # (2, N+1, Nt)


@dataclass
class DesignedTest:
    """A fully designed sequential test plus its analysis tables."""

    model: ProblemModel
    spec: GridSpec
    constraints: Constraints
    options: DesignOptions
    coefficients: Coefficients
    cost_tables: CostTables
    regions: Regions
    dual_objective: float
    dm: DiscretizedModel
    op: TransitionOperator | None = None
    fm: ForwardMarginals | None = None
    diagnostics: dict | None = None

    @property
    def t0_index(self) -> int:
        return self.dm.t0_index


def epsilon_bound(dm: DiscretizedModel, k: Constraints) -> float:
    """Largest regularization weight keeping the LP objective bounded."""
    return float(
        min(k.k0, k.k1, k.k2 / dm.prior_var_0, k.k3 / dm.prior_var_1)
    )


def default_epsilon(dm: DiscretizedModel, k: Constraints) -> float:
    """1/50 of the smallest constraint, clipped strictly below the bound."""
    return min(float(min(k.as_array())) / 50.0, 0.5 * epsilon_bound(dm, k))


def assemble_lp(
    dm: DiscretizedModel,
    op: TransitionOperator,
    fm: ForwardMarginals,
    k: Constraints,
    epsilon: float,
) -> LinearProgram:
    """Build the sparse regularized design LP.

    maximize  rho(0, t0) - sum_i w_i C_i + eps/(N+1) sum_n mu_n . rho_n
    s.t.      rho(n, t) <= C1 e1 + C2 e0 v0          (decide-H0 cost)
              rho(n, t) <= C0 e0 + C3 e1 v1          (decide-H1 cost)
              rho(n, t) <= 1 + (H_n rho_{n+1})(t)    (n < N)
              all variables >= 0
    """
    bound = epsilon_bound(dm, k)
    if epsilon >= bound:
        raise RegularizationError(
            f"epsilon {epsilon:.3g} must be strictly below {bound:.3g}"
        )
    n_t = dm.n_t
    horizon = dm.horizon
    n_rho = n_t * (horizon + 1)

    c = np.zeros(n_rho + 4)
    c[: n_rho] = (epsilon / (horizon + 1)) * fm.mu.ravel()
    c[dm.t0_index] += 1.0
    c[n_rho:] = -k.weights(dm.model.priors)

    eye = sparse.identity(n_rho, format="csr")

    def stop_block(col_a, dat_a, col_b, dat_b):
        cols = sparse.csr_matrix(
            (
                np.concatenate([-dat_a.ravel(), -dat_b.ravel()]),
                (
                    np.concatenate([np.arange(n_rho)] * 2),
                    np.concatenate(
                        [np.full(n_rho, col_a), np.full(n_rho, col_b)]
                    ),
                ),
            ),
            shape=(n_rho, 4),
        )
        return sparse.hstack([eye, cols], format="csr")

    a_stop0 = stop_block(1, dm.e1, 2, dm.e0 * dm.v0)
    a_stop1 = stop_block(0, dm.e0, 3, dm.e1 * dm.v1)

    n_cont = n_t * horizon
    shift = sparse.block_diag(op.H, format="csr")  # maps rho(n+1) <- row (n, t)
    a_cont_rho = sparse.hstack(
        [
            sparse.identity(n_cont, format="csr"),
            sparse.csr_matrix((n_cont, n_t)),
        ],
        format="csr",
    ) - sparse.hstack(
        [sparse.csr_matrix((n_cont, n_t)), shift], format="csr"
    )
    a_cont = sparse.hstack([a_cont_rho, sparse.csr_matrix((n_cont, 4))], format="csr")

    a_ub = sparse.vstack([a_stop0, a_stop1, a_cont], format="csr")
    b_ub = np.concatenate([np.zeros(2 * n_rho), np.ones(n_cont)])
    return LinearProgram(
        c=c,
        a_ub=a_ub,
        b_ub=b_ub,
        m0=dm.t0_index,
        n_t=n_t,
        horizon=horizon,
        epsilon=epsilon,
    )


def solve_design_lp(lp: LinearProgram, tol: float = 1e-8):
    """Solve the design LP; returns (coefficients, rho tables, objective).

    Coefficient components below ZERO_COEFF_REL of the largest one are
    snapped to exactly zero: they signal a constraint dominated by the
    other constraint of the same hypothesis, not a small optimum.
    """
    res = linprog(
        -lp.c,
        A_ub=lp.a_ub,
        b_ub=lp.b_ub,
        bounds=(0.0, None),
        method="highs",
        options={
            "primal_feasibility_tolerance": max(tol, 1e-10),
            "dual_feasibility_tolerance": max(tol, 1e-10),
        },
    )
    if res.status == 3:
        raise UnattainableError(
            "design LP is unbounded: the error constraints cannot be met"
            " within the horizon (some dual gradient component stays positive)"
        )
    if res.status != 0 or res.x is None:
        raise SolverError(f"LP solver failed (status {res.status}): {res.message}")
    x = res.x
    coeffs = x[lp.coeff_offset :].copy()
    top = coeffs.max()
    if top > 0.0:
        coeffs[coeffs < ZERO_COEFF_REL * top] = 0.0
    rho = x[: lp.coeff_offset].reshape(lp.horizon + 1, lp.n_t)
    return Coefficients.from_array(coeffs), rho, float(-res.fun)


def error_tables(
    dm: DiscretizedModel, op: TransitionOperator, regions: Regions
) -> ErrorTables:
    """Backward recursions for the conditional error probability and MSE.

    On a cell that stops and decides H_{1-i}: alpha = 1, beta = 0.  On a
    cell that stops and decides H_i: alpha = 0, beta = posterior variance
    (the MMSE estimator's conditional MSE).  On continuation cells both
    propagate under the H_i-conditional measure, realized through the
    unconditional operator and the posterior change of measure,

        E[f(t') | t, H_i] = (H_n @ (e_i(n+1, .) f))(t) / e_i(n, t),

    which is the discretization consistent with the cost-derivative
    identity (the per-hypothesis predictive-push operators lose the
    posterior martingale property at the grid's interpolation order and
    would bias these tables by several percent on coarse grids).  Cells
    with negligible posterior weight under H_i fall back to the
    predictive-push rows; they carry no conditional mass.  In far tails
    the change-of-measure ratio is not exactly stochastic, so alpha can
    exceed 1 there by the interpolation defect; at the start state and
    across the reachable bulk the tables are probabilities.
    """
    n_steps = dm.horizon
    n_t = dm.n_t
    alpha = np.zeros((2, n_steps + 1, n_t))
    beta = np.zeros((2, n_steps + 1, n_t))
    labels = regions.labels
    for i in (0, 1):
        h_push = (op.H0 if i == 0 else op.H1)
        e_i = dm.e0 if i == 0 else dm.e1
        v_i = dm.v0 if i == 0 else dm.v1
        own = STOP_H0 if i == 0 else STOP_H1
        other = STOP_H1 if i == 0 else STOP_H0
        alpha[i, n_steps] = labels[n_steps] == other
        beta[i, n_steps] = np.where(labels[n_steps] == own, v_i[n_steps], 0.0)
        for n in range(n_steps - 1, -1, -1):
            live = e_i[n] > 1e-12
            denom = np.where(live, e_i[n], 1.0)
            a = (op.H[n] @ (e_i[n + 1] * alpha[i, n + 1])) / denom
            b = (op.H[n] @ (e_i[n + 1] * beta[i, n + 1])) / denom
            if not live.all():
                dead = ~live
                a[dead] = np.clip((h_push[n] @ alpha[i, n + 1])[dead], 0.0, 1.0)
                b[dead] = (h_push[n] @ beta[i, n + 1])[dead]
            stop_own = labels[n] == own
            stop_other = labels[n] == other
            a[stop_other] = 1.0
            a[stop_own] = 0.0
            b[stop_own] = v_i[n][stop_own]
            b[stop_other] = 0.0
            alpha[i, n] = a
            beta[i, n] = b
    return ErrorTables(alpha=alpha, beta=beta)


def _dual_eval(dm, op, k: Constraints, coeff: Coefficients):
    """L, gradient and the intermediate tables at one coefficient vector."""
    ct = backward_induction(dm, op, coeff)
    regions = extract_regions(ct)
    et = error_tables(dm, op, regions)
    m0 = dm.t0_index
    weights = k.weights(dm.model.priors)
    lval = float(ct.rho[0, m0] - weights @ coeff.as_array())
    p = dm.model.priors
    karr = k.as_array()
    grad = np.array(
        [
            p.p0 * (et.alpha[0, 0, m0] - karr[0]),
            p.p1 * (et.alpha[1, 0, m0] - karr[1]),
            p.p0 * (et.beta[0, 0, m0] - karr[2]),
            p.p1 * (et.beta[1, 0, m0] - karr[3]),
        ]
    )
    return lval, grad, ct, regions, et


def dual_objective_and_gradient(
    dm: DiscretizedModel, op: TransitionOperator, k: Constraints, coeff: Coefficients
):
    """Dual objective L(C) and its gradient from the error recursions."""
    lval, grad, *_ = _dual_eval(dm, op, k, coeff)
    return lval, grad


def dual_ascent(
    dm: DiscretizedModel,
    op: TransitionOperator,
    k: Constraints,
    c_init=None,
    opts: DesignOptions | None = None,
) -> Coefficients:
    """Projected gradient ascent on the concave dual objective.

    Accepted steps never decrease L.  Converged when the projected
    gradient drops below the tolerance, or, since L is piecewise linear
    in C on a finite grid and the one-sided slopes need not vanish at the
    maximizer, when neither a gradient step of any admissible size nor a
    per-coordinate probe improves L.
    """
    opts = opts or DesignOptions(solver="dual_ascent")
    if c_init is None:
        c_init = 1.0 / k.as_array()
    c = np.asarray(c_init, dtype=float).copy()
    if np.any(c < 0.0):
        raise ValueError("initial coefficients must be non-negative")

    def value(arr):
        lv, gr, *_ = _dual_eval(dm, op, k, Coefficients.from_array(arr))
        return lv, gr

    lval, grad = value(c)
    step = (1.0 + np.abs(c).max()) / (10.0 * (1.0 + np.abs(grad).max()))
    step_min = step * 1e-12
    tol = max(opts.tol, 1e-12)
    improve_eps = 1e-13
    for _ in range(opts.max_iter):
        proj_grad = np.where(c > 0.0, grad, np.maximum(grad, 0.0))
        if np.abs(proj_grad).max() < tol:
            return Coefficients.from_array(c)
        s = step
        improved = False
        while s >= step_min:
            cand = np.maximum(0.0, c + s * grad)
            if np.any(cand != c):
                lc, gc = value(cand)
                if lc > lval + improve_eps * (1.0 + abs(lval)):
                    c, lval, grad = cand, lc, gc
                    step = 2.0 * s
                    improved = True
                    break
            s *= 0.5
        if improved:
            continue
        # gradient steps stalled at a kink: polish one coordinate at a time
        delta = 0.05 * (1.0 + np.abs(c).max())
        while delta > 1e-7 * (1.0 + np.abs(c).max()):
            moved = False
            for i in range(4):
                for sign in (+1.0, -1.0):
                    cand = c.copy()
                    cand[i] = max(0.0, cand[i] + sign * delta)
                    if cand[i] == c[i]:
                        continue
                    lc, gc = value(cand)
                    if lc > lval + improve_eps * (1.0 + abs(lval)):
                        c, lval, grad = cand, lc, gc
                        moved = True
            if not moved:
                delta *= 0.5
        return Coefficients.from_array(c)
    raise NonConvergenceError(
        f"dual ascent did not converge in {opts.max_iter} iterations"
        f" (|proj grad| = {np.abs(proj_grad).max():.3g})",
        last=Coefficients.from_array(c),
        grad_norm=float(np.abs(proj_grad).max()),
    )


def design(
    model: ProblemModel,
    spec: GridSpec,
    k: Constraints,
    opts: DesignOptions | None = None,
    prebuilt=None,
) -> DesignedTest:
    """Full pipeline: discretize, pick C*, re-derive exact tables.

    The LP's rho variables are discarded; the cost tables of the returned
    test always come from the exact backward recursion at C*, which keeps
    the Bellman residual at zero and removes accumulated solver error.
    ``prebuilt`` accepts an existing (dm, op, fm) triple for the same
    model and spec, so several constraint sets can share one build.
    """
    opts = opts or DesignOptions()
    if prebuilt is not None:
        dm, op, fm = prebuilt
        if dm.spec != spec or dm.model != model:
            raise ValueError("prebuilt discretization does not match model/spec")
    else:
        dm, op, fm = build(model, spec, leakage_tol=opts.leakage_tol)
    eps = opts.epsilon if opts.epsilon is not None else default_epsilon(dm, k)
    diagnostics = dict(dm.diagnostics)
    diagnostics["epsilon"] = eps
    if opts.solver == "lp":
        if opts.lp_horizon is not None and opts.lp_horizon < spec.horizon:
            from .grid import truncate_horizon

            dm_lp, op_lp, fm_lp = truncate_horizon(dm, op, fm, opts.lp_horizon)
            lp = assemble_lp(dm_lp, op_lp, fm_lp, k, eps)
            coeff, _, lp_obj = solve_design_lp(lp, opts.tol)
            diagnostics["lp_objective_truncated"] = lp_obj
            diagnostics["lp_coefficients_truncated"] = coeff.as_array().tolist()
            coeff = dual_ascent(dm, op, k, coeff.as_array(), opts)
        else:
            lp = assemble_lp(dm, op, fm, k, eps)
            coeff, _, lp_obj = solve_design_lp(lp, opts.tol)
            diagnostics["lp_objective"] = lp_obj
    else:
        bound = epsilon_bound(dm, k)
        if eps >= bound:
            raise RegularizationError(
                f"epsilon {eps:.3g} must be strictly below {bound:.3g}"
            )
        coeff = dual_ascent(dm, op, k, opts.c_init, opts)
    lval, grad, ct, regions, et = _dual_eval(dm, op, k, coeff)
    diagnostics["dual_gradient"] = grad.tolist()
    diagnostics["alpha_at_start"] = [float(et.alpha[i, 0, dm.t0_index]) for i in (0, 1)]
    diagnostics["beta_at_start"] = [float(et.beta[i, 0, dm.t0_index]) for i in (0, 1)]
    return DesignedTest(
        model=model,
        spec=spec,
        constraints=k,
        options=replace(opts, epsilon=eps),
        coefficients=coeff,
        cost_tables=ct,
        regions=regions,
        dual_objective=lval,
        dm=dm,
        op=op,
        fm=fm,
        diagnostics=diagnostics,
    )
