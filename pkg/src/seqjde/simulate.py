"""Monte Carlo validation of designed tests and of the SPRT baseline.

Trial randomness is counter-based: trial i lives in chunk i // CHUNK, and
each chunk draws from a Philox stream keyed by (master seed, chunk index).
Within a chunk the draw layout is fixed (hypothesis uniforms, then both
parameter priors, then the full observation-noise matrix), so every trial
is reproducible from (seed, index) alone, independent of execution order
or of how many trials run alongside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coeffopt import DesignedTest
from .grid import DiscretizedModel
from .model import ProblemModel

__all__ = [
    "CHUNK",
    "TrialOutcome",
    "SimulationReport",
    "SprtPolicy",
    "run_trial",
    "monte_carlo",
    "sprt_design",
    "sprt_monte_carlo",
    "collect_outcomes",
    "sprt_collect_outcomes",
]

CHUNK = 4096


@dataclass(frozen=True)
class TrialOutcome:
    hypothesis: int
    theta: float
    decision: int
    estimate: float
    tau: int
    truncated: bool
    clamped: bool


@dataclass
class SimulationReport:
    """Aggregated per-hypothesis statistics of a Monte Carlo run.

    mse0/mse1 are conditional on a correct decision (sum of squared errors
    over correct-decision trials divided by their count); the _indicator
    variants divide by all trials of that hypothesis instead, matching the
    quantity the design constrains.
    """

    alpha0: float
    alpha1: float
    alpha0_se: float
    alpha1_se: float
    mse0: float
    mse1: float
    mse0_se: float
    mse1_se: float
    mse0_indicator: float
    mse1_indicator: float
    mean_tau: float
    mean_tau_h0: float
    mean_tau_h1: float
    truncation_rate: float
    clamp_rate: float
    n_h0: int
    n_h1: int
    runs: int
    seed: int
    weighted_objective: float | None = None

    def to_dict(self) -> dict:
        out = {
            "alpha0": self.alpha0,
            "alpha1": self.alpha1,
            "alpha0_se": self.alpha0_se,
            "alpha1_se": self.alpha1_se,
            "mse0": self.mse0,
            "mse1": self.mse1,
            "mse0_se": self.mse0_se,
            "mse1_se": self.mse1_se,
            "mse0_indicator": self.mse0_indicator,
            "mse1_indicator": self.mse1_indicator,
            "mean_tau": self.mean_tau,
            "mean_tau_h0": self.mean_tau_h0,
            "mean_tau_h1": self.mean_tau_h1,
            "truncation_rate": self.truncation_rate,
            "clamp_rate": self.clamp_rate,
            "n_h0": self.n_h0,
            "n_h1": self.n_h1,
            "runs": self.runs,
            "seed": self.seed,
        }
        if self.weighted_objective is not None:
            out["weighted_objective"] = self.weighted_objective
        return out


@dataclass
class SprtPolicy:
    """Truncated SPRT on the statistic grid plus MMSE estimator tables."""

    a: float  # upper threshold, decide H1
    b: float  # lower threshold, decide H0
    eta: np.ndarray  # likelihood ratio p(t|H1)/p(t|H0), (N+1, Nt)
    m0: np.ndarray
    m1: np.ndarray
    t_grid: np.ndarray
    horizon: int


def _chunk_draws(model: ProblemModel, seed: int, chunk: int, horizon: int):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chunk,))
    rng = np.random.Generator(np.random.Philox(ss))
    u = rng.random(CHUNK)
    th0 = np.asarray(model.prior_sample(0, rng, CHUNK), dtype=float)
    th1 = np.asarray(model.prior_sample(1, rng, CHUNK), dtype=float)
    z = rng.standard_normal((CHUNK, horizon))
    return u, th0, th1, z


def _trial_inputs(model, seed, chunk, horizon, lo, hi, forced):
    u, th0, th1, z = _chunk_draws(model, seed, chunk, horizon)
    u, th0, th1, z = u[lo:hi], th0[lo:hi], th1[lo:hi], z[lo:hi]
    if forced is None:
        hyp = (u >= model.priors.p0).astype(np.int64)
    else:
        hyp = np.full(hi - lo, int(forced), dtype=np.int64)
    theta = np.where(hyp == 1, th1, th0)
    return hyp, theta, model.observations_from_normals(theta, z)


def _run_batch(model, horizon, t_grid, stop_decide, theta, x):
    """Generic vectorized policy run.

    ``stop_decide(n, t_values)`` returns (stop_mask, decision, estimate)
    for the supplied statistic values at time n; decisions/estimates are
    only read where stop_mask is set.
    """
    k = theta.size
    t = np.full(k, model.statistic.t0)
    tau = np.zeros(k, dtype=np.int64)
    decision = np.zeros(k, dtype=np.int64)
    estimate = np.zeros(k)
    clamped = np.zeros(k, dtype=bool)
    alive = np.ones(k, dtype=bool)
    for n in range(horizon + 1):
        if n > 0:
            idx = np.nonzero(alive)[0]
            t[idx] = model.statistic.update(n - 1, t[idx], x[idx, n - 1])
        idx = np.nonzero(alive)[0]
        tv = t[idx]
        clamped[idx] |= (tv < t_grid[0]) | (tv > t_grid[-1])
        stop, dec, est = stop_decide(n, tv)
        if n == horizon:
            stop = np.ones_like(stop)
        if stop.any():
            hit = idx[stop]
            tau[hit] = n
            decision[hit] = dec[stop]
            estimate[hit] = est[stop]
            alive[hit] = False
        if not alive.any():
            break
    return decision, estimate, tau, clamped


def _designed_stopper(test: DesignedTest):
    ct, dm = test.cost_tables, test.dm
    t_grid = dm.spec.t_axis.points()

    def stop_decide(n, tv):
        d0 = np.interp(tv, t_grid, ct.dstar0[n])
        d1 = np.interp(tv, t_grid, ct.dstar1[n])
        dec = (d0 > d1).astype(np.int64)
        est = np.where(
            dec == 0,
            np.interp(tv, t_grid, dm.m0[n]),
            np.interp(tv, t_grid, dm.m1[n]),
        )
        if n < ct.horizon:
            g = np.interp(tv, t_grid, ct.g[n])
            d = np.interp(tv, t_grid, ct.d[n])
            stop = g <= d
        else:
            stop = np.ones(tv.size, dtype=bool)
        return stop, dec, est

    return stop_decide, t_grid, ct.horizon


def _sprt_stopper(policy: SprtPolicy):
    t_grid = policy.t_grid

    def stop_decide(n, tv):
        eta = np.interp(tv, t_grid, policy.eta[n])
        if n < policy.horizon:
            stop = (eta >= policy.a) | (eta <= policy.b)
            dec = (eta >= policy.a).astype(np.int64)
        else:
            stop = np.ones(tv.size, dtype=bool)
            dec = (eta > 1.0).astype(np.int64)
        est = np.where(
            dec == 0,
            np.interp(tv, t_grid, policy.m0[n]),
            np.interp(tv, t_grid, policy.m1[n]),
        )
        return stop, dec, est

    return stop_decide, t_grid, policy.horizon


def _collect(model, stopper, runs, seed, forced):
    stop_decide, t_grid, horizon = stopper
    hyp = np.empty(runs, dtype=np.int64)
    theta = np.empty(runs)
    decision = np.empty(runs, dtype=np.int64)
    estimate = np.empty(runs)
    tau = np.empty(runs, dtype=np.int64)
    clamped = np.empty(runs, dtype=bool)
    for chunk in range((runs + CHUNK - 1) // CHUNK):
        lo = chunk * CHUNK
        hi = min(lo + CHUNK, runs)
        h, th, x = _trial_inputs(model, seed, chunk, horizon, 0, hi - lo, forced)
        dec, est, tu, cl = _run_batch(model, horizon, t_grid, stop_decide, th, x)
        hyp[lo:hi], theta[lo:hi] = h, th
        decision[lo:hi], estimate[lo:hi], tau[lo:hi], clamped[lo:hi] = dec, est, tu, cl
    return hyp, theta, decision, estimate, tau, clamped


def collect_outcomes(test: DesignedTest, runs: int, seed: int, forced=None):
    """Raw per-trial arrays (hyp, theta, decision, estimate, tau, clamped)."""
    if runs < 1:
        raise ValueError("empty simulation: runs must be at least 1")
    return _collect(test.model, _designed_stopper(test), runs, seed, forced)


def sprt_collect_outcomes(policy: SprtPolicy, model, runs: int, seed: int, forced=None):
    if runs < 1:
        raise ValueError("empty simulation: runs must be at least 1")
    return _collect(model, _sprt_stopper(policy), runs, seed, forced)


def run_trial(test: DesignedTest, seed: int, index: int, forced=None) -> TrialOutcome:
    """Single trial, identical to trial ``index`` of a monte_carlo run."""
    chunk, off = divmod(index, CHUNK)
    stop_decide, t_grid, horizon = _designed_stopper(test)
    h, th, x = _trial_inputs(
        test.model, seed, chunk, horizon, off, off + 1, forced
    )
    dec, est, tau, cl = _run_batch(test.model, horizon, t_grid, stop_decide, th, x)
    return TrialOutcome(
        hypothesis=int(h[0]),
        theta=float(th[0]),
        decision=int(dec[0]),
        estimate=float(est[0]),
        tau=int(tau[0]),
        truncated=bool(tau[0] == horizon),
        clamped=bool(cl[0]),
    )


def _aggregate(arrays, horizon, runs, seed, priors=None, coeff=None):
    hyp, theta, decision, estimate, tau, clamped = arrays
    sqerr = (estimate - theta) ** 2
    stats = {}
    for i in (0, 1):
        sel = hyp == i
        n_i = int(sel.sum())
        wrong = int((decision[sel] != i).sum())
        alpha = wrong / n_i if n_i else math.nan
        alpha_se = math.sqrt(alpha * (1.0 - alpha) / n_i) if n_i else math.nan
        correct = sel & (decision == hyp)
        n_c = int(correct.sum())
        errs = sqerr[correct]
        mse = float(errs.mean()) if n_c else math.nan
        mse_se = float(errs.std(ddof=1) / math.sqrt(n_c)) if n_c > 1 else math.nan
        mse_ind = float(errs.sum() / n_i) if n_i else math.nan
        stats[i] = (n_i, alpha, alpha_se, mse, mse_se, mse_ind, sel)
    weighted = None
    if coeff is not None and priors is not None:
        p = (priors.p0, priors.p1)
        c = coeff.as_array()
        weighted = float(
            tau.mean()
            + c[0] * p[0] * stats[0][1]
            + c[1] * p[1] * stats[1][1]
            + c[2] * p[0] * stats[0][5]
            + c[3] * p[1] * stats[1][5]
        )
    return SimulationReport(
        alpha0=stats[0][1],
        alpha1=stats[1][1],
        alpha0_se=stats[0][2],
        alpha1_se=stats[1][2],
        mse0=stats[0][3],
        mse1=stats[1][3],
        mse0_se=stats[0][4],
        mse1_se=stats[1][4],
        mse0_indicator=stats[0][5],
        mse1_indicator=stats[1][5],
        mean_tau=float(tau.mean()),
        mean_tau_h0=float(tau[stats[0][6]].mean()) if stats[0][0] else math.nan,
        mean_tau_h1=float(tau[stats[1][6]].mean()) if stats[1][0] else math.nan,
        truncation_rate=float((tau == horizon).mean()),
        clamp_rate=float(clamped.mean()),
        n_h0=stats[0][0],
        n_h1=stats[1][0],
        runs=runs,
        seed=seed,
        weighted_objective=weighted,
    )


def monte_carlo(test: DesignedTest, runs: int, seed: int) -> SimulationReport:
    """Validate a designed test empirically; deterministic given the seed."""
    arrays = collect_outcomes(test, runs, seed)
    return _aggregate(
        arrays,
        test.cost_tables.horizon,
        runs,
        seed,
        priors=test.model.priors,
        coeff=test.coefficients,
    )


def sprt_design(dm: DiscretizedModel, k) -> SprtPolicy:
    """Truncated SPRT with Wald thresholds plus MMSE estimator tables.

    A = (1 - k1)/k0 and B = k1/(1 - k0); the likelihood-ratio tables come
    from the discretization, and at the truncation point the test decides
    H1 whenever the likelihood ratio exceeds 1.
    """
    a = (1.0 - k.k1) / k.k0
    b = k.k1 / (1.0 - k.k0)
    if not a > 1.0 > b > 0.0:
        raise ValueError(
            f"degenerate thresholds A={a:.4g}, B={b:.4g};"
            " targets must satisfy A > 1 > B"
        )
    eta = np.minimum(dm.z1 / np.maximum(dm.z0, 1e-300), 1e12)
    return SprtPolicy(
        a=a,
        b=b,
        eta=eta,
        m0=dm.m0,
        m1=dm.m1,
        t_grid=dm.spec.t_axis.points(),
        horizon=dm.horizon,
    )


def sprt_monte_carlo(
    policy: SprtPolicy, model: ProblemModel, runs: int, seed: int
) -> SimulationReport:
    """Monte Carlo for the two-stage baseline; same draws as monte_carlo."""
    arrays = sprt_collect_outcomes(policy, model, runs, seed)
    return _aggregate(arrays, policy.horizon, runs, seed)
