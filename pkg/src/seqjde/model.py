"""Bayesian two-hypothesis joint detection/estimation problem models.

A problem instance couples
  * prior probabilities of the two hypotheses,
  * a parameter prior per hypothesis (disjoint supports),
  * a conditionally-iid observation likelihood, and
  * a fixed-dimension sufficient statistic with a recursive update rule.

Two presets are shipped: a shift-in-mean test (Gaussian data, random mean
with mirrored Gamma priors, sample-mean statistic) and a shift-in-variance
test (zero-mean Gaussian data, random variance with uniform / shifted-Gamma
priors, mean-of-squares statistic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "UndefinedLikelihoodError",
    "OverlapError",
    "HypothesisPriors",
    "ParameterPrior",
    "StatisticDef",
    "ProblemModel",
    "make_shift_in_mean",
    "make_shift_in_variance",
    "statistic_update",
    "statistic_loglik",
    "statistic_likelihood",
    "prior_sample",
]


class UndefinedLikelihoodError(ValueError):
    """Raised when the statistic likelihood is requested at n = 0."""


class OverlapError(ValueError):
    """Raised when the two parameter supports would overlap."""


@dataclass(frozen=True)
class HypothesisPriors:
    """Prior probabilities p(H0), p(H1)."""

    p0: float
    p1: float

    def __post_init__(self):
        if not (self.p0 > 0.0 and self.p1 > 0.0):
            raise ValueError("hypothesis priors must be strictly positive")
        if abs(self.p0 + self.p1 - 1.0) > 1e-12:
            raise ValueError("hypothesis priors must sum to 1")


@dataclass(frozen=True)
class ParameterPrior:
    """Parameter prior under one hypothesis.

    family is one of "gamma", "negated_gamma", "uniform", "shifted_gamma".
    ``shape``/``scale`` parametrize the Gamma families, ``lo``/``hi`` the
    uniform one, ``shift`` the shifted Gamma.  ``support`` is the closed
    interval on which the density is nonzero (possibly unbounded).
    """

    family: str
    shape: float = float("nan")
    scale: float = float("nan")
    lo: float = float("nan")
    hi: float = float("nan")
    shift: float = 0.0

    @property
    def support(self) -> tuple[float, float]:
        if self.family == "gamma":
            return (0.0, math.inf)
        if self.family == "negated_gamma":
            return (-math.inf, 0.0)
        if self.family == "uniform":
            return (self.lo, self.hi)
        if self.family == "shifted_gamma":
            return (self.shift, math.inf)
        raise ValueError(f"unknown prior family {self.family!r}")

    def pdf(self, theta):
        """Density evaluated elementwise; zero outside the support."""
        theta = np.asarray(theta, dtype=float)
        if self.family == "uniform":
            inside = (theta >= self.lo) & (theta <= self.hi)
            return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)
        if self.family == "gamma":
            z = theta
        elif self.family == "negated_gamma":
            z = -theta
        elif self.family == "shifted_gamma":
            z = theta - self.shift
        else:
            raise ValueError(f"unknown prior family {self.family!r}")
        a, b = self.shape, self.scale
        out = np.zeros_like(z, dtype=float)
        pos = z > 0.0
        zp = z[pos] if z.ndim else (z if pos else None)
        if z.ndim == 0:
            if pos:
                return float(
                    math.exp((a - 1.0) * math.log(z) - z / b - math.lgamma(a) - a * math.log(b))
                )
            return 0.0
        out[pos] = np.exp((a - 1.0) * np.log(zp) - zp / b - math.lgamma(a) - a * math.log(b))
        return out

    def logpdf(self, theta):
        """Log-density; -inf outside the support."""
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(theta))

    def mean(self) -> float:
        if self.family == "gamma":
            return self.shape * self.scale
        if self.family == "negated_gamma":
            return -self.shape * self.scale
        if self.family == "uniform":
            return 0.5 * (self.lo + self.hi)
        if self.family == "shifted_gamma":
            return self.shift + self.shape * self.scale
        raise ValueError(f"unknown prior family {self.family!r}")

    def variance(self) -> float:
        if self.family in ("gamma", "negated_gamma", "shifted_gamma"):
            return self.shape * self.scale**2
        if self.family == "uniform":
            return (self.hi - self.lo) ** 2 / 12.0
        raise ValueError(f"unknown prior family {self.family!r}")

    def sample(self, rng: np.random.Generator, size=None):
        if self.family == "gamma":
            return rng.gamma(self.shape, self.scale, size)
        if self.family == "negated_gamma":
            return -rng.gamma(self.shape, self.scale, size)
        if self.family == "uniform":
            return rng.uniform(self.lo, self.hi, size)
        if self.family == "shifted_gamma":
            return self.shift + rng.gamma(self.shape, self.scale, size)
        raise ValueError(f"unknown prior family {self.family!r}")


@dataclass(frozen=True)
class StatisticDef:
    """Sufficient statistic: initial value and recursive update kernel."""

    kind: str  # "sample_mean" | "mean_of_squares"
    t0: float = 0.0

    def update(self, n, t, x):
        """t_{n+1} from (n, t_n, x_{n+1}); n is the count before the update."""
        if self.kind == "sample_mean":
            return (n * t + x) / (n + 1)
        if self.kind == "mean_of_squares":
            return (n * t + x * x) / (n + 1)
        raise ValueError(f"unknown statistic kind {self.kind!r}")


@dataclass(frozen=True)
class ProblemModel:
    """Immutable problem definition; safe for concurrent reads."""

    name: str
    priors: HypothesisPriors
    param_priors: tuple[ParameterPrior, ParameterPrior]
    statistic: StatisticDef
    sigma2: float = float("nan")  # fixed observation variance (shift-in-mean only)

    # -- sufficient statistic ------------------------------------------------

    def statistic_update(self, n: int, t: float, x: float) -> float:
        if n < 0:
            raise ValueError("sample count must be non-negative")
        return self.statistic.update(n, t, x)

    def statistic_loglik(self, n, t, theta):
        """Log of the statistic likelihood profile over theta.

        Defined up to an additive term that may depend on (n, t) but not on
        theta; the term is shared between both hypotheses, so posterior
        probabilities and likelihood ratios built from it are exact.
        """
        if np.any(np.asarray(n) == 0):
            raise UndefinedLikelihoodError(
                "statistic likelihood undefined at n = 0; use the prior"
            )
        t = np.asarray(t, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.name == "shift_in_mean":
            return -n * (t - theta) ** 2 / (2.0 * self.sigma2)
        # shift_in_variance: theta is the observation variance, positive on
        # the union of the two supports
        with np.errstate(divide="ignore", invalid="ignore"):
            return -0.5 * n * np.log(theta) - n * t / (2.0 * theta)

    def statistic_likelihood(self, n, t, theta):
        return np.exp(self.statistic_loglik(n, t, theta))

    # -- observation model ---------------------------------------------------

    def obs_logpdf(self, x, theta):
        """log p(x | theta), broadcasting over both arguments."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.name == "shift_in_mean":
            return -0.5 * np.log(2.0 * np.pi * self.sigma2) - (x - theta) ** 2 / (
                2.0 * self.sigma2
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            return -0.5 * np.log(2.0 * np.pi * theta) - x * x / (2.0 * theta)

    def observations_from_normals(self, theta, z):
        """Map standard-normal draws ``z`` to observations given theta.

        ``theta`` has shape (k,), ``z`` shape (k, n); returns shape (k, n).
        """
        theta = np.asarray(theta, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.name == "shift_in_mean":
            return theta[:, None] + math.sqrt(self.sigma2) * z
        return np.sqrt(theta)[:, None] * z

    def prior_sample(self, hypothesis: int, rng: np.random.Generator, size=None):
        if hypothesis not in (0, 1):
            raise ValueError("hypothesis index must be 0 or 1")
        return self.param_priors[hypothesis].sample(rng, size)


def make_shift_in_mean(
    sigma2: float = 4.0, a: float = 1.7, b: float = 1.0, p0: float = 0.5
) -> ProblemModel:
    """Gaussian data with random mean; negated-Gamma / Gamma mean priors.

    Under H0 the negated mean follows Gamma(a, b); under H1 the mean itself
    does.  The sufficient statistic is the sample mean with t0 = 0.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if a <= 0 or b <= 0:
        raise ValueError("gamma shape and scale must be positive")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie strictly inside (0, 1)")
    return ProblemModel(
        name="shift_in_mean",
        priors=HypothesisPriors(p0, 1.0 - p0),
        param_priors=(
            ParameterPrior("negated_gamma", shape=a, scale=b),
            ParameterPrior("gamma", shape=a, scale=b),
        ),
        statistic=StatisticDef("sample_mean", t0=0.0),
        sigma2=sigma2,
    )


def make_shift_in_variance(
    u_lo: float = 0.1,
    u_hi: float = 1.0,
    s2min: float = 1.3,
    a: float = 1.7,
    b: float = 0.5,
    p0: float = 0.5,
) -> ProblemModel:
    """Zero-mean Gaussian data with random variance.

    Under H0 the variance is uniform on [u_lo, u_hi]; under H1 it is s2min
    plus a Gamma(a, b) draw.  The sufficient statistic is the mean of
    squares with t0 = 0.
    """
    if not 0.0 < u_lo < u_hi:
        raise ValueError("uniform bounds must satisfy 0 < u_lo < u_hi")
    if u_hi >= s2min:
        raise OverlapError(
            f"u_hi = {u_hi} must be strictly below s2min = {s2min}"
            " or the hypotheses are not separable"
        )
    if a <= 0 or b <= 0:
        raise ValueError("gamma shape and scale must be positive")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie strictly inside (0, 1)")
    return ProblemModel(
        name="shift_in_variance",
        priors=HypothesisPriors(p0, 1.0 - p0),
        param_priors=(
            ParameterPrior("uniform", lo=u_lo, hi=u_hi),
            ParameterPrior("shifted_gamma", shape=a, scale=b, shift=s2min),
        ),
        statistic=StatisticDef("mean_of_squares", t0=0.0),
    )


# Free-function aliases mirroring the method API.


def statistic_update(model: ProblemModel, n: int, t: float, x: float) -> float:
    return model.statistic_update(n, t, x)


def statistic_loglik(model: ProblemModel, n, t, theta):
    return model.statistic_loglik(n, t, theta)


def statistic_likelihood(model: ProblemModel, n, t, theta):
    return model.statistic_likelihood(n, t, theta)


def prior_sample(model: ProblemModel, hypothesis: int, rng: np.random.Generator, size=None):
    return model.prior_sample(hypothesis, rng, size)
