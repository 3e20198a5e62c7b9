"""Arrival-count distributions and tail probabilities.

The received count for one molecule type is Binomial(n, p). Detection asks
for P(N >= z), either exactly (log-space pmf sums) or through the Gaussian
approximation N ~ Normal(np, np(1-p)) evaluated with the Q-function.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, gammaln, logsumexp
from scipy.stats import poisson

# Gaussian approximation is trusted only above this variance.
GAUSSIAN_MIN_VARIANCE = 9.0

_SQRT2 = math.sqrt(2.0)


class ArrivalMode(enum.Enum):
    EXACT = "exact"
    GAUSSIAN = "gaussian"

    @classmethod
    def parse(cls, value) -> "ArrivalMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        if key in ("exact", "exact-binomial", "exact_binomial", "binomial"):
            return cls.EXACT
        if key in ("gaussian", "gauss", "normal"):
            return cls.GAUSSIAN
        raise ValueError(f"unknown arrival mode {value!r}")


class DegenerateVariance(ValueError):
    """Gaussian approximation requested for a count with zero variance."""


class GaussianApproximationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ArrivalModel:
    released_count: int
    hit_probability: float
    mode: ArrivalMode = ArrivalMode.GAUSSIAN
    background: float = 0.0  # mean of independent Poisson stray arrivals

    def __post_init__(self):
        if self.released_count < 0:
            raise ValueError("released_count must be nonnegative")
        if not 0.0 <= self.hit_probability <= 1.0:
            raise ValueError(
                f"hit_probability must lie in [0, 1], got {self.hit_probability!r}"
            )
        if not (math.isfinite(self.background) and self.background >= 0):
            raise ValueError("background must be a nonnegative mean count")

    @property
    def mean(self) -> float:
        return self.released_count * self.hit_probability + self.background

    @property
    def variance(self) -> float:
        p = self.hit_probability
        return self.released_count * p * (1.0 - p) + self.background


def q_function(x):
    """Standard normal upper tail P(Z >= x) = erfc(x / sqrt 2) / 2."""
    out = 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_params(model: ArrivalModel) -> tuple[float, float]:
    return model.mean, model.variance


def gaussian_reliable(model: ArrivalModel) -> bool:
    return model.variance >= GAUSSIAN_MIN_VARIANCE


def binomial_logpmf(k, n: int, p: float):
    """log P(N = k) for N ~ Binomial(n, p), using log-gamma coefficients."""
    k = np.asarray(k, dtype=float)
    out = np.full(k.shape, -np.inf)
    inside = (k >= 0) & (k <= n)
    if p == 0.0:
        out[inside & (k == 0)] = 0.0
    elif p == 1.0:
        out[inside & (k == n)] = 0.0
    else:
        kk = k[inside]
        out[inside] = (
            gammaln(n + 1.0)
            - gammaln(kk + 1.0)
            - gammaln(n - kk + 1.0)
            + kk * math.log(p)
            + (n - kk) * math.log1p(-p)
        )
    return float(out) if out.ndim == 0 else out


def binomial_pmf(k, n: int, p: float):
    out = np.exp(binomial_logpmf(k, n, p))
    return float(out) if np.ndim(out) == 0 else out


def _mode_anchored_logweights(n: int, p: float) -> np.ndarray:
    """log pmf(k) - log pmf(mode) for k = 0..n, via pmf(k+1)/pmf(k) ratios.

    Summing the ratios outward from the mode keeps every partial sum small,
    so bulk terms carry ~1e-16 error instead of the ~1e-13 that
    log-gamma of large arguments leaves behind.
    """
    k0 = min(n, int(math.floor((n + 1) * p)))
    j = np.arange(n, dtype=float)
    log_ratio = np.log(n - j) - np.log(j + 1.0) + (math.log(p) - math.log1p(-p))
    out = np.empty(n + 1)
    out[k0] = 0.0
    out[k0 + 1:] = np.cumsum(log_ratio[k0:])
    out[:k0] = -np.cumsum(log_ratio[:k0][::-1])[::-1]
    return out


def _exact_tail(n: int, p: float, z: int) -> float:
    if z <= 0:
        return 1.0
    if z > n:
        return 0.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    lw = _mode_anchored_logweights(n, p)
    return float(min(1.0, math.exp(logsumexp(lw[z:]) - logsumexp(lw))))


def _exact_tail_with_background(n: int, p: float, lam: float, z: int) -> float:
    # P(B + S >= z) = sum_j P(B = j) P(S >= z - j), S ~ Poisson(lam)
    j = np.arange(0, n + 1)
    pmf = binomial_pmf(j, n, p)
    stray = poisson.sf(z - j - 1, lam)
    return float(min(1.0, np.dot(pmf, stray)))


def _gaussian_tail(mean: float, variance: float, z: float, strict: bool) -> float:
    if variance <= 0.0:
        if strict:
            raise DegenerateVariance(
                "Gaussian approximation needs np(1-p) > 0; "
                f"got mean {mean!r} with zero variance"
            )
        return 1.0 if mean >= z else 0.0
    return q_function((z - mean) / math.sqrt(variance))


def tail_geq(model: ArrivalModel, z: int, *, strict: bool = False) -> float:
    """P(N >= z) for the received count ``N`` described by ``model``.

    Gaussian mode uses Q((z - np) / sqrt(np(1-p))) without continuity
    correction. With zero variance the sure count is compared to ``z``
    unless ``strict`` is set, in which case :class:`DegenerateVariance` is raised.
    """
    if z < 0:
        raise ValueError("threshold must be nonnegative")
    if z == 0:
        return 1.0
    if model.mode is ArrivalMode.EXACT:
        if model.background > 0:
            return _exact_tail_with_background(
                model.released_count, model.hit_probability, model.background, int(z)
            )
        return _exact_tail(model.released_count, model.hit_probability, int(z))
    return _gaussian_tail(model.mean, model.variance, z, strict)


def interval_probability(model: ArrivalModel, lo: int, hi) -> float:
    """P(lo <= N < hi); ``hi`` may be ``math.inf``."""
    upper = 0.0 if hi == math.inf else tail_geq(model, int(hi))
    return max(0.0, tail_geq(model, int(lo)) - upper)


def warn_if_unreliable(model: ArrivalModel, context: str = "") -> bool:
    """Emit a GaussianApproximationWarning when np(1-p) < 9. Returns reliability."""
    ok = gaussian_reliable(model)
    if not ok and model.mode is ArrivalMode.GAUSSIAN:
        where = f" ({context})" if context else ""
        warnings.warn(
            f"Gaussian approximation unreliable (np(1-p) = {model.variance:.3g} < "
            f"{GAUSSIAN_MIN_VARIANCE:g}){where}",
            GaussianApproximationWarning,
            stacklevel=2,
        )
    return ok


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    phat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (phat + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / trials + z2 / (4.0 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi
