"""Bootstrap intervals, log-log rate regression and exponential decay fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
import scipy.optimize as optimize
import scipy.stats as ss

DEFAULT_RESAMPLES = 200
ALPHA = 0.05


@dataclass(frozen=True)
class Interval:
    low: float
    high: float

    @property
    def width(self) -> float:
        return self.high - self.low

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high

    def excludes_zero(self) -> bool:
        return self.low > 0 or self.high < 0

    def to_dict(self) -> Dict[str, float]:
        return {"low": self.low, "high": self.high}


def percentile_interval(samples: np.ndarray, alpha: float = ALPHA) -> Interval:
    low, high = np.quantile(np.asarray(samples, dtype=float), [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return Interval(float(low), float(high))


def bootstrap_rows(
    data: np.ndarray,
    statistic: Callable[[np.ndarray], Any],
    resamples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Statistic of ``resamples`` row-resamples of ``data`` (rows drawn with replacement)."""
    rows = data.shape[0]
    picks = rng.integers(0, rows, size=(resamples, rows))
    return np.array([statistic(data[index]) for index in picks])


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    slope_ci: Interval

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "slope_stderr": self.slope_stderr,
            "slope_ci": self.slope_ci.to_dict(),
        }


def loglog_slope(eps: Sequence[float], errors: Sequence[float]) -> float:
    return float(ss.linregress(np.log(eps), np.log(errors)).slope)


def fit_loglog(
    eps: Sequence[float],
    errors: Sequence[float],
    row_stats: Optional[np.ndarray] = None,
    order: float = 2.0,
    resamples: int = DEFAULT_RESAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> RateFit:
    """Least-squares slope of log error against log ε.

    With ``row_stats`` of shape (rows, len(eps)) holding one sup|·|^order per
    particle and ε, the slope CI is a percentile bootstrap over rows that keeps
    every ε of a particle together.
    """
    eps = np.asarray(eps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    result = ss.linregress(np.log(eps), np.log(errors))
    if row_stats is not None and row_stats.shape[0] > 1:
        generator = rng if rng is not None else np.random.default_rng(0)
        slopes = bootstrap_rows(
            row_stats,
            lambda block: loglog_slope(eps, block.mean(axis=0) ** (1.0 / order)),
            resamples,
            generator,
        )
        interval = percentile_interval(slopes)
    else:
        half = 1.96 * float(result.stderr)
        interval = Interval(result.slope - half, result.slope + half)
    return RateFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        r_squared=float(result.rvalue**2),
        slope_stderr=float(result.stderr),
        slope_ci=interval,
    )


@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    floor: float
    rate_ci: Interval
    converged: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rate": self.rate,
            "amplitude": self.amplitude,
            "floor": self.floor,
            "rate_ci": self.rate_ci.to_dict(),
            "converged": self.converged,
        }


def _decay(t: np.ndarray, amplitude: float, rate: float) -> np.ndarray:
    return amplitude * np.exp(-rate * t)


def _decay_with_floor(t: np.ndarray, amplitude: float, rate: float, floor: float) -> np.ndarray:
    return amplitude * np.exp(-rate * t) + floor


def fit_exponential_decay(
    times: Sequence[float],
    values: Sequence[float],
    sigma: Optional[Sequence[float]] = None,
    with_floor: bool = False,
) -> DecayFit:
    """Nonlinear least squares for values ≈ A·e^{−λt} (+ c); the CI is λ ± 1.96·stderr."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    positive = y[y > 0]
    start_rate = 1.0
    if positive.size >= 2 and y[0] > 0 and y[-1] > 0 and y[-1] < y[0]:
        start_rate = math.log(y[0] / y[-1]) / max(t[-1] - t[0], 1e-12)
    amplitude0 = float(y[0]) if y[0] != 0 else 1.0
    weights = None if sigma is None else np.maximum(np.asarray(sigma, dtype=float), 1e-300)
    model = _decay_with_floor if with_floor else _decay
    start = [amplitude0, start_rate, 0.0] if with_floor else [amplitude0, start_rate]
    try:
        with warnings.catch_warnings():
            # an unestimable covariance means no usable rate interval
            warnings.simplefilter("error", optimize.OptimizeWarning)
            params, covariance = optimize.curve_fit(model, t, y, p0=start, sigma=weights, absolute_sigma=sigma is not None, maxfev=20000)
    except (RuntimeError, optimize.OptimizeWarning):
        return DecayFit(rate=math.nan, amplitude=math.nan, floor=math.nan, rate_ci=Interval(math.nan, math.nan), converged=False)
    variance = float(covariance[1, 1])
    rate_se = math.sqrt(variance) if np.isfinite(variance) and variance >= 0 else math.inf
    return DecayFit(
        rate=float(params[1]),
        amplitude=float(params[0]),
        floor=float(params[2]) if with_floor else 0.0,
        rate_ci=Interval(float(params[1] - 1.96 * rate_se), float(params[1] + 1.96 * rate_se)),
        converged=bool(np.isfinite(rate_se)),
    )


def mean_and_stderr(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=float)
    count = samples.shape[axis]
    return samples.mean(axis=axis), samples.std(axis=axis, ddof=1) / math.sqrt(count)
