"""Closed-form and quadrature values for the reference example.

The frozen fast equation of the example is a mean-field Ornstein–Uhlenbeck
process; started from the stationary law its law slot never moves, so every
quantity below reduces to one-dimensional Gaussian integrals.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.integrate as integrate
from numpy.polynomial.hermite_e import hermegauss

from ..model import ExampleParams


def stationary_variance(params: ExampleParams) -> float:
    return 1.0 / (2.0 * params.k)


def frozen_variance(params: ExampleParams, t: float) -> float:
    """Variance of the frozen fast process at time ``t`` started from a point."""
    return (1.0 - math.exp(-2.0 * params.k * t)) / (2.0 * params.k)


def frozen_mean(params: ExampleParams, t: float, mean0: float) -> float:
    return mean0 * math.exp(-(params.k - params.m) * t)


def fast_average(params: ExampleParams) -> float:
    """∫ cos(b y) η(dy) + ∫ cos(q y) η(dy)."""
    variance = stationary_variance(params)
    return math.exp(-params.b**2 * variance / 2.0) + math.exp(-params.q**2 * variance / 2.0)


def averaged_drift(params: ExampleParams, x: float, mu_mean: float) -> float:
    return math.sin(params.a * x) + mu_mean + fast_average(params)


def _psi_integrand(params: ExampleParams, y: float, s: float) -> float:
    b, k = params.b, params.k
    decay = math.exp(-k * s)
    return math.cos(b * y * decay) * math.exp(-(b**2) * frozen_variance(params, s) / 2.0) - math.exp(
        -(b**2) * stationary_variance(params) / 2.0
    )


def _dy_psi_integrand(params: ExampleParams, y: float, s: float) -> float:
    b, k = params.b, params.k
    decay = math.exp(-k * s)
    return -b * math.sin(b * y * decay) * math.exp(-(b**2) * frozen_variance(params, s) / 2.0) * decay


def psi(params: ExampleParams, y: float) -> float:
    """Poisson corrector at (y, η); independent of the slow arguments."""
    value, _ = integrate.quad(lambda s: _psi_integrand(params, y, s), 0.0, math.inf, limit=200)
    return value


def dy_psi(params: ExampleParams, y: float) -> float:
    value, _ = integrate.quad(lambda s: _dy_psi_integrand(params, y, s), 0.0, math.inf, limit=200)
    return value


@lru_cache(maxsize=32)
def upsilon_squared(params: ExampleParams, order: int = 60) -> float:
    """∫ (∂_yΨ)² dη by Gauss–Hermite quadrature over η = N(0, 1/(2k))."""
    nodes, weights = hermegauss(order)
    scale = math.sqrt(stationary_variance(params))
    values = np.array([dy_psi(params, scale * node) ** 2 for node in nodes])
    return float(np.dot(weights, values) / math.sqrt(2.0 * math.pi))


def contraction_rate(params: ExampleParams) -> float:
    """Decay rate of E|Y^{ζ₁} − Y^{ζ₂}|² for two laws on shared noise."""
    return 2.0 * (params.k - params.m)

