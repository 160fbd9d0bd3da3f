"""Monte Carlo estimators for the Poisson corrector Ψ, ∂_yΨ·σ₂ and the fluctuation coefficient Υ.

All estimators share one engine: a frozen fast cloud started from the
ν-samples, split into independent groups that each carry their own empirical
law, plus tagged copies started at the query points and driven by the same
W increments as the cloud particle they are paired with. Standard errors are
taken across groups, so they include the noise of the law slot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BlowUpError, ConditioningError, ConfigurationError, TruncationError, TruncationWarning, warn_or_raise
from .integrator import GridSpec, fast_euler_step
from .measure import EmpiricalMeasure, MeasureView
from .model import ModelSpec
from .rng import NoiseStreams

logger = logging.getLogger(__name__)

AUTO_HORIZONS = (8.0, 16.0, 32.0, 64.0)
TAIL_RELATIVE = 1e-3
CLIP_LIMIT = 0.05
DEFAULT_GROUPS = 8

AveragedDriftFn = Callable[[np.ndarray, MeasureView], np.ndarray]
PsiQuery = Callable[[np.ndarray, EmpiricalMeasure], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class TailFit:
    """|integrand| ≈ amplitude·e^{−rate·s} over the resolved part of the window."""

    rate: float
    amplitude: float

    def bound(self, horizon: float) -> float:
        """Fitted integral of the tail beyond ``horizon``."""
        if math.isinf(self.rate) or self.amplitude == 0.0:
            return 0.0
        if not self.rate > 0:
            return math.inf
        return self.amplitude * math.exp(-self.rate * horizon) / self.rate


def fit_tail(times: np.ndarray, magnitude: np.ndarray, noise: np.ndarray) -> TailFit:
    if not np.any(magnitude > 0):
        return TailFit(rate=math.inf, amplitude=0.0)
    signal = np.flatnonzero(magnitude > 2.0 * noise)
    if signal.size < 4:
        # never clear of the noise floor: nothing left to truncate
        return TailFit(rate=math.inf, amplitude=0.0)
    midpoint = signal[0] + (signal[-1] - signal[0]) // 2
    window = signal[signal >= midpoint]
    if window.size < 3:
        window = signal[-3:]
    slope, intercept = np.polyfit(times[window], np.log(magnitude[window]), 1)
    return TailFit(rate=float(-slope), amplitude=float(math.exp(intercept)))


@dataclass(frozen=True, eq=False)
class PoissonCell:
    query: Dict[str, Any]
    T_trunc: float
    mc_paths: int
    tail_bound: float
    decay_rate: float
    psi_hat: Optional[np.ndarray] = None
    psi_stderr: Optional[np.ndarray] = None
    dy_psi_sigma2_hat: Optional[np.ndarray] = None
    dy_psi_sigma2_stderr: Optional[np.ndarray] = None
    curve: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "query": self.query,
            "T_trunc": self.T_trunc,
            "mc_paths": self.mc_paths,
            "tail_bound": self.tail_bound,
            "decay_rate": self.decay_rate,
        }
        for name in ("psi_hat", "psi_stderr", "dy_psi_sigma2_hat", "dy_psi_sigma2_stderr"):
            value = getattr(self, name)
            if value is not None:
                payload[name] = np.asarray(value).tolist()
        return payload


@dataclass(frozen=True, eq=False)
class UpsilonEstimate:
    matrix: np.ndarray
    raw_second_moment: np.ndarray
    tolerance: float
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def residual(self) -> float:
        return float(np.linalg.norm(self.matrix @ self.matrix - self.raw_second_moment))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "matrix": self.matrix.tolist(),
            "raw_second_moment": self.raw_second_moment.tolist(),
            "tolerance": self.tolerance,
            "square_residual": self.residual(),
            **self.diagnostics,
        }


@dataclass(frozen=True)
class DynkinResidual:
    """|E Ψ(Y_t, L_t) − Ψ(y, ν) + ∫₀ᵗ (E b₁ − b̄₁) ds| with a combined standard error."""

    residual: float
    stderr: float
    t_short: float
    lhs: Tuple[float, ...] = ()
    rhs: Tuple[float, ...] = ()

    def __float__(self) -> float:
        return self.residual

    def within(self, multiples: float = 3.0) -> bool:
        return self.residual <= multiples * self.stderr

    def to_dict(self) -> Dict[str, Any]:
        return {
            "residual": self.residual,
            "stderr": self.stderr,
            "t_short": self.t_short,
            "lhs": list(self.lhs),
            "rhs": list(self.rhs),
        }


def _point(value: Any, dim: int, name: str) -> np.ndarray:
    point = np.asarray(value, dtype=float).reshape(-1)
    if point.shape != (dim,):
        raise ConfigurationError(f"{name} must have {dim} components", details={name: point.tolist()})
    return point


def _broadcast(value: Any, rows: int, tail: Tuple[int, ...]) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (rows,) + tail)


class _FrozenCells:
    """Grouped frozen cloud plus tagged copies at ``queries``, integrating one of two integrands.

    ``kind == "psi"``:      b₁(x, μ, Y^{y}, L̂) − b̄₁(x, μ)              per query, shape (n,)
    ``kind == "variation"``: ∂_y b₁(x, μ, Y^{y}, L̂) · ∂_y Y^{y}         per query, shape (n, m)
    """

    def __init__(
        self,
        model: ModelSpec,
        kind: str,
        x: np.ndarray,
        mu: MeasureView,
        queries: np.ndarray,
        nu_samples: EmpiricalMeasure,
        mc_paths: int,
        grid: GridSpec,
        streams: NoiseStreams,
        groups: int = DEFAULT_GROUPS,
        bbar_value: Optional[np.ndarray] = None,
    ) -> None:
        dims = model.dims
        if mc_paths < 4:
            raise ConfigurationError("mc_paths must be at least 4", details={"mc_paths": mc_paths})
        if kind == "variation":
            model.require("dy_b1", "dy_b2", "dy_sigma2")
        self.model = model
        self.kind = kind
        self.mu = mu
        self.streams = streams
        self.groups = max(2, min(groups, mc_paths // 2))
        self.per_group = mc_paths // self.groups
        self.mc_paths = self.groups * self.per_group
        self.queries = np.asarray(queries, dtype=float).reshape(-1, dims.m)
        self.K = self.queries.shape[0]
        self.dt = grid.step(1.0)
        self.bbar_value = bbar_value
        rows = self.K * self.per_group
        self._x_rows = np.repeat(x.reshape(1, dims.n), rows, axis=0)
        cloud = np.asarray(nu_samples.draw(streams, "xi", self.mc_paths), dtype=float)
        self.cloud = cloud.reshape(self.groups, self.per_group, dims.m)
        # tagged rows are query-major inside each group
        self.tagged = np.repeat(self.queries[None, :, None, :], self.groups, axis=0)
        self.tagged = np.broadcast_to(self.tagged, (self.groups, self.K, self.per_group, dims.m)).copy()
        self.tangent: Optional[np.ndarray] = None
        if kind == "variation":
            eye = np.eye(dims.m)
            self.tangent = np.broadcast_to(eye, (self.groups, self.K, self.per_group, dims.m, dims.m)).copy()
        self.step = 0
        self._means: List[np.ndarray] = []
        self._stderrs: List[np.ndarray] = []
        current = self._integrand()
        self.integral = np.zeros_like(current)
        self._previous = current
        self._store(current)

    @property
    def horizon(self) -> float:
        return self.step * self.dt

    def _law(self, group: int) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_ensemble(self.cloud[group])

    def _tagged_rows(self, group: int) -> np.ndarray:
        return self.tagged[group].reshape(-1, self.model.dims.m)

    def _integrand(self) -> np.ndarray:
        """Per-group means over paths, shape (G, K, n) or (G, K, n, m)."""
        dims = self.model.dims
        rows = self.K * self.per_group
        out = []
        for group in range(self.groups):
            nu = self._law(group)
            ys = self._tagged_rows(group)
            if self.kind == "psi":
                values = self.model.drift_slow(self._x_rows, self.mu, ys, nu) - self.bbar_value
                out.append(values.reshape(self.K, self.per_group, dims.n).mean(axis=1))
            else:
                gradient = _broadcast(self.model.derivative("dy_b1")(self._x_rows, self.mu, ys, nu), rows, (dims.n, dims.m))
                tangent = self.tangent[group].reshape(rows, dims.m, dims.m)
                values = np.einsum("kab,kbc->kac", gradient, tangent)
                out.append(values.reshape((self.K, self.per_group) + values.shape[1:]).mean(axis=1))
        return np.stack(out)

    def _store(self, current: np.ndarray) -> None:
        self._means.append(current.mean(axis=0))
        self._stderrs.append(current.std(axis=0, ddof=1) / math.sqrt(self.groups))

    def _advance(self) -> None:
        dims = self.model.dims
        rows = self.K * self.per_group
        dw = self.streams.increments("W", self.step, (self.mc_paths, dims.d2), self.dt)
        dw = dw.reshape(self.groups, self.per_group, dims.d2)
        for group in range(self.groups):
            nu = self._law(group)
            ys = self._tagged_rows(group)
            paired = np.tile(dw[group], (self.K, 1))
            if self.tangent is not None:
                tangent = self.tangent[group].reshape(rows, dims.m, dims.m)
                drift = _broadcast(self.model.derivative("dy_b2")(ys, nu), rows, (dims.m, dims.m))
                noise = _broadcast(self.model.derivative("dy_sigma2")(ys, nu), rows, (dims.m, dims.d2, dims.m))
                tangent = (
                    tangent
                    + np.einsum("kab,kbc->kac", drift, tangent) * self.dt
                    + np.einsum("kadb,kbc,kd->kac", noise, tangent, paired)
                )
                self.tangent[group] = tangent.reshape(self.K, self.per_group, dims.m, dims.m)
            self.tagged[group] = fast_euler_step(self.model, ys, nu, paired, self.dt).reshape(self.K, self.per_group, dims.m)
            self.cloud[group] = fast_euler_step(self.model, self.cloud[group], nu, dw[group], self.dt)
        self.step += 1
        if not (np.isfinite(self.cloud).all() and np.isfinite(self.tagged).all()):
            raise BlowUpError(
                f"frozen fast process became non-finite at step {self.step}",
                details={"process": "poisson_frozen", "step": self.step},
            )

    def run_until(self, horizon: float) -> None:
        target = int(round(horizon / self.dt))
        if target < 1 or abs(target * self.dt - horizon) > 1e-9 * max(horizon, 1.0):
            raise ConfigurationError("horizon is not an exact multiple of the fast step", details={"horizon": horizon, "dt": self.dt})
        while self.step < target:
            self._advance()
            current = self._integrand()
            self.integral = self.integral + 0.5 * self.dt * (self._previous + current)
            self._previous = current
            self._store(current)

    def integral_estimate(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.integral.mean(axis=0), self.integral.std(axis=0, ddof=1) / math.sqrt(self.groups)

    def curve(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Times, |mean integrand| and its standard error, per query: (S,), (S, K), (S, K)."""
        means = np.stack(self._means)
        stderrs = np.stack(self._stderrs)
        axes = tuple(range(2, means.ndim))
        magnitude = np.sqrt((means**2).sum(axis=axes)) if axes else np.abs(means)
        noise = np.sqrt((stderrs**2).sum(axis=axes)) if axes else stderrs
        return np.arange(means.shape[0]) * self.dt, magnitude, noise

    def tail(self) -> Tuple[float, float]:
        """(slowest fitted decay rate, largest fitted tail integral) over the queries."""
        times, magnitude, noise = self.curve()
        fits = [fit_tail(times, magnitude[:, j], noise[:, j]) for j in range(self.K)]
        return min(fit.rate for fit in fits), max(fit.bound(self.horizon) for fit in fits)

    def terminal(self) -> Tuple[np.ndarray, np.ndarray]:
        """Tagged states of query 0 and the pooled cloud, both (mc_paths, m)."""
        dims = self.model.dims
        return self.tagged[:, 0].reshape(-1, dims.m), self.cloud.reshape(-1, dims.m)


def _truncation_failed(message: str, details: Dict[str, Any]) -> None:
    logger.warning(message, extra=details)
    warn_or_raise(message, TruncationWarning, TruncationError, details=details, stacklevel=4)


def _integrate(engine: _FrozenCells, T_trunc: Optional[float]) -> Tuple[float, float]:
    """Runs the engine to a fixed or automatic horizon; returns (decay rate, tail bound)."""
    if T_trunc is not None:
        if not T_trunc > 0:
            raise ConfigurationError("T_trunc must be positive", details={"T_trunc": T_trunc})
        engine.run_until(T_trunc)
        rate, bound = engine.tail()
        if not rate > 0:
            _truncation_failed(
                "Poisson integrand shows no decaying tail inside the truncation window",
                {"T_trunc": T_trunc, "decay_rate": rate},
            )
        return rate, bound
    rate, bound = math.nan, math.inf
    for horizon in AUTO_HORIZONS:
        engine.run_until(horizon)
        rate, bound = engine.tail()
        if rate > 0:
            value, stderr = engine.integral_estimate()
            if bound <= max(TAIL_RELATIVE * float(np.abs(value).max()), 0.1 * float(stderr.max())):
                return rate, bound
    _truncation_failed(
        "Poisson integrand tail not resolved within the largest automatic horizon",
        {"T_trunc": engine.horizon, "decay_rate": rate, "tail_bound": bound},
    )
    return rate, bound


def _query(x: np.ndarray, mu: MeasureView, y: np.ndarray, nu: EmpiricalMeasure) -> Dict[str, Any]:
    return {"x": x.tolist(), "mu_mean": np.asarray(mu.mean).tolist(), "y": y.tolist(), "nu_size": nu.size, "nu_mean": nu.mean.tolist()}


def _measure(samples: Any) -> EmpiricalMeasure:
    if isinstance(samples, EmpiricalMeasure):
        return samples
    points = np.asarray(samples, dtype=float)
    if points.size == 0:
        raise ConfigurationError("nu_samples must be nonempty")
    return EmpiricalMeasure(points.reshape(points.shape[0], -1))


def _psi_engine(
    model: ModelSpec,
    bbar1: AveragedDriftFn,
    x: np.ndarray,
    mu: MeasureView,
    queries: np.ndarray,
    nu: EmpiricalMeasure,
    mc_paths: int,
    grid: GridSpec,
    seed: int,
    groups: int,
) -> _FrozenCells:
    bbar_value = np.asarray(bbar1(x.reshape(1, -1), mu), dtype=float).reshape(model.dims.n)
    return _FrozenCells(model, "psi", x, mu, queries, nu, mc_paths, grid, NoiseStreams(seed), groups, bbar_value)


def psi_estimate(
    model: ModelSpec,
    bbar1: AveragedDriftFn,
    x: Sequence[float],
    mu: MeasureView,
    y: Sequence[float],
    nu_samples: Any,
    T_trunc: Optional[float] = None,
    mc_paths: int = 4096,
    grid: Optional[GridSpec] = None,
    seed: int = 0,
    *,
    groups: int = DEFAULT_GROUPS,
) -> PoissonCell:
    """Ψ(x, μ, y, ν) as the trapezoidal time integral of E b₁(x, μ, Y_s^{y,ν}, L̂_s) − b̄₁(x, μ).

    ``T_trunc=None`` doubles the window from 8 up to 64 until the fitted tail
    integral is below 1e-3 of the accumulated value (or far below its noise).
    """
    dims = model.dims
    x, y = _point(x, dims.n, "x"), _point(y, dims.m, "y")
    nu = _measure(nu_samples)
    engine = _psi_engine(model, bbar1, x, mu, y[None, :], nu, mc_paths, grid or GridSpec(), seed, groups)
    rate, bound = _integrate(engine, T_trunc)
    value, stderr = engine.integral_estimate()
    times, magnitude, _ = engine.curve()
    logger.debug("Poisson cell estimated", extra={"T_trunc": engine.horizon, "mc_paths": engine.mc_paths, "tail_bound": bound})
    return PoissonCell(
        query=_query(x, mu, y, nu),
        T_trunc=engine.horizon,
        mc_paths=engine.mc_paths,
        tail_bound=bound,
        decay_rate=rate,
        psi_hat=value[0],
        psi_stderr=stderr[0],
        curve=(times, magnitude[:, 0]),
    )


def make_psi_query(
    model: ModelSpec,
    bbar1: AveragedDriftFn,
    x: Sequence[float],
    mu: MeasureView,
    T_trunc: Optional[float] = None,
    mc_paths: int = 1024,
    grid: Optional[GridSpec] = None,
    seed: int = 0,
    *,
    groups: int = DEFAULT_GROUPS,
) -> PsiQuery:
    """Ψ at many (y', ν') at once; every call reuses the same W streams (common random numbers)."""
    point = _point(x, model.dims.n, "x")
    grid = grid or GridSpec()

    def query(ys: np.ndarray, nu_samples: EmpiricalMeasure) -> Tuple[np.ndarray, np.ndarray]:
        ys = np.asarray(ys, dtype=float).reshape(-1, model.dims.m)
        engine = _psi_engine(model, bbar1, point, mu, ys, _measure(nu_samples), mc_paths, grid, seed, groups)
        _integrate(engine, T_trunc)
        return engine.integral_estimate()

    return query


def _variation_cells(
    model: ModelSpec,
    x: np.ndarray,
    mu: MeasureView,
    queries: np.ndarray,
    nu: EmpiricalMeasure,
    T_trunc: Optional[float],
    mc_paths: int,
    grid: GridSpec,
    seed: int,
    groups: int,
) -> Tuple[_FrozenCells, np.ndarray, float, float]:
    """Per-group ∂_yΨ·σ₂ at each query, shape (G, K, n, d2)."""
    engine = _FrozenCells(model, "variation", x, mu, queries, nu, mc_paths, grid, NoiseStreams(seed), groups)
    rate, bound = _integrate(engine, T_trunc)
    sigma2 = model.diffusion_fast(engine.queries, nu)
    products = np.einsum("gkam,kmd->gkad", engine.integral, sigma2)
    return engine, products, rate, bound


def dy_psi_sigma2_estimate(
    model: ModelSpec,
    x: Sequence[float],
    mu: MeasureView,
    y: Sequence[float],
    nu_samples: Any,
    T_trunc: Optional[float] = None,
    mc_paths: int = 4096,
    grid: Optional[GridSpec] = None,
    seed: int = 0,
    *,
    groups: int = DEFAULT_GROUPS,
) -> PoissonCell:
    """∂_yΨ(x, μ, y, ν)·σ₂(y, ν) from the first-variation process of the tagged fast copies."""
    dims = model.dims
    x, y = _point(x, dims.n, "x"), _point(y, dims.m, "y")
    nu = _measure(nu_samples)
    engine, products, rate, bound = _variation_cells(model, x, mu, y[None, :], nu, T_trunc, mc_paths, grid or GridSpec(), seed, groups)
    times, magnitude, _ = engine.curve()
    return PoissonCell(
        query=_query(x, mu, y, nu),
        T_trunc=engine.horizon,
        mc_paths=engine.mc_paths,
        tail_bound=bound,
        decay_rate=rate,
        dy_psi_sigma2_hat=products.mean(axis=0)[0],
        dy_psi_sigma2_stderr=products.std(axis=0, ddof=1)[0] / math.sqrt(engine.groups),
        curve=(times, magnitude[:, 0]),
    )


def psd_sqrt(raw: np.ndarray) -> Tuple[np.ndarray, float, np.ndarray]:
    """Symmetric PSD square root with negative eigenvalues clipped; returns (root, clipped fraction, eigenvalues)."""
    symmetric = 0.5 * (raw + raw.T)
    eigenvalues, vectors = np.linalg.eigh(symmetric)
    mass = float(np.abs(eigenvalues).sum())
    clipped = float(-eigenvalues[eigenvalues < 0].sum())
    fraction = clipped / mass if mass > 0 else 0.0
    root = (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T
    return 0.5 * (root + root.T), fraction, eigenvalues


def upsilon_estimate(
    model: ModelSpec,
    eta: EmpiricalMeasure,
    x: Sequence[float],
    mu: MeasureView,
    cell_budget: int = 64,
    seed: int = 0,
    *,
    mc_paths: int = 1024,
    T_trunc: Optional[float] = None,
    grid: Optional[GridSpec] = None,
    groups: int = DEFAULT_GROUPS,
) -> UpsilonEstimate:
    """Υ(x, μ) = (∫ (∂_yΨσ₂)(∂_yΨσ₂)ᵀ(x, μ, y, η) η(dy))^{1/2}.

    The cells are ``cell_budget`` quantile atoms of η (a stride in d > 1); all
    cells share one fast cloud drawn from η and the same W increments. The
    squared group means overstate the second moment by the sampling
    covariance of each cell mean; that bias is subtracted before the root is
    taken and kept in ``uncorrected_second_moment``.
    """
    if eta.size == 0:
        raise ConfigurationError("invariant measure estimate is empty")
    if cell_budget < 1:
        raise ConfigurationError("cell_budget must be positive", details={"cell_budget": cell_budget})
    dims = model.dims
    point = _point(x, dims.n, "x")
    cells = eta.thinned(cell_budget)
    engine, products, rate, bound = _variation_cells(
        model, point, mu, cells.samples, eta, T_trunc, mc_paths, grid or GridSpec(), seed, groups
    )
    per_cell = products.mean(axis=0)
    per_cell_se = products.std(axis=0, ddof=1) / math.sqrt(engine.groups)
    uncorrected = np.einsum("k,kad,kbd->ab", cells.weights, per_cell, per_cell)
    centred = products - per_cell
    bias = np.einsum("k,gkad,gkbd->ab", cells.weights, centred, centred) / (engine.groups * (engine.groups - 1))
    raw = uncorrected - bias
    noise_bias = np.diag(bias)
    matrix, fraction, eigenvalues = psd_sqrt(raw)
    diagnostics = {
        "cells": cells.size,
        "mc_paths": engine.mc_paths,
        "T_trunc": engine.horizon,
        "tail_bound": bound,
        "decay_rate": rate,
        "clipped_fraction": fraction,
        "eigenvalues": eigenvalues.tolist(),
        "noise_bias": noise_bias.tolist(),
        "uncorrected_second_moment": uncorrected.tolist(),
        "mean_cell_stderr": float(per_cell_se.mean()),
    }
    if fraction > CLIP_LIMIT:
        raise ConditioningError(
            f"eigenvalue clipping removed {fraction:.1%} of the trace mass",
            details=diagnostics,
        )
    tolerance = float(np.abs(eigenvalues[eigenvalues < 0]).sum()) + 1e-12 * max(1.0, float(np.abs(raw).max()))
    logger.info("Upsilon estimated", extra={"cells": cells.size, "mc_paths": engine.mc_paths, "clipped_fraction": fraction})
    return UpsilonEstimate(matrix=matrix, raw_second_moment=raw, tolerance=tolerance, diagnostics=diagnostics)


def dynkin_residual(
    model: ModelSpec,
    bbar1: AveragedDriftFn,
    psi_query_fn: PsiQuery,
    x: Sequence[float],
    mu: MeasureView,
    y: Sequence[float],
    nu_samples: Any,
    t_short: float,
    mc_paths: int = 4096,
    seed: int = 0,
    *,
    grid: Optional[GridSpec] = None,
    query_points: int = 32,
    groups: int = DEFAULT_GROUPS,
) -> DynkinResidual:
    """Checks E Ψ(Y_t^{y,ν}, L_{Y_t^ξ}) − Ψ(y, ν) = −∫₀ᵗ (E b₁(…, Y_s, …) − b̄₁) ds at t = ``t_short``.

    The outer expectation on the left runs over ``query_points`` quantile atoms
    of the terminal Y_t^{y,ν} cloud.
    """
    if t_short < 0:
        raise ConfigurationError("t_short must be nonnegative", details={"t_short": t_short})
    if t_short == 0:
        return DynkinResidual(residual=0.0, stderr=0.0, t_short=0.0)
    dims = model.dims
    point, start = _point(x, dims.n, "x"), _point(y, dims.m, "y")
    nu = _measure(nu_samples)
    engine = _psi_engine(model, bbar1, point, mu, start[None, :], nu, mc_paths, grid or GridSpec(), seed, groups)
    engine.run_until(t_short)
    rhs, rhs_se = (part[0] for part in engine.integral_estimate())
    terminal, cloud = engine.terminal()
    atoms = EmpiricalMeasure.from_ensemble(terminal).thinned(query_points)

    psi0, psi0_se = psi_query_fn(start[None, :], nu)
    values, value_se = psi_query_fn(atoms.samples, EmpiricalMeasure.from_ensemble(cloud))
    values, value_se = np.asarray(values, dtype=float), np.asarray(value_se, dtype=float)
    lhs = np.tensordot(atoms.weights, values, axes=(0, 0)) - np.asarray(psi0, dtype=float)[0]
    spread = values.std(axis=0, ddof=1) / math.sqrt(values.shape[0]) if values.shape[0] > 1 else np.zeros(dims.n)
    # common random numbers: cell errors are treated as fully correlated
    lhs_se = np.sqrt(np.tensordot(atoms.weights, value_se, axes=(0, 0)) ** 2 + np.asarray(psi0_se)[0] ** 2 + spread**2)
    mismatch = lhs + rhs
    stderr = float(np.sqrt((lhs_se**2 + rhs_se**2).sum()))
    result = DynkinResidual(
        residual=float(np.linalg.norm(mismatch)),
        stderr=stderr,
        t_short=t_short,
        lhs=tuple(float(v) for v in lhs),
        rhs=tuple(float(-v) for v in rhs),
    )
    logger.info("Dynkin residual computed", extra=result.to_dict())
    return result
