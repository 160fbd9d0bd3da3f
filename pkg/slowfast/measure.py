"""Empirical measures standing in for laws, plus 1-D distances between them."""

from __future__ import annotations

from dataclasses import InitVar, dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Callable, Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np

from .errors import EvaluationError, UnsupportedDimensionError

if TYPE_CHECKING:
    from .rng import NoiseStreams

ArrayFn = Callable[[np.ndarray], np.ndarray]

WEIGHT_TOLERANCE = 1e-12


@runtime_checkable
class MeasureView(Protocol):
    """Read-only handle on a law: integration against test functions plus cached low moments."""

    @property
    def dim(self) -> int: ...

    @property
    def mean(self) -> np.ndarray: ...

    def integrate(self, f: ArrayFn) -> Union[float, np.ndarray]: ...

    def moment(self, k: float) -> float: ...


def _as_points(samples: Union[np.ndarray, Sequence[float]], dim: Optional[int] = None) -> np.ndarray:
    points = np.asarray(samples, dtype=float)
    if points.ndim == 0:
        points = points.reshape(1, 1)
    elif points.ndim == 1:
        points = points.reshape(-1, 1) if dim in (None, 1) else points.reshape(1, -1)
    if points.ndim != 2:
        raise ValueError(f"samples must be 1-D or 2-D, got shape {points.shape}")
    return points


def _reduce(values: np.ndarray, weights: np.ndarray) -> Union[float, np.ndarray]:
    if values.ndim == 1:
        return float(np.dot(weights, values))
    return np.tensordot(weights, values, axes=(0, 0))


def _check_finite(values: np.ndarray, points: np.ndarray) -> None:
    finite = np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1)
    if not finite.all():
        index = int(np.flatnonzero(~finite)[0])
        raise EvaluationError(
            "test function returned a non-finite value",
            details={"index": index, "sample": points[index].tolist()},
        )


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted sample cloud; ``samples`` has shape ``(N, d)``."""

    samples: np.ndarray
    weights: Optional[np.ndarray] = None
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool) -> None:
        points = _as_points(self.samples)
        if points.shape[0] == 0:
            raise ValueError("an empirical measure needs at least one sample")
        if self.weights is None:
            weights = np.full(points.shape[0], 1.0 / points.shape[0])
            uniform = True
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
            uniform = False
            if weights.shape[0] != points.shape[0]:
                raise ValueError("weights and samples must have the same length")
        if validate:
            if not np.isfinite(points).all():
                index = int(np.flatnonzero(~np.isfinite(points).all(axis=1))[0])
                raise ValueError(f"sample {index} is not finite")
            if (weights < 0).any() or not np.isfinite(weights).all():
                raise ValueError("weights must be finite and nonnegative")
            if abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
                raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "samples", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_uniform", uniform)

    @classmethod
    def from_ensemble(cls, samples: np.ndarray) -> "EmpiricalMeasure":
        """Uniform measure over particle states that were already checked for finiteness."""
        return cls(np.array(samples, dtype=float), validate=False)

    @classmethod
    def point_mass(cls, location: Union[float, Sequence[float]]) -> "EmpiricalMeasure":
        return cls(np.atleast_1d(np.asarray(location, dtype=float)).reshape(1, -1))

    @property
    def size(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dim(self) -> int:
        return int(self.samples.shape[1])

    @property
    def is_uniform(self) -> bool:
        return bool(self._uniform)  # type: ignore[attr-defined]

    @cached_property
    def mean(self) -> np.ndarray:
        return np.tensordot(self.weights, self.samples, axes=(0, 0))

    @cached_property
    def second_moment(self) -> float:
        return float(np.dot(self.weights, np.einsum("ij,ij->i", self.samples, self.samples)))

    @cached_property
    def covariance(self) -> np.ndarray:
        centred = self.samples - self.mean
        return np.einsum("i,ij,ik->jk", self.weights, centred, centred)

    def moment(self, k: float) -> float:
        if k == 2:
            return self.second_moment
        norms = np.sqrt(np.einsum("ij,ij->i", self.samples, self.samples))
        return float(np.dot(self.weights, norms**k))

    def integrate(self, f: ArrayFn) -> Union[float, np.ndarray]:
        values = np.asarray(f(self.samples), dtype=float)
        if values.ndim == 0:
            values = np.full(self.size, float(values))
        if values.shape[0] != self.size:
            raise ValueError(f"test function returned {values.shape[0]} rows for {self.size} samples")
        _check_finite(values, self.samples)
        return _reduce(values, self.weights)

    @cached_property
    def sorted_order(self) -> np.ndarray:
        if self.dim != 1:
            raise UnsupportedDimensionError("sorting is defined for 1-D measures only", details={"dim": self.dim})
        return np.argsort(self.samples[:, 0], kind="stable")

    def sorted_atoms(self) -> tuple[np.ndarray, np.ndarray]:
        order = self.sorted_order
        return self.samples[order, 0], self.weights[order]

    def draw(self, streams: "NoiseStreams", channel: str, size: int) -> np.ndarray:
        """Initial values with this law: the atoms themselves when sizes match, a weighted resample otherwise."""
        if self.is_uniform and size == self.size:
            return np.array(self.samples)
        picks = streams.generator(channel).choice(self.size, size=size, p=self.weights)
        return np.array(self.samples[picks])

    def thinned(self, max_atoms: int) -> "EmpiricalMeasure":
        """At most ``max_atoms`` uniform atoms: mid-quantiles in 1-D, a regular stride otherwise."""
        if self.size <= max_atoms:
            return self
        if self.dim == 1:
            values, weights = self.sorted_atoms()
            cumulative = np.cumsum(weights)
            cumulative[-1] = 1.0
            levels = (np.arange(max_atoms) + 0.5) / max_atoms
            picks = np.minimum(np.searchsorted(cumulative, levels, side="left"), self.size - 1)
            return EmpiricalMeasure(values[picks].reshape(-1, 1))
        stride = self.size / max_atoms
        picks = np.floor(np.arange(max_atoms) * stride).astype(int)
        return EmpiricalMeasure(self.samples[picks])


class GaussianLaw:
    """Analytic N(mean, std²) law; integrates by Gauss–Hermite quadrature and doubles as a sampler."""

    def __init__(self, mean: Union[float, Sequence[float]] = 0.0, std: Union[float, Sequence[float]] = 1.0, order: int = 80) -> None:
        self._mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.std = np.broadcast_to(np.atleast_1d(np.asarray(std, dtype=float)), self._mean.shape).copy()
        if (self.std < 0).any():
            raise ValueError("std must be nonnegative")
        self.order = order

    @property
    def dim(self) -> int:
        return int(self._mean.shape[0])

    @property
    def mean(self) -> np.ndarray:
        return self._mean.copy()

    @cached_property
    def _nodes(self) -> tuple[np.ndarray, np.ndarray]:
        if self.dim != 1:
            raise UnsupportedDimensionError("quadrature is implemented for 1-D Gaussian laws", details={"dim": self.dim})
        nodes, weights = np.polynomial.hermite_e.hermegauss(self.order)
        weights = weights / weights.sum()
        return (self._mean[0] + self.std[0] * nodes).reshape(-1, 1), weights

    def integrate(self, f: ArrayFn) -> Union[float, np.ndarray]:
        points, weights = self._nodes
        values = np.asarray(f(points), dtype=float)
        if values.ndim == 0:
            return float(values)
        _check_finite(values, points)
        return _reduce(values, weights)

    def moment(self, k: float) -> float:
        return float(self.integrate(lambda x: np.abs(x[:, 0]) ** k))

    def draw(self, streams: "NoiseStreams", channel: str, size: int) -> np.ndarray:
        return self._mean + self.std * streams.normals(channel, 0, (size, self.dim))

    def to_dict(self) -> dict:
        return {"law": "gaussian", "mean": self._mean.tolist(), "std": self.std.tolist()}


def as_measure(value: Union[MeasureView, np.ndarray, Sequence[float], float]) -> MeasureView:
    if isinstance(value, (EmpiricalMeasure, GaussianLaw)):
        return value
    return EmpiricalMeasure(value)


def integrate(m: MeasureView, f: ArrayFn) -> Union[float, np.ndarray]:
    """Σᵢ wᵢ f(xᵢ) over the atoms (or quadrature nodes) of ``m``."""
    return m.integrate(f)


def _require_1d(*measures: EmpiricalMeasure) -> None:
    for measure in measures:
        if measure.dim != 1:
            raise UnsupportedDimensionError("operation is defined for 1-D measures only", details={"dim": measure.dim})


def _cumulative(weights: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return cumulative


def wasserstein2_1d(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W₂ between discrete 1-D measures via the monotone coupling."""
    _require_1d(a, b)
    if a.is_uniform and b.is_uniform and a.size == b.size:
        gap = np.sort(a.samples[:, 0], kind="stable") - np.sort(b.samples[:, 0], kind="stable")
        return float(np.sqrt(np.mean(gap * gap)))

    xa, wa = a.sorted_atoms()
    xb, wb = b.sorted_atoms()
    ca, cb = _cumulative(wa), _cumulative(wb)
    grid = np.union1d(ca, cb)
    lower = np.concatenate(([0.0], grid[:-1]))
    widths = grid - lower
    keep = widths > 0
    midpoints = 0.5 * (lower[keep] + grid[keep])
    qa = xa[np.minimum(np.searchsorted(ca, midpoints, side="left"), xa.size - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, midpoints, side="left"), xb.size - 1)]
    return float(np.sqrt(np.dot(widths[keep], (qa - qb) ** 2)))


def two_atom_w2_squared(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W₂² between two measures with at most two atoms each, in any dimension.

    The couplings form a one-parameter family and the cost is linear in the
    parameter, so the optimum sits at an end of the feasible interval.
    """
    if a.size > 2 or b.size > 2:
        raise ValueError("two_atom_w2_squared accepts measures with at most two atoms")
    xa = np.vstack([a.samples, a.samples[-1:]])[:2]
    xb = np.vstack([b.samples, b.samples[-1:]])[:2]
    wa = np.append(a.weights, 0.0)[:2]
    wb = np.append(b.weights, 0.0)[:2]
    cost = ((xa[:, None, :] - xb[None, :, :]) ** 2).sum(axis=2)
    low = max(0.0, wa[0] + wb[0] - 1.0)
    high = min(wa[0], wb[0])

    def total(t: float) -> float:
        plan = np.array([[t, wa[0] - t], [wb[0] - t, 1.0 - wa[0] - wb[0] + t]])
        return float((np.clip(plan, 0.0, None) * cost).sum())

    return min(total(low), total(high))


def ks_statistic(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Two-sample Kolmogorov–Smirnov statistic sup |F_A − F_B| for weighted 1-D measures."""
    _require_1d(a, b)
    xa, wa = a.sorted_atoms()
    xb, wb = b.sorted_atoms()
    grid = np.concatenate([xa, xb])
    fa = np.concatenate(([0.0], _cumulative(wa)))[np.searchsorted(xa, grid, side="right")]
    fb = np.concatenate(([0.0], _cumulative(wb)))[np.searchsorted(xb, grid, side="right")]
    return float(np.clip(np.max(np.abs(fa - fb)), 0.0, 1.0))
