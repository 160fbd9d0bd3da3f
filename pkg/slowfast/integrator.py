"""Euler–Maruyama interacting-particle schemes for the coupled, frozen, averaged, auxiliary and limit systems.

Every step is reduce-then-map: the empirical laws of the current ensemble are
formed first, then each particle is advanced with those laws frozen. Noise is
drawn per (channel, step) for the whole ensemble from counter-based streams,
so a bundle can be replayed bit-exactly from its seed ledger.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Any, Callable, Dict, Iterator, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import BlowUpError, ConfigurationError, UnderResolvedWarning, warn_or_raise
from .measure import EmpiricalMeasure, GaussianLaw, MeasureView
from .model import ModelSpec
from .observability import MetricsRecorder
from .rng import NoiseStreams, SeedLedger

logger = logging.getLogger(__name__)

X_EPS = "X_eps"
Y_EPS_XI = "Y_eps_xi"
Y_EPS_Y0 = "Y_eps_y0"
X_BAR = "X_bar"
U_EPS = "U_eps"
THETA_EPS = "theta_eps"
U_LIMIT = "U_limit"
Y_ZETA1 = "Y_zeta1"
Y_ZETA2 = "Y_zeta2"

PROCESS_LABELS = (X_EPS, Y_EPS_XI, Y_EPS_Y0, X_BAR, U_EPS, THETA_EPS, U_LIMIT)

Upsilon = Callable[[np.ndarray, MeasureView], np.ndarray]


class InitialLaw(Protocol):
    @property
    def dim(self) -> int: ...

    def draw(self, streams: NoiseStreams, channel: str, size: int) -> np.ndarray: ...


def describe_law(law: InitialLaw) -> Dict[str, Any]:
    if isinstance(law, GaussianLaw):
        return law.to_dict()
    if isinstance(law, EmpiricalMeasure):
        return {"law": "empirical", "size": law.size, "mean": law.mean.tolist()}
    return {"law": type(law).__name__}


@dataclass(frozen=True)
class ScaleParams:
    eps: float = 2.0**-6
    T: float = 1.0
    p: float = 2.0
    y0: Tuple[float, ...] = (0.0,)
    law_rho: InitialLaw = field(default_factory=GaussianLaw)
    law_xi: InitialLaw = field(default_factory=GaussianLaw)
    moments_declared: bool = True

    def validate(self) -> None:
        if not 0 < self.eps <= 1:
            raise ConfigurationError("eps must lie in (0, 1]", details={"eps": self.eps})
        if not self.T > 0:
            raise ConfigurationError("horizon T must be positive", details={"T": self.T})
        if self.p < 2:
            raise ConfigurationError("moment order p must be at least 2", details={"p": self.p})

    def with_eps(self, eps: float) -> "ScaleParams":
        return ScaleParams(
            eps=eps,
            T=self.T,
            p=self.p,
            y0=self.y0,
            law_rho=self.law_rho,
            law_xi=self.law_xi,
            moments_declared=self.moments_declared,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "T": self.T,
            "p": self.p,
            "y0": list(self.y0),
            "law_rho": describe_law(self.law_rho),
            "law_xi": describe_law(self.law_xi),
            "moments_declared": self.moments_declared,
        }


@dataclass(frozen=True)
class GridSpec:
    h: float = 0.0125
    rho_fast: float = 20.0
    record_stride: int = 0
    record_frames: int = 40
    # 0: B is drawn once per step; otherwise on this finer grid and summed
    noise_step: float = 0.0

    def step(self, eps: float) -> float:
        return min(self.h, eps / self.rho_fast)

    def substeps(self, dt: float) -> int:
        """Number of ``noise_step`` draws summed into one slow increment of length ``dt``."""
        if not self.noise_step > 0:
            return 1
        ratio = dt / self.noise_step
        count = int(round(ratio))
        if count < 1 or abs(count - ratio) > 1e-9 * ratio:
            raise ConfigurationError(
                "time step is not a multiple of the slow-noise step",
                details={"dt": dt, "noise_step": self.noise_step},
            )
        return count

    def layout(self, horizon: float, eps: float) -> Tuple[float, int, int]:
        """(dt, number of steps, recording stride) for a run of length ``horizon``."""
        if not self.h > 0 or not self.rho_fast > 0:
            raise ConfigurationError("grid.h and grid.rho_fast must be positive", details=asdict(self))
        if self.rho_fast <= 1:
            warn_or_raise(
                f"fast step eps/rho_fast = {eps / self.rho_fast:g} does not resolve the fast scale eps = {eps:g}",
                UnderResolvedWarning,
                ConfigurationError,
                details={"eps": eps, "rho_fast": self.rho_fast},
                stacklevel=4,
            )
        dt = self.step(eps)
        n_steps = int(round(horizon / dt))
        if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
            raise ConfigurationError(
                "horizon is not an exact multiple of the time step",
                details={"horizon": horizon, "dt": dt},
            )
        if self.record_stride > 0:
            stride = self.record_stride
        else:
            frames = min(self.record_frames, n_steps) if self.record_frames > 0 else n_steps
            if n_steps % frames:
                raise ConfigurationError(
                    "number of steps is not a multiple of grid.record_frames",
                    details={"n_steps": n_steps, "record_frames": frames},
                )
            stride = n_steps // frames
        if n_steps % stride:
            raise ConfigurationError(
                "horizon is not an exact multiple of the recording step",
                details={"n_steps": n_steps, "record_stride": stride},
            )
        return dt, n_steps, stride


def common_noise_step(steps: Sequence[float], max_substeps: int = 64) -> float:
    """Largest step that divides every entry of ``steps``, or 0.0 when the finest would need more than ``max_substeps`` draws."""
    fractions = [Fraction(step).limit_denominator(1 << 30) for step in steps]
    numerator = reduce(math.gcd, (item.numerator for item in fractions))
    denominator = reduce(lambda left, right: left * right // math.gcd(left, right), (item.denominator for item in fractions))
    shared = numerator / denominator
    if min(steps) / shared > max_substeps:
        return 0.0
    return shared


@dataclass(frozen=True, eq=False)
class PathBundle:
    times: np.ndarray
    ensembles: Dict[str, np.ndarray]
    ledger: SeedLedger
    dt: float
    stride: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, label: str) -> np.ndarray:
        return self.ensembles[label]

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(self.ensembles)

    @property
    def n_particles(self) -> int:
        return int(next(iter(self.ensembles.values())).shape[0])

    def terminal(self, label: str) -> np.ndarray:
        return self.ensembles[label][:, -1, :]

    def with_ensembles(self, extra: Dict[str, np.ndarray]) -> "PathBundle":
        merged = dict(self.ensembles)
        merged.update(extra)
        return PathBundle(self.times, merged, self.ledger, self.dt, self.stride, dict(self.meta))

    def describe(self) -> Dict[str, Any]:
        return {
            "labels": list(self.labels),
            "n_particles": self.n_particles,
            "frames": int(self.times.size),
            "dt": self.dt,
            "stride": self.stride,
            "seed_ledger": self.ledger.to_dict(),
            **{key: value for key, value in self.meta.items() if isinstance(value, (int, float, str, bool))},
        }


class ParticleMap:
    """Applies a row-wise update to contiguous particle chunks, optionally on a thread pool."""

    def __init__(self, threads: int = 1) -> None:
        self.threads = max(1, int(threads))

    def __call__(self, fn: Callable[..., Tuple[np.ndarray, ...]], *arrays: np.ndarray) -> Tuple[np.ndarray, ...]:
        rows = arrays[0].shape[0]
        if self.threads == 1 or rows < 2 * self.threads:
            return fn(*arrays)
        bounds = np.linspace(0, rows, self.threads + 1).astype(int)
        chunks = [tuple(array[lo:hi] for array in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            parts = list(pool.map(lambda chunk: fn(*chunk), chunks))
        return tuple(np.concatenate([part[i] for part in parts], axis=0) for i in range(len(parts[0])))


def _noise(diffusion: np.ndarray, increments: np.ndarray) -> np.ndarray:
    return np.einsum("kij,kj->ki", diffusion, increments)


def _ensure_finite(label: str, step: int, state: np.ndarray) -> None:
    finite = np.isfinite(state).all(axis=1)
    if not finite.all():
        particle = int(np.flatnonzero(~finite)[0])
        raise BlowUpError(
            f"{label} became non-finite at step {step} (particle {particle})",
            details={"process": label, "step": step, "particle": particle},
        )


def fast_euler_step(
    model: ModelSpec, y: np.ndarray, nu: MeasureView, dw: np.ndarray, dt: float, eps: float = 1.0
) -> np.ndarray:
    """One Euler–Maruyama step of dY = b₂/ε dt + σ₂/√ε dW with the law slot frozen at ``nu``."""
    drift = model.drift_fast(y, nu)
    diffusion = model.diffusion_fast(y, nu)
    return y + drift * (dt / eps) + _noise(diffusion, dw) / math.sqrt(eps)


def lions_average(derivative: np.ndarray, weights_state: np.ndarray) -> np.ndarray:
    """Row-wise ensemble average (1/N) Σⱼ D[i, j] · U_j, contracting the last axis of D with U."""
    count = weights_state.shape[0]
    if derivative.shape[0] == 1:
        value = np.tensordot(derivative[0], weights_state, axes=([0, -1], [0, 1])) / count
        return value[None, ...]
    return np.tensordot(derivative, weights_state, axes=([1, -1], [0, 1])) / count


class _Recorder:
    def __init__(self, labels: Sequence[str], n_steps: int, stride: int, dt: float) -> None:
        self.stride = stride
        self.dt = dt
        self.frames: Dict[str, list] = {label: [] for label in labels}
        self.steps: list[int] = []
        self.n_steps = n_steps

    def offer(self, step: int, states: Dict[str, np.ndarray]) -> None:
        if step % self.stride == 0:
            self.steps.append(step)
            for label, state in states.items():
                self.frames[label].append(np.array(state))

    def bundle(self, ledger: SeedLedger, meta: Dict[str, Any]) -> PathBundle:
        times = np.array(self.steps, dtype=float) * self.dt
        ensembles = {label: np.stack(frames, axis=1) for label, frames in self.frames.items()}
        for array in ensembles.values():
            array.setflags(write=False)
        return PathBundle(times, ensembles, ledger, self.dt, self.stride, meta)


class CoupledSystem:
    """Particle approximation of (X^ε, Y^{ε,ξ}, Y^{ε,y₀,L_ξ}); the two fast copies share W per particle."""

    def __init__(
        self,
        model: ModelSpec,
        scale: ScaleParams,
        dt: float,
        n_particles: int,
        streams: NoiseStreams,
        pmap: Optional[ParticleMap] = None,
        substeps: int = 1,
    ) -> None:
        self.model = model
        self.eps = scale.eps
        self.dt = dt
        self.streams = streams
        self.pmap = pmap or ParticleMap()
        self.substeps = substeps
        dims = model.dims
        self.x = np.asarray(scale.law_rho.draw(streams, "rho", n_particles), dtype=float).reshape(n_particles, dims.n)
        self.y_xi = np.asarray(scale.law_xi.draw(streams, "xi", n_particles), dtype=float).reshape(n_particles, dims.m)
        self.y_y0 = np.tile(np.asarray(scale.y0, dtype=float).reshape(1, dims.m), (n_particles, 1))
        self.n = n_particles

    def laws(self) -> Tuple[EmpiricalMeasure, EmpiricalMeasure]:
        return EmpiricalMeasure.from_ensemble(self.x), EmpiricalMeasure.from_ensemble(self.y_xi)

    def states(self) -> Dict[str, np.ndarray]:
        return {X_EPS: self.x, Y_EPS_XI: self.y_xi, Y_EPS_Y0: self.y_y0}

    def advance(self, step: int) -> None:
        dims = self.model.dims
        mu, nu = self.laws()
        db = self.streams.increments("B", step, (self.n, dims.d1), self.dt, self.substeps)
        dw = self.streams.increments("W", step, (self.n, dims.d2), self.dt)
        model, dt, eps = self.model, self.dt, self.eps

        def update(x, y_xi, y_y0, db_rows, dw_rows):
            drift = model.drift_slow(x, mu, y_y0, nu)
            diffusion = model.diffusion_slow(x, mu)
            return (
                x + drift * dt + _noise(diffusion, db_rows),
                fast_euler_step(model, y_xi, nu, dw_rows, dt, eps),
                fast_euler_step(model, y_y0, nu, dw_rows, dt, eps),
            )

        self.x, self.y_xi, self.y_y0 = self.pmap(update, self.x, self.y_xi, self.y_y0, db, dw)
        for label, state in self.states().items():
            _ensure_finite(label, step + 1, state)


class AveragedSystem:
    """Particle approximation of dX̄ = b̄₁(X̄, L_X̄)dt + σ₁(X̄, L_X̄)dB on the rho/B streams it is given."""

    def __init__(
        self,
        model: ModelSpec,
        bbar1: Callable[[np.ndarray, MeasureView], np.ndarray],
        scale: ScaleParams,
        dt: float,
        n_particles: int,
        streams: NoiseStreams,
        pmap: Optional[ParticleMap] = None,
        substeps: int = 1,
    ) -> None:
        self.model = model
        self.bbar1 = bbar1
        self.dt = dt
        self.streams = streams
        self.pmap = pmap or ParticleMap()
        self.substeps = substeps
        self.n = n_particles
        self.x = np.asarray(scale.law_rho.draw(streams, "rho", n_particles), dtype=float).reshape(n_particles, model.dims.n)

    def law(self) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_ensemble(self.x)

    def increments(self, step: int) -> np.ndarray:
        return self.streams.increments("B", step, (self.n, self.model.dims.d1), self.dt, self.substeps)

    def advance(self, step: int, db: Optional[np.ndarray] = None) -> None:
        mu = self.law()
        db = self.increments(step) if db is None else db
        model, bbar1, dt = self.model, self.bbar1, self.dt

        def update(x, db_rows):
            drift = np.asarray(bbar1(x, mu), dtype=float)
            return (x + drift * dt + _noise(model.diffusion_slow(x, mu), db_rows),)

        (self.x,) = self.pmap(update, self.x, db)
        _ensure_finite(X_BAR, step + 1, self.x)


class AveragedDrift:
    """b̄₁(x, μ) = ∫ b₁(x, μ, y, η) η(dy), the ν-slot receiving η itself.

    η is thinned to ``max_atoms`` atoms for the per-step evaluations; the
    untouched measure is kept for point estimates with error bars.
    """

    def __init__(self, model: ModelSpec, eta: EmpiricalMeasure, max_atoms: Optional[int] = 256, chunk_rows: int = 1 << 18) -> None:
        if eta.size == 0:
            raise ConfigurationError("invariant measure estimate is empty")
        self.model = model
        self.eta_full = eta
        self.eta = eta.thinned(max_atoms) if max_atoms else eta
        self.chunk_rows = chunk_rows

    def _paired(self, x: np.ndarray) -> Iterator[Tuple[slice, np.ndarray, np.ndarray]]:
        atoms = self.eta.samples
        per_chunk = max(1, self.chunk_rows // atoms.shape[0])
        for lo in range(0, x.shape[0], per_chunk):
            block = x[lo : lo + per_chunk]
            yield slice(lo, lo + block.shape[0]), np.repeat(block, atoms.shape[0], axis=0), np.tile(atoms, (block.shape[0], 1))

    def _average(self, values: np.ndarray, rows: int) -> np.ndarray:
        values = values.reshape((rows, self.eta.size) + values.shape[1:])
        if self.eta.is_uniform:
            averaged = values.mean(axis=1)
        else:
            averaged = np.tensordot(self.eta.weights, values, axes=(0, 1))
        # rows on which every atom agrees keep that value exactly
        flat = values.reshape(rows, self.eta.size, -1)
        constant = np.all(flat == flat[:, :1], axis=(1, 2))
        averaged[constant] = values[constant, 0]
        return averaged

    def __call__(self, x: np.ndarray, mu: MeasureView) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.model.dims.n))
        for rows, xs, ys in self._paired(x):
            values = self.model.drift_slow(xs, mu, ys, self.eta)
            out[rows] = self._average(values, rows.stop - rows.start)
        return out

    def dx(self, x: np.ndarray, mu: MeasureView) -> np.ndarray:
        callback = self.model.derivative("dx_b1")
        n = self.model.dims.n
        out = np.empty((x.shape[0], n, n))
        for rows, xs, ys in self._paired(x):
            values = np.broadcast_to(np.asarray(callback(xs, mu, ys, self.eta), dtype=float), (xs.shape[0], n, n))
            out[rows] = self._average(values, rows.stop - rows.start)
        return out

    def dmu(self, x: np.ndarray, mu: MeasureView, xt: np.ndarray) -> np.ndarray:
        """∂_μ b̄₁(x, μ)(x̃) with shape (k or 1, j, n, n)."""
        callback = self.model.derivative("dmu_b1")
        pair_x = np.repeat(x[:1], 2, axis=0)
        pair_y = np.repeat(self.eta.samples[:1], 2, axis=0)
        probe = np.asarray(callback(pair_x, mu, pair_y, self.eta, xt), dtype=float)
        if probe.shape[0] == 1:
            # leading axis 1: independent of (x, y), so the η-average is the value itself
            return probe
        blocks = []
        for rows, xs, ys in self._paired(x):
            values = np.asarray(callback(xs, mu, ys, self.eta, xt), dtype=float)
            values = np.broadcast_to(values, (xs.shape[0],) + values.shape[1:])
            blocks.append(self._average(values, rows.stop - rows.start))
        return np.concatenate(blocks, axis=0)

    def point_estimate(self, x: np.ndarray, mu: MeasureView, batches: int = 32) -> Tuple[np.ndarray, np.ndarray]:
        """b̄₁ at one point against the full η, with a batch-means standard error.

        Pooled η samples are particle-major, so contiguous batches group whole
        particle histories and are independent of each other. Each batch also
        fills the ν-slot with its own atoms, so the error covers that slot too.
        """
        atoms = self.eta_full.samples
        point = np.atleast_2d(np.asarray(x, dtype=float))
        xs = np.repeat(point, atoms.shape[0], axis=0)
        values = self.model.drift_slow(xs, mu, atoms, self.eta_full)
        mean = np.tensordot(self.eta_full.weights, values, axes=(0, 0))
        batches = max(2, min(batches, atoms.shape[0]))
        bounds = np.linspace(0, atoms.shape[0], batches + 1).astype(int)
        batch_means = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            batch = EmpiricalMeasure(atoms[lo:hi])
            batch_means.append(self.model.drift_slow(xs[lo:hi], mu, atoms[lo:hi], batch).mean(axis=0))
        batch_means = np.array(batch_means)
        stderr = batch_means.std(axis=0, ddof=1) / math.sqrt(batches)
        return mean, stderr


def build_averaged_drift(model: ModelSpec, eta: EmpiricalMeasure, max_atoms: Optional[int] = 256) -> AveragedDrift:
    return AveragedDrift(model, eta, max_atoms=max_atoms)


def _meta(kind: str, model: ModelSpec, **extra: Any) -> Dict[str, Any]:
    meta: Dict[str, Any] = {"kind": kind, "model": model.name}
    meta.update(extra)
    return meta


def _record_metrics(metrics: Optional[MetricsRecorder], label: str, steps: int, particles: int, started: float) -> None:
    duration = time.perf_counter() - started
    logger.debug("Simulation finished", extra={"process": label, "steps": steps, "particles": particles, "duration": duration})
    if metrics:
        metrics.record_simulation(label, steps=steps, particles=particles, duration=duration)


def simulate_coupled(
    model: ModelSpec,
    scale: ScaleParams,
    grid: GridSpec,
    n_particles: int,
    seed: int,
    *,
    replica: int = 0,
    threads: int = 1,
    metrics: Optional[MetricsRecorder] = None,
) -> PathBundle:
    scale.validate()
    if n_particles < 2:
        raise ConfigurationError("n_particles must be at least 2", details={"n_particles": n_particles})
    dt, n_steps, stride = grid.layout(scale.T, scale.eps)
    streams = NoiseStreams(seed, replica)
    system = CoupledSystem(model, scale, dt, n_particles, streams, ParticleMap(threads), grid.substeps(dt))
    recorder = _Recorder((X_EPS, Y_EPS_XI, Y_EPS_Y0), n_steps, stride, dt)
    started = time.perf_counter()
    recorder.offer(0, system.states())
    for step in range(n_steps):
        system.advance(step)
        recorder.offer(step + 1, system.states())
    _record_metrics(metrics, "coupled", n_steps, n_particles, started)
    return recorder.bundle(
        streams.ledger,
        _meta("coupled", model, eps=scale.eps, T=scale.T, n_steps=n_steps, scale=scale, grid=grid),
    )


def simulate_frozen(
    model: ModelSpec,
    law_xi: InitialLaw,
    y0: Sequence[float],
    T_frozen: float,
    grid: GridSpec,
    n_particles: int,
    seed: int,
    *,
    replica: int = 0,
    threads: int = 1,
    metrics: Optional[MetricsRecorder] = None,
) -> PathBundle:
    """The fast pair with ε = 1; both copies share W per particle."""
    if n_particles < 2:
        raise ConfigurationError("n_particles must be at least 2", details={"n_particles": n_particles})
    if not T_frozen > 0:
        raise ConfigurationError("frozen horizon must be positive", details={"T_frozen": T_frozen})
    dims = model.dims
    dt, n_steps, stride = grid.layout(T_frozen, 1.0)
    streams = NoiseStreams(seed, replica)
    pmap = ParticleMap(threads)
    y_xi = np.asarray(law_xi.draw(streams, "xi", n_particles), dtype=float).reshape(n_particles, dims.m)
    y_y0 = np.tile(np.asarray(y0, dtype=float).reshape(1, dims.m), (n_particles, 1))
    recorder = _Recorder((Y_EPS_XI, Y_EPS_Y0), n_steps, stride, dt)
    started = time.perf_counter()
    recorder.offer(0, {Y_EPS_XI: y_xi, Y_EPS_Y0: y_y0})

    def update(a, b, dw_rows, nu):
        return fast_euler_step(model, a, nu, dw_rows, dt), fast_euler_step(model, b, nu, dw_rows, dt)

    for step in range(n_steps):
        nu = EmpiricalMeasure.from_ensemble(y_xi)
        dw = streams.increments("W", step, (n_particles, dims.d2), dt)
        y_xi, y_y0 = pmap(lambda a, b, w: update(a, b, w, nu), y_xi, y_y0, dw)
        _ensure_finite(Y_EPS_XI, step + 1, y_xi)
        _ensure_finite(Y_EPS_Y0, step + 1, y_y0)
        recorder.offer(step + 1, {Y_EPS_XI: y_xi, Y_EPS_Y0: y_y0})
    _record_metrics(metrics, "frozen", n_steps, n_particles, started)
    return recorder.bundle(
        streams.ledger,
        _meta("frozen", model, eps=1.0, T=T_frozen, n_steps=n_steps, y0=tuple(np.ravel(y0)), grid=grid),
    )


def estimate_invariant_measure(
    model: ModelSpec,
    burn_in: float,
    collect: float,
    grid: GridSpec,
    n_particles: int,
    seed: int,
    *,
    law_xi: Optional[InitialLaw] = None,
    replica: int = 0,
    threads: int = 1,
    metrics: Optional[MetricsRecorder] = None,
) -> EmpiricalMeasure:
    """Pools the frozen Y^ξ cloud over the collect window (particle-major order)."""
    if not burn_in > 0 or not collect > 0:
        raise ConfigurationError("burn_in and collect must be positive", details={"burn_in": burn_in, "collect": collect})
    law = law_xi if law_xi is not None else GaussianLaw(np.zeros(model.dims.m), np.ones(model.dims.m))
    bundle = simulate_frozen(
        model,
        law,
        np.zeros(model.dims.m),
        burn_in + collect,
        grid,
        n_particles,
        seed,
        replica=replica,
        threads=threads,
        metrics=metrics,
    )
    window = bundle.times > burn_in - 1e-12
    pooled = bundle[Y_EPS_XI][:, window, :].reshape(-1, model.dims.m)
    logger.info("Invariant measure estimated", extra={"samples": pooled.shape[0], "frames": int(window.sum())})
    return EmpiricalMeasure(pooled)


def simulate_frozen_laws(
    model: ModelSpec,
    law: InitialLaw,
    shift: Sequence[float],
    T_frozen: float,
    grid: GridSpec,
    n_particles: int,
    seed: int,
    *,
    replica: int = 0,
    threads: int = 1,
    metrics: Optional[MetricsRecorder] = None,
) -> PathBundle:
    """Two frozen clouds started from ζ₁ ~ ``law`` and ζ₂ = ζ₁ + ``shift``, each with its own law slot, on shared W."""
    if n_particles < 2:
        raise ConfigurationError("n_particles must be at least 2", details={"n_particles": n_particles})
    if not T_frozen > 0:
        raise ConfigurationError("frozen horizon must be positive", details={"T_frozen": T_frozen})
    dims = model.dims
    dt, n_steps, stride = grid.layout(T_frozen, 1.0)
    streams = NoiseStreams(seed, replica)
    pmap = ParticleMap(threads)
    first = np.asarray(law.draw(streams, "xi", n_particles), dtype=float).reshape(n_particles, dims.m)
    second = first + np.asarray(shift, dtype=float).reshape(1, dims.m)
    recorder = _Recorder((Y_ZETA1, Y_ZETA2), n_steps, stride, dt)
    started = time.perf_counter()
    recorder.offer(0, {Y_ZETA1: first, Y_ZETA2: second})
    for step in range(n_steps):
        nu1, nu2 = EmpiricalMeasure.from_ensemble(first), EmpiricalMeasure.from_ensemble(second)
        dw = streams.increments("W", step, (n_particles, dims.d2), dt)
        first, second = pmap(
            lambda a, b, w: (fast_euler_step(model, a, nu1, w, dt), fast_euler_step(model, b, nu2, w, dt)),
            first,
            second,
            dw,
        )
        _ensure_finite(Y_ZETA1, step + 1, first)
        _ensure_finite(Y_ZETA2, step + 1, second)
        recorder.offer(step + 1, {Y_ZETA1: first, Y_ZETA2: second})
    _record_metrics(metrics, "frozen_laws", n_steps, n_particles, started)
    return recorder.bundle(
        streams.ledger,
        _meta("frozen_laws", model, eps=1.0, T=T_frozen, n_steps=n_steps, shift=tuple(np.ravel(shift)), grid=grid),
    )


def _check_coupling(reference: PathBundle, dt: float, n_steps: int, n_particles: int, noise_step: float = 0.0) -> None:
    mismatch = {}
    reference_grid = reference.meta.get("grid")
    if isinstance(reference_grid, GridSpec) and reference_grid.noise_step != noise_step:
        mismatch["noise_step"] = [reference_grid.noise_step, noise_step]
    if not math.isclose(reference.dt, dt, rel_tol=0.0, abs_tol=0.0):
        mismatch["dt"] = [reference.dt, dt]
    if reference.meta.get("n_steps") != n_steps:
        mismatch["n_steps"] = [reference.meta.get("n_steps"), n_steps]
    if reference.n_particles != n_particles:
        mismatch["n_particles"] = [reference.n_particles, n_particles]
    if mismatch:
        raise ConfigurationError("grid does not match the coupled bundle", details={"mismatch": mismatch})


def simulate_averaged(
    model: ModelSpec,
    bbar1: Callable[[np.ndarray, MeasureView], np.ndarray],
    scale: ScaleParams,
    grid: GridSpec,
    n_particles: int,
    seed: int,
    coupled_to: Optional[PathBundle] = None,
    *,
    replica: int = 0,
    threads: int = 1,
    metrics: Optional[MetricsRecorder] = None,
) -> PathBundle:
    """Averaged equation; with ``coupled_to`` the rho draws and B increments are those of the coupled run."""
    scale.validate()
    dt, n_steps, stride = grid.layout(scale.T, scale.eps)
    if coupled_to is not None:
        _check_coupling(coupled_to, dt, n_steps, n_particles, grid.noise_step)
        streams = NoiseStreams(coupled_to.ledger.master_seed, coupled_to.ledger.replica)
    else:
        streams = NoiseStreams(seed, replica)
    system = AveragedSystem(model, bbar1, scale, dt, n_particles, streams, ParticleMap(threads), grid.substeps(dt))
    recorder = _Recorder((X_BAR,), n_steps, stride, dt)
    started = time.perf_counter()
    recorder.offer(0, {X_BAR: system.x})
    for step in range(n_steps):
        system.advance(step)
        recorder.offer(step + 1, {X_BAR: system.x})
    _record_metrics(metrics, "averaged", n_steps, n_particles, started)
    return recorder.bundle(
        streams.ledger,
        _meta("averaged", model, eps=scale.eps, T=scale.T, n_steps=n_steps, scale=scale, grid=grid, coupled=coupled_to is not None),
    )


def attach_fluctuation(coupled: PathBundle, averaged: PathBundle) -> PathBundle:
    """U^ε = (X^ε − X̄)/√ε on the shared recorded grid."""
    if coupled.times.shape != averaged.times.shape or not np.array_equal(coupled.times, averaged.times):
        raise ConfigurationError("coupled and averaged bundles do not share a time grid")
    eps = float(coupled.meta["eps"])
    fluctuation = (coupled[X_EPS] - averaged[X_BAR]) / math.sqrt(eps)
    return coupled.with_ensembles({X_BAR: averaged[X_BAR], U_EPS: fluctuation})


class _Linearisation:
    """Drift and diffusion of the linearised slow dynamics along X̄, applied to a state Z."""

    def __init__(self, model: ModelSpec, averaged: AveragedDrift) -> None:
        model.require("dx_b1", "dmu_b1", "dx_sigma1", "dmu_sigma1")
        self.model = model
        self.averaged = averaged
        self.dx_sigma1 = model.derivative("dx_sigma1")
        self.dmu_sigma1 = model.derivative("dmu_sigma1")

    def terms(self, xbar: np.ndarray, mu: MeasureView, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dims = self.model.dims
        rows = xbar.shape[0]
        drift = np.einsum("kab,kb->ka", np.broadcast_to(self.averaged.dx(xbar, mu), (rows, dims.n, dims.n)), z)
        drift = drift + lions_average(self.averaged.dmu(xbar, mu, xbar), z)
        sx = np.broadcast_to(np.asarray(self.dx_sigma1(xbar, mu), dtype=float), (rows, dims.n, dims.d1, dims.n))
        diffusion = np.einsum("kadb,kb->kad", sx, z)
        diffusion = diffusion + lions_average(np.asarray(self.dmu_sigma1(xbar, mu, xbar), dtype=float), z)
        return drift, diffusion


def simulate_limit(
    model: ModelSpec,
    bbar1_derivs: AveragedDrift,
    upsilon: Upsilon,
    xbar_bundle: PathBundle,
    seed: int,
    *,
    metrics: Optional[MetricsRecorder] = None,
) -> PathBundle:
    """The (X̄, U) pair of the fluctuation limit; X̄ is replayed from the bundle's ledger, V is fresh."""
    linear = _Linearisation(model, bbar1_derivs)
    scale: ScaleParams = xbar_bundle.meta["scale"]
    grid: GridSpec = xbar_bundle.meta["grid"]
    dt, n_steps, stride = grid.layout(scale.T, scale.eps)
    n = xbar_bundle.n_particles
    dims = model.dims
    replay = NoiseStreams(xbar_bundle.ledger.master_seed, xbar_bundle.ledger.replica)
    fresh = NoiseStreams(seed, xbar_bundle.ledger.replica)
    system = AveragedSystem(model, bbar1_derivs, scale, dt, n, replay, substeps=grid.substeps(dt))
    u = np.zeros((n, dims.n))
    recorder = _Recorder((X_BAR, U_LIMIT), n_steps, stride, dt)
    started = time.perf_counter()
    recorder.offer(0, {X_BAR: system.x, U_LIMIT: u})
    for step in range(n_steps):
        mu = system.law()
        db = system.increments(step)
        dv = fresh.increments("V", step, (n, dims.n), dt)
        drift, diffusion = linear.terms(system.x, mu, u)
        spread = np.broadcast_to(np.asarray(upsilon(system.x, mu), dtype=float), (n, dims.n, dims.n))
        u = u + drift * dt + np.einsum("kad,kd->ka", np.broadcast_to(diffusion, (n, dims.n, dims.d1)), db) + _noise(spread, dv)
        system.advance(step, db)
        _ensure_finite(U_LIMIT, step + 1, u)
        recorder.offer(step + 1, {X_BAR: system.x, U_LIMIT: u})
    if X_BAR in xbar_bundle.ensembles and not np.array_equal(recorder.frames[X_BAR][-1], xbar_bundle.terminal(X_BAR)):
        raise ConfigurationError("the X_bar bundle could not be replayed from its seed ledger")
    _record_metrics(metrics, "limit", n_steps, n, started)
    ledger = SeedLedger(master_seed=xbar_bundle.ledger.master_seed, replica=xbar_bundle.ledger.replica)
    return recorder.bundle(
        ledger,
        _meta("limit", model, eps=scale.eps, T=scale.T, n_steps=n_steps, scale=scale, grid=grid, v_seed=seed),
    )


def simulate_auxiliary(
    model: ModelSpec,
    bbar1_derivs: AveragedDrift,
    coupled: PathBundle,
    averaged: PathBundle,
    seed: int,
    *,
    metrics: Optional[MetricsRecorder] = None,
) -> PathBundle:
    """ϑ^ε driven by (b₁ − b̄₁)(X^ε, …)/√ε plus the linearised terms along X̄.

    Both input bundles are replayed step by step from their shared ledger; ϑ
    itself consumes no extra randomness, ``seed`` only labels the result.
    """
    linear = _Linearisation(model, bbar1_derivs)
    if coupled.ledger.master_seed != averaged.ledger.master_seed or coupled.ledger.replica != averaged.ledger.replica:
        raise ConfigurationError("coupled and averaged bundles do not share B streams")
    scale: ScaleParams = coupled.meta["scale"]
    grid: GridSpec = coupled.meta["grid"]
    dt, n_steps, stride = grid.layout(scale.T, scale.eps)
    n = coupled.n_particles
    _check_coupling(averaged, dt, n_steps, n, grid.noise_step)
    dims = model.dims
    streams = NoiseStreams(coupled.ledger.master_seed, coupled.ledger.replica)
    substeps = grid.substeps(dt)
    fast = CoupledSystem(model, scale, dt, n, streams, substeps=substeps)
    slow = AveragedSystem(model, bbar1_derivs, scale, dt, n, streams, substeps=substeps)
    theta = np.zeros((n, dims.n))
    root = math.sqrt(scale.eps)
    recorder = _Recorder((X_EPS, X_BAR, U_EPS, THETA_EPS), n_steps, stride, dt)

    def snapshot() -> Dict[str, np.ndarray]:
        return {X_EPS: fast.x, X_BAR: slow.x, U_EPS: (fast.x - slow.x) / root, THETA_EPS: theta}

    started = time.perf_counter()
    recorder.offer(0, snapshot())
    for step in range(n_steps):
        mu_eps, nu = fast.laws()
        mu_bar = slow.law()
        source = (model.drift_slow(fast.x, mu_eps, fast.y_y0, nu) - bbar1_derivs(fast.x, mu_eps)) / root
        drift, diffusion = linear.terms(slow.x, mu_bar, theta)
        db = slow.increments(step)
        theta = theta + (source + drift) * dt + np.einsum("kad,kd->ka", np.broadcast_to(diffusion, (n, dims.n, dims.d1)), db)
        fast.advance(step)
        slow.advance(step, db)
        _ensure_finite(THETA_EPS, step + 1, theta)
        recorder.offer(step + 1, snapshot())
    replayed = np.array_equal(recorder.frames[X_EPS][-1], coupled.terminal(X_EPS))
    if X_BAR in averaged.ensembles:
        replayed = replayed and np.array_equal(recorder.frames[X_BAR][-1], averaged.terminal(X_BAR))
    if not replayed:
        raise ConfigurationError("the coupled/averaged bundles could not be replayed from their seed ledger")
    _record_metrics(metrics, "auxiliary", n_steps, n, started)
    return recorder.bundle(
        coupled.ledger,
        _meta("auxiliary", model, eps=scale.eps, T=scale.T, n_steps=n_steps, scale=scale, grid=grid, label_seed=seed),
    )
