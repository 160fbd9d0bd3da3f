"""Coefficient interface, the built-in reference example and the sampled assumption audit."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from .errors import CapabilityError, ConfigurationError, ModelError
from .measure import EmpiricalMeasure, MeasureView, two_atom_w2_squared
from .rng import NoiseStreams

logger = logging.getLogger(__name__)

# Callbacks are batched over a leading axis: row i of the output depends only on
# row i of the point arguments and on the (shared) measure arguments.
SlowDrift = Callable[[np.ndarray, MeasureView, np.ndarray, MeasureView], np.ndarray]
SlowDiffusion = Callable[[np.ndarray, MeasureView], np.ndarray]
FastCoefficient = Callable[[np.ndarray, MeasureView], np.ndarray]


@dataclass(frozen=True)
class Dims:
    n: int
    m: int
    d1: int
    d2: int


@dataclass(frozen=True)
class ModelDerivatives:
    """Optional derivative callbacks.

    Shapes (k = batch rows, j = rows of the Lions-derivative evaluation point x̃):
      dx_b1(x, mu, y, nu)          -> (k, n, n)
      dy_b1(x, mu, y, nu)          -> (k, n, m)
      dmu_b1(x, mu, y, nu, xt)     -> (k, j, n, n)
      dx_sigma1(x, mu)             -> (k, n, d1, n)
      dmu_sigma1(x, mu, xt)        -> (k, j, n, d1, n)
      dy_b2(y, nu)                 -> (k, m, m)
      dy_sigma2(y, nu)             -> (k, m, d2, m)
    A leading axis of length 1 means "independent of the point argument".
    """

    dx_b1: Optional[Callable[..., np.ndarray]] = None
    dy_b1: Optional[Callable[..., np.ndarray]] = None
    dmu_b1: Optional[Callable[..., np.ndarray]] = None
    dx_sigma1: Optional[Callable[..., np.ndarray]] = None
    dmu_sigma1: Optional[Callable[..., np.ndarray]] = None
    dy_b2: Optional[Callable[..., np.ndarray]] = None
    dy_sigma2: Optional[Callable[..., np.ndarray]] = None


def _conform(name: str, value: Any, rows: int, tail: Tuple[int, ...]) -> np.ndarray:
    out = np.asarray(value, dtype=float)
    if out.ndim == len(tail):
        out = out.reshape((1,) + out.shape)
    if out.shape[1:] != tail or out.shape[0] not in (1, rows):
        raise ModelError(
            f"{name} returned shape {out.shape}, expected ({rows}, {', '.join(map(str, tail))})",
            details={"callback": name, "shape": list(out.shape)},
        )
    if out.shape[0] != rows:
        out = np.broadcast_to(out, (rows,) + tail)
    return out


@dataclass(frozen=True)
class ModelSpec:
    dims: Dims
    b1: SlowDrift
    sigma1: SlowDiffusion
    b2: FastCoefficient
    sigma2: FastCoefficient
    derivs: ModelDerivatives = field(default_factory=ModelDerivatives)
    name: str = "custom"
    description: Dict[str, Any] = field(default_factory=dict)

    def drift_slow(self, x: np.ndarray, mu: MeasureView, y: np.ndarray, nu: MeasureView) -> np.ndarray:
        return _conform("b1", self.b1(x, mu, y, nu), x.shape[0], (self.dims.n,))

    def diffusion_slow(self, x: np.ndarray, mu: MeasureView) -> np.ndarray:
        return _conform("sigma1", self.sigma1(x, mu), x.shape[0], (self.dims.n, self.dims.d1))

    def drift_fast(self, y: np.ndarray, nu: MeasureView) -> np.ndarray:
        return _conform("b2", self.b2(y, nu), y.shape[0], (self.dims.m,))

    def diffusion_fast(self, y: np.ndarray, nu: MeasureView) -> np.ndarray:
        return _conform("sigma2", self.sigma2(y, nu), y.shape[0], (self.dims.m, self.dims.d2))

    def derivative(self, name: str) -> Callable[..., np.ndarray]:
        callback = getattr(self.derivs, name)
        if callback is None:
            raise CapabilityError(f"model '{self.name}' has no derivative callback '{name}'", details={"missing": name})
        return callback

    def require(self, *names: str) -> None:
        missing = [name for name in names if getattr(self.derivs, name) is None]
        if missing:
            raise CapabilityError(
                f"model '{self.name}' lacks derivative callbacks: {', '.join(missing)}",
                details={"missing": missing},
            )


@dataclass(frozen=True)
class ExampleParams:
    a: float = 1.0
    b: float = 1.0
    q: float = 1.0
    k: float = 1.0
    m: float = 0.25
    p: float = 2.0

    @classmethod
    def small_coupling(cls, p: float = 2.0, a: float = 1.0, b: float = 1.0, q: float = 1.0) -> "ExampleParams":
        return cls(a=a, b=b, q=q, k=1.0 / (24.0 * p), m=1.0 / (48.0 * p), p=p)

    def validate(self) -> None:
        if not self.k > 0:
            raise ConfigurationError("example parameter k must be positive", details={"k": self.k})
        if self.m < 0:
            raise ConfigurationError("example parameter m must be nonnegative", details={"m": self.m})
        if not self.k > self.m:
            raise ConfigurationError("example parameters need k > m", details={"k": self.k, "m": self.m})
        if self.p < 2:
            raise ConfigurationError("moment order p must be at least 2", details={"p": self.p})

    @property
    def stationary_variance(self) -> float:
        return 1.0 / (2.0 * self.k)


def _abs_cube_ratio(points: np.ndarray) -> np.ndarray:
    x = points[:, 0]
    return np.abs(x) ** 3 / (1.0 + x * x)


def build_example_model(params: ExampleParams) -> ModelSpec:
    """The scalar reference system with every derivative callback in closed form."""
    params.validate()
    a, b, q, k, m = params.a, params.b, params.q, params.k, params.m

    def b1(x: np.ndarray, mu: MeasureView, y: np.ndarray, nu: MeasureView) -> np.ndarray:
        slow = np.sin(a * x) + mu.mean[0]
        fast = np.cos(b * y) + nu.integrate(lambda z: np.cos(q * z[:, 0]))
        return slow + fast

    def sigma1(x: np.ndarray, mu: MeasureView) -> np.ndarray:
        return np.full((1, 1, 1), mu.integrate(_abs_cube_ratio))

    def b2(y: np.ndarray, nu: MeasureView) -> np.ndarray:
        return -k * y + m * nu.mean[0]

    def sigma2(y: np.ndarray, nu: MeasureView) -> np.ndarray:
        return np.ones((1, 1, 1))

    def dx_b1(x, mu, y, nu):
        return (a * np.cos(a * x)).reshape(-1, 1, 1)

    def dy_b1(x, mu, y, nu):
        return (-b * np.sin(b * y)).reshape(-1, 1, 1)

    def dmu_b1(x, mu, y, nu, xt):
        return np.ones((1, xt.shape[0], 1, 1))

    def dx_sigma1(x, mu):
        return np.zeros((1, 1, 1, 1))

    def dmu_sigma1(x, mu, xt):
        z = xt[:, 0]
        slope = z * np.abs(z) * (3.0 + z * z) / (1.0 + z * z) ** 2
        return slope.reshape(1, -1, 1, 1, 1)

    def dy_b2(y, nu):
        return np.full((1, 1, 1), -k)

    def dy_sigma2(y, nu):
        return np.zeros((1, 1, 1, 1))

    derivs = ModelDerivatives(
        dx_b1=dx_b1,
        dy_b1=dy_b1,
        dmu_b1=dmu_b1,
        dx_sigma1=dx_sigma1,
        dmu_sigma1=dmu_sigma1,
        dy_b2=dy_b2,
        dy_sigma2=dy_sigma2,
    )
    return ModelSpec(
        dims=Dims(n=1, m=1, d1=1, d2=1),
        b1=b1,
        sigma1=sigma1,
        b2=b2,
        sigma2=sigma2,
        derivs=derivs,
        name="example",
        description={"params": asdict(params)},
    )


@dataclass(frozen=True)
class AuditReport:
    lip_b1s1_hat: float
    lip_b2s2_hat: float
    beta1_hat: float
    beta2_hat: float
    margin: float
    sample_count: int
    p: float
    alpha1_hat: float
    alpha2_hat: float
    secondary_margin: float
    growth_b1s1_hat: float
    growth_b2s2_hat: float
    sampled_estimate: bool = True

    @property
    def margin_positive(self) -> bool:
        return self.margin > 0

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["margin_positive"] = self.margin_positive
        payload["anchors"] = {
            "lip_b1s1_hat": "assumption:slow-lipschitz",
            "lip_b2s2_hat": "assumption:fast-lipschitz",
            "beta1_hat": "assumption:fast-dissipativity",
            "beta2_hat": "assumption:fast-dissipativity",
            "alpha1_hat": "assumption:fast-moment-dissipativity",
            "alpha2_hat": "assumption:fast-moment-dissipativity",
            "growth_b1s1_hat": "assumption:slow-growth",
            "growth_b2s2_hat": "assumption:fast-growth",
        }
        return payload


def _two_atom(rng: np.random.Generator, dim: int, box: float) -> EmpiricalMeasure:
    atoms = rng.uniform(-box, box, size=(2, dim))
    w = rng.uniform()
    return EmpiricalMeasure(atoms, np.array([w, 1.0 - w]))


def _sq(value: np.ndarray) -> float:
    return float(np.sum(np.asarray(value, dtype=float) ** 2))


def _checked(name: str, value: np.ndarray, inputs: Dict[str, Any]) -> np.ndarray:
    if not np.isfinite(value).all():
        raise ModelError(f"{name} returned a non-finite value", details={"callback": name, "inputs": inputs})
    return value


def audit_assumptions(model: ModelSpec, p: float, probes: int, box: float, seed: int) -> AuditReport:
    """Sampled estimates of the Lipschitz and dissipativity constants.

    Probe ``i`` is drawn from its own counter block, so extending ``probes``
    keeps every earlier probe unchanged. ``beta1_hat`` is half the observed
    pure-state coercivity (ν₁ = ν₂), the symmetric Young split; ``beta2_hat`` is
    a running maximum over the cross-measure probes, each one using the
    ``beta1`` known when it was drawn, so more probes never lower it.
    """
    if probes < 2:
        raise ConfigurationError("audit needs at least two probes", details={"probes": probes})
    if not box > 0:
        raise ConfigurationError("audit box radius must be positive", details={"box": box})

    dims = model.dims
    streams = NoiseStreams(seed)
    lip1 = lip2 = 0.0
    growth1 = growth2 = 0.0
    coercivity = np.inf
    beta1 = beta2 = 0.0

    for index in range(probes):
        rng = streams.generator("probe", index)
        x1, x2 = rng.uniform(-box, box, size=(2, 1, dims.n))
        y1, y2 = rng.uniform(-box, box, size=(2, 1, dims.m))
        mu1, mu2 = _two_atom(rng, dims.n, box), _two_atom(rng, dims.n, box)
        nu1, nu2 = _two_atom(rng, dims.m, box), _two_atom(rng, dims.m, box)
        inputs = {
            "x": [x1.tolist(), x2.tolist()],
            "y": [y1.tolist(), y2.tolist()],
            "mu": [mu1.samples.tolist(), mu2.samples.tolist()],
            "nu": [nu1.samples.tolist(), nu2.samples.tolist()],
        }

        b1_1 = _checked("b1", model.drift_slow(x1, mu1, y1, nu1), inputs)
        b1_2 = _checked("b1", model.drift_slow(x2, mu2, y2, nu2), inputs)
        s1_1 = _checked("sigma1", model.diffusion_slow(x1, mu1), inputs)
        s1_2 = _checked("sigma1", model.diffusion_slow(x2, mu2), inputs)
        b2_1 = _checked("b2", model.drift_fast(y1, nu1), inputs)
        b2_2 = _checked("b2", model.drift_fast(y2, nu2), inputs)
        b2_same = _checked("b2", model.drift_fast(y2, nu1), inputs)
        s2_1 = _checked("sigma2", model.diffusion_fast(y1, nu1), inputs)
        s2_2 = _checked("sigma2", model.diffusion_fast(y2, nu2), inputs)
        s2_same = _checked("sigma2", model.diffusion_fast(y2, nu1), inputs)

        dx2, dy2 = _sq(x1 - x2), _sq(y1 - y2)
        w_mu, w_nu = two_atom_w2_squared(mu1, mu2), two_atom_w2_squared(nu1, nu2)

        denominator = dx2 + w_mu + dy2 + w_nu
        if denominator > 0:
            lip1 = max(lip1, (_sq(b1_1 - b1_2) + _sq(s1_1 - s1_2)) / denominator)
        if dy2 + w_nu > 0:
            lip2 = max(lip2, (_sq(b2_1 - b2_2) + _sq(s2_1 - s2_2)) / (dy2 + w_nu))

        dy = (y1 - y2).ravel()
        if dy2 > 0:
            same = 2.0 * float(np.dot(dy, (b2_1 - b2_same).ravel())) + (3 * p - 1) * _sq(s2_1 - s2_same)
            coercivity = min(coercivity, -same / dy2)
        beta1 = 0.5 * coercivity if np.isfinite(coercivity) else 0.0
        if w_nu > 0:
            mixed = 2.0 * float(np.dot(dy, (b2_1 - b2_2).ravel())) + (3 * p - 1) * _sq(s2_1 - s2_2)
            beta2 = max(beta2, (mixed + beta1 * dy2) / w_nu)

        scale1 = 1.0 + _sq(x1) + mu1.second_moment + _sq(y1) + nu1.second_moment
        growth1 = max(growth1, (_sq(b1_1) + _sq(s1_1)) / scale1)
        scale2 = 1.0 + _sq(y1) + nu1.second_moment
        growth2 = max(growth2, (_sq(b2_1) + _sq(s2_1)) / scale2)

    margin = beta1 - beta2 - 6.0 * p * lip2
    alpha1 = beta1 - 3.0 * p * lip2
    alpha2 = beta2 + (3.0 * p - 1.0) * lip2
    report = AuditReport(
        lip_b1s1_hat=lip1,
        lip_b2s2_hat=lip2,
        beta1_hat=beta1,
        beta2_hat=beta2,
        margin=margin,
        sample_count=probes,
        p=p,
        alpha1_hat=alpha1,
        alpha2_hat=alpha2,
        secondary_margin=alpha1 - alpha2 - lip2,
        growth_b1s1_hat=growth1,
        growth_b2s2_hat=growth2,
    )
    logger.info(
        "Assumption audit finished",
        extra={"model": model.name, "probes": probes, "margin": margin, "margin_positive": report.margin_positive},
    )
    return report
