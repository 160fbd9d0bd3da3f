from __future__ import annotations

import hashlib
import importlib
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Optional, Sequence, Tuple

from dotenv import load_dotenv

from .errors import ConfigurationError
from .integrator import GridSpec, ScaleParams
from .measure import GaussianLaw
from .model import ExampleParams, ModelSpec, build_example_model


@dataclass(frozen=True)
class Settings:
    output_dir: str = "runs"
    threads: int = 1
    log_level: str = "INFO"
    metrics_file_path: Optional[str] = None
    strict: bool = False


def _env_bool(name: str, raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ConfigurationError(f"{name} must be a boolean (true/false).", details={"variable": name})


def get_settings(env_path: Optional[str] = None) -> Settings:
    """Load process-level settings from environment variables."""
    if env_path:
        load_dotenv(env_path)
    else:
        load_dotenv()

    output_dir = os.getenv("SLOWFAST_OUTPUT_DIR", "").strip() or "runs"
    threads_value = os.getenv("SLOWFAST_THREADS", "").strip()
    log_level = os.getenv("SLOWFAST_LOG_LEVEL", "").strip().upper() or "INFO"
    metrics_file_path = os.getenv("SLOWFAST_METRICS_FILE", "").strip() or None
    strict = _env_bool("SLOWFAST_STRICT", os.getenv("SLOWFAST_STRICT", ""))

    if threads_value:
        try:
            threads = int(threads_value)
        except ValueError as exc:
            raise ConfigurationError("SLOWFAST_THREADS must be an integer (e.g. 4).", details={"variable": "SLOWFAST_THREADS"}) from exc
        if threads < 1:
            raise ConfigurationError("SLOWFAST_THREADS must be at least 1.", details={"variable": "SLOWFAST_THREADS"})
    else:
        threads = 1

    return Settings(
        output_dir=output_dir,
        threads=threads,
        log_level=log_level,
        metrics_file_path=metrics_file_path,
        strict=strict,
    )


# ---------------------------------------------------------------------------
# run configuration

_POWER = re.compile(r"^([+-]?\d+(?:\.\d*)?)\s*\^\s*([+-]?\d+(?:\.\d*)?)$")


def parse_float(text: str) -> float:
    text = text.strip()
    match = _POWER.match(text)
    if match:
        return float(match.group(1)) ** float(match.group(2))
    return float(text)


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> Tuple[float, ...]:
    parts = [part for part in (piece.strip() for piece in text.split(",")) if part]
    if not parts:
        raise ValueError("empty list")
    return tuple(parse_float(part) for part in parts)


def _parse_optional_float(text: str) -> Optional[float]:
    if text.strip().lower() in ("auto", "none"):
        return None
    return parse_float(text)


def _emit(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(item)) for item in value)
    if isinstance(value, str) and "#" in value:
        return f'"{value}"'
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


def _k(parse: Callable[[str], Any], default: str, doc: str) -> Key:
    return Key(parse, parse(default), doc)


SCHEMA: Dict[str, Key] = {
    "model.name": _k(str, "example", "example | plugin"),
    "model.plugin": _k(str, "", "package.module:factory returning a ModelSpec (model.name = plugin)"),
    "model.a": _k(parse_float, "1.0", "example: frequency of sin(a x)"),
    "model.b": _k(parse_float, "1.0", "example: frequency of cos(b y)"),
    "model.q": _k(parse_float, "1.0", "example: frequency of the ν-integrated cos(q y)"),
    "model.k": _k(parse_float, "1.0", "example: fast restoring rate"),
    "model.m": _k(parse_float, "0.25", "example: fast mean-field coupling"),
    "model.small_coupling": _k(_parse_bool, "false", "use k = 1/(24p), m = 1/(48p)"),
    "scale.eps": _k(parse_float, "2^-6", "scale ratio ε in (0, 1]"),
    "scale.T": _k(parse_float, "1.0", "horizon"),
    "scale.p": _k(parse_float, "2.0", "moment order (2 or 4 for avg-rate)"),
    "scale.y0": _k(_parse_floats, "0.0", "fixed initial point of the second fast copy"),
    "law.rho.mean": _k(_parse_floats, "0.0", "Gaussian ϱ mean"),
    "law.rho.std": _k(_parse_floats, "1.0", "Gaussian ϱ standard deviation"),
    "law.xi.mean": _k(_parse_floats, "0.0", "Gaussian ξ mean"),
    "law.xi.std": _k(_parse_floats, "1.0", "Gaussian ξ standard deviation"),
    "grid.h": _k(parse_float, "0.0125", "base step"),
    "grid.rho_fast": _k(parse_float, "20.0", "fast oversampling: step = min(h, ε/rho_fast)"),
    "grid.record_stride": _k(int, "0", "steps between frames (0: derive from record_frames)"),
    "grid.record_frames": _k(int, "40", "recorded frames per run when record_stride = 0"),
    "run.n_particles": _k(int, "2048", "particles per ensemble"),
    "run.seed": _k(int, "0", "master seed"),
    "run.threads": _k(int, "1", "map-phase threads"),
    "run.out": _k(str, "runs", "output directory"),
    "run.strict": _k(_parse_bool, "false", "escalate warnings to errors"),
    "audit.probes": _k(int, "256", "sampled probe pairs"),
    "audit.box": _k(parse_float, "4.0", "probe box half-width"),
    "invariant.burn_in": _k(parse_float, "20.0", "frozen burn-in time"),
    "invariant.collect": _k(parse_float, "20.0", "frozen collection window"),
    "avg.max_atoms": _k(int, "256", "η atoms used per averaged-drift evaluation"),
    "rate.eps_grid": _k(_parse_floats, "2^-4, 2^-5, 2^-6, 2^-7, 2^-8, 2^-9", "ε sweep, strictly decreasing"),
    "rate.replicas": _k(int, "8", "independent replicas"),
    "rate.bootstrap": _k(int, "200", "bootstrap resamples"),
    "rate.step_halving": _k(_parse_bool, "true", "re-run the smallest ε at doubled rho_fast"),
    "clt.eps_grid": _k(_parse_floats, "2^-4, 2^-6, 2^-8", "ε sweep for the fluctuation comparison"),
    "clt.n_particles": _k(int, "4096", "particles per ensemble"),
    "clt.mc_paths": _k(int, "1024", "paths per Υ cell"),
    "clt.cell_budget": _k(int, "64", "η cells for Υ"),
    "poisson.x": _k(_parse_floats, "0.0", "slow query point"),
    "poisson.y": _k(_parse_floats, "1.0", "fast query point"),
    "poisson.T_trunc": _k(_parse_optional_float, "auto", "truncation horizon (auto: fitted tail)"),
    "poisson.mc_paths": _k(int, "4096", "frozen paths per cell"),
    "poisson.t_short": _k(parse_float, "0.5", "Dynkin check horizon"),
    "poisson.query_points": _k(int, "32", "terminal atoms for the Dynkin expectation"),
    "poisson.cell_budget": _k(int, "64", "η cells for Υ"),
    "lemma.eps_grid": _k(_parse_floats, "2^-2, 2^-4, 2^-6, 2^-8", "ε sweep for the moment checks"),
    "lemma.frozen_T": _k(parse_float, "8.0", "frozen horizon for contraction and decay fits"),
    "lemma.aux_eps": _k(_parse_floats, "2^-4, 2^-8", "ε pair for the auxiliary-process shrinkage"),
    "lemma.timechange_eps": _k(parse_float, "2^-2", "ε for the time-change moment match"),
    "accept.slope_low": _k(parse_float, "0.4", ""),
    "accept.slope_high": _k(parse_float, "0.6", ""),
    "accept.r2_min": _k(parse_float, "0.95", ""),
    "accept.ks_max": _k(parse_float, "0.1", ""),
    "accept.var_ratio_low": _k(parse_float, "0.8", ""),
    "accept.var_ratio_high": _k(parse_float, "1.25", ""),
    "accept.invariant_tol": _k(parse_float, "0.05", "invariant mean/variance tolerance"),
    "accept.stderr_multiple": _k(parse_float, "3.0", "standard-error multiple for MC comparisons"),
    "accept.relative_tol": _k(parse_float, "0.05", "relative tolerance for quadrature comparisons"),
    "accept.moment_spread": _k(parse_float, "1.5", "allowed spread of fast moments across ε"),
    "accept.contraction_factor": _k(parse_float, "0.9", "fraction of 2(k − m) the contraction fit must reach"),
}


@dataclass(frozen=True)
class RunConfig:
    values: Dict[str, Any] = field(default_factory=lambda: {key: spec.default for key, spec in SCHEMA.items()})

    def __getitem__(self, key: str) -> Any:
        try:
            return self.values[key]
        except KeyError as exc:
            raise ConfigurationError(f"unknown key '{key}'", details={"key": key}) from exc

    def section(self, prefix: str) -> Dict[str, Any]:
        head = prefix.rstrip(".") + "."
        return {key[len(head) :]: value for key, value in self.values.items() if key.startswith(head)}

    def to_text(self) -> str:
        lines = [f"{key} = {_emit(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        return {key: (list(value) if isinstance(value, tuple) else value) for key, value in sorted(self.values.items())}


def _strip_comment(line: str) -> str:
    quoted = False
    for index, char in enumerate(line):
        if char == '"':
            quoted = not quoted
        elif char == "#" and not quoted:
            return line[:index]
    return line


def _split(line: str, where: str) -> Tuple[str, str]:
    if "=" not in line:
        raise ConfigurationError(f"expected 'key = value' {where}", details={"line": line})
    key, raw = line.split("=", 1)
    return key.strip(), raw.strip().strip('"')


def _assign(values: Dict[str, Any], key: str, raw: str, where: str, line_no: Optional[int]) -> None:
    details: Dict[str, Any] = {"key": key}
    if line_no is not None:
        details["line"] = line_no
    spec = SCHEMA.get(key)
    if spec is None:
        raise ConfigurationError(f"unknown key '{key}' {where}", details=details)
    try:
        values[key] = spec.parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid value {raw!r} for '{key}' {where}", details=details) from exc


def parse_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    text: Optional[str] = None,
    base: Sequence[str] = (),
) -> RunConfig:
    """Defaults, then ``base`` (environment defaults), then the file (or ``text``), then ``key=value`` overrides."""
    values = {key: spec.default for key, spec in SCHEMA.items()}
    for entry in base:
        key, raw = _split(entry, "in environment defaults")
        _assign(values, key, raw, "in environment defaults", None)
    if path is not None:
        source = Path(path)
        if not source.is_file():
            raise ConfigurationError(f"config file not found: {path}", details={"path": str(path)})
        text = source.read_text(encoding="utf-8")
    if text is not None:
        seen: Dict[str, int] = {}
        for line_no, raw_line in enumerate(text.splitlines(), start=1):
            line = _strip_comment(raw_line).strip()
            if not line:
                continue
            where = f"at line {line_no}"
            key, raw = _split(line, where)
            if key in seen:
                raise ConfigurationError(
                    f"duplicate key '{key}' at line {line_no} (first at line {seen[key]})",
                    details={"key": key, "line": line_no},
                )
            seen[key] = line_no
            _assign(values, key, raw, where, line_no)
    for override in overrides:
        key, raw = _split(override, "in --set")
        _assign(values, key, raw, "in --set", None)
    config = RunConfig(values)
    validate_config(config)
    return config


def validate_config(config: RunConfig) -> None:
    if config["model.name"] not in ("example", "plugin"):
        raise ConfigurationError("model.name must be 'example' or 'plugin'", details={"key": "model.name"})
    if config["model.name"] == "plugin" and ":" not in config["model.plugin"]:
        raise ConfigurationError("model.plugin must look like 'package.module:factory'", details={"key": "model.plugin"})
    for key in ("run.n_particles", "run.threads", "rate.replicas", "clt.n_particles", "poisson.mc_paths", "audit.probes"):
        if config[key] < 1:
            raise ConfigurationError(f"'{key}' must be positive", details={"key": key})
    if config["run.seed"] < 0:
        raise ConfigurationError("'run.seed' must be nonnegative", details={"key": "run.seed"})
    for key in ("rate.eps_grid", "clt.eps_grid", "lemma.eps_grid", "lemma.aux_eps"):
        grid = config[key]
        if any(not 0 < value <= 1 for value in grid):
            raise ConfigurationError(f"'{key}' values must lie in (0, 1]", details={"key": key})
        if any(later >= earlier for earlier, later in zip(grid, grid[1:])):
            raise ConfigurationError(f"'{key}' must be strictly decreasing", details={"key": key})


def example_params(config: RunConfig) -> ExampleParams:
    if config["model.small_coupling"]:
        return ExampleParams.small_coupling(p=config["scale.p"], a=config["model.a"], b=config["model.b"], q=config["model.q"])
    return ExampleParams(
        a=config["model.a"],
        b=config["model.b"],
        q=config["model.q"],
        k=config["model.k"],
        m=config["model.m"],
        p=config["scale.p"],
    )


def load_model(config: RunConfig) -> ModelSpec:
    if config["model.name"] == "example":
        return build_example_model(example_params(config))
    target = config["model.plugin"]
    module_name, _, attribute = target.partition(":")
    try:
        factory = getattr(importlib.import_module(module_name), attribute)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"cannot load model plugin '{target}'", details={"key": "model.plugin"}) from exc
    model = factory(config)
    if not isinstance(model, ModelSpec):
        raise ConfigurationError(f"model plugin '{target}' did not return a ModelSpec", details={"key": "model.plugin"})
    return model


def scale_params(config: RunConfig, eps: Optional[float] = None) -> ScaleParams:
    return ScaleParams(
        eps=config["scale.eps"] if eps is None else eps,
        T=config["scale.T"],
        p=config["scale.p"],
        y0=tuple(config["scale.y0"]),
        law_rho=GaussianLaw(config["law.rho.mean"], config["law.rho.std"]),
        law_xi=GaussianLaw(config["law.xi.mean"], config["law.xi.std"]),
    )


def grid_spec(config: RunConfig) -> GridSpec:
    return GridSpec(
        h=config["grid.h"],
        rho_fast=config["grid.rho_fast"],
        record_stride=config["grid.record_stride"],
        record_frames=config["grid.record_frames"],
    )


def describe_schema() -> Iterable[Tuple[str, str, str]]:
    """(key, default, doc) rows for the README table."""
    for key, spec in SCHEMA.items():
        yield key, _emit(spec.default), spec.doc
