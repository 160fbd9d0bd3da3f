from __future__ import annotations

import logging
import time
import warnings
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from .config import RunConfig, Settings, example_params, get_settings, grid_spec, load_model, scale_params
from .errors import ConfigurationError, SlowFastError, TruncationWarning, UnderResolvedWarning
from .experiments import (
    Thresholds,
    check_invariant_measure,
    estimate_eta,
    run_audit,
    run_averaging_rate,
    run_clt,
    run_lemma_checks,
    run_poisson_checks,
    run_simulation,
)
from .integrator import AveragedDrift
from .measure import EmpiricalMeasure
from .model import ExampleParams, ModelSpec
from .observability import MetricsRecorder, configure_logging
from .report_store import BaseReportStore, create_report_store
from .rng import NoiseStreams

logger = logging.getLogger(__name__)

CHECK_COLUMNS = ("name", "anchor", "passed", "value", "threshold")

# exit statuses
EXIT_PASSED = 0
EXIT_FAILED_CHECKS = 1
EXIT_ERROR = 2


class ExperimentApp:
    """Runs one subcommand against a resolved config and leaves its artifacts in ``run.out``."""

    COMMANDS = ("audit", "invariant-measure", "simulate", "avg-rate", "clt", "poisson", "lemma-checks")

    def __init__(
        self,
        config: RunConfig,
        settings: Settings | None = None,
        store: Optional[BaseReportStore] = None,
        metrics: Optional[MetricsRecorder] = None,
    ) -> None:
        self.settings = settings or get_settings()
        self.config = config
        self.out = Path(config["run.out"])
        self.store = store if store is not None else create_report_store(str(self.out))
        self.metrics = metrics if metrics is not None else MetricsRecorder(self.settings.metrics_file_path or str(self.out / "metrics.json"))
        self.seed = int(config["run.seed"])
        self.threads = int(config["run.threads"])
        self.strict = bool(config["run.strict"] or self.settings.strict)
        self.thresholds = Thresholds(**config.section("accept"))
        self._handlers: Dict[str, Callable[[], Any]] = {
            "audit": self._audit,
            "invariant-measure": self._invariant_measure,
            "simulate": self._simulate,
            "avg-rate": self._avg_rate,
            "clt": self._clt,
            "poisson": self._poisson,
            "lemma-checks": self._lemma_checks,
        }

    def run(self, command: str, configure_logs: bool = True) -> int:
        if command not in self._handlers:
            raise ConfigurationError(f"unknown subcommand '{command}'", details={"command": command, "known": list(self.COMMANDS)})
        if configure_logs:
            configure_logging(self.settings.log_level, self.out / "log.jsonl")
        logger.info("Experiment started", extra={"command": command, "seed": self.seed, "threads": self.threads, "strict": self.strict})
        started = time.perf_counter()
        digest = self.config.digest()
        self.store.save_config(self.config.to_text())
        payload: Dict[str, Any] = {
            "command": command,
            "config": self.config.to_dict(),
            "config_sha256": digest,
            "seed_ledger": NoiseStreams(self.seed).ledger.to_dict(),
        }
        status = EXIT_ERROR
        with warnings.catch_warnings():
            if self.strict:
                warnings.simplefilter("error", UnderResolvedWarning)
                warnings.simplefilter("error", TruncationWarning)
            try:
                report = self._handlers[command]()
                payload["report"] = report.to_dict()
                payload["passed"] = report.passed
                self._write_artifacts(command, report, digest)
                status = EXIT_PASSED if report.passed else EXIT_FAILED_CHECKS
            except SlowFastError as exc:
                logger.exception("Experiment aborted: %s", exc, extra={"command": command, "kind": exc.kind})
                self.metrics.record_error(exc.kind)
                payload["passed"] = False
                payload["error"] = exc.to_dict()
        payload["exit_status"] = status
        self.store.save_report(command, payload)
        duration = time.perf_counter() - started
        self.metrics.record_run(command, duration=duration, exit_status=status)
        logger.info("Experiment finished", extra={"command": command, "exit_status": status, "duration": duration})
        return status

    # ------------------------------------------------------------------
    # artifacts

    def _write_artifacts(self, command: str, report: Any, digest: str) -> None:
        stem = command.replace("-", "_")
        rows = [(check.name, check.anchor, check.passed, _cell(check.value), _cell(check.threshold)) for check in report.checks]
        self.store.write_csv(f"{stem}_checks", CHECK_COLUMNS, rows, digest, self.seed)
        for name, (columns, table_rows) in report.tables.items():
            self.store.write_csv(name, columns, table_rows, digest, self.seed)
        for name, (x, y, labels) in report.series.items():
            self.store.write_series(name, x, y, labels)

    # ------------------------------------------------------------------
    # subcommands

    def _model(self) -> ModelSpec:
        return load_model(self.config)

    def _params(self) -> Optional[ExampleParams]:
        return example_params(self.config) if self.config["model.name"] == "example" else None

    def _eta(self, model: ModelSpec) -> EmpiricalMeasure:
        config = self.config
        return estimate_eta(
            model,
            scale_params(config),
            grid_spec(config),
            config["run.n_particles"],
            self.seed,
            config["invariant.burn_in"],
            config["invariant.collect"],
            threads=self.threads,
            metrics=self.metrics,
        )

    def _audit(self):
        config = self.config
        return run_audit(self._model(), config["scale.p"], config["audit.probes"], config["audit.box"], self.seed)

    def _invariant_measure(self):
        model = self._model()
        eta = self._eta(model)
        return check_invariant_measure(model, eta, self._params(), self.thresholds)

    def _simulate(self):
        config = self.config
        return run_simulation(
            self._model(),
            scale_params(config),
            config["run.n_particles"],
            self.seed,
            grid=grid_spec(config),
            burn_in=config["invariant.burn_in"],
            collect=config["invariant.collect"],
            max_atoms=config["avg.max_atoms"],
            threads=self.threads,
            metrics=self.metrics,
        )

    def _avg_rate(self):
        config = self.config
        return run_averaging_rate(
            self._model(),
            scale_params(config),
            config["rate.eps_grid"],
            config["run.n_particles"],
            config["rate.replicas"],
            self.seed,
            grid=grid_spec(config),
            burn_in=config["invariant.burn_in"],
            collect=config["invariant.collect"],
            max_atoms=config["avg.max_atoms"],
            bootstrap=config["rate.bootstrap"],
            step_halving=config["rate.step_halving"],
            thresholds=self.thresholds,
            threads=self.threads,
            metrics=self.metrics,
        )

    def _clt(self):
        config = self.config
        return run_clt(
            self._model(),
            scale_params(config),
            config["clt.eps_grid"],
            config["clt.n_particles"],
            self.seed,
            grid=grid_spec(config),
            burn_in=config["invariant.burn_in"],
            collect=config["invariant.collect"],
            max_atoms=config["avg.max_atoms"],
            mc_paths=config["clt.mc_paths"],
            cell_budget=config["clt.cell_budget"],
            bootstrap=config["rate.bootstrap"],
            thresholds=self.thresholds,
            threads=self.threads,
            metrics=self.metrics,
        )

    def _poisson(self):
        config = self.config
        model = self._model()
        eta = self._eta(model)
        bbar1 = AveragedDrift(model, eta, config["avg.max_atoms"])
        return run_poisson_checks(
            model,
            eta,
            bbar1,
            self.seed,
            params=self._params(),
            x=config["poisson.x"],
            y=config["poisson.y"],
            T_trunc=config["poisson.T_trunc"],
            mc_paths=config["poisson.mc_paths"],
            t_short=config["poisson.t_short"],
            query_points=config["poisson.query_points"],
            cell_budget=config["poisson.cell_budget"],
            grid=grid_spec(config),
            thresholds=self.thresholds,
        )

    def _lemma_checks(self):
        config = self.config
        return run_lemma_checks(
            self._model(),
            scale_params(config),
            self.seed,
            params=self._params(),
            grid=grid_spec(config),
            n_particles=config["run.n_particles"],
            eps_grid=config["lemma.eps_grid"],
            frozen_T=config["lemma.frozen_T"],
            aux_eps=config["lemma.aux_eps"],
            timechange_eps=config["lemma.timechange_eps"],
            burn_in=config["invariant.burn_in"],
            collect=config["invariant.collect"],
            max_atoms=config["avg.max_atoms"],
            thresholds=self.thresholds,
            threads=self.threads,
            metrics=self.metrics,
        )


def _cell(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return ";".join("%.17g" % float(item) for item in value)
    if value is None:
        return ""
    return value
