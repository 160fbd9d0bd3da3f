import json

import pytest

from .context import app, config, errors, main, observability, report_store

SMALL = [
    "run.n_particles=64",
    "scale.T=0.25",
    "scale.eps=0.25",
    "grid.h=0.05",
    "grid.rho_fast=4",
    "grid.record_frames=0",
    "invariant.burn_in=1",
    "invariant.collect=1",
    "avg.max_atoms=32",
]


def build(tmp_path, *overrides, store=None):
    parsed = config.parse_config(overrides=SMALL + [f"run.out={tmp_path}"] + list(overrides))
    settings = config.Settings(output_dir=str(tmp_path))
    return app.ExperimentApp(parsed, settings, store=store, metrics=observability.MetricsRecorder())


class TestExperimentApp:
    def test_audit_artifacts(self, tmp_path):
        status = build(tmp_path, "model.small_coupling=true", "audit.probes=32").run("audit", configure_logs=False)

        assert status == app.EXIT_PASSED
        payload = json.loads((tmp_path / "audit.report.json").read_text(encoding="utf-8"))
        assert payload["passed"] is True
        assert payload["exit_status"] == 0
        assert payload["seed_ledger"]["master_seed"] == 0
        assert len(payload["config_sha256"]) == 64
        assert (tmp_path / "resolved.conf").is_file()
        header = (tmp_path / "audit_checks.csv").read_text(encoding="utf-8").splitlines()[2]
        assert header == ",".join(app.CHECK_COLUMNS)

    def test_failed_check_exit_status(self, tmp_path):
        status = build(tmp_path, "audit.probes=64").run("audit", configure_logs=False)
        assert status == app.EXIT_FAILED_CHECKS

    def test_invariant_measure(self, tmp_path):
        instance = build(tmp_path, "accept.invariant_tol=0.5")
        status = instance.run("invariant-measure", configure_logs=False)

        assert status == app.EXIT_PASSED
        assert (tmp_path / "invariant_density.dat").is_file()
        assert instance.metrics.snapshot()["runs"]["invariant-measure"]["count"] == 1

    def test_simulate_tables(self, tmp_path):
        status = build(tmp_path).run("simulate", configure_logs=False)

        assert status == app.EXIT_PASSED
        lines = (tmp_path / "simulate.csv").read_text(encoding="utf-8").splitlines()
        assert lines[2].startswith("time,mean_X_eps")
        assert len(lines) == 3 + 6

    def test_error_is_serialised(self, tmp_path):
        instance = build(tmp_path, "grid.h=0.03")
        status = instance.run("simulate", configure_logs=False)

        assert status == app.EXIT_ERROR
        payload = json.loads((tmp_path / "simulate.report.json").read_text(encoding="utf-8"))
        assert payload["error"]["kind"] == "configuration"
        assert payload["passed"] is False
        assert instance.metrics.snapshot()["errors"] == {"configuration": 1}

    def test_strict_mode_escalates_warnings(self, tmp_path):
        status = build(tmp_path, "grid.rho_fast=1", "run.strict=true").run("simulate", configure_logs=False)
        assert status == app.EXIT_ERROR

    def test_lenient_mode_only_warns(self, tmp_path):
        with pytest.warns(errors.UnderResolvedWarning):
            status = build(tmp_path, "grid.rho_fast=1").run("simulate", configure_logs=False)
        assert status == app.EXIT_PASSED

    def test_null_store(self, tmp_path):
        target = tmp_path / "nothing"
        status = build(target, "model.small_coupling=true", store=report_store.NullReportStore()).run("audit", configure_logs=False)

        assert status == app.EXIT_PASSED
        assert not target.exists()

    def test_unknown_command(self, tmp_path):
        with pytest.raises(errors.ConfigurationError):
            build(tmp_path).run("fit-everything", configure_logs=False)


class TestCommandLine:
    def test_schema(self, capsys):
        assert main.main(["schema"]) == 0
        assert "scale.eps = 0.015625" in capsys.readouterr().out

    def test_audit(self, tmp_path, reset_logging):
        status = main.main(["audit", "--set", "model.small_coupling=true", "--set", "audit.probes=16", "--out", str(tmp_path)])

        assert status == 0
        assert (tmp_path / "log.jsonl").is_file()
        assert (tmp_path / "metrics.json").is_file()

    def test_configuration_error(self, tmp_path, capsys):
        status = main.main(["audit", "--set", "scale.epsilom=0.1", "--out", str(tmp_path)])

        assert status == 2
        assert "scale.epsilom" in capsys.readouterr().err

    def test_reports(self, tmp_path, capsys, reset_logging):
        main.main(["audit", "--set", "model.small_coupling=true", "--set", "audit.probes=16", "--out", str(tmp_path)])
        capsys.readouterr()

        assert main.main(["list-reports", "--out", str(tmp_path)]) == 0
        assert capsys.readouterr().out.split() == ["audit"]
        assert main.main(["show-report", "--name", "audit", "--out", str(tmp_path)]) == 0
        assert json.loads(capsys.readouterr().out)["command"] == "audit"
        assert main.main(["show-report", "--name", "absent", "--out", str(tmp_path)]) == 1

    def test_delete_report(self, tmp_path, capsys, reset_logging):
        main.main(["audit", "--set", "model.small_coupling=true", "--set", "audit.probes=16", "--out", str(tmp_path)])
        capsys.readouterr()

        assert main.main(["delete-report", "--name", "audit", "--out", str(tmp_path)]) == 0
        assert "deleted" in capsys.readouterr().out
        assert not (tmp_path / "audit.report.json").exists()
        assert main.main(["delete-report", "--name", "audit", "--out", str(tmp_path)]) == 1
        assert main.main(["delete-report", "--name", "../audit", "--out", str(tmp_path)]) == 2
