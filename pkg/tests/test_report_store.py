import json
import math

import numpy as np
import pytest

from .context import errors, report_store


class TestJSONReportStore:
    def test_csv_header_and_precision(self, tmp_path):
        store = report_store.JSONReportStore(tmp_path)
        path = store.write_csv("avg_rate", ("eps", "error", "flag"), [(0.1, 2, True)], "abc123", 7)

        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines == ["# config_sha256=abc123", "# seed=7", "eps,error,flag", "0.10000000000000001,2,true"]

    def test_series(self, tmp_path):
        store = report_store.JSONReportStore(tmp_path)
        path = store.write_series("rate_loglog", [0.0, 1.0], [0.5, 0.25], ("log_eps", "log_error"))

        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# log_eps log_error"
        assert lines[1:] == ["0 0.5", "1 0.25"]

    def test_report_round_trip(self, tmp_path):
        store = report_store.JSONReportStore(tmp_path)
        payload = {"values": np.array([1.0, 2.0]), "flag": np.bool_(True), "slope": math.inf, "count": np.int64(3)}
        store.save_report("avg-rate", payload)

        loaded = store.load_report("avg-rate")
        assert loaded == {"values": [1.0, 2.0], "flag": True, "slope": "inf", "count": 3}
        assert list(store.list_reports()) == ["avg-rate"]

        store.delete("avg-rate")
        assert store.load_report("avg-rate") is None
        assert list(store.list_reports()) == []

    def test_corrupt_report(self, tmp_path):
        store = report_store.JSONReportStore(tmp_path)
        (tmp_path / "broken.report.json").write_text("{", encoding="utf-8")

        assert store.load_report("broken") is None

    @pytest.mark.parametrize("name", ["../escape", "a/b", "a\\b", ""])
    def test_rejects_paths(self, tmp_path, name):
        store = report_store.JSONReportStore(tmp_path)
        with pytest.raises(errors.ConfigurationError):
            store.save_report(name, {})

    def test_resolved_config(self, tmp_path):
        store = report_store.JSONReportStore(tmp_path)
        store.save_config("run.seed = 0\n")

        assert (tmp_path / "resolved.conf").read_text(encoding="utf-8") == "run.seed = 0\n"

    def test_to_dict_objects(self, tmp_path):
        class Fit:
            def to_dict(self):
                return {"slope": np.float64(0.5)}

        store = report_store.JSONReportStore(tmp_path)
        path = store.save_report("fit", {"fit": Fit()})
        assert json.loads(path.read_text(encoding="utf-8")) == {"fit": {"slope": 0.5}}


class TestCreateReportStore:
    def test_empty_path_gives_null_store(self):
        store = report_store.create_report_store("")

        assert isinstance(store, report_store.NullReportStore)
        assert store.save_report("x", {}) is None
        assert store.load_report("x") is None
        assert list(store.list_reports()) == []

    def test_directory_is_created(self, tmp_path):
        target = tmp_path / "nested" / "out"
        store = report_store.create_report_store(str(target))

        assert isinstance(store, report_store.JSONReportStore)
        assert target.is_dir()
