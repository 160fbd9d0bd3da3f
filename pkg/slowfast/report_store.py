from __future__ import annotations

import csv
import json
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError

REPORT_SUFFIX = ".report.json"


def format_value(value: Any) -> str:
    """17 significant digits for floats; integers and strings as they are."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        if number != number or number in (float("inf"), float("-inf")):
            return repr(number)
        return number
    if hasattr(value, "to_dict"):
        return _jsonable(value.to_dict())
    return value


class BaseReportStore(ABC):
    """Interface for the artifacts a run leaves behind."""

    @abstractmethod
    def save_report(self, name: str, payload: Dict[str, Any]) -> Optional[Path]:
        raise NotImplementedError

    @abstractmethod
    def load_report(self, name: str) -> Optional[Dict[str, Any]]:
        raise NotImplementedError

    @abstractmethod
    def write_csv(
        self,
        name: str,
        columns: Sequence[str],
        rows: Iterable[Sequence[Any]],
        config_digest: str,
        seed: int,
    ) -> Optional[Path]:
        raise NotImplementedError

    @abstractmethod
    def write_series(self, name: str, x: Sequence[float], y: Sequence[float], labels: Sequence[str] = ("x", "y")) -> Optional[Path]:
        raise NotImplementedError

    @abstractmethod
    def save_config(self, text: str) -> Optional[Path]:
        raise NotImplementedError

    @abstractmethod
    def delete(self, name: str) -> None:
        raise NotImplementedError

    @abstractmethod
    def list_reports(self) -> Iterable[str]:
        raise NotImplementedError


class NullReportStore(BaseReportStore):
    """No-op store used when nothing should touch the disk."""

    def save_report(self, name: str, payload: Dict[str, Any]) -> Optional[Path]:
        return None

    def load_report(self, name: str) -> Optional[Dict[str, Any]]:
        return None

    def write_csv(self, name, columns, rows, config_digest, seed) -> Optional[Path]:
        return None

    def write_series(self, name, x, y, labels=("x", "y")) -> Optional[Path]:
        return None

    def save_config(self, text: str) -> Optional[Path]:
        return None

    def delete(self, name: str) -> None:
        return

    def list_reports(self) -> Iterable[str]:
        return []


class JSONReportStore(BaseReportStore):
    """Writes reports, tables and plot data under a single output directory."""

    def __init__(self, base_path: Path) -> None:
        self.base_path = base_path
        self.base_path.mkdir(parents=True, exist_ok=True)

    def _file_for(self, name: str, suffix: str) -> Path:
        if not name or "/" in name or "\\" in name or ".." in name or Path(name).name != name:
            raise ConfigurationError("artifact names must be bare file names", details={"name": name})
        return self.base_path / f"{name}{suffix}"

    def save_report(self, name: str, payload: Dict[str, Any]) -> Optional[Path]:
        file_path = self._file_for(name, REPORT_SUFFIX)
        with file_path.open("w", encoding="utf-8") as handler:
            json.dump(_jsonable(payload), handler, ensure_ascii=False, indent=2)
            handler.write("\n")
        return file_path

    def load_report(self, name: str) -> Optional[Dict[str, Any]]:
        file_path = self._file_for(name, REPORT_SUFFIX)
        if not file_path.exists():
            return None
        try:
            with file_path.open("r", encoding="utf-8") as handler:
                return json.load(handler)
        except json.JSONDecodeError:
            return None

    def write_csv(self, name, columns, rows, config_digest, seed) -> Optional[Path]:
        file_path = self._file_for(name, ".csv")
        with file_path.open("w", encoding="utf-8", newline="") as handler:
            handler.write(f"# config_sha256={config_digest}\n")
            handler.write(f"# seed={seed}\n")
            writer = csv.writer(handler, lineterminator="\n")
            writer.writerow(list(columns))
            for row in rows:
                writer.writerow([format_value(value) for value in row])
        return file_path

    def write_series(self, name, x, y, labels=("x", "y")) -> Optional[Path]:
        file_path = self._file_for(name, ".dat")
        with file_path.open("w", encoding="utf-8") as handler:
            handler.write(f"# {labels[0]} {labels[1]}\n")
            for left, right in zip(x, y):
                handler.write(f"{format_value(float(left))} {format_value(float(right))}\n")
        return file_path

    def save_config(self, text: str) -> Optional[Path]:
        file_path = self._file_for("resolved", ".conf")
        file_path.write_text(text, encoding="utf-8")
        return file_path

    def delete(self, name: str) -> None:
        self._file_for(name, REPORT_SUFFIX).unlink(missing_ok=True)

    def list_reports(self) -> Iterable[str]:
        for file_path in sorted(self.base_path.glob(f"*{REPORT_SUFFIX}")):
            yield file_path.name[: -len(REPORT_SUFFIX)]


def create_report_store(path: Optional[str]) -> BaseReportStore:
    if not path:
        return NullReportStore()
    return JSONReportStore(Path(path))
