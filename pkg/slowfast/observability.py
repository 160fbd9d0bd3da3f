from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from threading import Lock
from typing import Any, Dict, Optional

_RESERVED = set(vars(logging.makeLogRecord({})).keys()) | {"message", "asctime"}


class MetricsRecorder:
    """Collects lightweight run metrics and optionally persists them to disk."""

    def __init__(self, file_path: Optional[str] = None) -> None:
        self.file_path = Path(file_path) if file_path else None
        self._lock = Lock()
        self._data: Dict[str, Any] = {
            "runs": {},
            "simulations": {},
            "particle_steps": 0,
            "blow_ups": 0,
            "errors": {},
            "last_updated": None,
        }
        if self.file_path and self.file_path.exists():
            self._load_from_disk()

    def record_run(self, command: str, duration: float, exit_status: int) -> None:
        with self._lock:
            stats = self._data["runs"].setdefault(command, {"count": 0, "total_duration": 0.0, "failures": 0})
            stats["count"] += 1
            stats["total_duration"] += duration
            if exit_status != 0:
                stats["failures"] += 1
            self._persist()

    def record_simulation(self, process: str, steps: int, particles: int, duration: float) -> None:
        with self._lock:
            stats = self._data["simulations"].setdefault(process, {"count": 0, "total_duration": 0.0})
            stats["count"] += 1
            stats["total_duration"] += duration
            self._data["particle_steps"] += steps * particles
            self._persist()

    def record_error(self, kind: str) -> None:
        with self._lock:
            errors = self._data["errors"]
            errors[kind] = errors.get(kind, 0) + 1
            if kind == "blow_up":
                self._data["blow_ups"] += 1
            self._persist()

    def snapshot(self) -> Dict[str, Any]:
        with self._lock:
            return json.loads(json.dumps(self._data))

    def _persist(self) -> None:
        self._data["last_updated"] = time.time()
        if not self.file_path:
            return

        self.file_path.parent.mkdir(parents=True, exist_ok=True)
        with self.file_path.open("w", encoding="utf-8") as handler:
            json.dump(self._data, handler, ensure_ascii=False, indent=2)

    def _load_from_disk(self) -> None:
        try:
            with self.file_path.open("r", encoding="utf-8") as handler:
                payload = json.load(handler)
        except json.JSONDecodeError:
            return
        if isinstance(payload, dict):
            self._data.update(payload)

    @classmethod
    def from_file(cls, file_path: Optional[str]) -> "MetricsRecorder":
        return cls(file_path=file_path)


class JsonLinesFormatter(logging.Formatter):
    """One JSON object per record, carrying the ``extra`` fields."""

    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "ts": record.created,
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key, value in vars(record).items():
            if key not in _RESERVED and not key.startswith("_"):
                payload[key] = value if isinstance(value, (int, float, str, bool, type(None), list, dict)) else repr(value)
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False, default=repr)


def configure_logging(level: str = "INFO", log_file: Optional[Path] = None) -> None:
    root = logging.getLogger()
    root.setLevel(level.upper())
    for handler in list(root.handlers):
        if getattr(handler, "_slowfast", False):
            root.removeHandler(handler)
            handler.close()
    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    console._slowfast = True  # type: ignore[attr-defined]
    root.addHandler(console)
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        structured = logging.FileHandler(log_file, encoding="utf-8")
        structured.setFormatter(JsonLinesFormatter())
        structured._slowfast = True  # type: ignore[attr-defined]
        root.addHandler(structured)
