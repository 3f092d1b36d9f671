import json
import logging
import math
import sys
from collections import deque
from pathlib import Path
from typing import Any


def setup_logging(log_level: str):
    """Setup logging configuration.

    Args:
        log_level: Log level (DEBUG, INFO, WARNING, ERROR)
    """
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


class StepLogger:
    """Writes one JSON object per training step to a .jsonl file and the log."""

    def __init__(self, path: Path | None, every: int = 1, name: str = "uwkit.train", keep: int = 100):
        self.path = Path(path) if path else None
        self.every = max(1, every)
        self._logger = logging.getLogger(name)
        # Only the most recent records stay in memory; the .jsonl file has the full run.
        self.records: deque[dict[str, Any]] = deque(maxlen=max(1, keep))
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, record: dict[str, Any]):
        self.records.append(record)
        line = json.dumps(_json_safe(record), sort_keys=True)
        if self.path:
            with open(self.path, "a") as f:
                f.write(line + "\n")
        if record.get("step", 0) % self.every == 0:
            self._logger.info(line)
