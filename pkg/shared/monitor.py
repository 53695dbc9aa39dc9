"""Process resource figures for run summaries."""
from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Any, Dict, Optional

import psutil

from shared.logging_utils import get_logger

logger = get_logger("shared")


class RunMonitor:
    """Track elapsed time and process resources over one CLI run."""

    def __init__(self):
        self.process = psutil.Process()
        self.started = time.perf_counter()
        self.peak_rss_mb = 0.0
        # first call primes psutil's CPU counter
        self.process.cpu_percent(interval=None)
        self.sample()

    def sample(self) -> Dict[str, float]:
        try:
            mem = self.process.memory_info()
            memory_mb = mem.rss / (1024 * 1024)
            self.peak_rss_mb = max(self.peak_rss_mb, memory_mb)
            return {
                "memory_used_mb": memory_mb,
                "memory_percent": (mem.rss / psutil.virtual_memory().total) * 100,
                "num_threads": self.process.num_threads(),
            }
        except psutil.Error as e:
            logger.warning("resource sampling failed: %s", e)
            return {}

    def summary(self) -> Dict[str, Any]:
        current = self.sample()
        try:
            cpu_percent = self.process.cpu_percent(interval=None)
        except psutil.Error:
            cpu_percent = None
        return {
            "elapsed_seconds": round(time.perf_counter() - self.started, 3),
            "peak_rss_mb": round(self.peak_rss_mb, 2),
            "cpu_percent": cpu_percent,
            "num_threads": current.get("num_threads"),
        }


def write_run_summary(
    out_dir: Path,
    subcommand: str,
    monitor: RunMonitor,
    details: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write `<out_dir>/run_summary.json` (subcommand, inputs, outputs, resources)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"subcommand": subcommand, "resources": monitor.summary()}
    payload.update(details or {})
    path = out_dir / "run_summary.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path
