"""Logger setup used by every package (same handler/formatter everywhere)."""
from __future__ import annotations

import logging
from pathlib import Path

from shared.config import CONFIG

_FORMAT = "[%(asctime)s] %(levelname)s in %(module)s: %(message)s"


def get_logger(name: str) -> logging.Logger:
    """Return the `trackreid.<name>` logger, attaching a stream handler once."""
    logger = logging.getLogger(f"trackreid.{name}")
    root = logging.getLogger("trackreid")
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        root.addHandler(handler)
        root.setLevel(getattr(logging, CONFIG.log_level.upper(), logging.INFO))
    return logger


def attach_run_log(run_dir: Path) -> logging.Handler:
    """Mirror all trackreid log records into `<run_dir>/run.log`."""
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter(_FORMAT))
    logging.getLogger("trackreid").addHandler(handler)
    return handler


def detach_handler(handler: logging.Handler) -> None:
    logging.getLogger("trackreid").removeHandler(handler)
    handler.close()
