"""
Loguru-based centralized logging.
Import the shared `logger` from here; call enable_file_logging() once per
process when a rotating log file is wanted (the CLI does this).
"""

import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from drbn.config.settings import file_settings, log_settings

_CONSOLE_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{line}</cyan> - {message}"
)
_FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} - {message}"

_file_sink_id: Optional[int] = None

logger.remove()
logger.add(sys.stderr, level=log_settings.LEVEL, format=_CONSOLE_FORMAT)


def set_console_level(level: str) -> None:
    """Replace the stderr sink with one at `level` (e.g. DEBUG for --verbose)."""
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format=_CONSOLE_FORMAT)
    global _file_sink_id
    _file_sink_id = None


def enable_file_logging(log_dir: Optional[Path] = None) -> Path:
    """Attach a rotating file sink; idempotent within a process."""
    global _file_sink_id
    target_dir = Path(log_dir) if log_dir else file_settings.LOG_DIR
    target_dir.mkdir(parents=True, exist_ok=True)
    log_path = target_dir / "drbn.log"
    if _file_sink_id is None:
        _file_sink_id = logger.add(
            str(log_path),
            level=log_settings.LEVEL,
            format=_FILE_FORMAT,
            rotation=log_settings.ROTATION,
            retention=log_settings.RETENTION,
            enqueue=False,
        )
    return log_path


__all__ = ["logger", "enable_file_logging", "set_console_level"]
