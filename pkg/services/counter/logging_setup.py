"""
Loguru sink configuration for the CLI and the training loop.
"""

import sys
from pathlib import Path
from typing import List, Optional, Union

from loguru import logger

CONSOLE_FORMAT = "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <level>{message}</level>"
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} | {message}"


def configure_logging(level: str = "INFO", log_file: Optional[Union[str, Path]] = None) -> List[int]:
    """Replace the default sink with a stderr sink and an optional file sink; returns sink ids"""
    logger.remove()
    sinks = [logger.add(sys.stderr, level=level.upper(), format=CONSOLE_FORMAT)]
    if log_file is not None:
        sinks.append(add_file_sink(log_file))
    return sinks


def add_file_sink(log_file: Union[str, Path], level: str = "DEBUG") -> int:
    return logger.add(str(log_file), level=level, format=FILE_FORMAT, encoding="utf-8")
