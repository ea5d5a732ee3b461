import logging
import sys
from typing import Optional, Union
from pathlib import Path

from blackbox_comm.core.config import settings


def setup_logger(name: str, level: Optional[Union[str, int]] = None) -> logging.Logger:
    """Setup logger with consistent formatting"""

    if level is None:
        level = settings.LOG_LEVEL
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Avoid duplicate handlers
    if logger.handlers:
        return logger

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)

    formatter = logging.Formatter(
        fmt='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if settings.LOG_TO_FILE:
        try:
            log_dir = Path(settings.LOG_DIR)
            log_dir.mkdir(exist_ok=True)

            file_handler = logging.FileHandler(log_dir / "bbcomm.log")
            file_handler.setLevel(level)
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)
        except OSError:
            # If file logging fails, continue with console only
            pass

    return logger


def set_level(level: Union[str, int]) -> None:
    """Change the level of every workbench logger already configured"""
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith("blackbox_comm") and isinstance(logger, logging.Logger):
            logger.setLevel(level)
            for handler in logger.handlers:
                handler.setLevel(level)
