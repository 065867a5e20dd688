"""
Adapters for logging operations.
"""
import logging
import os
from typing import Optional

from src.domain.ports import ILogger

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class PythonLogger(ILogger):
    """
    Logger adapter over the standard logging module.

    Records propagate to the root handlers configured by the CLI. A console
    handler is attached only when nothing upstream would print them, and
    log_file additionally tees every record of a run to disk.
    """

    def __init__(self, name: str = "rotor-splatting", level: str = "INFO", log_file: Optional[str] = None):
        self.logger = logging.getLogger(name)
        numeric_level = logging.getLevelName(level.upper())
        if not isinstance(numeric_level, int):
            numeric_level = logging.INFO
        self.logger.setLevel(numeric_level)
        formatter = logging.Formatter(LOG_FORMAT)

        if not self.logger.handlers and not logging.getLogger().handlers:
            handler = logging.StreamHandler()
            handler.setFormatter(formatter)
            self.logger.addHandler(handler)

        self.log_file = log_file
        if log_file:
            directory = os.path.dirname(log_file)
            if directory:
                os.makedirs(directory, exist_ok=True)
            path = os.path.abspath(log_file)
            known = [h for h in self.logger.handlers if isinstance(h, logging.FileHandler)]
            if not any(h.baseFilename == path for h in known):
                file_handler = logging.FileHandler(path)
                file_handler.setFormatter(formatter)
                self.logger.addHandler(file_handler)

    def info(self, message: str):
        self.logger.info(message)

    def warning(self, message: str):
        self.logger.warning(message)

    def error(self, message: str, exception: Exception = None):
        if exception:
            self.logger.error(f"{message}: {exception}", exc_info=exception)
        else:
            self.logger.error(message)

    def debug(self, message: str):
        self.logger.debug(message)
