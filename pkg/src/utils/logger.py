"""
Logging configuration for the expected-exposure toolkit.
Provides file and console logging with rotation.
"""

import os
import logging
from logging.handlers import RotatingFileHandler
from typing import Optional

from config.settings import LOGS_DIR


def ensure_logs_dir():
    """Ensure the logs directory exists."""
    if not os.path.exists(LOGS_DIR):
        os.makedirs(LOGS_DIR, exist_ok=True)


def get_logger(name: str, log_file: Optional[str] = None) -> logging.Logger:
    """
    Get a configured logger instance.

    Args:
        name: Logger name (usually component name)
        log_file: Optional log file name (without path)

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(name)

    # Only configure if not already configured
    if not logger.handlers:
        logger.setLevel(logging.DEBUG)

        formatter = logging.Formatter(
            '%(asctime)s | %(name)s | %(levelname)s | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

        if log_file:
            ensure_logs_dir()
            file_path = os.path.join(LOGS_DIR, log_file)
            file_handler = RotatingFileHandler(
                file_path,
                maxBytes=10*1024*1024,  # 10MB
                backupCount=5
            )
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

    return logger


# Pre-configured loggers for each component
def get_exposure_logger():
    return get_logger("exposure", "exposure.log")


def get_policy_logger():
    return get_logger("policies", "policies.log")


def get_metrics_logger():
    return get_logger("metrics", "metrics.log")


def get_io_logger():
    return get_logger("data_io", "data_io.log")


def get_training_logger():
    return get_logger("training", "training.log")


def get_main_logger():
    return get_logger("main", "main.log")
