"""
Logging Configuration for the UCK toolkit

This module provides centralized logging configuration with:
- Rotating file handlers for general and error logs
- Daily debug log when debugging
- Console output through the simple formatter
"""

import logging
import os
from logging.handlers import RotatingFileHandler, TimedRotatingFileHandler

ROOT_LOGGER = 'uck'

DETAILED_FORMAT = '[%(asctime)s] %(levelname)s in %(module)s (%(filename)s:%(lineno)d): %(message)s'
SIMPLE_FORMAT = '[%(asctime)s] %(levelname)s: %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def _resolve_level(config):
    if getattr(config, 'LOG_LEVEL', None):
        level = logging.getLevelName(str(config.LOG_LEVEL).upper())
        if isinstance(level, int):
            return level
    if getattr(config, 'DEBUG', False):
        return logging.DEBUG
    if getattr(config, 'TESTING', False):
        return logging.WARNING
    return logging.INFO


def setup_logging(config):
    """
    Configure the `uck` logger tree for one process.

    Args:
        config: Configuration class from config.py

    Returns:
        logging.Logger: The configured package logger
    """
    logger = logging.getLogger(ROOT_LOGGER)
    log_level = _resolve_level(config)

    # Remove handlers from a previous setup in the same process
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.propagate = False

    detailed_formatter = logging.Formatter(DETAILED_FORMAT, datefmt=DATE_FORMAT)
    simple_formatter = logging.Formatter(SIMPLE_FORMAT, datefmt=DATE_FORMAT)

    if getattr(config, 'LOG_TO_FILES', True):
        log_dir = config.LOG_DIR
        os.makedirs(log_dir, exist_ok=True)

        # 1. General log (INFO and above), rotating by size
        app_handler = RotatingFileHandler(
            os.path.join(log_dir, 'app.log'),
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=10
        )
        app_handler.setLevel(logging.INFO)
        app_handler.setFormatter(detailed_formatter)
        logger.addHandler(app_handler)

        # 2. Error log (ERROR and above), rotating by size
        error_handler = RotatingFileHandler(
            os.path.join(log_dir, 'errors.log'),
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=20
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(detailed_formatter)
        logger.addHandler(error_handler)

        # 3. Debug log, daily rotation, only when debugging
        if getattr(config, 'DEBUG', False):
            debug_handler = TimedRotatingFileHandler(
                os.path.join(log_dir, 'debug.log'),
                when='midnight',
                interval=1,
                backupCount=7
            )
            debug_handler.setLevel(logging.DEBUG)
            debug_handler.setFormatter(detailed_formatter)
            logger.addHandler(debug_handler)

    # 4. Console handler on stderr so command output on stdout stays clean
    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_handler.setFormatter(simple_formatter)
    logger.addHandler(console_handler)

    logger.setLevel(log_level)

    logger.info('=' * 80)
    logger.info('UCK toolkit starting')
    logger.info(f'Environment: {getattr(config, "ENV_NAME", "desk")}')
    logger.info(f'Debug Mode: {getattr(config, "DEBUG", False)}')
    logger.info(f'Log Level: {logging.getLevelName(log_level)}')
    logger.info(f'Output root: {getattr(config, "OUTPUT_ROOT", "runs")}')
    logger.info('=' * 80)
    return logger


def get_logger(name):
    """
    Get a logger instance for a specific module.

    Args:
        name: Name of the module (typically __name__)

    Returns:
        logging.Logger: Logger under the package hierarchy
    """
    return logging.getLogger(name)
