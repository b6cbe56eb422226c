import logging
import os
import sys

LOG_FORMAT = '[%(asctime)s] [%(name)s] %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def setup_logger(name: str, level: str = None) -> logging.Logger:
    """
    Return the named toolkit logger, attaching one stdout handler on first use.

    The level defaults to INFO and can be raised for batch runs with the
    SHADOWBENCH_LOG_LEVEL environment variable (e.g. WARNING).
    """
    logger = logging.getLogger(name)

    if not logger.handlers:
        level = level or os.environ.get("SHADOWBENCH_LOG_LEVEL", "INFO")
        logger.setLevel(level.upper())

        # stdout so that the CLI and the Streamlit dashboard both capture it
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(handler)
        logger.propagate = False

    return logger
