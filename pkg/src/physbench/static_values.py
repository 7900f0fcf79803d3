"""
Constants shared across the benchmark, plus the logger factory
kept free of package imports to prevent circular imports
"""

import logging
import sys
from logging import FileHandler, StreamHandler
from os import environ

# environment variables read by the CLI
CONFIG_ENV_VAR: str = 'PHYSBENCH_CONFIG'
WORKERS_ENV_VAR: str = 'PHYSBENCH_WORKERS'
LOG_LEVEL_ENV_VAR: str = 'PHYSBENCH_LOG_LEVEL'

# condition number above which a mass matrix is treated as singular
MAX_CONDITION: float = 1e12

# ridge added to a learned velocity Hessian before solving for accelerations
LNN_REGULARISATION: float = 1e-6

# ground truth integration tolerances, learned rollouts default to the IntegratorConfig values
TRUTH_RTOL: float = 1e-10
TRUTH_ATOL: float = 1e-10

# CLI exit codes
EXIT_OK: int = 0
EXIT_USAGE: int = 1
EXIT_RUNTIME: int = 2

LOGGER = None


def get_logger(
    logger_name: str = 'physbench-logger',
    log_level: int | None = None,
    file_out: str | None = None,
) -> logging.Logger:
    """
    creates a logger instance (so as not to use the root logger)
    either logs to file or stream (exclusive)

    Args:
        logger_name (str):
        log_level (int): log level to use, falls back to $PHYSBENCH_LOG_LEVEL, then INFO
        file_out (str): if required, add a filehandler for logging output

    Returns:
        a logger instance, or the global logger if already defined
    """
    global LOGGER

    if LOGGER is None:
        if log_level is None:
            log_level = logging.getLevelName(environ.get(LOG_LEVEL_ENV_VAR, 'INFO').upper())
            if not isinstance(log_level, int):
                log_level = logging.INFO

        LOGGER = logging.getLogger(logger_name)
        LOGGER.setLevel(log_level)

        # benchmark runs write their progress to stdout unless a log file is requested
        handler: FileHandler | StreamHandler = (
            logging.FileHandler(file_out) if file_out else logging.StreamHandler(sys.stdout)
        )
        handler.setLevel(log_level)
        handler.setFormatter(
            logging.Formatter('%(asctime)s - %(filename)s:%(funcName)s %(lineno)d - %(levelname)s - %(message)s'),
        )
        LOGGER.addHandler(handler)

    return LOGGER


def get_worker_count(default: int = 1) -> int:
    """
    number of worker processes for parallel trajectory generation and benchmark presets
    $PHYSBENCH_WORKERS wins over the supplied default, values below 1 are clamped to 1
    """
    raw = environ.get(WORKERS_ENV_VAR)
    if raw is None:
        return max(1, default)
    try:
        return max(1, int(raw))
    except ValueError:
        get_logger().warning(f'Ignoring non-integer {WORKERS_ENV_VAR}={raw!r}')
        return max(1, default)
