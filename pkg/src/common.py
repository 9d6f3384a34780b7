import logging
import sys
import os
from typing import Any, List, Optional


def setup_logger(app_name: str) -> logging.Logger:
    """Set up a logger with an app-specific prefix on stdout."""
    logger = logging.getLogger(app_name.lower())
    logger.handlers.clear()  # Clear any existing handlers
    logger.propagate = False

    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter(f"{app_name}:%(levelname)s:%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(os.getenv(f"{app_name.upper()}_LOG_LEVEL", "INFO").upper())

    return logger


def log_banner(logger: logging.Logger, title: str, lines: List[str]):
    """Log a framed configuration block."""
    logger.info("=" * 50)
    logger.info(f"{title:^50}")
    logger.info("=" * 50)
    for line in lines:
        logger.info(f"→ {line}")
    logger.info("=" * 50)


def env_str(app_name: str, key: str, default: str) -> str:
    return os.getenv(f"{app_name.upper()}_{key}", default)


def env_int(app_name: str, key: str, default: int) -> int:
    return int(env_str(app_name, key, str(default)))


def env_float(app_name: str, key: str, default: float) -> float:
    return float(env_str(app_name, key, repr(default)))


def env_list(app_name: str, key: str, default: str) -> List[str]:
    """Comma separated env value, empty entries skipped"""
    return [item.strip() for item in env_str(app_name, key, default).split(",") if item.strip()]


# Exit codes of the command line tools
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class SolverError(Exception):
    """Base error carrying a process status code and a detail payload."""

    def __init__(self, status_code: int = EXIT_NUMERICAL, detail: Any = None):
        self.status_code = status_code
        self.detail = detail
        super().__init__(f"{self.__class__.__name__}: {detail}")


class DimensionError(SolverError):
    def __init__(self, expected: int, got: int, what: str = "operand"):
        super().__init__(detail=f"dimension mismatch for {what}: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class IndexRangeError(SolverError):
    pass


class SingularBlockError(SolverError):
    def __init__(self, block_id: Any, pivot: float):
        super().__init__(detail=f"singular block {block_id}: pivot {pivot:.3e}")
        self.block_id = block_id


class MeshError(SolverError):
    pass


class AssemblyError(SolverError):
    pass


class RelaxationError(SolverError):
    pass


class PointLocationError(SolverError):
    def __init__(self, point, detail: Optional[str] = None):
        x, y = float(point[0]), float(point[1])
        super().__init__(detail=detail or f"node ({x:.16g}, {y:.16g}) lies outside all candidate coarse cells")
        self.point = (x, y)


class IndefinitePreconditionerError(SolverError):
    def __init__(self, iteration: int, value: float):
        super().__init__(detail=f"<z, r> = {value:.3e} <= 0 at iteration {iteration}")
        self.iteration = iteration


class ConfigError(SolverError):
    def __init__(self, detail: Any):
        super().__init__(status_code=EXIT_CONFIG, detail=detail)


class OutputError(SolverError):
    pass
