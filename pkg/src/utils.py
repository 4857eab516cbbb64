"""Utility functions shared across the toolkit."""

import hashlib
import json
import logging
import os
import uuid
from datetime import datetime, timezone
from typing import Any, Dict, Optional

import numpy as np

logger = logging.getLogger("multiac6")


def get_correlation_id() -> str:
    """Generate a correlation ID for tracking one command or training run."""
    return str(uuid.uuid4())


def get_environment_variable(key: str, default: Optional[str] = None) -> str:
    """Get environment variable with error handling."""
    value = os.getenv(key, default)
    if value is None:
        raise ValueError(f"Environment variable {key} is required but not set")
    return value


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


def log_event(level: str, message: str, correlation_id: str, **kwargs: Any) -> None:
    """Log structured event with correlation ID."""
    log_data = {
        "correlation_id": correlation_id,
        "message": message,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        **kwargs
    }

    log_message = json.dumps(log_data, default=_json_default)

    if level.upper() == "ERROR":
        logger.error(log_message)
    elif level.upper() == "WARNING":
        logger.warning(log_message)
    elif level.upper() == "INFO":
        logger.info(log_message)
    else:
        logger.debug(log_message)


def create_summary(status: str, message: str, correlation_id: str, **kwargs: Any) -> Dict[str, Any]:
    """Create a standardized command summary dictionary."""
    return {
        "status": status,
        "correlation_id": correlation_id,
        "message": message,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        **kwargs
    }


def stable_hash(payload: Dict[str, Any], length: int = 16) -> str:
    """Hash a JSON-serializable mapping independently of key order."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:length]


def wrap_angles(angles: Any) -> np.ndarray:
    """Wrap angles (radians) into (-pi, pi]."""
    angles = np.asarray(angles, dtype=np.float64)
    wrapped = np.mod(angles + np.pi, 2.0 * np.pi) - np.pi
    # np.mod maps pi onto -pi; the interval is closed on the right
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    # in-range values pass through untouched so wrapping is idempotent
    return np.where((angles > -np.pi) & (angles <= np.pi), angles, wrapped)


def angle_difference(a: Any, b: Any) -> np.ndarray:
    """Shortest-arc difference a - b, component-wise, in (-pi, pi]."""
    return wrap_angles(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
