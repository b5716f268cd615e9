"""Utility functions for the xmssca package."""

import logging
import os
import re
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Union

from .exceptions import ConfigError, StorageError

logger = logging.getLogger(__name__)

_DURATION_UNITS = {"ms": 1, "s": 1000, "m": 60_000, "h": 3_600_000, "d": 86_400_000}
_DURATION = re.compile(r"^([+-]?)(\d+)(ms|s|m|h|d)?$")


def atomic_write(path: Union[str, Path], data: bytes) -> None:
    """Durably replace ``path`` with ``data``.

    The bytes go to a temporary file in the same directory, which is flushed,
    fsynced and renamed over the target; the directory is fsynced afterwards.

    Args:
        path: Target file
        data: New contents

    Raises:
        StorageError: If any step fails; the old contents are then intact
    """
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
        fsync_directory(path.parent)
    except OSError as e:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        logger.error("atomic write of %s failed: %s", path, e)
        raise StorageError(f"Error writing {path}: {str(e)}") from e


def fsync_directory(directory: Union[str, Path]) -> None:
    """Flush a directory entry so a rename inside it survives a crash."""
    fd = os.open(str(directory), os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def parse_duration_ms(text: str) -> int:
    """Parse a signed duration such as ``+2d``, ``-90s``, ``238m`` or ``1500ms``.

    A bare number counts as seconds.

    Args:
        text: The duration string

    Returns:
        The duration in milliseconds

    Raises:
        ConfigError: If the string is not a duration
    """
    match = _DURATION.match(text.strip())
    if not match:
        raise ConfigError(f"Invalid duration: {text!r}")
    sign, amount, unit = match.groups()
    value = int(amount) * _DURATION_UNITS[unit or "s"]
    return -value if sign == "-" else value


def format_posix(seconds: int) -> str:
    """Render POSIX seconds as an ISO-8601 UTC timestamp."""
    return datetime.fromtimestamp(seconds, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_time_ms(text: str) -> int:
    """Parse POSIX seconds or an ISO-8601 UTC timestamp into milliseconds.

    Raises:
        ConfigError: If the string is neither
    """
    text = text.strip()
    if re.fullmatch(r"\d+", text):
        return int(text) * 1000
    try:
        parsed = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    except ValueError as e:
        raise ConfigError(f"Invalid time {text!r}: {str(e)}") from e
    return int(parsed.timestamp()) * 1000
