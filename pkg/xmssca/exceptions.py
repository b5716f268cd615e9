"""Custom exceptions for the xmssca package."""

from typing import Any, Optional

class XmssCaError(Exception):
    """Base exception for all xmssca errors."""
    pass

class ConfigError(XmssCaError):
    """Exception raised for invalid configuration values or files."""
    pass

class ParameterError(XmssCaError):
    """Exception raised for unsupported XMSS parameter sets."""
    pass

class IndexRangeError(XmssCaError):
    """Exception raised when an XMSS or schedule index is out of range."""
    pass

class KeyStoreError(XmssCaError):
    """Base exception for key-state store errors."""
    pass

class KeyExhaustedError(KeyStoreError):
    """Exception raised when every one-time key of the tree has been reserved."""
    pass

class DoubleSignError(KeyStoreError):
    """Exception raised when an index would be passed to the signer a second time."""
    pass

class ProtocolMisuseError(KeyStoreError):
    """Exception raised when signing with an index that was never reserved."""
    pass

class StoreLockedError(KeyStoreError):
    """Exception raised when another handle already holds the store lock."""
    pass

class StorageError(KeyStoreError):
    """Exception raised when persisting state to disk fails."""
    pass

class IntegrityError(KeyStoreError):
    """Exception raised when a key-state file fails its integrity check."""
    pass

class ScheduleFormatError(XmssCaError):
    """Exception raised for malformed schedule files."""
    pass

class ScheduleMismatchError(XmssCaError):
    """Exception raised when an index disagrees with the schedule.

    The ``report`` attribute carries the structured mismatch description.
    """

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report

class ScheduleRejectedError(XmssCaError):
    """Exception raised when a trust store refuses a schedule."""

    def __init__(self, message: str, reason: str):
        super().__init__(message)
        self.reason = reason

class CertificateParseError(XmssCaError):
    """Exception raised for malformed or unsupported certificate encodings."""

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at byte {position})")
        self.position = position

class EngineStateError(XmssCaError):
    """Exception raised when a CA operation does not fit the engine phase."""
    pass

class TimeSourceError(XmssCaError):
    """Exception raised by time sources that fail to produce a sample."""
    pass

class ScenarioError(XmssCaError):
    """Exception raised for invalid scenario scripts."""
    pass

class TrustAnchorError(XmssCaError):
    """Exception raised when a CA certificate cannot serve as trust anchor."""
    pass
