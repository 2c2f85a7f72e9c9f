"""Exception types raised by the package."""

from __future__ import annotations


class InfohhError(Exception):
    """Base class for all package errors."""


class ConfigurationError(InfohhError, ValueError):
    """A parameter is outside its allowed range."""


class IncompatibleSketchError(InfohhError, ValueError):
    """Two sketches with different precision or hash seed were combined."""


class QnameError(InfohhError, ValueError):
    """A DNS query name is malformed."""

    def __init__(self, qname: str, reason: str) -> None:
        super().__init__(f"malformed qname {qname!r}: {reason}")
        self.qname = qname
        self.reason = reason


class SnapshotError(InfohhError, ValueError):
    """A checkpoint image cannot be decoded."""
