"""Error taxonomy shared by every layer.

Each error carries a stable ``code`` (the class name) so it can cross the
wire inside an Error frame and be re-raised as the same type on the client.
"""

from __future__ import annotations


class HEError(Exception):
    """Base class for all library errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# ring
class DomainMismatch(HEError):
    pass


class ParamMismatch(HEError):
    pass


# scheme
class LevelExhausted(HEError):
    pass


class LevelMismatch(HEError):
    pass


class ScaleMismatch(HEError):
    pass


class ScaleOverflow(HEError):
    pass


class TooManyValues(HEError):
    pass


class InvalidRotationStep(HEError):
    pass


class MissingKey(HEError):
    pass


class MissingGaloisKey(MissingKey):
    pass


# backend / context
class BackendMismatch(HEError):
    pass


class InvalidParams(HEError):
    pass


class InvalidWorkerCount(HEError):
    pass


# tensors
class TooLong(TooManyValues):
    pass


class ShapeMismatch(HEError):
    pass


class ZeroExponent(HEError):
    pass


class EmptyCoeffs(HEError):
    pass


class ReplicationExhausted(HEError):
    pass


class LayoutMismatch(HEError):
    pass


# nn
class ShapeError(ShapeMismatch):
    pass


class ParseError(HEError):
    pass


# wire
class WireError(HEError):
    pass


class BadMagic(WireError):
    pass


class BadChecksum(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class Truncated(WireError):
    pass


class TransportError(HEError):
    pass


# cli
class ShapeTooLarge(HEError):
    pass


class IoError(HEError):
    pass


def by_code(code: str) -> type[HEError]:
    """Look up an error class by its code; unknown codes map to HEError."""
    cls = globals().get(code)
    if isinstance(cls, type) and issubclass(cls, HEError):
        return cls
    return HEError
