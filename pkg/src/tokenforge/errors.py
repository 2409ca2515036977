"""Exception hierarchy shared across the package.

Every error raised on a documented failure path derives from
:class:`TokenforgeError`, so callers (and the CLI) can distinguish domain
failures from programming bugs.
"""

from __future__ import annotations


class TokenforgeError(Exception):
    """Base class for all domain errors raised by this package."""


class UnrepresentableInput(TokenforgeError):
    """Text contains a character outside the vocabulary with no unknown symbol."""


class UnknownToken(TokenforgeError):
    """A token id falls outside the embedding table."""


class DimensionMismatch(TokenforgeError):
    """Two planes or grids that must share a shape do not."""


class ShapeError(TokenforgeError):
    """An array does not have the shape an operation requires."""


class PixelValueOverflow(TokenforgeError):
    """A record holds more entries than a 16-bit mask plane can address."""


class IoFailure(TokenforgeError):
    """A referenced file is missing, unreadable, or malformed."""


class EmptyCorpus(TokenforgeError):
    """An operation over a corpus received no records."""


class MissingField(TokenforgeError):
    """A record lacks a field the requested operation needs."""


class EmptyMask(TokenforgeError):
    """A pooling mask selects no cells."""


class EmptyBatch(TokenforgeError):
    """A loss was asked to average over zero pairs."""


class ZeroNorm(TokenforgeError):
    """A cosine similarity was requested against a zero vector."""


class NumericalFailure(TokenforgeError):
    """A numeric probe produced a non-finite value."""


class CorruptCheckpoint(TokenforgeError):
    """A checkpoint file failed magic, version, or manifest validation."""


class InvalidWeights(TokenforgeError):
    """Loss weights are negative or all zero."""


class UndefinedAP(TokenforgeError):
    """A retrieval query has no relevant gallery item."""


class DegenerateLabels(TokenforgeError):
    """A probe was asked to fit labels containing a single class."""


class SpecError(TokenforgeError):
    """A generator or config specification is internally inconsistent."""


class Diverged(TokenforgeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, checkpoint_path: str | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class BadImage(TokenforgeError):
    """An uploaded payload could not be decoded as an image."""
