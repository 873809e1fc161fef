"""Exception hierarchy for the semantic index engine.

Library code raises these; only the CLI catches SemIndexError at the top.
"""
from typing import Optional


class SemIndexError(Exception):
    """Root of every engine error."""


class ConfigError(SemIndexError):
    pass


# --- embedding store ---

class EmptyFrameListError(SemIndexError):
    pass


class DimMismatchError(SemIndexError):
    pass


class NonFiniteValueError(SemIndexError):
    pass


class BadMagicError(SemIndexError):
    pass


class DuplicateItemIdError(SemIndexError):
    pass


class TruncatedFileError(SemIndexError):
    pass


class IoFailureError(SemIndexError):
    pass


# --- semantic tree ---

class EmptyInputError(SemIndexError):
    pass


class NonUnitInputError(SemIndexError):
    pass


class UnknownItemError(SemIndexError):
    pass


class TruncationTooDeepError(SemIndexError):
    pass


class CorruptTreeError(SemIndexError):
    pass


# --- query corpus ---

class ParseError(SemIndexError):
    """A query file line could not be parsed. Carries the 1-based line number."""

    def __init__(self, line: int, reason: str, path: Optional[str] = None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")


class NoValidPairsError(SemIndexError):
    pass


class InfeasibleSeparationError(SemIndexError):
    pass


# --- seq2seq model ---

class TokenOutOfRangeError(SemIndexError):
    pass


class PrefixLengthMismatchError(SemIndexError):
    pass


class PositionOutOfRangeError(SemIndexError):
    pass


class InvalidSemIdError(SemIndexError):
    pass


class EmptyBatchError(SemIndexError):
    pass


class NonFiniteLossError(SemIndexError):
    pass


class DivergedLossError(SemIndexError):
    pass


# --- decoding / pipeline ---

class EmptyTrieError(SemIndexError):
    pass


class StateMismatchError(SemIndexError):
    pass


class MissingGroundTruthError(SemIndexError):
    pass
