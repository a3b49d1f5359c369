"""Exception types shared across the package."""

from __future__ import annotations


class StepPruneError(Exception):
    """Base class for all package-specific errors."""


class JsonLineError(StepPruneError):
    """A JSONL line could not be parsed. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(JsonLineError):
    """A record is missing or misusing a required field."""

    def __init__(self, message: str, line: int, field: str):
        super().__init__(message, line)
        self.field = field


class StructureError(StepPruneError):
    """A block sequence does not form a well-formed trajectory context."""


class ScoringError(StepPruneError):
    """A scorer failed on a specific step."""


class ArtifactError(StepPruneError):
    """A portable scorer artifact is missing, corrupt, or incompatible."""


class PairingError(StepPruneError):
    """Two log sets that must cover identical task ids do not."""
