"""
Exception hierarchy shared by the numerics engine, trainer and CLI.
"""
from typing import Any, Optional, Sequence


class LabError(Exception):
    """Base class for every error raised by the library."""


class ShapeError(LabError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: shape mismatch {shown}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class IndexRangeError(LabError):
    """An index falls outside the valid extent."""

    def __init__(self, op: str, index: int, extent: int):
        self.op = op
        self.index = index
        self.extent = extent
        super().__init__(f"{op}: index {index} out of range for extent {extent}")


class NonFiniteError(LabError):
    """A produced value contains NaN or Inf."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: produced non-finite values")


class GraphError(LabError):
    """Invalid computation graph usage (non-scalar root, cycle, unknown node)."""


class ConfigFileError(LabError):
    """A config file or override could not be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class TrainingDivergenceError(LabError):
    """Training produced a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, iteration: int, snapshot: dict[str, Any], reason: str = "non-finite loss"):
        self.iteration = iteration
        self.snapshot = snapshot
        self.reason = reason
        super().__init__(f"training diverged at iteration {iteration}: {reason} {snapshot}")


class CheckpointError(LabError):
    """A checkpoint file is malformed or does not match the model."""


class UnknownKindError(LabError, ValueError):
    """A loss, conditioning or experiment kind is not recognised."""

    def __init__(self, family: str, kind: object):
        self.family = family
        self.kind = kind
        super().__init__(f"unknown {family} kind: {kind!r}")
