from __future__ import annotations

from typing import Sequence, Tuple


class SlotSSMError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(SlotSSMError):
    def __init__(self, op: str, *shapes: Sequence[int], detail: str = "") -> None:
        self.op = op
        self.shapes: Tuple[Tuple[int, ...], ...] = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {joined}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NonFiniteError(SlotSSMError):
    def __init__(self, op: str, where: str = "forward") -> None:
        self.op = op
        self.where = where
        super().__init__(f"{op}: non-finite values in {where} pass")


class GraphError(SlotSSMError):
    pass


class DomainError(SlotSSMError):
    """Argument outside the mathematical domain of an operation."""


class LabelRangeError(SlotSSMError):
    pass


class ConfigError(SlotSSMError):
    pass


class DatasetFormatError(SlotSSMError):
    pass


class CheckpointError(SlotSSMError):
    pass


class InfeasiblePackingError(SlotSSMError):
    pass


class SequenceTooLongError(SlotSSMError):
    def __init__(self, length: int, cap: int) -> None:
        self.length = length
        self.cap = cap
        super().__init__(f"sequence of {length} slot tokens exceeds the attention cap of {cap}")


class NonDeterministicError(SlotSSMError):
    pass


class TrainingDivergedError(SlotSSMError):
    def __init__(self, step: int, detail: str) -> None:
        self.step = step
        super().__init__(f"training diverged at step {step}: {detail}")
