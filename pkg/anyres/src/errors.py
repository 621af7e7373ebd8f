"""Exception types shared across the any-resolution pipeline."""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class EmptyDatasetError(InvalidArgumentError):
    """A directory or manifest subset has no usable images."""


class CheckpointError(RuntimeError):
    """A checkpoint file cannot be read."""


class CheckpointVersionError(CheckpointError):
    def __init__(self, found: int, expected: int) -> None:
        super().__init__(
            f"checkpoint format version {found} is not supported "
            f"(expected version {expected})"
        )
        self.found = found
        self.expected = expected


class NumericalAbortError(RuntimeError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, step: int, term: str, value: float) -> None:
        super().__init__(f"non-finite {term} at step {step}: {value}")
        self.step = step
        self.term = term
        self.value = value
