"""Exception and warning types shared across the package."""

from __future__ import annotations


class MetaEmbedError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MetaEmbedError):
    """Invalid input: bad shapes, values out of contract, unresolved IDs."""


class FileFormatError(ValidationError):
    """A file does not follow its declared format.

    Carries the path and (1-based) line number where parsing failed so
    command-line users can jump straight to the offending line.
    """

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class NotPositiveDefiniteError(MetaEmbedError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot_index: int, pivot_value: float):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(
            "matrix is not positive definite: "
            f"pivot {pivot_index} is {pivot_value:.6g}"
        )


class ConvergenceError(MetaEmbedError):
    """An iterative backend factorization failed to converge."""


class NonFiniteLossError(MetaEmbedError):
    """Training produced a NaN or infinite loss; carries 1-based epoch/batch indices."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"non-finite training loss {loss!r} at epoch {epoch}, batch {batch}"
        )


class ZeroRowWarning(UserWarning):
    """A zero row was passed through a normalization step unchanged."""
