"""Exception hierarchy shared by every stage of the pipeline.

Each class carries the process exit code the CLI reports for it:
``1`` for internal or numerical failures, ``2`` for usage or input errors.
"""

from __future__ import annotations

from typing import Any, Optional, Sequence


class ReliefError(Exception):
    """Base class for all pipeline failures (numerical by default)."""

    exit_code = 1


class InputError(ReliefError):
    """The caller supplied something unusable."""

    exit_code = 2


# ---------------------------------------------------------------------------
# Input / usage errors
# ---------------------------------------------------------------------------


class DimensionMismatchError(InputError):
    pass


class ConfigError(InputError):
    pass


class MissingPathError(InputError):
    def __init__(self, path: Any, what: str = "path") -> None:
        self.path = path
        super().__init__(f"{what} does not exist: {path}")


class UnknownRecordError(InputError):
    def __init__(self, record_id: str) -> None:
        self.record_id = record_id
        super().__init__(f"Unknown record id: {record_id}")


class GaugeError(InputError):
    """Height integration without any depth anchor (w1 = w2 = 0)."""


# ---------------------------------------------------------------------------
# Numerical / geometric failures
# ---------------------------------------------------------------------------


class DegenerateGeometryError(ReliefError):
    def __init__(self, message: str, index: Optional[int] = None) -> None:
        self.index = index
        super().__init__(message)


class BehindCameraError(ReliefError):
    pass


class LightSingularityError(ReliefError):
    pass


class EmptyVisibleSetError(ReliefError):
    pass


class EmptyMaskError(ReliefError):
    pass


class UnderdeterminedError(ReliefError):
    def __init__(self, triangles: Sequence[int]) -> None:
        self.triangles = list(triangles)
        preview = ", ".join(str(t) for t in self.triangles[:10])
        more = "..." if len(self.triangles) > 10 else ""
        super().__init__(
            f"{len(self.triangles)} triangle(s) have a singular normal system "
            f"(fewer than 3 lights and mu1 = 0): {preview}{more}"
        )


class InsufficientDataError(ReliefError):
    def __init__(self, message: str, counts: Optional[Sequence[int]] = None) -> None:
        self.counts = list(counts) if counts is not None else []
        super().__init__(message)


class NonConvergenceError(ReliefError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None) -> None:
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class StageError(ReliefError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        return getattr(self.cause, "exit_code", 1)
