"""Exceptions raised by moescale."""

from typing import Optional


class MoeScaleError(Exception):
    """Base mixin for every error the CLI reports with exit status 1."""

    precondition: Optional[str] = None

    def to_dict(self) -> dict:
        """Convert to a structured diagnostic."""
        return {
            "error": type(self).__name__,
            "message": str(self),
            "precondition": self.precondition,
        }


class DomainError(MoeScaleError, ValueError):
    """A factor, constant or option violates a precondition."""

    def __init__(self, message: str, precondition: Optional[str] = None):
        super().__init__(message)
        self.precondition = precondition


class SchemaError(MoeScaleError, ValueError):
    """An ingested file lacks a required column or key."""

    def __init__(self, column: str, source: str = "input"):
        super().__init__(f"Missing column '{column}' in {source}")
        self.column = column
        self.precondition = f"column {column} present"


class UnrealizableLevelError(MoeScaleError, ValueError):
    """A sweep level cannot be realised by an integral architecture."""

    def __init__(self, level: float, constraint: str):
        super().__init__(f"Level {level:g} is unrealizable: {constraint}")
        self.level = level
        self.constraint = constraint
        self.precondition = constraint


class DegenerateRecordsError(MoeScaleError, ValueError):
    """Records cannot identify the requested law form."""

    def __init__(self, form: str, factor: str):
        super().__init__(f"Records for form '{form}' have no variance in factor {factor}")
        self.form = form
        self.factor = factor
        self.precondition = f"{factor} varies across records"


class InsufficientRecordsError(MoeScaleError, ValueError):
    """Too few records for the number of free parameters."""

    def __init__(self, form: str, n_records: int, n_free: int):
        super().__init__(
            f"Form '{form}' needs at least {2 * n_free} records for {n_free} free parameters, got {n_records}"
        )
        self.precondition = "records >= 2 x free parameters"


class UnknownLabelError(MoeScaleError, KeyError):
    """No registry entry exists under the label."""

    def __init__(self, label: str):
        super().__init__(label)
        self.label = label
        self.precondition = "label registered"

    def __str__(self) -> str:
        return f"Constants '{self.label}' not found"


class ImmutableEntryError(MoeScaleError, PermissionError):
    """A built-in registry entry cannot be overwritten or removed."""

    def __init__(self, label: str):
        super().__init__(f"Constants '{label}' are built in and cannot be modified")
        self.label = label
        self.precondition = "label is not built in"


class NoRootError(MoeScaleError, RuntimeError):
    """The compute-optimal stationarity condition has no root in the bracket."""

    def __init__(self, budget: float):
        super().__init__(f"No stationary activated size for compute budget C={budget:g}")
        self.budget = budget
        self.precondition = "stationarity root in (0, N]"
