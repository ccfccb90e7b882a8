"""Exception types shared across the toolkit.

Validation errors cover malformed inputs (bad files, bad configs, broken
invariants); everything else that goes wrong during estimation is a plain
runtime failure. The CLI maps the two classes to distinct exit codes.
"""


class ValidationError(ValueError):
    """Input failed a contract check before any computation ran."""


class SchemaError(ValidationError):
    """A required column or config key is missing or malformed."""


class RowError(ValidationError):
    """One or more data rows violated a field-level contract."""

    def __init__(self, message: str, rows: list[int] | None = None):
        super().__init__(message)
        self.rows = rows or []


class EstimationError(RuntimeError):
    """A numerical routine could not produce a valid result."""


class RankError(EstimationError):
    """Design matrix is rank deficient; names the collinear terms."""

    def __init__(self, message: str, terms: list[str] | None = None):
        super().__init__(message)
        self.terms = terms or []


class ConvergenceError(EstimationError):
    """Iterative solver hit its cap; carries the final gap."""

    def __init__(self, message: str, gap: float | None = None):
        super().__init__(message)
        self.gap = gap
