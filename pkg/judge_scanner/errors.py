"""Exception hierarchy shared by every stage of the pipeline."""

from typing import Optional


class JudgeScannerError(ValueError):
    """Base class for all judge-scanner errors."""


class SchemaError(JudgeScannerError):
    """The input file does not carry the required header."""


class MarkError(JudgeScannerError):
    """A single mark violates its scale. The row is rejected, ingestion goes on."""


class EmptyDatasetError(JudgeScannerError):
    """Every performance group was rejected."""


class UnknownDisciplineError(JudgeScannerError, LookupError):
    """Lookup of a discipline that is not part of the dataset."""


class FitError(JudgeScannerError):
    """A variance model could not be fitted.

    Args:
        message: Human-readable reason
        discipline_id: Discipline whose fit failed, when known
        best_model: Best iterate reached before giving up (exponential fits)
    """

    def __init__(self, message: str, discipline_id: Optional[str] = None, best_model=None):
        super().__init__(message)
        self.discipline_id = discipline_id
        self.best_model = best_model


class InsufficientSupportError(FitError):
    """Not enough distinct bins to determine the model."""


class SingularFitError(FitError):
    """The weighted normal equations are numerically singular."""


class ConvergenceError(FitError):
    """The iterative fit hit its iteration cap."""


class ModelMismatchError(JudgeScannerError):
    """A fitted model is applied to evaluations of another discipline."""


class ScenarioError(JudgeScannerError):
    """A synthetic scenario is malformed or infeasible."""
