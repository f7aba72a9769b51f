"""Exception hierarchy shared by all occgen modules.

The CLI maps these onto disjoint exit codes: DataError -> 2,
EstimationError -> 3, SimulationError -> 4, EvaluationError -> 5.
"""


class OccgenError(Exception):
    """Base class for all occgen errors."""


class DataError(OccgenError):
    """Input data cannot be ingested or is structurally invalid."""


class CalendarGapError(DataError):
    """Daily record skips one or more calendar days."""

    def __init__(self, missing_date):
        self.missing_date = missing_date
        super().__init__(f"calendar gap: expected day {missing_date} is absent")


class ParseError(DataError):
    """A cell or row in a delimited file cannot be interpreted."""


class EstimationError(OccgenError):
    """Model calibration failed."""


class DegenerateMarginalError(EstimationError):
    """A site-month is all wet or all dry, so no threshold exists."""

    def __init__(self, site, month, kind):
        self.site = site
        self.month = month
        self.kind = kind
        super().__init__(f"site {site!r}, month {month}: all observations are {kind}")


class InsufficientDataError(EstimationError):
    """No valid observation pairs for a joint-probability cell."""


class AdjustmentError(EstimationError):
    """Covariance repair could not balance the elementwise perturbation."""


class SimulationError(OccgenError):
    """Synthetic sequence generation failed."""


class EvaluationError(OccgenError):
    """Index computation or observed-vs-ensemble comparison failed."""


class AlignmentError(EvaluationError):
    """Observed and simulated records do not share a calendar/site layout."""


class NumericsError(OccgenError):
    """Failure inside a numerical kernel."""


class DomainError(NumericsError):
    """Argument outside the mathematical domain of an operation."""


class BracketingError(NumericsError):
    """Root finder was given an interval without a sign change."""


class FactorizationError(NumericsError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot} <= 0)")
