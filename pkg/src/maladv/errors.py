"""Exception types shared across the package."""

from __future__ import annotations


class MaladvError(Exception):
    """Base class for every error this package raises deliberately."""


class DuplicateFeature(MaladvError):
    """A vocabulary file lists the same feature string twice."""


class BadTag(MaladvError):
    """A vocabulary line carries a tag outside the known set."""


class ParseError(MaladvError):
    """A data file line does not match the expected format."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class BadLabel(MaladvError):
    """A sample line carries a label other than 0 or 1."""


class BadConfig(MaladvError):
    """A configuration value is out of its legal range."""


class DimensionError(MaladvError):
    """Two objects that must share a feature-space width do not."""


class EmptyData(MaladvError):
    """An operation that needs at least one sample received none."""


class QueryBudgetExceeded(MaladvError):
    """The per-sample oracle query budget ran out."""


class AccessDenied(MaladvError):
    """A white-box facility was requested through a semi-black-box session."""


class NotMalicious(MaladvError):
    """An attack was pointed at a sample the model already calls benign."""


class NoCandidates(MaladvError):
    """The feature mask leaves no zero-valued feature available to flip."""


class NumericalFailure(MaladvError):
    """A linear-algebra or loss computation could not be stabilised."""


class NoAleatoricHead(MaladvError):
    """A variance score was requested from a model without a variance head."""


class EmptyIndex(MaladvError):
    """A neighbour index has no reference points for the requested class."""


class DegenerateLabels(MaladvError):
    """Detector training needs both normal and adversarial examples."""


class EmptyResults(MaladvError):
    """Metrics were requested for an empty result set."""
