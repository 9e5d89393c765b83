"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, TransportError -> 3,
everything else derived from FactgapError -> 4.
"""


class FactgapError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FactgapError):
    """Invalid run configuration: missing files, bad flags, unset env vars."""


class DataError(FactgapError):
    """Malformed input data: bad rows, duplicate keys, failed lookups."""


class TemplateError(FactgapError):
    """Prompt template slot could not be resolved, or markers remain."""


class ProtocolError(FactgapError):
    """Conversation staged out of order, or a non-conforming wire response."""


class TransportError(FactgapError):
    """HTTP failure that survived the retry policy."""


class ExtractionError(FactgapError):
    """Answer text could not be parsed where a parse is mandatory."""


class AnalysisError(FactgapError):
    """Statistical computation cannot proceed on the given data."""


class ZeroVarianceError(AnalysisError):
    """Standardization of a constant series."""


class DegenerateResponseError(AnalysisError):
    """Regression response is all zeros or all ones."""


class FactorDegeneracyError(AnalysisError):
    """A fixed-effect factor has a single observed level."""


class SeparationError(AnalysisError):
    """Perfect or quasi-perfect separation: the MLE diverges."""


class RankError(AnalysisError):
    """Singular information matrix; names the collinear columns."""


class LevelError(AnalysisError):
    """Prediction requested for a factor level unseen at fit time."""
