"""Exception hierarchy with stable machine-readable codes.

Validation errors map to CLI exit status 2, numerical errors to 3.
"""


class BoundSelectError(Exception):
    """Base class; ``code`` is a stable identifier for machine consumption."""

    code = "GENERIC"


class ValidationError(BoundSelectError):
    code = "VALIDATION"


class DataSchemaError(ValidationError):
    code = "DATA_SCHEMA"


class StratumError(ValidationError):
    code = "STRATUM_MIN"


class CovarianceError(ValidationError):
    """Estimated covariance outside the admissible eigenvalue band."""

    code = "COVARIANCE"


class NumericalError(BoundSelectError):
    code = "NUMERICAL"


class TruncationMassError(NumericalError):
    """Truncation window carries no representable probability mass."""

    code = "TN_UNDERFLOW"


class BracketError(NumericalError):
    """Root bracket expansion exhausted without sign change."""

    code = "BRACKET_FAIL"


class EnumerationCapError(NumericalError):
    """Vertex enumeration would exceed the configured subset cap."""

    code = "LP_ENUM_CAP"
