"""Exception and warning taxonomy shared across the toolkit."""


class TraitlensError(Exception):
    """Base class for all toolkit errors."""


class UnmappedNamespace(TraitlensError):
    """Namespace code outside the documented mapping."""

    def __init__(self, code):
        super().__init__(f"namespace code {code!r} has no category mapping")
        self.code = code


class MalformedXml(TraitlensError):
    """Fatal XML-level parse failure in a dump stream."""

    def __init__(self, message, byte_offset=None, line=None, column=None):
        loc = []
        if byte_offset is not None:
            loc.append(f"byte offset ~{byte_offset}")
        if line is not None:
            loc.append(f"line {line}, column {column}")
        suffix = f" ({'; '.join(loc)})" if loc else ""
        super().__init__(f"{message}{suffix}")
        self.byte_offset = byte_offset
        self.line = line
        self.column = column


class SchemaError(TraitlensError):
    """Delimited input has a missing/unknown column set."""


class RowError(TraitlensError):
    """A delimited row failed validation."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConflictError(TraitlensError):
    """Contradictory duplicate trait labels for one user."""


class UnknownTheme(TraitlensError):
    """Theme name outside the 23-name vocabulary."""


class UnknownClass(TraitlensError):
    """Target class outside a trait's declared vocabulary."""


class UnknownFeature(TraitlensError):
    """Requested feature column does not exist in any model."""


class MissingUser(TraitlensError):
    """User absent from the first-edit side table."""


class DegeneratePrior(TraitlensError):
    """A class side is too small (or absent) for the requested operation."""


class EmptyCohort(TraitlensError):
    """Cohort selection produced no users."""


class ConfigError(TraitlensError):
    """Invalid synthetic-corpus configuration."""


class TraitlensWarning(UserWarning):
    """Base class for toolkit warnings."""


class DegeneratePriorWarning(TraitlensWarning):
    """Binary target is single-class; downstream metrics are undefined."""


class NonConvergenceWarning(TraitlensWarning):
    """Solver hit the iteration cap before the tolerance was met."""


class NoCrossingWarning(TraitlensWarning):
    """Precision-recall curve never crosses the diagonal."""


class DegenerateFeatureWarning(TraitlensWarning):
    """All values identical; quantizer collapses to a single bin."""


class EmptyDatasetWarning(TraitlensWarning):
    """A temporal dataset has no eligible (labeled) users."""
