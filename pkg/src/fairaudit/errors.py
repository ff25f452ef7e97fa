"""Semantic exception hierarchy.

Every error raised on a public code path derives from FairnessAuditError so
callers can catch the package's failures with a single except clause. Where a
builtin conveys the same meaning the class inherits from it too, so generic
handlers keep working.
"""


class FairnessAuditError(Exception):
    """Base class for all errors raised by this package."""


# ---- estimation -----------------------------------------------------------


class DegenerateDenominator(FairnessAuditError, ZeroDivisionError):
    """A denominator cell is empty: a group, or a conditioning event, has
    no mass, so the rate ratio is undefined."""


class NegativeQuadraticForm(FairnessAuditError, ArithmeticError):
    """The sandwich quadratic form came out below -1e-10; the covariance
    input is not positive semidefinite."""


class InvalidAlpha(FairnessAuditError, ValueError):
    """Significance level outside the open interval (0, 1)."""


class ZeroSigma(FairnessAuditError, ZeroDivisionError):
    """The hypothesis test is undefined for a zero standard deviation
    (degenerate sample)."""


# ---- tabulation -----------------------------------------------------------


class EmptyInput(FairnessAuditError, ValueError):
    """No records to audit."""


class MixedLabelPresence(FairnessAuditError, ValueError):
    """Some records carry labels and some do not; label presence must be
    uniform across a table."""


class LabelsMissing(FairnessAuditError, ValueError):
    """The requested metric needs labels but the table has none."""


class UnknownReferenceGroup(FairnessAuditError, KeyError):
    """The reference group for a pairwise audit does not occur in the data."""


# ---- validation -----------------------------------------------------------


class InvalidDistribution(FairnessAuditError, ValueError):
    """Cell probabilities are negative or do not sum to one."""


class DegenerateDistribution(FairnessAuditError, ValueError):
    """The true metric value is undefined for this distribution."""


class TooManyDegenerateResamples(FairnessAuditError, RuntimeError):
    """More than 10% of bootstrap resamples had an empty denominator cell."""


# ---- ingestion ------------------------------------------------------------


class IoError(FairnessAuditError, OSError):
    """Input could not be read."""


class EmptyFile(FairnessAuditError, ValueError):
    """The input file contains no rows."""


class RaggedRow(FairnessAuditError, ValueError):
    """A row has the wrong number of fields (raised under the error policy)."""


class MissingColumn(FairnessAuditError, KeyError):
    """A schema-referenced column is not present in the header."""


class UnmappableValue(FairnessAuditError, ValueError):
    """A value falls outside the declared value sets (raised under the
    error policy)."""


class InvalidSchema(FairnessAuditError, ValueError):
    """A schema document violates its own invariants."""


class DigestMismatch(FairnessAuditError, ValueError):
    """A downloaded or cached file does not match its pinned digest."""


class NetworkError(FairnessAuditError, OSError):
    """A dataset could not be fetched (offline, unreachable, or HTTP error)."""


class UnknownPreset(FairnessAuditError, KeyError):
    """No such preset id in the dataset registry."""


# ---- reporting ------------------------------------------------------------


class UnreadableReport(FairnessAuditError, ValueError):
    """A report file is missing, malformed, or fails schema validation."""
