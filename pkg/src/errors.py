class OrfelError(Exception):
    """Base class for every error raised by the detection pipeline."""


class ConfigurationError(OrfelError):
    """Parameters that violate an invariant or cannot be satisfied."""


class IngestError(OrfelError):
    """The edge-list text could not be read or was mostly malformed."""


class FormatError(OrfelError):
    """A binary shard or manifest does not match the on-disk layout."""


class ScanError(OrfelError):
    """A scan visitor failed; the original exception is the cause."""


class OracleGuardError(OrfelError):
    """Instance too large for the exhaustive definition check."""


class EvaluationError(OrfelError):
    """Recall cannot be computed for the given ground truth."""
