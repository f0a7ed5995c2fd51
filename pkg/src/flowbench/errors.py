"""Exception hierarchy. Every error raised on purpose derives from FlowbenchError."""

from __future__ import annotations


class FlowbenchError(Exception):
    """Base class for all errors raised by this package."""


class StoreError(FlowbenchError):
    pass


class IngestError(StoreError):
    """Malformed input row or unusable ingestion source."""


class StoreExistsError(StoreError):
    """Refusing to overwrite an existing store without an explicit flag."""


class StoreNotFoundError(StoreError):
    pass


class StoreCorruptError(StoreError):
    """Partition bytes do not match the manifest (bad magic, checksum, counts)."""


class RowNotFoundError(StoreError):
    pass


class UnknownFieldError(StoreError):
    pass


class TierTargetError(StoreError):
    """Size-tier target exceeds the rows available in the store."""


class ConfigError(FlowbenchError):
    pass


class PeriodParseError(ConfigError):
    pass


class EmptyPeriodError(ConfigError):
    """A period expanded to zero dates present in the store manifest."""


class TimeOrderViolation(ConfigError):
    """Train or validation dates do not strictly precede test dates."""


class MissingValidationDates(ConfigError):
    pass


class OverlappingValidationDates(ConfigError):
    pass


class WeightLengthMismatch(ConfigError):
    pass


class UnknownDataset(ConfigError):
    pass


class SplitError(FlowbenchError):
    pass


class CapExceedsAvailable(SplitError):
    """A requested split size cap is larger than the number of eligible rows."""


class ScalingError(FlowbenchError):
    pass


class TableMemoryError(FlowbenchError):
    """Estimated table size is above the configured ceiling."""


class MetricsError(FlowbenchError):
    pass


class MissingPredictions(MetricsError):
    pass


class ClosedWorldError(MetricsError):
    """OOD metrics requested on a split with no unknown-class rows."""


class SynthError(FlowbenchError):
    pass
