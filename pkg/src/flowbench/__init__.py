"""flowbench: dataset management for time-aware, open-world traffic
classification experiments.

Typical flow: build or ingest a store, validate a DatasetConfig against it,
materialize the split, fit (or cache-hit) the scalers, then read tables or
iterate batches. The `flowbench` CLI exposes the same pipeline end to end.
"""

from .batching import Batch, iter_batches, to_table
from .config import (
    AppSelection,
    AppSelectionMode,
    DatasetConfig,
    RegistryEntry,
    ScalerKind,
    ScalingConfig,
    ValApproach,
    ValidatedConfig,
    fingerprint,
    parse_period,
    registry_entry,
    validate,
)
from .errors import FlowbenchError
from .metrics import (
    PredictionSet,
    join_predictions,
    ood_tpr_at_fpr,
    per_date_accuracy,
    report,
)
from .scaling import FittedScalers, fit_scalers, fit_scalers_cached, scale_table, transform_arrays
from .split import ClassMap, SplitIndex, materialize, materialize_cached, select_apps
from .store import FlowRecord, SizeTier, Store, StoreManifest, derive_size_tier, ingest, read_rows
from .synth import DriftEvent, NovelArrival, SynthSpec, date_range, generate
from .table import Table

__version__ = "0.1.0"

__all__ = [
    "AppSelection",
    "AppSelectionMode",
    "Batch",
    "ClassMap",
    "DatasetConfig",
    "DriftEvent",
    "FittedScalers",
    "FlowRecord",
    "FlowbenchError",
    "NovelArrival",
    "PredictionSet",
    "RegistryEntry",
    "ScalerKind",
    "ScalingConfig",
    "SizeTier",
    "SplitIndex",
    "Store",
    "StoreManifest",
    "SynthSpec",
    "Table",
    "ValApproach",
    "ValidatedConfig",
    "date_range",
    "derive_size_tier",
    "fingerprint",
    "fit_scalers",
    "fit_scalers_cached",
    "generate",
    "ingest",
    "iter_batches",
    "join_predictions",
    "materialize",
    "materialize_cached",
    "ood_tpr_at_fpr",
    "parse_period",
    "per_date_accuracy",
    "read_rows",
    "registry_entry",
    "report",
    "scale_table",
    "select_apps",
    "to_table",
    "transform_arrays",
    "validate",
]
