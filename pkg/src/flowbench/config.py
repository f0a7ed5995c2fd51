"""Experiment configuration: parsing, validation, fingerprinting, registry.

A DatasetConfig captures everything that defines an experiment: which dates
feed train/validation/test, how classes split into known and unknown, how
features are scaled, and the seed. `validate` resolves it against a store
manifest into an immutable ValidatedConfig whose fingerprints key the split
and scaler caches.
"""

from __future__ import annotations

import hashlib
import re
import warnings
from dataclasses import dataclass, field, replace
from datetime import date as _date
from datetime import timedelta
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .errors import (
    ConfigError,
    EmptyPeriodError,
    MissingValidationDates,
    OverlappingValidationDates,
    PeriodParseError,
    TimeOrderViolation,
    UnknownDataset,
    WeightLengthMismatch,
)
from .store import FULL_SCALE_TIER_TARGETS, SizeTier, StoreManifest


class ValApproach(Enum):
    """How the validation set is formed."""

    SPLIT_FROM_TRAIN = "split-from-train"
    """Carve a random stratified fraction out of the train rows."""
    SEPARATE_DATES = "separate-dates"
    """Use a dedicated list of validation dates, disjoint from train dates."""

    def __str__(self) -> str:
        return self.value


class AppSelectionMode(Enum):
    """How observed classes split into known and unknown."""

    ALL_KNOWN = "all-known"
    """Every observed class is known (the closed-world setting)."""
    TOP_X = "top-x"
    """The x most frequent classes over the train dates are known, the rest unknown."""
    EXPLICIT_UNKNOWN = "explicit-unknown"
    """A user-provided list of classes is unknown, everything else known."""
    FIXED = "fixed"
    """Both lists given explicitly; useful for long-term multi-week evaluation."""

    def __str__(self) -> str:
        return self.value


class ScalerKind(Enum):
    STANDARD = "standard"
    ROBUST = "robust"
    MINMAX = "minmax"
    NONE = "none"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class AppSelection:
    mode: AppSelectionMode = AppSelectionMode.ALL_KNOWN
    top_x: int = 0
    known_list: tuple[str, ...] = ()
    unknown_list: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScalingConfig:
    """Feature scaling options for the three feature groups.

    fit_fraction is the fraction of the train set used to fit scalers.
    Clips are applied before scaling: a max clip replaces larger packet
    sizes, min/max clips bound inter-packet times, and flow statistics above
    their per-feature q-quantile (computed on the fit sample) are clipped.
    """

    fit_fraction: float = 0.25
    psizes_scaler: ScalerKind = ScalerKind.NONE
    ipt_scaler: ScalerKind = ScalerKind.NONE
    fstats_scaler: ScalerKind = ScalerKind.NONE
    psizes_max_clip: float | None = None
    ipt_min_clip: float | None = None
    ipt_max_clip: float | None = None
    fstats_quantile_clip_q: float | None = None


@dataclass
class DatasetConfig:
    """Complete experiment specification.

    Periods accept a week token ("W-2022-44"), an inclusive date range
    ("2022-10-31..2022-11-06"), a comma-separated date list, or a sequence
    of ISO dates; they always expand to an ascending date list and
    train_date_weights align with that ascending order. Weights may be given
    for the full expansion (entries for dates missing from the store are
    dropped in sync) or for the surviving dates. Absolute size caps are
    optional; train_date_weights requires train_size so the weighted quota
    has a definite total.
    """

    dataset_id: str
    train_period: str | Sequence[str] = ""
    test_period: str | Sequence[str] = ""
    size_tier: SizeTier = SizeTier.S
    tier_targets: Mapping[str, int] | None = None
    train_date_weights: Sequence[float] | None = None
    val_approach: ValApproach = ValApproach.SPLIT_FROM_TRAIN
    val_period: str | Sequence[str] | None = None
    val_fraction: float = 0.2
    app_selection: AppSelection = field(default_factory=AppSelection)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    seed: int = 42
    strict_time_order: bool = True
    train_size: int | None = None
    val_size: int | None = None
    test_size: int | None = None


@dataclass(frozen=True)
class ValidatedConfig:
    """A DatasetConfig resolved against one store manifest.

    Dates are expanded and intersected with the manifest, weights are
    normalized to sum 1, and every invariant has been checked. Given a
    store, this object fully determines the split and the fitted scalers.
    """

    dataset_id: str
    size_tier: SizeTier
    tier_target: int | None
    train_dates: tuple[str, ...]
    train_weights: tuple[float, ...] | None
    val_approach: ValApproach
    val_dates: tuple[str, ...]
    val_fraction: float | None
    test_dates: tuple[str, ...]
    app_selection: AppSelection
    scaling: ScalingConfig
    seed: int
    strict_time_order: bool
    train_size: int | None
    val_size: int | None
    test_size: int | None

    def fingerprint(self, scope: str) -> str:
        return fingerprint(self, scope)


@dataclass(frozen=True)
class RegistryEntry:
    dataset_id: str
    protocol: str
    published: str
    collection_start: str
    collection_end: str
    class_count: int
    total_samples: int

    def summary(self) -> str:
        millions = self.total_samples // 1_000_000
        return f"{self.class_count} classes, {millions}M samples"


#: Bundled metadata for the public datasets this engine targets. Display and
#: sanity checks only; ingestion is always from local files.
REGISTRY: dict[str, RegistryEntry] = {
    "CESNET-TLS22": RegistryEntry(
        "CESNET-TLS22", "TLS", "2022", "2021-10-04", "2021-10-17", 191, 141_000_000
    ),
    "CESNET-QUIC22": RegistryEntry(
        "CESNET-QUIC22", "QUIC", "2023", "2022-10-31", "2022-11-27", 102, 153_000_000
    ),
    "CESNET-TLS-Year22": RegistryEntry(
        "CESNET-TLS-Year22", "TLS", "2023", "2022-01-01", "2022-12-31", 182, 507_000_000
    ),
}


def registry_entry(dataset_id: str) -> RegistryEntry | None:
    return REGISTRY.get(dataset_id)


_WEEK_TOKEN = re.compile(r"^W-(\d{4})-(\d{1,2})$")


def expand_period(spec: str | Sequence[str]) -> list[str]:
    """Expand a period spec into ISO dates without consulting any manifest."""
    if not isinstance(spec, str):
        dates = [_parse_date(d) for d in spec]
        if not dates:
            raise PeriodParseError("empty date list")
        return [d.isoformat() for d in sorted(set(dates))]
    spec = spec.strip()
    if spec == "":
        raise PeriodParseError("empty period spec")
    m = _WEEK_TOKEN.match(spec)
    if m:
        year, week = int(m.group(1)), int(m.group(2))
        try:
            monday = _date.fromisocalendar(year, week, 1)
        except ValueError as exc:
            raise PeriodParseError(f"bad week token {spec!r}: {exc}") from None
        return [(monday + timedelta(days=i)).isoformat() for i in range(7)]
    if ".." in spec:
        lo_raw, _, hi_raw = spec.partition("..")
        lo, hi = _parse_date(lo_raw), _parse_date(hi_raw)
        if hi < lo:
            raise PeriodParseError(f"range {spec!r} runs backwards")
        n = (hi - lo).days + 1
        return [(lo + timedelta(days=i)).isoformat() for i in range(n)]
    if "," in spec:
        return expand_period([tok.strip() for tok in spec.split(",") if tok.strip()])
    return [_parse_date(spec).isoformat()]


def _parse_date(raw: str) -> _date:
    try:
        return _date.fromisoformat(raw.strip())
    except ValueError:
        raise PeriodParseError(f"cannot parse date {raw!r} (want YYYY-MM-DD)") from None


def parse_period(spec: str | Sequence[str], manifest: StoreManifest) -> list[str]:
    """Expand a period spec and intersect it with the manifest dates.

    Dates absent from the store are dropped with a warning; an expansion
    with no surviving dates is an error.
    """
    expanded = expand_period(spec)
    present = [d for d in expanded if d in manifest.date_rows]
    missing = [d for d in expanded if d not in manifest.date_rows]
    if not present:
        raise EmptyPeriodError(
            f"period {spec!r} expands to {expanded}, none of which exist in the store"
        )
    if missing:
        warnings.warn(f"period {spec!r}: dates {missing} not in store manifest, dropped")
    return present


def _positive_or_none(value, name: str) -> int | None:
    if value is None:
        return None
    value = int(value)
    if value <= 0:
        raise ConfigError(f"{name} must be a positive integer")
    return value


def resolve_tier_target(
    tier: SizeTier, tier_targets: Mapping[str, int] | None
) -> int | None:
    """Absolute row target for a tier; None means take everything (ORIG)."""
    if tier_targets is not None:
        unknown = set(tier_targets) - {t.value for t in SizeTier if t is not SizeTier.ORIG}
        if unknown:
            raise ConfigError(f"tier_targets has unknown tiers: {sorted(unknown)}")
        if any(int(v) <= 0 for v in tier_targets.values()):
            raise ConfigError("tier targets must be positive")
        ladder = [
            int(tier_targets[t.value])
            for t in (SizeTier.XS, SizeTier.S, SizeTier.M, SizeTier.L)
            if t.value in tier_targets
        ]
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("tier_targets must be strictly increasing across XS < S < M < L")
    if tier is SizeTier.ORIG:
        return None
    if tier_targets is None or tier.value not in tier_targets:
        return FULL_SCALE_TIER_TARGETS[tier]
    return int(tier_targets[tier.value])


def validate(config: DatasetConfig, manifest: StoreManifest) -> ValidatedConfig:
    """Resolve and check a config against a store manifest.

    Raises a ConfigError subclass naming the offending field on any
    violation; never mutates the input config.
    """
    if config.dataset_id != manifest.dataset_id:
        raise UnknownDataset(
            f"dataset_id: config says {config.dataset_id!r} but the store is "
            f"{manifest.dataset_id!r}"
        )

    if not config.train_period:
        raise ConfigError("train_period is required")
    if not config.test_period:
        raise ConfigError("test_period is required")
    train_expanded = expand_period(config.train_period)
    train_dates = parse_period(config.train_period, manifest)
    test_dates = parse_period(config.test_period, manifest)

    weights = None
    if config.train_date_weights is not None:
        raw = [float(w) for w in config.train_date_weights]
        if any(w < 0 for w in raw):
            raise ConfigError("train_date_weights must be non-negative")
        if len(raw) == len(train_expanded):
            kept = [w for d, w in zip(train_expanded, raw) if d in set(train_dates)]
        elif len(raw) == len(train_dates):
            kept = raw
        else:
            raise WeightLengthMismatch(
                f"train_date_weights has {len(raw)} entries for {len(train_dates)} "
                f"train dates (period expands to {len(train_expanded)})"
            )
        total = sum(kept)
        if total <= 0:
            raise WeightLengthMismatch("train_date_weights sum to zero over the usable train dates")
        weights = tuple(w / total for w in kept)
        if config.train_size is None:
            raise ConfigError("train_size must be set when train_date_weights are used")

    val_fraction: float | None = None
    val_dates: tuple[str, ...] = ()
    if config.val_approach is ValApproach.SPLIT_FROM_TRAIN:
        if config.val_period:
            raise ConfigError("val_period cannot be set when val_approach is split-from-train")
        if config.val_size is not None:
            raise ConfigError(
                "val_size cannot be set when val_approach is split-from-train; use val_fraction"
            )
        val_fraction = float(config.val_fraction)
        if not (0.0 < val_fraction < 1.0):
            raise ConfigError("val_fraction must lie in (0, 1)")
    else:
        if not config.val_period:
            raise MissingValidationDates(
                "val_period is required when val_approach is separate-dates"
            )
        val_dates = tuple(parse_period(config.val_period, manifest))
        overlap = sorted(set(val_dates) & set(train_dates))
        if overlap:
            raise OverlappingValidationDates(
                f"val_period overlaps train_period on dates {overlap}"
            )

    if config.strict_time_order:
        trainish = list(train_dates) + list(val_dates)
        if max(trainish) >= min(test_dates):
            raise TimeOrderViolation(
                f"strict_time_order: last train/val date {max(trainish)} is not "
                f"before first test date {min(test_dates)}"
            )

    sel = config.app_selection
    if sel.mode is AppSelectionMode.TOP_X and sel.top_x < 1:
        raise ConfigError("app_selection: top_x must be a positive integer")
    if sel.mode is AppSelectionMode.EXPLICIT_UNKNOWN and not sel.unknown_list:
        raise ConfigError("app_selection: explicit-unknown mode needs a non-empty unknown list")
    if sel.mode is AppSelectionMode.FIXED:
        if not sel.known_list:
            raise ConfigError("app_selection: fixed mode needs a known list")
        clash = sorted(set(sel.known_list) & set(sel.unknown_list))
        if clash:
            raise ConfigError(f"app_selection: classes in both known and unknown lists: {clash}")
    sel = replace(
        sel,
        known_list=tuple(sorted(set(sel.known_list))),
        unknown_list=tuple(sorted(set(sel.unknown_list))),
    )

    sc = config.scaling
    if not (0.0 < sc.fit_fraction <= 1.0):
        raise ConfigError("scaling.fit_fraction must lie in (0, 1]")
    if sc.ipt_min_clip is not None and sc.ipt_max_clip is not None:
        if sc.ipt_min_clip > sc.ipt_max_clip:
            raise ConfigError("scaling: ipt_min_clip must not exceed ipt_max_clip")
    if sc.fstats_quantile_clip_q is not None and not (0.0 < sc.fstats_quantile_clip_q < 1.0):
        raise ConfigError("scaling.fstats_quantile_clip_q must lie in (0, 1)")

    return ValidatedConfig(
        dataset_id=config.dataset_id,
        size_tier=config.size_tier,
        tier_target=resolve_tier_target(config.size_tier, config.tier_targets),
        train_dates=tuple(train_dates),
        train_weights=weights,
        val_approach=config.val_approach,
        val_dates=val_dates,
        val_fraction=val_fraction,
        test_dates=tuple(test_dates),
        app_selection=sel,
        scaling=sc,
        seed=int(config.seed),
        strict_time_order=bool(config.strict_time_order),
        train_size=_positive_or_none(config.train_size, "train_size"),
        val_size=_positive_or_none(config.val_size, "val_size"),
        test_size=_positive_or_none(config.test_size, "test_size"),
    )


SCOPE_SPLIT = "SPLIT"
SCOPE_SCALERS = "SCALERS"

_SPLIT_FIELDS = (
    "dataset_id",
    "size_tier",
    "tier_target",
    "train_dates",
    "train_weights",
    "train_size",
    "val_approach",
    "val_dates",
    "val_fraction",
    "val_size",
    "test_dates",
    "test_size",
    "app_mode",
    "app_top_x",
    "app_known",
    "app_unknown",
    "seed",
)

# Exactly the fields that influence fitted scalers: the pre-validation train
# pool (dataset, tier, train dates + weights + cap, app selection, seed) and
# the scaling options themselves. Validation and test settings are absent on
# purpose so "compatible" configs share a cache key.
_SCALER_FIELDS = (
    "dataset_id",
    "size_tier",
    "tier_target",
    "train_dates",
    "train_weights",
    "train_size",
    "app_mode",
    "app_top_x",
    "app_known",
    "app_unknown",
    "scaling_fit_fraction",
    "scaling_psizes",
    "scaling_ipt",
    "scaling_fstats",
    "scaling_psizes_max_clip",
    "scaling_ipt_min_clip",
    "scaling_ipt_max_clip",
    "scaling_fstats_clip_q",
    "seed",
)


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (tuple, list)):
        return ",".join(_render(v) for v in value)
    return str(value)


def _field_map(validated: ValidatedConfig) -> dict[str, str]:
    sel, sc = validated.app_selection, validated.scaling
    return {
        "dataset_id": _render(validated.dataset_id),
        "size_tier": _render(validated.size_tier),
        "tier_target": _render(validated.tier_target),
        "train_dates": _render(validated.train_dates),
        "train_weights": _render(validated.train_weights),
        "train_size": _render(validated.train_size),
        "val_approach": _render(validated.val_approach),
        "val_dates": _render(validated.val_dates),
        "val_fraction": _render(validated.val_fraction),
        "val_size": _render(validated.val_size),
        "test_dates": _render(validated.test_dates),
        "test_size": _render(validated.test_size),
        "app_mode": _render(sel.mode),
        "app_top_x": _render(sel.top_x if sel.mode is AppSelectionMode.TOP_X else 0),
        "app_known": _render(sel.known_list),
        "app_unknown": _render(sel.unknown_list),
        "scaling_fit_fraction": _render(sc.fit_fraction),
        "scaling_psizes": _render(sc.psizes_scaler),
        "scaling_ipt": _render(sc.ipt_scaler),
        "scaling_fstats": _render(sc.fstats_scaler),
        "scaling_psizes_max_clip": _render(sc.psizes_max_clip),
        "scaling_ipt_min_clip": _render(sc.ipt_min_clip),
        "scaling_ipt_max_clip": _render(sc.ipt_max_clip),
        "scaling_fstats_clip_q": _render(sc.fstats_quantile_clip_q),
        "seed": _render(validated.seed),
    }


def fingerprint(validated: ValidatedConfig, scope: str) -> str:
    """Stable sha256 hex digest over the scope's fields.

    The serialization is field-name-sorted key=value lines in UTF-8, so the
    digest is reproducible across platforms. SCALERS-scope digests ignore
    validation and test settings; configs that differ only there share
    fitted scalers.
    """
    if scope == SCOPE_SPLIT:
        names = _SPLIT_FIELDS
    elif scope == SCOPE_SCALERS:
        names = _SCALER_FIELDS
    else:
        raise ConfigError(f"unknown fingerprint scope {scope!r}")
    fields = _field_map(validated)
    lines = [f"scope={scope}"]
    lines.extend(f"{name}={fields[name]}" for name in sorted(names))
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


_CONFIG_KEYS = {
    "dataset_id",
    "size_tier",
    "tier_targets",
    "train_period",
    "train_date_weights",
    "test_period",
    "val_approach",
    "val_period",
    "val_fraction",
    "app_selection",
    "top_x",
    "known_apps",
    "unknown_apps",
    "fit_fraction",
    "psizes_scaler",
    "ipt_scaler",
    "fstats_scaler",
    "psizes_max_clip",
    "ipt_min_clip",
    "ipt_max_clip",
    "fstats_quantile_clip_q",
    "seed",
    "strict_time_order",
    "train_size",
    "val_size",
    "test_size",
}


def _enum_from(value, enum_cls, name: str):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).strip().lower() if enum_cls is not SizeTier else str(value).strip().upper())
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"{name}: unknown value {value!r} (allowed: {allowed})") from None


def config_from_mapping(doc: Mapping) -> DatasetConfig:
    """Build a DatasetConfig from a flat key/value mapping (TOML, CLI)."""
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "dataset_id" not in doc:
        raise ConfigError("dataset_id is required")

    def get(key, default=None):
        return doc.get(key, default)

    sel = AppSelection(
        mode=_enum_from(get("app_selection", "all-known"), AppSelectionMode, "app_selection"),
        top_x=int(get("top_x", 0) or 0),
        known_list=tuple(_str_list(get("known_apps", ()))),
        unknown_list=tuple(_str_list(get("unknown_apps", ()))),
    )
    scaling = ScalingConfig(
        fit_fraction=float(get("fit_fraction", 0.25)),
        psizes_scaler=_enum_from(get("psizes_scaler", "none"), ScalerKind, "psizes_scaler"),
        ipt_scaler=_enum_from(get("ipt_scaler", "none"), ScalerKind, "ipt_scaler"),
        fstats_scaler=_enum_from(get("fstats_scaler", "none"), ScalerKind, "fstats_scaler"),
        psizes_max_clip=_float_or_none(get("psizes_max_clip")),
        ipt_min_clip=_float_or_none(get("ipt_min_clip")),
        ipt_max_clip=_float_or_none(get("ipt_max_clip")),
        fstats_quantile_clip_q=_float_or_none(get("fstats_quantile_clip_q")),
    )
    tier_targets = get("tier_targets")
    if tier_targets is not None:
        tier_targets = {str(k).upper(): int(v) for k, v in dict(tier_targets).items()}
    weights = get("train_date_weights")
    if weights is not None:
        weights = [float(w) for w in _num_list(weights)]
    return DatasetConfig(
        dataset_id=str(doc["dataset_id"]),
        train_period=get("train_period", ""),
        test_period=get("test_period", ""),
        size_tier=_enum_from(get("size_tier", "S"), SizeTier, "size_tier"),
        tier_targets=tier_targets,
        train_date_weights=weights,
        val_approach=_enum_from(get("val_approach", "split-from-train"), ValApproach, "val_approach"),
        val_period=get("val_period"),
        val_fraction=float(get("val_fraction", 0.2)),
        app_selection=sel,
        scaling=scaling,
        seed=int(get("seed", 42)),
        strict_time_order=_bool_from(get("strict_time_order", True)),
        train_size=_int_or_none(get("train_size")),
        val_size=_int_or_none(get("val_size")),
        test_size=_int_or_none(get("test_size")),
    )


def load_config_file(path) -> dict:
    """Read a flat TOML config document into a plain dict."""
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as tomllib
    raw = Path(path).read_bytes()
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from None


def _str_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [tok.strip() for tok in value.split(",") if tok.strip()]
    return [str(v) for v in value]


def _num_list(value) -> list:
    if isinstance(value, str):
        return [tok.strip() for tok in value.split(",") if tok.strip()]
    return list(value)


def _float_or_none(value) -> float | None:
    return None if value is None else float(value)


def _int_or_none(value) -> int | None:
    return None if value is None else int(value)


def _bool_from(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot interpret {value!r} as a boolean")
