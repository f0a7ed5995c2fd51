"""Deterministic train/validation/test materialization.

All selection is driven by the stable hash priorities in `hashing`, so a
materialized split is a pure function of (validated config, store): equal
inputs give byte-identical persisted indexes across runs and platforms.
Unknown-class rows never enter train or validation sets; the test set keeps
them so open-world metrics have something to detect.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import (
    SCOPE_SPLIT,
    AppSelection,
    AppSelectionMode,
    ValApproach,
    ValidatedConfig,
)
from .errors import CapExceedsAvailable, SplitError
from .hashing import (
    PURPOSE_TEST,
    PURPOSE_TRAIN,
    PURPOSE_VAL,
    PURPOSE_VAL_SPLIT,
    derive_key,
    take_lowest,
)
from .sampling import saturating_quotas
from .store import Store, derive_size_tier

_INDEX_MAGIC = b"FBIDX001"


@dataclass(frozen=True)
class ClassMap:
    """Known classes in id order (0..n-1) plus the reserved unknown id.

    Known ids are assigned by ascending class name so they do not move when
    per-class counts drift between experiments. unknown_id equals
    len(known), keeping label ids dense and usable as array indices.
    """

    known: tuple[str, ...]
    unknown: frozenset[str]

    @property
    def unknown_id(self) -> int:
        return len(self.known)

    def id_of(self, label: str) -> int:
        try:
            return self.known.index(label)
        except ValueError:
            return self.unknown_id

    def ids_for(self, labels: Sequence[str]) -> np.ndarray:
        lut = {name: i for i, name in enumerate(self.known)}
        unk = self.unknown_id
        return np.fromiter((lut.get(l, unk) for l in labels), dtype=np.int64, count=len(labels))


@dataclass(frozen=True)
class SplitIndex:
    train: np.ndarray  # sorted u64
    val: np.ndarray
    test: np.ndarray
    class_map: ClassMap
    per_date_counts: dict[str, dict[str, int]]  # split -> date -> count
    provenance: str  # SPLIT-scope fingerprint

    def rows(self, split: str) -> np.ndarray:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[split]
        except KeyError:
            raise SplitError(f"unknown split {split!r}; expected train, val, or test") from None


def select_apps(
    class_counts: Mapping[str, int],
    sel: AppSelection,
    observed_classes: Sequence[str] | None = None,
) -> ClassMap:
    """Partition classes into known and unknown.

    class_counts are tallied over the train dates; observed_classes is the
    full universe over every configured period (novel classes may appear
    only at test time) and defaults to the keys of class_counts. For TOP_X
    the known set is the x largest counts, ties broken by lexicographically
    smaller name first.
    """
    if not class_counts:
        raise SplitError("no classes observed over the train dates")
    universe = set(observed_classes) if observed_classes is not None else set(class_counts)
    universe |= set(class_counts)

    mode = sel.mode
    if mode is AppSelectionMode.ALL_KNOWN:
        known = set(universe)
    elif mode is AppSelectionMode.TOP_X:
        if sel.top_x > len(class_counts):
            raise SplitError(
                f"top_x={sel.top_x} exceeds the {len(class_counts)} classes observed on train dates"
            )
        ranked = sorted(class_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        known = {name for name, _ in ranked[: sel.top_x]}
    elif mode is AppSelectionMode.EXPLICIT_UNKNOWN:
        ghost = sorted(set(sel.unknown_list) - universe)
        if ghost:
            warnings.warn(f"explicit unknown classes never observed: {ghost}")
        known = universe - set(sel.unknown_list)
    elif mode is AppSelectionMode.FIXED:
        listed = set(sel.known_list) | set(sel.unknown_list)
        stray = sorted(universe - listed)
        if stray:
            warnings.warn(f"classes observed but listed in neither set, treated as unknown: {stray}")
        known = set(sel.known_list)
    else:  # pragma: no cover
        raise SplitError(f"unhandled app selection mode {mode}")
    unknown = (universe | set(sel.unknown_list)) - known
    return ClassMap(known=tuple(sorted(known)), unknown=frozenset(unknown))


def _eligible_by_date(
    store: Store,
    tier_rows: np.ndarray,
    dates: Sequence[str],
    keep_labels: frozenset[str] | None,
) -> dict[str, np.ndarray]:
    """Row ids per date that sit inside the tier and carry an accepted label."""
    out: dict[str, np.ndarray] = {}
    for date in dates:
        part = store.partition(date)
        mask = np.isin(part.row_id, tier_rows, assume_unique=False)
        if keep_labels is not None:
            allowed = np.asarray([lab in keep_labels for lab in part.labels], dtype=bool)
            mask &= allowed[part.label_idx] if len(part.labels) else False
        out[date] = part.row_id[mask]
    return out


def class_counts_over(
    store: Store, tier_rows: np.ndarray, dates: Sequence[str]
) -> dict[str, int]:
    """Per-class row counts over the given dates, restricted to the tier."""
    counts: dict[str, int] = {}
    for date in dates:
        part = store.partition(date)
        mask = np.isin(part.row_id, tier_rows)
        if not mask.any():
            continue
        idx_counts = np.bincount(part.label_idx[mask], minlength=len(part.labels))
        for label, c in zip(part.labels, idx_counts):
            if c:
                counts[label] = counts.get(label, 0) + int(c)
    return counts


def _select_with_cap(
    eligible: dict[str, np.ndarray],
    weights: Sequence[float] | None,
    cap: int | None,
    key: int,
    what: str,
) -> np.ndarray:
    dates = list(eligible)
    avail = [len(eligible[d]) for d in dates]
    total = int(sum(avail))
    if cap is None:
        picks = [eligible[d] for d in dates]
    else:
        if cap > total:
            raise CapExceedsAvailable(
                f"{what} cap {cap} exceeds eligible rows; maximum achievable {total}"
            )
        w = list(weights) if weights is not None else [float(a) for a in avail]
        quotas = saturating_quotas(avail, w, cap)
        picks = [take_lowest(key, eligible[d], q) for d, q in zip(dates, quotas)]
    picks = [p for p in picks if len(p)]
    if not picks:
        return np.empty(0, dtype=np.uint64)
    return np.sort(np.concatenate(picks))


def build_train_index(
    store: Store,
    tier_rows: np.ndarray,
    train_dates: Sequence[str],
    weights: Sequence[float] | None,
    cap: int | None,
    class_map: ClassMap,
    seed: int,
) -> np.ndarray:
    """Training rows: known classes only, over the train dates.

    Without a cap every eligible row is taken. With a cap, per-date quotas
    are cap * weight (largest-remainder rounded); a date short of its quota
    is saturated and the shortfall spreads proportionally over the rest.
    Rows within a date are picked by lowest stable hash priority.
    """
    eligible = _eligible_by_date(store, tier_rows, train_dates, frozenset(class_map.known))
    key = derive_key(PURPOSE_TRAIN, seed)
    return _select_with_cap(eligible, weights, cap, key, "train")


def build_test_index(
    store: Store,
    tier_rows: np.ndarray,
    test_dates: Sequence[str],
    cap: int | None,
    class_map: ClassMap,
    seed: int,
) -> np.ndarray:
    """Test rows over the test dates: known and unknown classes both included.

    A cap takes a uniform stable-priority subsample, spread over the test
    dates proportionally to their eligible row counts.
    """
    eligible = _eligible_by_date(store, tier_rows, test_dates, None)
    key = derive_key(PURPOSE_TEST, seed)
    return _select_with_cap(eligible, None, cap, key, "test")


def split_validation(
    store: Store,
    train_index: np.ndarray,
    approach: ValApproach,
    *,
    fraction: float | None = None,
    val_dates: Sequence[str] = (),
    val_size: int | None = None,
    tier_rows: np.ndarray | None = None,
    class_map: ClassMap,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Carve the validation set; returns (train', val), both sorted.

    SPLIT_FROM_TRAIN draws a class-stratified subset: each class contributes
    floor(fraction * n_c) rows and the global remainder goes to the largest
    fractional parts (ties by class name). Classes with a single row stay in
    train. SEPARATE_DATES builds the validation set from its own dates like
    a train set (known classes only, no weights).
    """
    if approach is ValApproach.SEPARATE_DATES:
        overlap_dates = set(val_dates) & set(store.date_of_rows(train_index))
        if overlap_dates:
            raise SplitError(f"validation dates overlap train rows on {sorted(overlap_dates)}")
        assert tier_rows is not None
        eligible = _eligible_by_date(store, tier_rows, val_dates, frozenset(class_map.known))
        key = derive_key(PURPOSE_VAL, seed)
        val = _select_with_cap(eligible, None, val_size, key, "val")
        return np.sort(train_index), val

    assert fraction is not None
    train_index = np.sort(np.asarray(train_index, dtype=np.uint64))
    n = len(train_index)
    target_total = int(np.floor(fraction * n + 0.5))
    if target_total == 0:
        warnings.warn("val_fraction rounds to an empty validation set")
        return train_index, np.empty(0, dtype=np.uint64)

    labels = store.labels_of_rows(train_index)
    classes = sorted(set(labels))
    rows_by_class = {c: train_index[labels == c] for c in classes}
    singles = [c for c in classes if len(rows_by_class[c]) == 1]
    if singles:
        warnings.warn(f"classes with one training row stay wholly in train: {singles}")
    eligible_classes = [c for c in classes if len(rows_by_class[c]) > 1]

    quota: dict[str, int] = {}
    fracs: list[tuple[float, str]] = []
    for c in eligible_classes:
        exact = fraction * len(rows_by_class[c])
        quota[c] = int(np.floor(exact))
        fracs.append((exact - quota[c], c))
    # Distribute the global remainder, at most one extra row per class so the
    # per-class deviation from round(fraction * n_c) stays within 1. With many
    # singleton classes the global target may be unreachable; per-class bounds
    # win over global exactness then.
    remainder = target_total - sum(quota.values())
    for _, c in sorted(fracs, key=lambda fc: (-fc[0], fc[1])):
        if remainder <= 0:
            break
        if quota[c] < len(rows_by_class[c]):
            quota[c] += 1
            remainder -= 1

    key = derive_key(PURPOSE_VAL_SPLIT, seed)
    val_parts = [take_lowest(key, rows_by_class[c], k) for c, k in quota.items() if k > 0]
    val = np.sort(np.concatenate(val_parts)) if val_parts else np.empty(0, dtype=np.uint64)
    if len(val) == 0:
        warnings.warn("validation set is empty for this fraction and class mix")
    train_prime = np.setdiff1d(train_index, val, assume_unique=True)
    return train_prime, val


def _per_date_counts(store: Store, rows: np.ndarray) -> dict[str, int]:
    if len(rows) == 0:
        return {}
    dates = store.date_of_rows(rows)
    uniq, counts = np.unique(dates, return_counts=True)
    return {str(d): int(c) for d, c in zip(uniq, counts)}


def materialize(validated: ValidatedConfig, store: Store) -> SplitIndex:
    """Run the whole pipeline: tier, class split, train/val/test selection."""
    tier_rows = derive_size_tier(
        store,
        validated.size_tier,
        validated.seed,
        targets=None if validated.tier_target is None else {validated.size_tier: validated.tier_target},
    )
    train_counts = class_counts_over(store, tier_rows, validated.train_dates)
    observed = set(train_counts)
    for dates in (validated.val_dates, validated.test_dates):
        observed |= set(class_counts_over(store, tier_rows, dates))
    class_map = select_apps(train_counts, validated.app_selection, sorted(observed))

    train_all = build_train_index(
        store,
        tier_rows,
        validated.train_dates,
        validated.train_weights,
        validated.train_size,
        class_map,
        validated.seed,
    )
    train, val = split_validation(
        store,
        train_all,
        validated.val_approach,
        fraction=validated.val_fraction,
        val_dates=validated.val_dates,
        val_size=validated.val_size,
        tier_rows=tier_rows,
        class_map=class_map,
        seed=validated.seed,
    )
    test = build_test_index(
        store,
        tier_rows,
        validated.test_dates,
        validated.test_size,
        class_map,
        validated.seed,
    )
    per_date = {
        "train": _per_date_counts(store, train),
        "val": _per_date_counts(store, val),
        "test": _per_date_counts(store, test),
    }
    return SplitIndex(
        train=train,
        val=val,
        test=test,
        class_map=class_map,
        per_date_counts=per_date,
        provenance=validated.fingerprint(SCOPE_SPLIT),
    )


def split_dir(store: Store) -> Path:
    return store.path / "splits"


def persist_split(split: SplitIndex, store: Store) -> Path:
    """Write the binary index and its JSON sidecar; returns the index path."""
    out_dir = split_dir(store)
    out_dir.mkdir(parents=True, exist_ok=True)
    idx_path = out_dir / f"{split.provenance}.idx"
    chunks = [
        _INDEX_MAGIC,
        struct.pack("<QQQ", len(split.train), len(split.val), len(split.test)),
        np.ascontiguousarray(split.train, dtype="<u8").tobytes(),
        np.ascontiguousarray(split.val, dtype="<u8").tobytes(),
        np.ascontiguousarray(split.test, dtype="<u8").tobytes(),
    ]
    tmp = idx_path.with_suffix(".idx.tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(idx_path)

    sidecar = {
        "fingerprint": split.provenance,
        "sizes": {"train": len(split.train), "val": len(split.val), "test": len(split.test)},
        "per_date_counts": split.per_date_counts,
        "class_map": {
            "known": list(split.class_map.known),
            "unknown": sorted(split.class_map.unknown),
            "unknown_id": split.class_map.unknown_id,
        },
    }
    json_path = out_dir / f"{split.provenance}.json"
    tmp_json = json_path.with_suffix(".json.tmp")
    tmp_json.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp_json.replace(json_path)
    return idx_path


def load_split(store: Store, fingerprint: str) -> SplitIndex | None:
    """Load a persisted split by fingerprint; None when absent or unreadable."""
    idx_path = split_dir(store) / f"{fingerprint}.idx"
    json_path = split_dir(store) / f"{fingerprint}.json"
    if not (idx_path.is_file() and json_path.is_file()):
        return None
    try:
        blob = idx_path.read_bytes()
        if blob[:8] != _INDEX_MAGIC:
            raise ValueError("bad index magic")
        n_train, n_val, n_test = struct.unpack_from("<QQQ", blob, 8)
        off = 8 + 24
        train = np.frombuffer(blob, dtype="<u8", count=n_train, offset=off).copy()
        off += train.nbytes
        val = np.frombuffer(blob, dtype="<u8", count=n_val, offset=off).copy()
        off += val.nbytes
        test = np.frombuffer(blob, dtype="<u8", count=n_test, offset=off).copy()
        doc = json.loads(json_path.read_text(encoding="utf-8"))
        class_map = ClassMap(
            known=tuple(doc["class_map"]["known"]),
            unknown=frozenset(doc["class_map"]["unknown"]),
        )
        per_date = {
            split: {str(d): int(c) for d, c in counts.items()}
            for split, counts in doc["per_date_counts"].items()
        }
        return SplitIndex(
            train=train,
            val=val,
            test=test,
            class_map=class_map,
            per_date_counts=per_date,
            provenance=doc["fingerprint"],
        )
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        warnings.warn(f"ignoring unreadable split cache {idx_path.name}: {exc}")
        return None


def materialize_cached(validated: ValidatedConfig, store: Store) -> tuple[SplitIndex, bool]:
    """Materialize or reuse the persisted split; returns (split, from_cache)."""
    fp = validated.fingerprint(SCOPE_SPLIT)
    cached = load_split(store, fp)
    if cached is not None:
        return cached, True
    split = materialize(validated, store)
    persist_split(split, store)
    return split, False
