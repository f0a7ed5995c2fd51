"""Synthetic flow-record stores with controllable drift and novel classes.

The generator exists so that every pipeline behavior is testable at desk
scale: class popularity follows a power law, packet sizes come from a
truncated discrete normal clamped to [0, 1500], inter-packet times from an
exponential law, sequence lengths from a capped geometric law. Drift events
shift the packet-size means of a deterministic subset of classes from a
given date onward; novel classes contribute no rows before their first
date. Output is a regular store, indistinguishable from an ingested one,
and fully determined by the spec (including the seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date as _date
from datetime import timedelta

import numpy as np

from .errors import SynthError
from .hashing import PURPOSE_DRIFT, derive_key, priorities
from .sampling import largest_remainder
from .store import DEFAULT_L_PPI, DEFAULT_STAT_NAMES, Partition, StoreManifest, write_store


@dataclass(frozen=True)
class DriftEvent:
    """From `date` onward, a hash-chosen `class_fraction` of classes has its
    mean packet size shifted by `size_shift` bytes."""

    date: str
    class_fraction: float
    size_shift: float


@dataclass(frozen=True)
class NovelArrival:
    class_name: str
    first_date: str


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int
    dates: tuple[str, ...]
    rows_per_date: int
    popularity_exponent: float = 1.0
    size_mean_range: tuple[float, float] = (300.0, 900.0)
    size_spread_range: tuple[float, float] = (20.0, 60.0)
    ipt_mean_range: tuple[float, float] = (5.0, 200.0)
    seq_len_p_range: tuple[float, float] = (0.05, 0.35)
    drift_events: tuple[DriftEvent, ...] = ()
    novel_arrivals: tuple[NovelArrival, ...] = ()
    seed: int = 0
    l_ppi: int = DEFAULT_L_PPI
    dataset_id: str = "synthetic"

    def class_names(self) -> list[str]:
        return [f"app_{i:03d}" for i in range(self.n_classes)]


def date_range(start: str, n_days: int) -> tuple[str, ...]:
    first = _date.fromisoformat(start)
    return tuple((first + timedelta(days=i)).isoformat() for i in range(n_days))


def _check_spec(spec: SynthSpec) -> None:
    if spec.n_classes < 1:
        raise SynthError("n_classes must be at least 1")
    if spec.rows_per_date < 1:
        raise SynthError("rows_per_date must be at least 1")
    if not spec.dates:
        raise SynthError("dates must be non-empty")
    if list(spec.dates) != sorted(set(spec.dates)):
        raise SynthError("dates must be strictly ascending and unique")
    date_set = set(spec.dates)
    for ev in spec.drift_events:
        if ev.date not in date_set:
            raise SynthError(f"drift event date {ev.date} is not a generated date")
        if not (0.0 <= ev.class_fraction <= 1.0):
            raise SynthError("drift class_fraction must lie in [0, 1]")
    names = set(spec.class_names())
    for arr in spec.novel_arrivals:
        if arr.first_date not in date_set:
            raise SynthError(f"novel arrival date {arr.first_date} is not a generated date")
        if arr.class_name not in names:
            raise SynthError(f"novel arrival class {arr.class_name} does not exist")


@dataclass(frozen=True)
class _ClassParams:
    size_mean: np.ndarray
    size_spread: np.ndarray
    ipt_mean: np.ndarray
    seq_len_p: np.ndarray


def _class_params(spec: SynthSpec) -> _ClassParams:
    """Per-class generative parameters, derived deterministically from the seed.

    Size means are spaced evenly across their range so classes stay
    separable regardless of the seed; the remaining parameters are drawn
    from a dedicated RNG stream.
    """
    n = spec.n_classes
    lo, hi = spec.size_mean_range
    centers = lo + (hi - lo) * (np.arange(n) + 0.5) / n
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0xFFFFFFFF, 0]))
    spread = rng.uniform(*spec.size_spread_range, size=n)
    ipt_mean = rng.uniform(*spec.ipt_mean_range, size=n)
    seq_p = rng.uniform(*spec.seq_len_p_range, size=n)
    return _ClassParams(centers, spread, ipt_mean, seq_p)


def drifted_classes(spec: SynthSpec, event_idx: int) -> np.ndarray:
    """Class indices a drift event affects: the lowest hash ranks win."""
    ev = spec.drift_events[event_idx]
    n_affected = int(np.floor(ev.class_fraction * spec.n_classes + 0.5))
    if n_affected == 0:
        return np.empty(0, dtype=np.int64)
    key = derive_key(PURPOSE_DRIFT, spec.seed, event_idx)
    prio = priorities(key, np.arange(spec.n_classes, dtype=np.uint64))
    order = np.lexsort((np.arange(spec.n_classes), prio))
    return np.sort(order[:n_affected].astype(np.int64))


def _mean_shift_by_date(spec: SynthSpec) -> dict[str, np.ndarray]:
    """Cumulative per-class size-mean shift in effect on each date."""
    shift = np.zeros(spec.n_classes, dtype=np.float64)
    pending = sorted(
        ((ev.date, i) for i, ev in enumerate(spec.drift_events)), key=lambda t: (t[0], t[1])
    )
    out: dict[str, np.ndarray] = {}
    k = 0
    for date in spec.dates:
        while k < len(pending) and pending[k][0] <= date:
            idx = pending[k][1]
            affected = drifted_classes(spec, idx)
            shift[affected] += spec.drift_events[idx].size_shift
            k += 1
        out[date] = shift.copy()
    return out


def generate(spec: SynthSpec, out_path, overwrite: bool = False) -> StoreManifest:
    """Write a synthetic store; returns its manifest.

    Per-date class counts follow the popularity law exactly (largest
    remainder over the classes available on that date), so empirical
    frequencies are reproducible rather than multinomial noise.
    """
    _check_spec(spec)
    params = _class_params(spec)
    names = spec.class_names()
    first_date = {arr.class_name: arr.first_date for arr in spec.novel_arrivals}
    popularity = (np.arange(spec.n_classes) + 1.0) ** (-spec.popularity_exponent)
    shifts = _mean_shift_by_date(spec)

    partitions: dict[str, Partition] = {}
    row_base = 0
    for date_idx, date in enumerate(spec.dates):
        available = [
            c for c, name in enumerate(names) if first_date.get(name, spec.dates[0]) <= date
        ]
        if not available:
            raise SynthError(f"no classes available on {date}")
        weights = popularity[available]
        counts = largest_remainder(weights, spec.rows_per_date)
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed & 0xFFFFFFFF, 1 + date_idx])
        )
        n = spec.rows_per_date
        sizes = np.zeros((n, spec.l_ppi), dtype=np.int32)
        ipt = np.zeros((n, spec.l_ppi), dtype=np.float64)
        dirs = np.zeros((n, spec.l_ppi), dtype=np.int8)
        valid = np.zeros(n, dtype=np.uint16)
        label_idx = np.zeros(n, dtype=np.uint32)
        stats = np.zeros((n, len(DEFAULT_STAT_NAMES)), dtype=np.float64)

        offset = 0
        for slot, (c, count) in enumerate(zip(available, counts)):
            if count == 0:
                continue
            rows = slice(offset, offset + count)
            offset += count
            label_idx[rows] = slot
            mean = params.size_mean[c] + shifts[date][c]
            lengths = np.minimum(rng.geometric(params.seq_len_p[c], size=count), spec.l_ppi)
            valid[rows] = lengths.astype(np.uint16)
            raw_sizes = rng.normal(mean, params.size_spread[c], size=(count, spec.l_ppi))
            raw_sizes = np.clip(np.rint(raw_sizes), 0, 1500).astype(np.int32)
            raw_ipt = rng.exponential(params.ipt_mean[c], size=(count, spec.l_ppi))
            raw_dirs = (rng.integers(0, 2, size=(count, spec.l_ppi)) * 2 - 1).astype(np.int8)
            raw_dirs[:, 0] = 1  # first packet is always client-to-server
            mask = np.arange(spec.l_ppi)[None, :] < lengths[:, None]
            sizes[rows] = np.where(mask, raw_sizes, 0)
            ipt[rows] = np.where(mask, raw_ipt, 0.0)
            dirs[rows] = np.where(mask, raw_dirs, 0)

        mask = np.arange(spec.l_ppi)[None, :] < valid.astype(np.int64)[:, None]
        n_valid = np.maximum(valid.astype(np.int64), 1)
        fwd = mask & (dirs == 1)
        rev = mask & (dirs == -1)
        sum_sizes = sizes.sum(axis=1, dtype=np.float64)
        mean_size = sum_sizes / n_valid
        var_size = ((sizes - mean_size[:, None]) ** 2 * mask).sum(axis=1) / n_valid
        stats[:, 0] = ipt.sum(axis=1) / 1000.0  # duration_s
        stats[:, 1] = fwd.sum(axis=1)  # packets_fwd
        stats[:, 2] = rev.sum(axis=1)  # packets_rev
        stats[:, 3] = (sizes * fwd).sum(axis=1)  # bytes_fwd
        stats[:, 4] = (sizes * rev).sum(axis=1)  # bytes_rev
        stats[:, 5] = mean_size
        stats[:, 6] = np.sqrt(var_size)
        stats[:, 7] = ipt.sum(axis=1) / n_valid  # mean_ipt_ms

        labels = tuple(names[c] for c in available)
        partitions[date] = Partition(
            date=date,
            row_id=np.arange(row_base, row_base + n, dtype=np.uint64),
            labels=labels,
            label_idx=label_idx,
            valid_len=valid,
            sizes=sizes,
            ipt=ipt,
            dirs=dirs,
            stats=stats,
        )
        row_base += n
    return write_store(
        out_path, spec.dataset_id, partitions, spec.l_ppi, DEFAULT_STAT_NAMES, overwrite=overwrite
    )
