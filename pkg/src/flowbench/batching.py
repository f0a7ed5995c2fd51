"""Serve splits as whole tables or deterministic batch iterators.

Reads are grouped per date partition and then reordered, so partition files
are touched sequentially regardless of the requested row order. Shuffling is
stateless: the epoch permutation comes from sorting row ids on
hash(seed, epoch, row_id), so any epoch can be reproduced or resumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import TableMemoryError
from .hashing import shuffle_order
from .scaling import FittedScalers, transform_arrays
from .split import SplitIndex
from .store import Store
from .table import Table

DEFAULT_TABLE_BYTES_CEILING = 2 * 1024**3


def gather_rows(store: Store, row_ids: np.ndarray) -> dict[str, np.ndarray]:
    """Raw column arrays for the given rows, ascending by row_id.

    Returns row_id, date, label, valid_len, ppi_sizes, ppi_ipt, ppi_dirs and
    flow_stats; partitions are read in date order and the result reordered.
    """
    row_ids = np.asarray(row_ids, dtype=np.uint64)
    chunks: list[dict[str, np.ndarray]] = []
    for date in store.manifest.dates:
        part = store.partition(date)
        if len(part) == 0:
            continue
        pos = np.minimum(np.searchsorted(part.row_id, row_ids), len(part.row_id) - 1)
        hit = part.row_id[pos] == row_ids
        idx = pos[hit]
        if len(idx) == 0:
            continue
        chunks.append(
            {
                "row_id": part.row_id[idx],
                "date": np.full(len(idx), date, dtype="U10"),
                "label": part.label_strings()[idx],
                "valid_len": part.valid_len[idx].astype(np.int64),
                "ppi_sizes": part.sizes[idx],
                "ppi_ipt": part.ipt[idx],
                "ppi_dirs": part.dirs[idx],
                "flow_stats": part.stats[idx],
            }
        )
    if not chunks:
        l_ppi, n_stats = store.manifest.l_ppi, len(store.manifest.stat_names)
        return {
            "row_id": np.empty(0, dtype=np.uint64),
            "date": np.empty(0, dtype="U10"),
            "label": np.empty(0, dtype="U1"),
            "valid_len": np.empty(0, dtype=np.int64),
            "ppi_sizes": np.empty((0, l_ppi), dtype=np.int32),
            "ppi_ipt": np.empty((0, l_ppi), dtype=np.float64),
            "ppi_dirs": np.empty((0, l_ppi), dtype=np.int8),
            "flow_stats": np.empty((0, n_stats), dtype=np.float64),
        }
    merged = {k: np.concatenate([c[k] for c in chunks]) for k in chunks[0]}
    order = np.argsort(merged["row_id"], kind="stable")
    return {k: v[order] for k, v in merged.items()}


def estimate_table_bytes(store: Store, n_rows: int) -> int:
    l_ppi, n_stats = store.manifest.l_ppi, len(store.manifest.stat_names)
    per_row = 8 + 40 + 40 + 8 + 8 + l_ppi * (8 + 8 + 1) + n_stats * 8
    return n_rows * per_row


def _assemble(
    store: Store,
    split_index: SplitIndex,
    rows: np.ndarray,
    scalers: FittedScalers | None,
) -> dict[str, np.ndarray]:
    data = gather_rows(store, rows)
    label_id = split_index.class_map.ids_for(data["label"])
    if scalers is not None:
        sizes, ipt, stats = transform_arrays(
            scalers, data["ppi_sizes"], data["ppi_ipt"], data["valid_len"], data["flow_stats"]
        )
        data["ppi_sizes"], data["ppi_ipt"], data["flow_stats"] = sizes, ipt, stats
    data["label_id"] = label_id
    return data


_TABLE_COLUMN_ORDER = (
    "row_id",
    "date",
    "label",
    "label_id",
    "ppi_sizes",
    "ppi_ipt",
    "ppi_dirs",
    "valid_len",
    "flow_stats",
)


def to_table(
    store: Store,
    split_index: SplitIndex,
    split: str,
    scalers: FittedScalers | None = None,
    max_bytes: int = DEFAULT_TABLE_BYTES_CEILING,
) -> Table:
    """One split as an in-memory table, one row per index entry, ascending row_id.

    Label ids come from the split's class map (unknown_id only ever appears
    in test). Raises when the estimated size exceeds max_bytes; use
    iter_batches for anything that large.
    """
    rows = split_index.rows(split)
    estimated = estimate_table_bytes(store, len(rows))
    if estimated > max_bytes:
        raise TableMemoryError(
            f"{split} table would need about {estimated / 1024**2:.0f} MiB "
            f"(> {max_bytes / 1024**2:.0f} MiB ceiling); use iter_batches instead"
        )
    data = _assemble(store, split_index, rows, scalers)
    return Table({k: data[k] for k in _TABLE_COLUMN_ORDER}, store.manifest.stat_names)


@dataclass(frozen=True)
class Batch:
    psizes: np.ndarray  # [B, L_ppi]
    ipt: np.ndarray  # [B, L_ppi]
    dirs: np.ndarray  # [B, L_ppi]
    valid_len: np.ndarray  # [B]
    fstats: np.ndarray  # [B, F]
    label_id: np.ndarray  # [B]
    date: np.ndarray  # [B] ISO strings
    row_id: np.ndarray  # [B]

    def __len__(self) -> int:
        return len(self.row_id)


def iter_batches(
    store: Store,
    split_index: SplitIndex,
    split: str,
    batch_size: int,
    scalers: FittedScalers | None = None,
    shuffle: bool = False,
    seed: int = 0,
    epoch: int = 0,
) -> Iterator[Batch]:
    """Yield the split exactly once as batches; the last one may be short.

    With shuffle the order is a pure function of (seed, epoch); without it,
    rows come in ascending row_id order. Iterators over the same store are
    independent and safe to run concurrently.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    rows = split_index.rows(split)
    order = shuffle_order(seed, epoch, rows) if shuffle else np.sort(rows)
    data = _assemble(store, split_index, np.sort(rows), scalers)
    pos = np.searchsorted(data["row_id"], order)
    for start in range(0, len(order), batch_size):
        sel = pos[start : start + batch_size]
        yield Batch(
            psizes=data["ppi_sizes"][sel],
            ipt=data["ppi_ipt"][sel],
            dirs=data["ppi_dirs"][sel],
            valid_len=data["valid_len"][sel],
            fstats=data["flow_stats"][sel],
            label_id=data["label_id"][sel],
            date=data["date"][sel],
            row_id=data["row_id"][sel],
        )


def table_in_order(
    store: Store,
    split_index: SplitIndex,
    split: str,
    scalers: FittedScalers | None = None,
    shuffle: bool = False,
    seed: int = 0,
    epoch: int = 0,
    max_bytes: int = DEFAULT_TABLE_BYTES_CEILING,
) -> Table:
    """Like to_table but rows follow the iterator order for (seed, epoch)."""
    table = to_table(store, split_index, split, scalers=scalers, max_bytes=max_bytes)
    if not shuffle:
        return table
    rows = split_index.rows(split)
    order = shuffle_order(seed, epoch, rows)
    pos = np.searchsorted(table["row_id"], order)
    return table.take(pos)
