"""Date-partitioned columnar storage for flow records.

A store is a directory with a JSON manifest and one binary partition per
capture date:

    <store>/manifest.json
    <store>/partitions/<YYYY-MM-DD>.col

Partition files are column-major with little-endian fixed-width numerics
and a length-prefixed label dictionary (see _write_partition for the exact
layout). Stores are immutable after ingestion: readers need no coordination,
and every row keeps the 64-bit row_id it was assigned in ingestion order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import shutil
import struct
from dataclasses import dataclass
from datetime import date as _date
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    IngestError,
    RowNotFoundError,
    StoreCorruptError,
    StoreExistsError,
    StoreNotFoundError,
    TierTargetError,
    UnknownFieldError,
)
from .hashing import PURPOSE_TIER, derive_key, take_lowest
from .sampling import nested_counts
from .table import Table

SCHEMA_VERSION = 1
DEFAULT_L_PPI = 30
DEFAULT_STAT_NAMES = (
    "duration_s",
    "packets_fwd",
    "packets_rev",
    "bytes_fwd",
    "bytes_rev",
    "mean_pkt_size",
    "stdev_pkt_size",
    "mean_ipt_ms",
)
CSV_FIXED_COLUMNS = ("date", "label", "ppi_sizes", "ppi_ipt_ms", "ppi_dirs")

_PARTITION_MAGIC = b"FBCOL001"

FIELDS = ("row_id", "date", "label", "ppi_sizes", "ppi_ipt", "ppi_dirs", "valid_len", "flow_stats")


class SizeTier(Enum):
    """Dataset size tiers. Targets at full scale; desk-scale runs override them."""

    XS = "XS"
    S = "S"
    M = "M"
    L = "L"
    ORIG = "ORIG"

    def __str__(self) -> str:
        return self.value


#: Published full-scale row targets; ORIG means no subsampling.
FULL_SCALE_TIER_TARGETS: dict[SizeTier, int | None] = {
    SizeTier.XS: 10_000_000,
    SizeTier.S: 25_000_000,
    SizeTier.M: 50_000_000,
    SizeTier.L: 100_000_000,
    SizeTier.ORIG: None,
}


@dataclass(frozen=True)
class FlowRecord:
    """One bidirectional flow, unpadded.

    Sequences hold the true (valid) prefix only; lengths are equal by
    construction and bounded by the store's L_ppi.
    """

    row_id: int
    date: str
    label: str
    ppi_sizes: tuple[int, ...]
    ppi_ipt: tuple[float, ...]
    ppi_dirs: tuple[int, ...]
    flow_stats: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.ppi_sizes) == len(self.ppi_ipt) == len(self.ppi_dirs)):
            raise ValueError("sequence-length mismatch")
        if self.label == "":
            raise ValueError("empty label")
        if any(v < 0 for v in self.ppi_ipt):
            raise ValueError("negative inter-packet time")
        if any(v < 0 for v in self.ppi_sizes):
            raise ValueError("negative packet size")
        if any(v not in (1, -1) for v in self.ppi_dirs):
            raise ValueError("direction values must be 1 or -1")


@dataclass(frozen=True)
class StoreManifest:
    dataset_id: str
    schema_version: int
    l_ppi: int
    stat_names: tuple[str, ...]
    dates: tuple[str, ...]
    date_rows: dict[str, int]
    classes: dict[str, int]
    total_rows: int
    checksums: dict[str, str]

    def to_json(self) -> str:
        doc = {
            "dataset_id": self.dataset_id,
            "schema_version": self.schema_version,
            "l_ppi": self.l_ppi,
            "stat_names": list(self.stat_names),
            "dates": [{"date": d, "rows": self.date_rows[d]} for d in self.dates],
            "classes": dict(sorted(self.classes.items())),
            "total_rows": self.total_rows,
            "checksums": dict(sorted(self.checksums.items())),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StoreManifest":
        doc = json.loads(text)
        dates = tuple(entry["date"] for entry in doc["dates"])
        date_rows = {entry["date"]: int(entry["rows"]) for entry in doc["dates"]}
        return cls(
            dataset_id=doc["dataset_id"],
            schema_version=int(doc["schema_version"]),
            l_ppi=int(doc["l_ppi"]),
            stat_names=tuple(doc["stat_names"]),
            dates=dates,
            date_rows=date_rows,
            classes={k: int(v) for k, v in doc["classes"].items()},
            total_rows=int(doc["total_rows"]),
            checksums=dict(doc["checksums"]),
        )


@dataclass
class Partition:
    """In-memory columns of one date partition, rows ascending by row_id."""

    date: str
    row_id: np.ndarray  # u64 [n]
    labels: tuple[str, ...]  # dictionary
    label_idx: np.ndarray  # u32 [n]
    valid_len: np.ndarray  # u16 [n]
    sizes: np.ndarray  # i32 [n, L]
    ipt: np.ndarray  # f64 [n, L]
    dirs: np.ndarray  # i8 [n, L]
    stats: np.ndarray  # f64 [n, F]

    def __len__(self) -> int:
        return len(self.row_id)

    def label_strings(self) -> np.ndarray:
        lookup = np.asarray(self.labels, dtype=object) if self.labels else np.empty(0, dtype=object)
        if len(self) == 0:
            return np.empty(0, dtype="U1")
        return np.asarray(lookup[self.label_idx], dtype=str)


def _write_partition(path: Path, part: Partition) -> str:
    """Serialize one partition; returns the sha256 content digest.

    Layout (all little-endian):
        magic "FBCOL001"
        u64 n_rows, u32 l_ppi, u32 n_stats
        u32 dict_count, then per label: u32 byte_len + utf-8 bytes
        blocks: row_id u64[n], label_idx u32[n], valid_len u16[n],
                sizes i32[n*L], ipt f64[n*L], dirs i8[n*L], stats f64[n*F]
    """
    n = len(part.row_id)
    l_ppi = part.sizes.shape[1] if part.sizes.ndim == 2 else 0
    n_stats = part.stats.shape[1] if part.stats.ndim == 2 else 0
    chunks = [_PARTITION_MAGIC, struct.pack("<QII", n, l_ppi, n_stats)]
    chunks.append(struct.pack("<I", len(part.labels)))
    for label in part.labels:
        raw = label.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
    chunks.append(np.ascontiguousarray(part.row_id, dtype="<u8").tobytes())
    chunks.append(np.ascontiguousarray(part.label_idx, dtype="<u4").tobytes())
    chunks.append(np.ascontiguousarray(part.valid_len, dtype="<u2").tobytes())
    chunks.append(np.ascontiguousarray(part.sizes, dtype="<i4").tobytes())
    chunks.append(np.ascontiguousarray(part.ipt, dtype="<f8").tobytes())
    chunks.append(np.ascontiguousarray(part.dirs, dtype="<i1").tobytes())
    chunks.append(np.ascontiguousarray(part.stats, dtype="<f8").tobytes())
    blob = b"".join(chunks)
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def _read_partition(path: Path, date: str) -> Partition:
    blob = path.read_bytes()
    if blob[:8] != _PARTITION_MAGIC:
        raise StoreCorruptError(f"bad partition magic in {path}")
    off = 8
    n, l_ppi, n_stats = struct.unpack_from("<QII", blob, off)
    off += 16
    (dict_count,) = struct.unpack_from("<I", blob, off)
    off += 4
    labels = []
    for _ in range(dict_count):
        (ln,) = struct.unpack_from("<I", blob, off)
        off += 4
        labels.append(blob[off : off + ln].decode("utf-8"))
        off += ln

    def block(dtype: str, count: int, shape=None) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        if shape is not None:
            arr = arr.reshape(shape)
        return arr.copy()

    row_id = block("<u8", n)
    label_idx = block("<u4", n)
    valid_len = block("<u2", n)
    sizes = block("<i4", n * l_ppi, (n, l_ppi))
    ipt = block("<f8", n * l_ppi, (n, l_ppi))
    dirs = block("<i1", n * l_ppi, (n, l_ppi))
    stats = block("<f8", n * n_stats, (n, n_stats))
    return Partition(date, row_id, tuple(labels), label_idx, valid_len, sizes, ipt, dirs, stats)


class Store:
    """Handle to an immutable store directory. Safe to share across threads."""

    def __init__(self, path: Path, manifest: StoreManifest):
        self.path = Path(path)
        self.manifest = manifest
        self._partitions: dict[str, Partition] = {}

    @classmethod
    def open(cls, path) -> "Store":
        path = Path(path)
        manifest_path = path / "manifest.json"
        if not manifest_path.is_file():
            raise StoreNotFoundError(f"no store at {path} (missing manifest.json)")
        manifest = StoreManifest.from_json(manifest_path.read_text(encoding="utf-8"))
        return cls(path, manifest)

    def partition(self, date: str) -> Partition:
        if date not in self.manifest.date_rows:
            raise StoreNotFoundError(f"date {date} not in store {self.manifest.dataset_id}")
        part = self._partitions.get(date)
        if part is None:
            part = _read_partition(self.path / "partitions" / f"{date}.col", date)
            if len(part) != self.manifest.date_rows[date]:
                raise StoreCorruptError(
                    f"partition {date} holds {len(part)} rows, manifest says "
                    f"{self.manifest.date_rows[date]}"
                )
            self._partitions[date] = part
        return part

    def verify_checksums(self) -> None:
        for date in self.manifest.dates:
            blob = (self.path / "partitions" / f"{date}.col").read_bytes()
            digest = hashlib.sha256(blob).hexdigest()
            if digest != self.manifest.checksums[date]:
                raise StoreCorruptError(f"checksum mismatch for partition {date}")

    def all_row_ids(self) -> np.ndarray:
        parts = [self.partition(d).row_id for d in self.manifest.dates]
        if not parts:
            return np.empty(0, dtype=np.uint64)
        return np.sort(np.concatenate(parts))

    def date_of_rows(self, row_ids: np.ndarray) -> np.ndarray:
        """Dates ('U10') for the given row ids, aligned with the input order."""
        row_ids = np.asarray(row_ids, dtype=np.uint64)
        out = np.empty(len(row_ids), dtype="U10")
        seen = np.zeros(len(row_ids), dtype=bool)
        for date in self.manifest.dates:
            part = self.partition(date)
            if len(part.row_id) == 0:
                continue
            pos = np.minimum(np.searchsorted(part.row_id, row_ids), len(part.row_id) - 1)
            hit = part.row_id[pos] == row_ids
            out[hit] = date
            seen |= hit
        if not seen.all():
            missing = row_ids[~seen][:5]
            raise RowNotFoundError(f"row ids not in store: {missing.tolist()}")
        return out

    def record(self, row_id: int) -> FlowRecord:
        """One row as an unpadded FlowRecord."""
        table = read_rows(self, [row_id])
        n = int(table["valid_len"][0])
        return FlowRecord(
            row_id=int(table["row_id"][0]),
            date=str(table["date"][0]),
            label=str(table["label"][0]),
            ppi_sizes=tuple(int(v) for v in table["ppi_sizes"][0, :n]),
            ppi_ipt=tuple(float(v) for v in table["ppi_ipt"][0, :n]),
            ppi_dirs=tuple(int(v) for v in table["ppi_dirs"][0, :n]),
            flow_stats=tuple(float(v) for v in table["flow_stats"][0]),
        )

    def labels_of_rows(self, row_ids: np.ndarray) -> np.ndarray:
        """Label strings for the given row ids, aligned with the input order."""
        row_ids = np.asarray(row_ids, dtype=np.uint64)
        out = np.empty(len(row_ids), dtype=object)
        seen = np.zeros(len(row_ids), dtype=bool)
        for date in self.manifest.dates:
            part = self.partition(date)
            if len(part.row_id) == 0:
                continue
            pos = np.searchsorted(part.row_id, row_ids)
            pos_c = np.minimum(pos, len(part.row_id) - 1)
            hit = part.row_id[pos_c] == row_ids
            if hit.any():
                out[hit] = part.label_strings()[pos_c[hit]]
                seen |= hit
        if not seen.all():
            missing = row_ids[~seen][:5]
            raise RowNotFoundError(f"row ids not in store: {missing.tolist()}")
        return np.asarray(out, dtype=str)


def read_rows(store: Store, rows: Iterable[int] | np.ndarray, fields: Sequence[str] | None = None) -> Table:
    """Materialize selected rows as a table, ascending by row_id.

    Sequence fields come back zero-padded to the store's L_ppi with the true
    length in valid_len. Unknown row ids or field names raise.
    """
    if fields is None:
        fields = FIELDS
    for f in fields:
        if f not in FIELDS:
            raise UnknownFieldError(f"unknown field {f!r}; available: {', '.join(FIELDS)}")
    wanted = np.unique(np.asarray(list(rows) if not isinstance(rows, np.ndarray) else rows, dtype=np.uint64))

    collected: list[dict[str, np.ndarray]] = []
    found = 0
    for date in store.manifest.dates:
        part = store.partition(date)
        if len(part) == 0 or len(wanted) == 0:
            continue
        pos = np.searchsorted(part.row_id, wanted)
        pos_c = np.minimum(pos, len(part.row_id) - 1)
        hit = part.row_id[pos_c] == wanted
        idx = pos_c[hit]
        if len(idx) == 0:
            continue
        found += len(idx)
        cols: dict[str, np.ndarray] = {}
        for f in fields:
            if f == "row_id":
                cols[f] = part.row_id[idx]
            elif f == "date":
                cols[f] = np.full(len(idx), date, dtype="U10")
            elif f == "label":
                cols[f] = part.label_strings()[idx]
            elif f == "ppi_sizes":
                cols[f] = part.sizes[idx]
            elif f == "ppi_ipt":
                cols[f] = part.ipt[idx]
            elif f == "ppi_dirs":
                cols[f] = part.dirs[idx]
            elif f == "valid_len":
                cols[f] = part.valid_len[idx]
            elif f == "flow_stats":
                cols[f] = part.stats[idx]
        cols["_sort"] = part.row_id[idx]
        collected.append(cols)

    if found != len(wanted):
        all_ids = store.all_row_ids()
        missing = np.setdiff1d(wanted, all_ids)[:5]
        raise RowNotFoundError(f"row ids not in store: {missing.tolist()}")

    if not collected:
        empty = {f: _empty_column(store.manifest, f) for f in fields}
        return Table(empty, store.manifest.stat_names)

    merged = {f: np.concatenate([c[f] for c in collected]) for f in fields}
    order = np.argsort(np.concatenate([c["_sort"] for c in collected]), kind="stable")
    merged = {f: v[order] for f, v in merged.items()}
    return Table(merged, store.manifest.stat_names)


def _empty_column(manifest: StoreManifest, field: str) -> np.ndarray:
    l_ppi, n_stats = manifest.l_ppi, len(manifest.stat_names)
    shapes = {
        "row_id": (0,),
        "date": (0,),
        "label": (0,),
        "valid_len": (0,),
        "ppi_sizes": (0, l_ppi),
        "ppi_ipt": (0, l_ppi),
        "ppi_dirs": (0, l_ppi),
        "flow_stats": (0, n_stats),
    }
    dtypes = {
        "row_id": np.uint64,
        "date": "U10",
        "label": "U1",
        "valid_len": np.uint16,
        "ppi_sizes": np.int32,
        "ppi_ipt": np.float64,
        "ppi_dirs": np.int8,
        "flow_stats": np.float64,
    }
    return np.empty(shapes[field], dtype=dtypes[field])


def derive_size_tier(
    store: Store,
    tier: SizeTier,
    seed: int,
    targets: Mapping[SizeTier, int] | None = None,
) -> np.ndarray:
    """Deterministic row-id subset for a size tier, sorted ascending.

    Per-date quotas follow the store's own date proportions (within one row
    per date), and each date keeps its lowest hash-priority rows, so tiers
    drawn with the same seed are nested across growing targets.
    """
    total = store.manifest.total_rows
    target = FULL_SCALE_TIER_TARGETS[tier] if targets is None else targets.get(tier, FULL_SCALE_TIER_TARGETS[tier])
    if tier is SizeTier.ORIG or target is None:
        return store.all_row_ids()
    if target > total:
        raise TierTargetError(
            f"size tier {tier} target {target} exceeds store rows; available {total}"
        )
    dates = store.manifest.dates
    pops = [store.manifest.date_rows[d] for d in dates]
    quotas = nested_counts(pops, [target])[0]
    key = derive_key(PURPOSE_TIER, seed)
    picks = []
    for date, quota in zip(dates, quotas):
        if quota == 0:
            continue
        part = store.partition(date)
        picks.append(take_lowest(key, part.row_id, quota))
    if not picks:
        return np.empty(0, dtype=np.uint64)
    return np.sort(np.concatenate(picks))


def write_store(
    out_path,
    dataset_id: str,
    partitions: Mapping[str, Partition],
    l_ppi: int,
    stat_names: Sequence[str],
    overwrite: bool = False,
) -> StoreManifest:
    """Write a complete store directory from in-memory partitions."""
    out_path = Path(out_path)
    if (out_path / "manifest.json").exists():
        if not overwrite:
            raise StoreExistsError(f"store already exists at {out_path}; pass overwrite to replace")
        shutil.rmtree(out_path)
    (out_path / "partitions").mkdir(parents=True, exist_ok=True)

    dates = sorted(partitions)
    checksums: dict[str, str] = {}
    classes: dict[str, int] = {}
    date_rows: dict[str, int] = {}
    total = 0
    for date in dates:
        part = partitions[date]
        checksums[date] = _write_partition(out_path / "partitions" / f"{date}.col", part)
        date_rows[date] = len(part)
        total += len(part)
        counts = np.bincount(part.label_idx, minlength=len(part.labels))
        for label, cnt in zip(part.labels, counts):
            if cnt:
                classes[label] = classes.get(label, 0) + int(cnt)
    manifest = StoreManifest(
        dataset_id=dataset_id,
        schema_version=SCHEMA_VERSION,
        l_ppi=l_ppi,
        stat_names=tuple(stat_names),
        dates=tuple(dates),
        date_rows=date_rows,
        classes=classes,
        total_rows=total,
        checksums=checksums,
    )
    (out_path / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def _parse_sequence(raw: str, parse, line_no: int, name: str) -> list:
    if raw == "":
        return []
    try:
        return [parse(tok) for tok in raw.split(";")]
    except ValueError as exc:
        raise IngestError(f"row {line_no}: cannot parse {name} field: {exc}") from None


def ingest(
    source,
    dataset_id: str,
    out_path,
    overwrite: bool = False,
    l_ppi: int = DEFAULT_L_PPI,
) -> StoreManifest:
    """Build a store from the external CSV format.

    The CSV needs a header `date,label,ppi_sizes,ppi_ipt_ms,ppi_dirs` followed
    by one column per flow statistic; the three sequence fields hold
    semicolon-separated numbers. Row ids are assigned in file order. Errors
    cite 1-based physical line numbers (the header is line 1).
    """
    close = False
    if isinstance(source, (str, Path)):
        fh = open(source, "r", encoding="utf-8", newline="")
        close = True
    else:
        fh = source
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("no rows ingested: source is empty") from None
        if tuple(header[: len(CSV_FIXED_COLUMNS)]) != CSV_FIXED_COLUMNS:
            raise IngestError(
                f"bad CSV header; expected it to start with {','.join(CSV_FIXED_COLUMNS)}"
            )
        stat_names = tuple(header[len(CSV_FIXED_COLUMNS) :])
        n_stats = len(stat_names)

        by_date: dict[str, dict[str, list]] = {}
        row_id = 0
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(CSV_FIXED_COLUMNS) + n_stats:
                raise IngestError(
                    f"row {line_no}: expected {len(CSV_FIXED_COLUMNS) + n_stats} fields, got {len(row)}"
                )
            raw_date, label = row[0], row[1]
            try:
                _date.fromisoformat(raw_date)
            except ValueError:
                raise IngestError(f"row {line_no}: bad date {raw_date!r} (want YYYY-MM-DD)") from None
            if label == "":
                raise IngestError(f"row {line_no}: empty label")
            sizes = _parse_sequence(row[2], int, line_no, "ppi_sizes")
            ipt = _parse_sequence(row[3], float, line_no, "ppi_ipt_ms")
            dirs = _parse_sequence(row[4], int, line_no, "ppi_dirs")
            if not (len(sizes) == len(ipt) == len(dirs)):
                raise IngestError(
                    f"row {line_no}: sequence-length mismatch "
                    f"(sizes={len(sizes)}, ipt={len(ipt)}, dirs={len(dirs)})"
                )
            if len(sizes) > l_ppi:
                raise IngestError(f"row {line_no}: sequence length {len(sizes)} exceeds L_ppi={l_ppi}")
            if any(v < 0 for v in sizes):
                raise IngestError(f"row {line_no}: negative packet size")
            if any(v < 0 for v in ipt):
                raise IngestError(f"row {line_no}: negative inter-packet time")
            if any(v not in (1, -1) for v in dirs):
                raise IngestError(f"row {line_no}: direction values must be 1 or -1")
            try:
                stats = [float(tok) for tok in row[5:]]
            except ValueError as exc:
                raise IngestError(f"row {line_no}: cannot parse flow statistic: {exc}") from None
            if any(not np.isfinite(v) for v in stats):
                raise IngestError(f"row {line_no}: non-finite flow statistic")

            bucket = by_date.setdefault(
                raw_date,
                {"row_id": [], "label": [], "valid": [], "sizes": [], "ipt": [], "dirs": [], "stats": []},
            )
            bucket["row_id"].append(row_id)
            bucket["label"].append(label)
            bucket["valid"].append(len(sizes))
            bucket["sizes"].append(sizes)
            bucket["ipt"].append(ipt)
            bucket["dirs"].append(dirs)
            bucket["stats"].append(stats)
            row_id += 1
    finally:
        if close:
            fh.close()

    if row_id == 0:
        raise IngestError("no rows ingested")

    partitions: dict[str, Partition] = {}
    for date, bucket in by_date.items():
        n = len(bucket["row_id"])
        sizes = np.zeros((n, l_ppi), dtype=np.int32)
        ipt = np.zeros((n, l_ppi), dtype=np.float64)
        dirs = np.zeros((n, l_ppi), dtype=np.int8)
        for i, (s, t, d) in enumerate(zip(bucket["sizes"], bucket["ipt"], bucket["dirs"])):
            k = len(s)
            sizes[i, :k] = s
            ipt[i, :k] = t
            dirs[i, :k] = d
        labels = tuple(sorted(set(bucket["label"])))
        label_pos = {lab: i for i, lab in enumerate(labels)}
        partitions[date] = Partition(
            date=date,
            row_id=np.asarray(bucket["row_id"], dtype=np.uint64),
            labels=labels,
            label_idx=np.asarray([label_pos[lab] for lab in bucket["label"]], dtype=np.uint32),
            valid_len=np.asarray(bucket["valid"], dtype=np.uint16),
            sizes=sizes,
            ipt=ipt,
            dirs=dirs,
            stats=np.asarray(bucket["stats"], dtype=np.float64).reshape(n, n_stats),
        )
    return write_store(out_path, dataset_id, partitions, l_ppi, stat_names, overwrite=overwrite)
