"""Lightweight column table plus the canonical CSV codec.

The CSV form doubles as the store's external exchange format, so its
serialization is pinned down exactly:

* one header line, comma separated, LF line endings;
* RFC 4180 minimal quoting (quote only fields containing comma, quote, CR
  or LF; embedded quotes doubled);
* integers as plain decimals;
* floats as Python repr (shortest round-trip; integral values keep a
  trailing ".0");
* packet sequences as semicolon-joined values of the valid prefix only,
  inside a single CSV field.

Anything that re-serializes these tables (other tooling, checksum
comparisons) must reproduce those rules byte for byte.
"""

from __future__ import annotations

import io
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import UnknownFieldError

#: store-level fields servable by read_rows / to_table
SEQUENCE_FIELDS = ("ppi_sizes", "ppi_ipt", "ppi_dirs")


def format_float(x: float) -> str:
    """Canonical decimal text for a float: shortest round-trip repr."""
    return repr(float(x))


def format_cell(x) -> str:
    if isinstance(x, (np.floating, float)):
        return format_float(x)
    return str(x)


def _quote(field: str) -> str:
    if any(c in field for c in (",", '"', "\r", "\n")):
        return '"' + field.replace('"', '""') + '"'
    return field


class Table:
    """Ordered named columns over numpy arrays; rows are one flow each.

    Sequence columns (ppi_*) are 2-D [n, L_ppi] zero-padded arrays and carry
    their true lengths in the companion valid_len column. flow_stats is a
    2-D [n, F] array whose per-feature names live in `stat_names`.
    """

    def __init__(self, columns: Mapping[str, np.ndarray], stat_names: Sequence[str] = ()):
        self.columns: dict[str, np.ndarray] = dict(columns)
        self.stat_names = tuple(stat_names)
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"ragged table: column lengths {sorted(lengths)}")
        self._n = lengths.pop() if lengths else 0

    def __len__(self) -> int:
        return self._n

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise UnknownFieldError(f"unknown field {name!r}") from None

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def equals(self, other: "Table") -> bool:
        if self.field_names != other.field_names or len(self) != len(other):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)

    def take(self, idx: np.ndarray) -> "Table":
        return Table({k: v[idx] for k, v in self.columns.items()}, self.stat_names)


def _sequence_cell(row_vals: np.ndarray, n_valid: int) -> str:
    vals = row_vals[:n_valid]
    return ";".join(format_cell(v) for v in vals)


def csv_header(table: Table) -> list[str]:
    """External CSV column names for a table, in canonical order."""
    names: list[str] = ["date", "label", "ppi_sizes", "ppi_ipt_ms", "ppi_dirs"]
    names.extend(table.stat_names)
    if "label_id" in table:
        names.append("label_id")
    return names


def iter_csv_lines(table: Table) -> Iterator[str]:
    """Yield canonical CSV lines (no trailing newline) including the header."""
    yield ",".join(csv_header(table))
    dates = table["date"]
    labels = table["label"]
    sizes = table["ppi_sizes"]
    ipt = table["ppi_ipt"]
    dirs = table["ppi_dirs"]
    valid = table["valid_len"]
    stats = table["flow_stats"]
    label_id = table["label_id"] if "label_id" in table else None
    for i in range(len(table)):
        n_valid = int(valid[i])
        cells = [
            str(dates[i]),
            _quote(str(labels[i])),
            _sequence_cell(sizes[i], n_valid),
            _sequence_cell(ipt[i], n_valid),
            _sequence_cell(dirs[i], n_valid),
        ]
        cells.extend(format_cell(v) for v in stats[i])
        if label_id is not None:
            cells.append(str(int(label_id[i])))
        yield ",".join(cells)


def to_csv(table: Table) -> str:
    buf = io.StringIO()
    for line in iter_csv_lines(table):
        buf.write(line)
        buf.write("\n")
    return buf.getvalue()


def write_csv(table: Table, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in iter_csv_lines(table):
            fh.write(line)
            fh.write("\n")
