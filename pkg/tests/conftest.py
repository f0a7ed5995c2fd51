from __future__ import annotations

import io
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flowbench import SynthSpec, Store, date_range, generate, ingest


def make_csv(rows: list[dict], stat_names=("duration_s", "packets_fwd")) -> str:
    """Build external-format CSV text from row dicts (sequences as lists)."""
    lines = ["date,label,ppi_sizes,ppi_ipt_ms,ppi_dirs," + ",".join(stat_names)]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r["date"],
                    r["label"],
                    ";".join(str(v) for v in r.get("sizes", [100])),
                    ";".join(str(v) for v in r.get("ipt", [1.0] * len(r.get("sizes", [100])))),
                    ";".join(str(v) for v in r.get("dirs", [1] * len(r.get("sizes", [100])))),
                ]
                + [str(v) for v in r.get("stats", [0.5, 2.0])]
            )
        )
    return "\n".join(lines) + "\n"


def ingest_text(text: str, dataset_id: str, out_dir: Path, **kw):
    return ingest(io.StringIO(text), dataset_id, out_dir, **kw)


@pytest.fixture
def store_two_weeks(tmp_path) -> Store:
    """Six classes over two ISO weeks (2022-W44 + W45), 300 rows/date."""
    spec = SynthSpec(
        n_classes=6,
        dates=date_range("2022-10-31", 14),
        rows_per_date=300,
        seed=11,
        dataset_id="twoweeks",
    )
    generate(spec, tmp_path / "twoweeks")
    return Store.open(tmp_path / "twoweeks")


@pytest.fixture
def store_small(tmp_path) -> Store:
    """Tiny 4-class store over 4 dates for cheap unit tests."""
    spec = SynthSpec(
        n_classes=4,
        dates=date_range("2023-01-02", 4),
        rows_per_date=80,
        seed=5,
        dataset_id="small",
    )
    generate(spec, tmp_path / "small")
    return Store.open(tmp_path / "small")
