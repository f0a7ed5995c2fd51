"""Time-aware and open-world evaluation of externally produced predictions.

Two orthogonal views: per-date accuracy over known classes (unknown-class
rows are counted but never fold into accuracy) and unknown detection as
TPR at a fixed FPR budget. OOD scores follow one convention: higher means
more likely unknown. Thresholds are calibrated on known-class scores only;
the reported threshold is the smallest observed known score whose FPR stays
within the target.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .split import SplitIndex
from .store import Store
from .errors import ClosedWorldError, MetricsError, MissingPredictions


@dataclass(frozen=True)
class PredictionSet:
    """One prediction per test row, joined with ground truth from the split."""

    row_id: np.ndarray  # sorted u64
    predicted: np.ndarray  # i64 label ids
    ood_score: np.ndarray | None  # f64, higher = more likely unknown
    true_label_id: np.ndarray  # i64
    date: np.ndarray  # U10
    unknown_id: int

    def __len__(self) -> int:
        return len(self.row_id)

    @property
    def known_mask(self) -> np.ndarray:
        return self.true_label_id != self.unknown_id


@dataclass(frozen=True)
class DateAccuracy:
    date: str
    n_known: int
    n_correct: int
    accuracy: float | None
    n_unknown: int


@dataclass(frozen=True)
class OodOperatingPoint:
    fpr_target: float
    tpr: float
    threshold: float  # math.inf when no admissible threshold exists
    achieved_fpr: float


def load_predictions_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read `row_id,predicted_label_id[,ood_score]` with a header line."""
    rows: list[int] = []
    preds: list[int] = []
    scores: list[float] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MetricsError(f"prediction file {path} is empty") from None
        if header[:2] != ["row_id", "predicted_label_id"]:
            raise MetricsError(
                "prediction file must start with columns row_id,predicted_label_id"
            )
        has_scores = len(header) >= 3 and header[2] == "ood_score"
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append(int(row[0]))
                preds.append(int(row[1]))
                if has_scores:
                    scores.append(float(row[2]))
            except (ValueError, IndexError) as exc:
                raise MetricsError(f"prediction file row {line_no}: {exc}") from None
    return (
        np.asarray(rows, dtype=np.uint64),
        np.asarray(preds, dtype=np.int64),
        np.asarray(scores, dtype=np.float64) if has_scores else None,
    )


def join_predictions(
    store: Store,
    split_index: SplitIndex,
    row_id: np.ndarray,
    predicted: np.ndarray,
    ood_score: np.ndarray | None = None,
) -> PredictionSet:
    """Validate coverage and join predictions with test-set ground truth.

    Every test row needs exactly one prediction; rows outside the test split
    and duplicates are errors.
    """
    row_id = np.asarray(row_id, dtype=np.uint64)
    test = split_index.test
    uniq = np.unique(row_id)
    if len(uniq) != len(row_id):
        raise MetricsError(f"{len(row_id) - len(uniq)} duplicate prediction rows")
    extra = np.setdiff1d(uniq, test, assume_unique=True)
    if len(extra):
        raise MetricsError(
            f"{len(extra)} predicted rows are not in the test split (first: {extra[:5].tolist()})"
        )
    missing = len(test) - len(uniq)
    if missing:
        raise MissingPredictions(f"missing predictions for {missing} test rows")

    order = np.argsort(row_id, kind="stable")
    row_sorted = row_id[order]
    labels = store.labels_of_rows(row_sorted)
    true_ids = split_index.class_map.ids_for(labels)
    dates = store.date_of_rows(row_sorted)
    return PredictionSet(
        row_id=row_sorted,
        predicted=np.asarray(predicted, dtype=np.int64)[order],
        ood_score=None if ood_score is None else np.asarray(ood_score, dtype=np.float64)[order],
        true_label_id=true_ids,
        date=dates,
        unknown_id=split_index.class_map.unknown_id,
    )


def per_date_accuracy(preds: PredictionSet) -> list[DateAccuracy]:
    """Known-class accuracy per date, ascending; unknown rows counted separately."""
    known = preds.known_mask
    out: list[DateAccuracy] = []
    for date in sorted(set(preds.date.tolist())):
        on_date = preds.date == date
        k = on_date & known
        n_known = int(k.sum())
        n_correct = int((preds.predicted[k] == preds.true_label_id[k]).sum())
        out.append(
            DateAccuracy(
                date=date,
                n_known=n_known,
                n_correct=n_correct,
                accuracy=(n_correct / n_known) if n_known else None,
                n_unknown=int((on_date & ~known).sum()),
            )
        )
    return out


def overall_accuracy(preds: PredictionSet) -> tuple[int, int, float | None]:
    known = preds.known_mask
    n = int(known.sum())
    correct = int((preds.predicted[known] == preds.true_label_id[known]).sum())
    return n, correct, (correct / n if n else None)


def per_class_recall(preds: PredictionSet, class_names: tuple[str, ...]) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for cid, name in enumerate(class_names):
        mask = preds.true_label_id == cid
        n = int(mask.sum())
        if n == 0:
            continue
        correct = int((preds.predicted[mask] == cid).sum())
        out[name] = {"n": n, "recall": correct / n}
    return out


def ood_tpr_at_fpr(preds: PredictionSet, fpr_target: float) -> OodOperatingPoint:
    """Unknown-detection TPR at a fixed false-positive budget.

    Thresholds are calibrated on known-class scores: the candidate cuts are
    the distinct known scores plus the cut just above the largest one (which
    flags nothing known and is therefore always admissible). The chosen
    threshold is the smallest candidate t with
    FPR(t) = |known with score >= t| / |known| <= fpr_target, and
    TPR = |unknown with score >= t| / |unknown|. Equal scores are treated
    identically: a threshold either flags all of them or none.
    """
    if not (0.0 <= fpr_target < 1.0):
        raise MetricsError("fpr_target must lie in [0, 1)")
    known = preds.known_mask
    if bool(known.all()):
        raise ClosedWorldError("closed-world split; OOD metric undefined")
    if preds.ood_score is None:
        raise MetricsError("predictions carry no ood_score column")
    known_scores = preds.ood_score[known]
    unknown_scores = preds.ood_score[~known]
    if len(known_scores) == 0:
        raise MetricsError("no known-class rows in the test split")

    ks = np.sort(known_scores)
    n = len(ks)
    candidates = np.unique(ks)
    # |score >= t| is n - searchsorted_left(t); FPR is non-increasing in t.
    fprs = (n - np.searchsorted(ks, candidates, side="left")) / n
    admissible = fprs <= fpr_target
    if admissible.any():
        first = int(np.argmax(admissible))
        threshold = float(candidates[first])
        achieved = float(fprs[first])
    else:
        threshold = math.nextafter(float(ks[-1]), math.inf)
        achieved = 0.0
    tpr = float((unknown_scores >= threshold).mean())
    return OodOperatingPoint(fpr_target, tpr, threshold, achieved)


def report(
    preds: PredictionSet,
    class_names: tuple[str, ...],
    fpr_targets: list[float] | tuple[float, ...] = (),
) -> dict:
    """Deterministic evaluation document (JSON-serializable dict).

    Contains per-date series, overall known-class accuracy, per-class recall
    and one OOD operating point per requested FPR target. Requesting OOD
    metrics on a closed-world split raises.
    """
    n_known, n_correct, acc = overall_accuracy(preds)
    doc: dict = {
        "overall": {
            "n_known": n_known,
            "n_unknown": int((~preds.known_mask).sum()),
            "n_correct": n_correct,
            "accuracy": acc,
        },
        "per_date": [
            {
                "date": d.date,
                "n_known": d.n_known,
                "n_correct": d.n_correct,
                "accuracy": d.accuracy,
                "n_unknown": d.n_unknown,
            }
            for d in per_date_accuracy(preds)
        ],
        "per_class_recall": per_class_recall(preds, class_names),
        "ood": [],
    }
    for target in fpr_targets:
        op = ood_tpr_at_fpr(preds, float(target))
        doc["ood"].append(
            {
                "fpr_target": op.fpr_target,
                "tpr": op.tpr,
                "threshold": op.threshold,
                "achieved_fpr": op.achieved_fpr,
            }
        )
    return doc


def report_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(doc: dict, path) -> None:
    Path(path).write_text(report_json(doc), encoding="utf-8")


def write_series_csv(doc: dict, path) -> None:
    """Per-date series as CSV for external plotting tools."""
    lines = ["date,n_known,n_correct,accuracy,n_unknown"]
    for row in doc["per_date"]:
        acc = "" if row["accuracy"] is None else repr(float(row["accuracy"]))
        lines.append(f"{row['date']},{row['n_known']},{row['n_correct']},{acc},{row['n_unknown']}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
