"""Per-step destination metrics: overall accuracy, quartile accuracy, macro F1.

Every step of every trajectory counts as one prediction against the
trajectory's single destination label.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PredictionRecord:
    traj_id: str
    label: int
    predictions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "predictions", tuple(int(p) for p in self.predictions))
        if not self.predictions:
            raise ValueError(f"trajectory {self.traj_id!r} has no predictions")
        if any(p < 0 for p in self.predictions) or self.label < 0:
            raise ValueError("port ids must be non-negative")

    def __len__(self):
        return len(self.predictions)

    @property
    def hits(self) -> np.ndarray:
        return np.asarray(self.predictions) == self.label


def _check(records):
    records = list(records)
    if not records:
        raise ValueError("no prediction records")
    return records


def overall_accuracy(records: Iterable[PredictionRecord]) -> float:
    records = _check(records)
    return sum(int(r.hits.sum()) for r in records) / sum(len(r) for r in records)


def quartile_bounds(n: int, q: int) -> tuple[int, int]:
    """Zero-based half-open step range of quartile ``q`` (1..4) for a length-n trajectory.

    One-based steps ``j`` with ``floor((q-1)n/4) < j <= floor(qn/4)``.
    """
    if q not in (1, 2, 3, 4):
        raise ValueError(f"quartile must be 1..4, got {q}")
    return (q - 1) * n // 4, q * n // 4


def quartile_counts(records: Iterable[PredictionRecord], q: int) -> tuple[int, int]:
    """(correct, total) steps falling in quartile ``q``."""
    hit = total = 0
    for r in records:
        lo, hi = quartile_bounds(len(r), q)
        hit += int(r.hits[lo:hi].sum())
        total += hi - lo
    return hit, total


def quartile_accuracy(records: Iterable[PredictionRecord], q: int) -> float | None:
    """Accuracy restricted to quartile ``q``; None when no trajectory has steps there."""
    hit, total = quartile_counts(_check(records), q)
    return hit / total if total else None


def per_class_f1(records: Iterable[PredictionRecord]) -> dict[int, dict[str, float]]:
    """TP/FP/FN/F1 per class over all steps; classes absent from labels and predictions are left out."""
    tp, fp, fn, support = Counter(), Counter(), Counter(), Counter()
    for r in _check(records):
        for p in r.predictions:
            support[r.label] += 1
            if p == r.label:
                tp[p] += 1
            else:
                fp[p] += 1
                fn[r.label] += 1
    table = {}
    for c in sorted(set(support) | set(fp)):
        denom = tp[c] + 0.5 * (fp[c] + fn[c])
        table[c] = {
            "support": support[c],
            "tp": tp[c],
            "fp": fp[c],
            "fn": fn[c],
            "f1": tp[c] / denom if denom else 0.0,
        }
    return table


def macro_f1(records: Iterable[PredictionRecord]) -> float:
    table = per_class_f1(records)
    return sum(row["f1"] for row in table.values()) / len(table)


def records_from_logits(
    outputs: Sequence[np.ndarray], labels: Sequence[int], ids: Sequence[str] | None = None
) -> list[PredictionRecord]:
    ids = ids if ids is not None else [str(i) for i in range(len(outputs))]
    return [PredictionRecord(t, int(y), tuple(np.argmax(o, axis=1))) for o, y, t in zip(outputs, labels, ids)]


class MajorityBaseline:
    """Predicts the most frequent destination seen for each departure port.

    Unknown departures fall back to the global majority. Ties go to the
    smallest port id.
    """

    def fit(self, departures: Sequence[int], labels: Sequence[int]):
        if len(departures) != len(labels) or not len(labels):
            raise ValueError("need matching, non-empty departures and labels")
        by_dep = defaultdict(Counter)
        for d, y in zip(departures, labels):
            by_dep[int(d)][int(y)] += 1
        self.table_ = {d: _majority(c) for d, c in by_dep.items()}
        self.default_ = _majority(Counter(int(y) for y in labels))
        return self

    def predict(self, departures: Sequence[int]) -> np.ndarray:
        return np.array([self.table_.get(int(d), self.default_) for d in departures], dtype=int)

    def records(self, departures, labels, lengths, ids=None) -> list[PredictionRecord]:
        preds = self.predict(departures)
        ids = ids if ids is not None else [str(i) for i in range(len(labels))]
        return [PredictionRecord(t, int(y), (int(p),) * int(n)) for t, y, p, n in zip(ids, labels, preds, lengths)]


def _majority(counts: Counter) -> int:
    return min(counts, key=lambda c: (-counts[c], c))


def metrics_report(records: Sequence[PredictionRecord], seed: int | None = None, port_names=None) -> dict:
    """JSON-ready summary; undefined quartiles are reported as null."""
    records = _check(records)
    table = per_class_f1(records)
    quartiles = {}
    for q in (1, 2, 3, 4):
        hit, total = quartile_counts(records, q)
        quartiles[f"q{q}"] = {"accuracy": hit / total if total else None, "steps": total}
    per_class = []
    for c, row in table.items():
        entry = {"port_id": c, **row}
        if port_names is not None and c < len(port_names):
            entry["name"] = port_names[c]
        per_class.append(entry)
    return {
        "seed": seed,
        "n_trajectories": len(records),
        "n_steps": sum(len(r) for r in records),
        "overall_accuracy": overall_accuracy(records),
        "quartiles": quartiles,
        "macro_f1": sum(row["f1"] for row in table.values()) / len(table),
        "per_class": per_class,
    }


def quartile_csv(report: dict) -> str:
    """Plot-ready CSV of accuracy versus progression quartile."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quartile", "accuracy", "steps"])
    for q in (1, 2, 3, 4):
        row = report["quartiles"][f"q{q}"]
        acc = "" if row["accuracy"] is None else repr(row["accuracy"])
        w.writerow([q, acc, row["steps"]])
    return buf.getvalue()


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
