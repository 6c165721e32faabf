"""Foreground F-measure evaluation with hierarchical aggregation.

Counts are summed over all frames of a grouping before precision and recall
are formed, so foreground-free frames never create undefined ratios.  Above
the sequence level the convention switches to averaging: a category scores
the mean of its sequence F-measures and the overall score is the mean of the
category means, so counts are not meaningful there and stay unset.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError
from .segmentation import LabelMap

_LEVELS = ("frame", "sequence", "category", "overall")


@dataclass(frozen=True)
class EvalReport:
    """Scores for one grouping; children hold the finer-grained reports."""

    level: str
    name: str
    precision: float
    recall: float
    f_measure: float
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    children: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.level not in _LEVELS:
            raise DataError(f"unknown grouping level {self.level!r}")


def count_confusion(mask: np.ndarray, labels) -> tuple:
    """(tp, fp, fn) over scored pixels; ignored pixels appear in no count."""
    if isinstance(labels, LabelMap):
        labels = labels.values
    labels = np.asarray(labels)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != labels.shape:
        raise ShapeError(f"mask shape {mask.shape} != label shape {labels.shape}")
    pos = labels == 1
    neg = labels == 0
    tp = int(np.count_nonzero(mask & pos))
    fp = int(np.count_nonzero(mask & neg))
    fn = int(np.count_nonzero(~mask & pos))
    return tp, fp, fn


def _scores(tp: int, fp: int, fn: int) -> tuple:
    # empty-vs-empty comparisons count as perfect agreement
    precision = tp / (tp + fp) if tp + fp > 0 else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn > 0 else (1.0 if fp == 0 else 0.0)
    f = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


def f_measure(masks, labels, grouping: str = "sequence", name: str = "") -> EvalReport:
    """Aggregate counts over the given frames, then score once."""
    if grouping not in ("frame", "sequence"):
        raise DataError(f"f_measure aggregates frames only at frame/sequence level, got {grouping!r}")
    masks = list(masks)
    labels = list(labels)
    if len(masks) != len(labels):
        raise ShapeError(f"{len(masks)} masks vs {len(labels)} label maps")
    if not masks:
        raise DataError("no frames to evaluate")
    tp = fp = fn = 0
    scorable = 0
    for m, l in zip(masks, labels):
        lv = l.values if isinstance(l, LabelMap) else np.asarray(l)
        scorable += int(np.count_nonzero(lv >= 0))
        a, b, c = count_confusion(m, lv)
        tp, fp, fn = tp + a, fp + b, fn + c
    if scorable == 0:
        raise DataError("no scorable pixels: every pixel is ignored")
    precision, recall, f = _scores(tp, fp, fn)
    return EvalReport(
        level=grouping, name=name, precision=precision, recall=recall, f_measure=f, tp=tp, fp=fp, fn=fn
    )


def aggregate_mean(reports, level: str, name: str = "") -> EvalReport:
    """Mean of child F-measures (category and overall levels)."""
    reports = tuple(reports)
    if not reports:
        raise DataError(f"cannot aggregate an empty set of reports into {level!r}")
    if level not in ("category", "overall"):
        raise DataError(f"mean aggregation applies to category/overall, got {level!r}")
    precision = float(np.mean([r.precision for r in reports]))
    recall = float(np.mean([r.recall for r in reports]))
    f = float(np.mean([r.f_measure for r in reports]))
    return EvalReport(level=level, name=name, precision=precision, recall=recall, f_measure=f, children=reports)


def evaluate_dataset(per_category: dict) -> EvalReport:
    """per_category maps category name -> {sequence name -> (masks, labels)}."""
    category_reports = []
    for category in sorted(per_category):
        sequence_reports = [
            f_measure(masks, labels, grouping="sequence", name=seq)
            for seq, (masks, labels) in sorted(per_category[category].items())
        ]
        category_reports.append(aggregate_mean(sequence_reports, "category", name=category))
    return aggregate_mean(category_reports, "overall", name="overall")


def _walk(report: EvalReport):
    yield report
    for child in report.children:
        yield from _walk(child)


def report_to_csv(report: EvalReport) -> str:
    """Flatten a report tree to CSV; count columns are blank above sequence level."""
    out = io.StringIO()
    out.write("level,name,tp,fp,fn,precision,recall,f_measure\n")
    for r in _walk(report):
        tp = "" if r.tp is None else str(r.tp)
        fp = "" if r.fp is None else str(r.fp)
        fn = "" if r.fn is None else str(r.fn)
        out.write(f"{r.level},{r.name},{tp},{fp},{fn},{r.precision:.6f},{r.recall:.6f},{r.f_measure:.6f}\n")
    return out.getvalue()


def format_report(report: EvalReport) -> str:
    """Plain-text table of a report tree."""
    rows = [("level", "name", "precision", "recall", "f-measure")]
    for r in _walk(report):
        rows.append((r.level, r.name or "-", f"{r.precision:.4f}", f"{r.recall:.4f}", f"{r.f_measure:.4f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(lines)
