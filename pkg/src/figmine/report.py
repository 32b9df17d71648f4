"""File-level evaluation and the report bundle.

Labelled CSVs (predictions from ``parse`` or hand-made ground truth) share
the parsed-record columns; only ``img`` and ``labels`` are required.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import ValidationError
from .isotherm import IsothermCurve
from .metrics import (
    ComparatorConfig,
    DescriptorScore,
    MetricsReport,
    aggregate,
    matrix_csv_rows,
    score_extractions,
)
from .parsing import IsothermExtraction, LabelSet, extraction_from_row
from .porosity import CompoundComparison, write_overlay, write_scatter

BUNDLE = ("metrics.csv", "confusion.csv", "descriptors.csv", "sa_scatter.csv", "pv_scatter.csv", "overlay.csv")


@dataclass(frozen=True)
class LabelledPage:
    labels: LabelSet
    extraction: IsothermExtraction


def labelled_from_rows(rows: Sequence[dict], source: str = "<rows>") -> dict[str, LabelledPage]:
    out: dict[str, LabelledPage] = {}
    for line, row in enumerate(rows, start=2):
        img = (row.get("img") or "").strip()
        if not img:
            raise ValidationError(f"{source}:{line}: empty img")
        if img in out:
            raise ValidationError(f"{source}:{line}: duplicate img {img}")
        try:
            labels = LabelSet.from_field(row.get("labels"), degenerate=row.get("degenerate") == "1")
            out[img] = LabelledPage(labels, extraction_from_row(row))
        except ValueError as exc:
            raise ValidationError(f"{source}:{line}: {exc}") from None
    return out


def load_labelled(path: str | Path) -> dict[str, LabelledPage]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"img", "labels"} <= set(reader.fieldnames or []):
            raise ValidationError(f"{path}: needs img and labels columns")
        rows = list(reader)
    return labelled_from_rows(rows, str(path))


@dataclass
class Evaluation:
    metrics: MetricsReport
    descriptors: DescriptorScore


def evaluate(pred: dict[str, LabelledPage], truth: dict[str, LabelledPage],
             cfg: ComparatorConfig | None = None) -> Evaluation:
    if set(pred) != set(truth):
        only_pred = sorted(set(pred) - set(truth))
        only_truth = sorted(set(truth) - set(pred))
        raise ValidationError(
            f"key sets differ: {len(only_pred)} only in predictions {only_pred[:3]}, "
            f"{len(only_truth)} only in ground truth {only_truth[:3]}"
        )
    if not truth:
        raise ValidationError("nothing to evaluate: no pages")
    keys = sorted(truth)
    metrics = aggregate([(truth[k].labels, pred[k].labels) for k in keys])
    descriptors = score_extractions({k: pred[k].extraction for k in keys},
                                    {k: truth[k].extraction for k in keys}, cfg)
    return Evaluation(metrics, descriptors)


def _write_rows(path: Path, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    return path


def write_evaluation(ev: Evaluation, out_dir: str | Path) -> list[Path]:
    """metrics.txt, metrics.json, metrics.csv, confusion.csv, descriptors.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.txt").write_text(ev.metrics.to_text(), encoding="utf-8")
    (out_dir / "metrics.json").write_text(ev.metrics.to_json(), encoding="utf-8")
    return [
        out_dir / "metrics.txt",
        out_dir / "metrics.json",
        _write_rows(out_dir / "metrics.csv", ev.metrics.table_rows()),
        _write_rows(out_dir / "confusion.csv", matrix_csv_rows(ev.metrics.matrix)),
        _write_rows(out_dir / "descriptors.csv", ev.descriptors.rows()),
    ]


def write_bundle(ev: Evaluation, out_dir: str | Path,
                 comparisons: Sequence[CompoundComparison] = (),
                 curves: Sequence[IsothermCurve] = ()) -> list[Path]:
    """The six plot-data files; porosity files are header-only without inputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows(out_dir / "metrics.csv", ev.metrics.table_rows())
    _write_rows(out_dir / "confusion.csv", matrix_csv_rows(ev.metrics.matrix))
    _write_rows(out_dir / "descriptors.csv", ev.descriptors.rows())
    write_scatter(comparisons, out_dir)
    write_overlay(curves, out_dir / "overlay.csv")
    return [out_dir / name for name in BUNDLE]
