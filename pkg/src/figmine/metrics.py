"""Multi-label page classification metrics and descriptor scoring.

Metrics are kept as exact ``Fraction`` values; ``None`` stands for an
undefined ratio (zero denominator) and is rendered as ``N/A``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .parsing import CLASSES, IsothermExtraction, LabelSet, NormBox, Saturation
from .prompts import CLASS_ABBREV, CLASS_NAMES

Outcome = Literal["TP", "FP", "TN", "FN"]
METRICS = ("accuracy", "precision", "recall", "f1")
DESCRIPTORS = ("figure", "compound", "porosity", "hysteresis", "saturation", "position")


def _members(s) -> frozenset[int]:
    return frozenset(s.labels if isinstance(s, LabelSet) else s)


def class_outcomes(gt, pred) -> dict[int, Outcome]:
    gt, pred = _members(gt), _members(pred)
    out: dict[int, Outcome] = {}
    for c in CLASSES:
        if c in gt and c in pred:
            out[c] = "TP"
        elif c in pred:
            out[c] = "FP"
        elif c in gt:
            out[c] = "FN"
        else:
            out[c] = "TN"
    return out


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


def fmt_pct(value: Fraction | float | None, digits: int = 1) -> str:
    if value is None:
        return "N/A"
    return f"{100 * float(value):.{digits}f}%"


@dataclass
class MetricsReport:
    counts: dict[int, dict[str, int]]
    n_pages: int
    matrix: np.ndarray

    def accuracy(self, c: int) -> Fraction:
        k = self.counts[c]
        return Fraction(k["TP"] + k["TN"], self.n_pages)

    def precision(self, c: int) -> Fraction | None:
        k = self.counts[c]
        return _ratio(k["TP"], k["TP"] + k["FP"])

    def recall(self, c: int) -> Fraction | None:
        k = self.counts[c]
        return _ratio(k["TP"], k["TP"] + k["FN"])

    def f1(self, c: int) -> Fraction | None:
        p, r = self.precision(c), self.recall(c)
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    def metric(self, name: str, c: int) -> Fraction | None:
        return getattr(self, name)(c)

    def per_class(self) -> dict[int, dict[str, Fraction | None]]:
        return {c: {m: self.metric(m, c) for m in METRICS} for c in CLASSES}

    def table_rows(self) -> list[list[str]]:
        rows = [["Plot Type", "Accuracy", "Precision", "Recall", "F1 Score"]]
        for c in CLASSES:
            rows.append([CLASS_NAMES[c]] + [fmt_pct(self.metric(m, c)) for m in METRICS])
        return rows

    def to_text(self) -> str:
        rows = self.table_rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"pages: {self.n_pages}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else float(v)

        return {
            "n_pages": self.n_pages,
            "classes": {
                CLASS_ABBREV[c]: {
                    **self.counts[c],
                    **{m: num(self.metric(m, c)) for m in METRICS},
                }
                for c in CLASSES
            },
            "matrix": {
                "order": [CLASS_ABBREV[c] for c in CLASSES],
                "rows": self.matrix.tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def confusion_matrix(pairs: Sequence[tuple]) -> np.ndarray:
    """6x6 grid in class order 1..6.

    Diagonal cells count true positives. An off-diagonal cell (i, j) counts
    pages where class i was missed and class j was predicted without being
    in the ground truth, so each miss is attributed to the spurious
    predictions on that page.
    """
    if not pairs:
        raise ValueError("confusion_matrix needs at least one (gt, pred) pair")
    m = np.zeros((len(CLASSES), len(CLASSES)), dtype=np.int64)
    for gt, pred in pairs:
        gt, pred = _members(gt), _members(pred)
        for c in gt & pred:
            m[c - 1, c - 1] += 1
        for i in gt - pred:
            for j in pred - gt:
                m[i - 1, j - 1] += 1
    return m


def aggregate(pairs: Iterable[tuple]) -> MetricsReport:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("aggregate needs at least one (gt, pred) pair")
    counts = {c: {"TP": 0, "FP": 0, "TN": 0, "FN": 0} for c in CLASSES}
    for gt, pred in pairs:
        for c, outcome in class_outcomes(gt, pred).items():
            counts[c][outcome] += 1
    return MetricsReport(counts=counts, n_pages=len(pairs), matrix=confusion_matrix(pairs))


def matrix_csv_rows(matrix: np.ndarray) -> list[list[str]]:
    header = ["actual\\predicted"] + [CLASS_ABBREV[c] for c in CLASSES]
    rows = [header]
    for c in CLASSES:
        rows.append([CLASS_ABBREV[c]] + [str(int(v)) for v in matrix[c - 1]])
    return rows


def compare_runs(a: MetricsReport, b: MetricsReport) -> dict[int, dict[str, Fraction | None]]:
    """Per-class metric differences ``a - b``; ``None`` where either side is undefined."""
    out = {}
    for c in CLASSES:
        row = {}
        for m in METRICS:
            va, vb = a.metric(m, c), b.metric(m, c)
            row[m] = None if va is None or vb is None else va - vb
        out[c] = row
    return out


def format_deltas(deltas: Mapping[int, Mapping[str, Fraction | None]]) -> str:
    """Deltas in percentage points, ``N/A`` where undefined."""
    lines = ["class," + ",".join(METRICS)]
    for c, row in deltas.items():
        cells = ["N/A" if row[m] is None else f"{100 * float(row[m]):.1f}" for m in METRICS]
        lines.append(CLASS_ABBREV[c] + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# descriptor scoring


def iou(a: NormBox, b: NormBox) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class ComparatorConfig:
    iou_threshold: float = 0.5
    porosity_rel_tol: float = 0.01


_FIG_WORD = re.compile(r"\b(figure|fig\.?)", re.IGNORECASE)
_FIRST_NUMBER = re.compile(r"\d+(?:,\d{3})*(?:\.\d+)?")


def canonical_figure(text: str | None) -> str | None:
    if text is None:
        return None
    s = _FIG_WORD.sub("", text.lower())
    return re.sub(r"[\s()\[\].]", "", s)


def _canonical_text(text: str) -> str:
    return " ".join(text.casefold().split())


def _first_number(text: str) -> float | None:
    m = _FIRST_NUMBER.search(text)
    return float(m.group(0).replace(",", "")) if m else None


def match_figure(pred: IsothermExtraction, gt: IsothermExtraction, cfg: ComparatorConfig) -> bool:
    return canonical_figure(pred.figure_locator) == canonical_figure(gt.figure_locator)


def match_compound(pred, gt, cfg) -> bool:
    return {c.casefold() for c in pred.compounds} == {c.casefold() for c in gt.compounds}


def match_porosity(pred, gt, cfg) -> bool:
    p, g = pred.porosity_text, gt.porosity_text
    if p is None or g is None:
        return p is None and g is None
    pv, gv = _first_number(p), _first_number(g)
    if pv is not None and gv is not None:
        return abs(pv - gv) <= cfg.porosity_rel_tol * abs(gv)
    return _canonical_text(p) == _canonical_text(g)


def match_hysteresis(pred, gt, cfg) -> bool:
    return pred.hysteresis == gt.hysteresis


def match_saturation(pred, gt, cfg) -> bool:
    p, g = pred.saturation, gt.saturation
    if isinstance(p, Saturation) and isinstance(g, Saturation):
        return p.intersects(g)
    return p == g


def match_position(pred, gt, cfg) -> bool:
    """Every gt box has a predicted partner at the IoU threshold and vice versa."""
    P, G = pred.regions, gt.regions
    if not P or not G:
        return not P and not G
    t = cfg.iou_threshold
    return all(any(iou(g, p) >= t for p in P) for g in G) and all(
        any(iou(p, g) >= t for g in G) for p in P
    )


COMPARATORS = {
    "figure": match_figure,
    "compound": match_compound,
    "porosity": match_porosity,
    "hysteresis": match_hysteresis,
    "saturation": match_saturation,
    "position": match_position,
}


@dataclass
class DescriptorScore:
    n_scored: dict[str, int] = field(default_factory=lambda: {d: 0 for d in DESCRIPTORS})
    n_correct: dict[str, int] = field(default_factory=lambda: {d: 0 for d in DESCRIPTORS})

    def accuracy(self, d: str) -> Fraction | None:
        return _ratio(self.n_correct[d], self.n_scored[d])

    def rows(self) -> list[list[str]]:
        out = [["descriptor", "n_scored", "n_correct", "accuracy"]]
        for d in DESCRIPTORS:
            acc = self.accuracy(d)
            out.append([d, str(self.n_scored[d]), str(self.n_correct[d]),
                        "N/A" if acc is None else f"{float(acc):.4f}"])
        return out


def score_extractions(
    preds: Mapping[str, IsothermExtraction],
    gts: Mapping[str, IsothermExtraction],
    cfg: ComparatorConfig | None = None,
) -> DescriptorScore:
    """Score each descriptor on pages whose ground truth shows an isotherm."""
    cfg = cfg or ComparatorConfig()
    if set(preds) != set(gts):
        missing = sorted(set(gts) ^ set(preds))
        raise ValueError(f"prediction/ground-truth keys differ: {missing[:5]}")
    score = DescriptorScore()
    for key in sorted(gts):
        gt, pred = gts[key], preds[key]
        if not gt.has_isotherm:
            continue
        for d in DESCRIPTORS:
            score.n_scored[d] += 1
            score.n_correct[d] += bool(COMPARATORS[d](pred, gt, cfg))
    return score
