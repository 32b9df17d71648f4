"""Join experimental porosity against a computed-properties table.

The computed side is a CSV keyed by CCDC refcode (``refcode, calc_sa,
calc_pv, doi``). Experimental values come either from author tables or from
``isotherm.bet_surface_area`` on digitized curves.
"""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError
from .isotherm import DEFAULT_BET_RANGE, IsothermCurve, bet_surface_area, load_curve

log = logging.getLogger(__name__)

REFCODE = re.compile(r"^[A-Z]{6}\d{0,2}$")
SCATTER_COLUMNS = ("calc", "exp", "percent_of_theory", "refcode", "doi")
OVERLAY_COLUMNS = ("compound", "doi", "p_rel", "uptake")


@dataclass(frozen=True)
class ComputedEntry:
    ccdc_refcode: str
    calc_surface_area: float
    calc_pore_volume: float | None
    doi: str = ""


@dataclass(frozen=True)
class Measurement:
    """A value that may be a detection bound, e.g. ``<10``."""

    value: float
    below_threshold: bool = False

    @classmethod
    def parse(cls, text) -> "Measurement | None":
        if text is None:
            return None
        if isinstance(text, (int, float)):
            return cls(float(text))
        s = str(text).strip()
        if not s or s.upper() in ("N/A", "NA"):
            return None
        if s.startswith("<"):
            return cls(float(s[1:].strip()), True)
        return cls(float(s))

    def __str__(self):
        return f"<{self.value:g}" if self.below_threshold else f"{self.value:g}"


@dataclass(frozen=True)
class ExperimentalRow:
    compound: str
    refcode: str
    exp_sa: Measurement | None
    exp_pv: Measurement | None = None
    doi: str = ""
    author_sa: float | None = None


@dataclass(frozen=True)
class CompoundComparison:
    compound: str
    ccdc_refcode: str
    doi: str
    calc_sa: float
    exp_sa: Measurement | None
    calc_pv: float | None
    exp_pv: Measurement | None
    author_sa: float | None = None

    @staticmethod
    def _ratio(exp: Measurement | None, calc: float | None) -> float | None:
        if exp is None or not calc:
            return None
        return exp.value / calc

    @property
    def ratio_sa(self) -> float | None:
        return self._ratio(self.exp_sa, self.calc_sa)

    @property
    def ratio_pv(self) -> float | None:
        return self._ratio(self.exp_pv, self.calc_pv)

    @property
    def percent_of_theory(self) -> float | None:
        r = self.ratio_sa
        return None if r is None else 100.0 * r


def load_computed_db(path: str | Path) -> dict[str, ComputedEntry]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return {}
    reader = csv.DictReader(text.splitlines())
    need = {"refcode", "calc_sa", "calc_pv", "doi"}
    if not need <= set(reader.fieldnames or []):
        raise ValidationError(f"{path}: computed table needs columns {sorted(need)}")
    table: dict[str, ComputedEntry] = {}
    for line, row in enumerate(reader, start=2):
        code = row["refcode"].strip().upper()
        if not REFCODE.match(code):
            raise ValidationError(f"{path}:{line}: bad CCDC refcode {row['refcode']!r}")
        if code in table:
            raise ValidationError(f"{path}:{line}: duplicate refcode {code}")
        try:
            sa = float(row["calc_sa"])
            pv = float(row["calc_pv"]) if row["calc_pv"].strip() else None
        except ValueError:
            raise ValidationError(f"{path}:{line}: non-numeric calc_sa/calc_pv") from None
        if sa < 0 or (pv is not None and pv < 0):
            raise ValidationError(f"{path}:{line}: negative computed value")
        table[code] = ComputedEntry(code, sa, pv, row["doi"].strip())
    return table


def compare(
    experimental: Iterable[ExperimentalRow], db: dict[str, ComputedEntry]
) -> tuple[list[CompoundComparison], list[ExperimentalRow]]:
    """Return ``(matched comparisons, unmatched rows)``.

    Matched rows are ordered by descending calculated surface area; ties keep
    their input order.
    """
    matched, unmatched = [], []
    for row in experimental:
        entry = db.get(row.refcode.strip().upper())
        if entry is None:
            unmatched.append(row)
            continue
        matched.append(CompoundComparison(
            compound=row.compound,
            ccdc_refcode=entry.ccdc_refcode,
            doi=row.doi or entry.doi,
            calc_sa=entry.calc_surface_area,
            exp_sa=row.exp_sa,
            calc_pv=entry.calc_pore_volume,
            exp_pv=row.exp_pv,
            author_sa=row.author_sa,
        ))
    matched.sort(key=lambda c: -c.calc_sa)
    if unmatched:
        log.warning("%d experimental rows have no computed entry", len(unmatched))
    return matched, unmatched


def _cell(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def emit_scatter(comparisons: Sequence[CompoundComparison], out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``sa_scatter.csv`` and ``pv_scatter.csv`` plot data.

    Rows without an experimental value for that property are left out of the
    respective file.
    """
    if not comparisons:
        raise ValueError("emit_scatter needs at least one comparison")
    return write_scatter(comparisons, out_dir)


def write_scatter(comparisons: Sequence[CompoundComparison], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sa_path, pv_path = out_dir / "sa_scatter.csv", out_dir / "pv_scatter.csv"
    with sa_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCATTER_COLUMNS)
        for c in comparisons:
            if c.exp_sa is not None:
                w.writerow([_cell(c.calc_sa), _cell(c.exp_sa.value), _cell(c.percent_of_theory),
                            c.ccdc_refcode, c.doi])
    with pv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCATTER_COLUMNS)
        for c in comparisons:
            if c.exp_pv is not None:
                pct = None if c.ratio_pv is None else 100.0 * c.ratio_pv
                w.writerow([_cell(c.calc_pv), _cell(c.exp_pv.value), _cell(pct), c.ccdc_refcode, c.doi])
    return sa_path, pv_path


def read_scatter(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("calc", "exp", "percent_of_theory"):
            r[k] = float(r[k]) if r[k] else None
    return rows


def emit_overlay(curves: Sequence[IsothermCurve], out: str | Path) -> Path:
    """Long-format adsorption branches of all curves, one row per point."""
    if not curves:
        raise ValueError("emit_overlay needs at least one curve")
    return write_overlay(curves, out)


def write_overlay(curves: Sequence[IsothermCurve], out: str | Path) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OVERLAY_COLUMNS)
        for curve in sorted(curves, key=lambda c: (c.compound, c.doi)):
            if len(curve.adsorption) == 0:
                log.warning("skipping %s (%s): empty adsorption branch", curve.compound, curve.doi)
                continue
            for p, v in curve.adsorption:
                w.writerow([curve.compound, curve.doi, repr(float(p)), repr(float(v))])
    return out


def read_mapping(path: str | Path) -> dict[tuple[str, str], str]:
    """``(doi, compound) -> refcode`` from a CSV with those three columns."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"doi", "compound", "refcode"}
        if not need <= set(reader.fieldnames or []):
            raise ValidationError(f"{path}: mapping needs columns {sorted(need)}")
        return {(r["doi"].strip(), r["compound"].strip()): r["refcode"].strip().upper() for r in reader}


def comparison_rows(comparisons: Sequence[CompoundComparison]) -> list[list[str]]:
    """Report rows with experimental surface areas rounded to the nearest ten."""
    out = [["compound", "refcode", "calc_sa", "exp_sa", "ratio_sa"]]
    for c in comparisons:
        if c.exp_sa is None:
            exp = "N/A"
        else:
            rounded = int(round(c.exp_sa.value, -1))
            exp = f"<{rounded}" if c.exp_sa.below_threshold else str(rounded)
        ratio = "N/A" if c.ratio_sa is None else f"{c.ratio_sa:.2f}"
        out.append([c.compound, c.ccdc_refcode, f"{c.calc_sa:g}", exp, ratio])
    return out


def load_experimental(
    path: str | Path,
    mapping: dict[tuple[str, str], str] | None = None,
    bet_range=DEFAULT_BET_RANGE,
) -> tuple[list[ExperimentalRow], list[IsothermCurve]]:
    """Read experimental rows plus any digitized curves they reference.

    Columns: ``doi, compound`` and either ``exp_sa``/``exp_pv`` values or a
    ``points`` path to a digitized isotherm (relative to the CSV). When a
    curve is given its BET area and pore volume are used for the
    experimental axis and any ``exp_sa`` in the row is kept as ``author_sa``.
    ``refcode`` comes from the row or, failing that, from ``mapping``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"doi", "compound"} <= set(reader.fieldnames or []):
            raise ValidationError(f"{path}: experimental table needs doi and compound columns")
        raw = list(reader)

    rows, curves = [], []
    for line, r in enumerate(raw, start=2):
        doi, compound = r["doi"].strip(), r["compound"].strip()
        refcode = (r.get("refcode") or "").strip().upper()
        if not refcode and mapping:
            refcode = mapping.get((doi, compound), "")
        try:
            exp_sa = Measurement.parse(r.get("exp_sa"))
            exp_pv = Measurement.parse(r.get("exp_pv"))
            author = Measurement.parse(r.get("author_sa"))
        except ValueError:
            raise ValidationError(f"{path}:{line}: non-numeric experimental value") from None
        author_sa = author.value if author else None
        points = (r.get("points") or "").strip()
        if points:
            curve = load_curve(path.parent / points, compound=compound, doi=doi)
            curves.append(curve)
            result = bet_surface_area(curve, fit_range=bet_range)
            if exp_sa is not None:
                author_sa = exp_sa.value
            exp_sa = Measurement(result.surface_area)
            if result.pore_volume is not None:
                exp_pv = Measurement(result.pore_volume)
        rows.append(ExperimentalRow(compound, refcode, exp_sa, exp_pv, doi, author_sa))
    return rows, curves
