"""Parse templated model responses into label sets and isotherm descriptors.

``parse_label_set`` and ``extract_fields`` follow the reference extraction
scripts step for step (including their quirks: case-sensitive keys, single
digit choices, first-occurrence key lookup). Everything after that, turning
cleaned strings into typed values, is ours.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .prompts import DESCRIPTOR_KEYS, FIGURES_KEY, ISOTHERM_KEY, NA_TOKEN, UNSURE_TOKEN

CLASSES = (1, 2, 3, 4, 5, 6)
NONE_OF_ABOVE = 6
EXTRACTION_KEYS = (ISOTHERM_KEY,) + DESCRIPTOR_KEYS
RETAINED_PUNCT = " .,-;/()[]"
UNKNOWN = "unknown"

Hysteresis = Literal["yes", "no", "unknown"]

_CHOICE = re.compile(r"\((\d)\)")
_ANSWER_WRAPPER = re.compile(r"\[\s*Answer\s*:\s*(.*?)\s*\]")
_NUMBER = r"[-+]?\d+(?:\.\d+)?"
_RANGE = re.compile(rf"^\s*({_NUMBER})\s*(?:-|to|\s)\s*({_NUMBER})\s*(.*)$", re.IGNORECASE)
_SINGLE = re.compile(rf"^\s*({_NUMBER})\s*(.*)$")
_TUPLE = re.compile(r"\(([^()]*)\)")
_ADS_DES = {"ads", "des", "adsorption", "desorption"}


class ParseWarning(UserWarning):
    """Non-fatal oddity found while parsing a response."""


def retained_char(ch: str) -> bool:
    return ch.isalnum() or ch in RETAINED_PUNCT


def is_na(value: str | None) -> bool:
    return value is None or value.strip().strip(".").upper() in {"N/A", "NA", ""}


# ---------------------------------------------------------------------------
# label sets


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[int, ...]
    degenerate: bool = False

    def __post_init__(self):
        labels = tuple(sorted(set(int(c) for c in self.labels)))
        if any(c not in CLASSES for c in labels):
            raise ValueError(f"labels outside 1..6: {labels}")
        if self.degenerate and labels:
            raise ValueError("a degenerate label set must be empty")
        object.__setattr__(self, "labels", labels)

    def __contains__(self, c: int) -> bool:
        return c in self.labels

    def __iter__(self):
        return iter(self.labels)

    def __len__(self):
        return len(self.labels)

    @property
    def lint(self) -> list[str]:
        if NONE_OF_ABOVE in self.labels and len(self.labels) > 1:
            return ["choice 6 (none of above) co-occurs with a content class"]
        return []

    def to_response(self) -> str:
        """Minimal response text that parses back to this label set."""
        return f"{FIGURES_KEY}: " + ";".join(f"({c})" for c in self.labels)

    def to_field(self) -> str:
        return ";".join(str(c) for c in self.labels)

    @classmethod
    def from_field(cls, text: str | None, degenerate: bool = False) -> "LabelSet":
        """Inverse of ``to_field``; accepts ``;`` ``,`` or whitespace separators."""
        if text is None or not str(text).strip():
            return cls((), degenerate=degenerate)
        parts = re.split(r"[;,\s]+", str(text).strip().strip("[]"))
        return cls(tuple(int(p) for p in parts if p))


def parse_label_set(raw: str) -> LabelSet:
    """Extract the ``Figures:`` choices from a response.

    A response without ``Figures:`` is read as choice 6. A ``Figures:`` answer
    that yields no valid digit is kept as an empty, degenerate set.
    """
    text = (raw or "").replace("\n", " ").replace("[", " ").replace("]", " ").strip()
    if "Figures:" not in text:
        return LabelSet((NONE_OF_ABOVE,))
    cut = text.find("Nitrogen Isotherm:")
    if cut != -1:
        text = text[:cut]
    start = text.find("Figures:")
    if start != -1:
        text = text[start:]
    choices = sorted({int(d) for d in _CHOICE.findall(text) if int(d) in range(1, 7)})
    if not choices:
        return LabelSet((), degenerate=True)
    return LabelSet(tuple(choices))


class LabelParser(TransformerMixin, BaseEstimator):
    """Turn raw responses into a ``(n_pages, 6)`` 0/1 indicator matrix.

    Degenerate responses give an all-zero row. Stateless; ``fit`` only
    records ``n_classes_`` so the estimator passes ``check_is_fitted``.
    """

    def fit(self, X, y=None):
        self.n_classes_ = len(CLASSES)
        return self

    def transform(self, X: Iterable[str]) -> np.ndarray:
        sets = [parse_label_set(x) for x in X]
        return labels_to_indicator(sets)

    def inverse_transform(self, Y) -> list[LabelSet]:
        Y = np.asarray(Y)
        return [LabelSet(tuple(int(i) + 1 for i in np.flatnonzero(row))) for row in Y]


def labels_to_indicator(sets: Sequence[LabelSet]) -> np.ndarray:
    out = np.zeros((len(sets), len(CLASSES)), dtype=np.int8)
    for i, s in enumerate(sets):
        for c in s:
            out[i, c - 1] = 1
    return out


# ---------------------------------------------------------------------------
# descriptors


@dataclass(frozen=True)
class NormBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0 <= self.x1 < self.x2 <= 1 and 0 <= self.y1 < self.y2 <= 1):
            raise ValueError(f"invalid normalized box {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def __str__(self):
        return "(" + ",".join(f"{v:g}" for v in self.as_tuple()) + ")"


@dataclass(frozen=True)
class Saturation:
    lo: float
    hi: float
    unit: str = ""

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"saturation lo {self.lo} > hi {self.hi}")

    def intersects(self, other: "Saturation") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi


@dataclass(frozen=True)
class IsothermExtraction:
    """Typed descriptors of one extraction response. ``None`` means N/A."""

    figure_locator: str | None = None
    compounds: tuple[str, ...] = ()
    porosity_text: str | None = None
    hysteresis: Hysteresis | None = None
    saturation: Saturation | Literal["unknown"] | None = None
    regions: tuple[NormBox, ...] = ()
    lint: tuple[str, ...] = field(default=(), compare=False)

    @property
    def has_isotherm(self) -> bool:
        return self.figure_locator is not None


def clean_value(value: str) -> str:
    value = _ANSWER_WRAPPER.sub(r"\1", value)
    return "".join(ch for ch in value if retained_char(ch)).strip()


def extract_fields(raw: str) -> dict[str, str]:
    """Cleaned text after each ``<Key>: `` up to end of line, ``"N/A"`` if absent."""
    raw = raw or ""
    info = {key: NA_TOKEN for key in EXTRACTION_KEYS}
    for key in EXTRACTION_KEYS:
        parts = raw.split(f"{key}: ")
        if len(parts) < 2:
            continue
        cleaned = clean_value(parts[1].split("\n")[0])
        info[key] = cleaned if cleaned else NA_TOKEN
    return info


def parse_compounds(text: str) -> list[str]:
    """Split a compound answer on commas, dropping ads/des labelling words."""
    names: list[str] = []
    seen: set[str] = set()
    for part in text.split(","):
        tokens = [t for t in part.split() if t.lower().strip("()[].;:") not in _ADS_DES]
        name = " ".join(tokens)
        if not name or is_na(name):
            continue
        if name.casefold() not in seen:
            seen.add(name.casefold())
            names.append(name)
    return names


def parse_saturation(text: str) -> Saturation | Literal["unknown"]:
    if UNSURE_TOKEN.lower() in text.lower():
        return UNKNOWN
    m = _RANGE.match(text)
    if m:
        lo, hi, unit = float(m.group(1)), float(m.group(2)), m.group(3).strip()
        if lo > hi:
            warnings.warn(f"saturation range {text!r} is reversed", ParseWarning, stacklevel=2)
            lo, hi = hi, lo
        return Saturation(lo, hi, unit)
    m = _SINGLE.match(text)
    if m:
        v = float(m.group(1))
        return Saturation(v, v, m.group(2).strip())
    warnings.warn(f"unparseable saturation {text!r}", ParseWarning, stacklevel=2)
    return UNKNOWN


def parse_regions(text: str) -> list[NormBox]:
    boxes = []
    for body in _TUPLE.findall(text):
        parts = [p.strip() for p in body.split(",")]
        try:
            values = [float(p) for p in parts]
        except ValueError:
            warnings.warn(f"non-numeric region ({body})", ParseWarning, stacklevel=2)
            continue
        if len(values) != 4:
            warnings.warn(f"region ({body}) does not have 4 coordinates", ParseWarning, stacklevel=2)
            continue
        try:
            boxes.append(NormBox(*values))
        except ValueError as exc:
            warnings.warn(str(exc), ParseWarning, stacklevel=2)
    return boxes


def parse_hysteresis(text: str) -> Hysteresis:
    if UNSURE_TOKEN.lower() in text.lower():
        return "unknown"
    first = re.split(r"[\s,.;]+", text.strip().lower(), maxsplit=1)[0]
    if first in ("yes", "no"):
        return first  # type: ignore[return-value]
    warnings.warn(f"unrecognized hysteresis answer {text!r}", ParseWarning, stacklevel=2)
    return "unknown"


def parse_extraction(raw: str) -> IsothermExtraction:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ParseWarning)
        fields = extract_fields(raw)

        locator = fields[ISOTHERM_KEY]
        if is_na(locator) or locator.strip().lower() == "no":
            locator = None
        compounds = () if is_na(fields["Compound"]) else tuple(parse_compounds(fields["Compound"]))
        porosity = None if is_na(fields["Porosity"]) else fields["Porosity"]
        hysteresis = None if is_na(fields["Hysteresis"]) else parse_hysteresis(fields["Hysteresis"])
        saturation = None if is_na(fields["Saturation"]) else parse_saturation(fields["Saturation"])
        regions = () if is_na(fields["Position"]) else tuple(parse_regions(fields["Position"]))

    lint = tuple(str(w.message) for w in caught if issubclass(w.category, ParseWarning))
    return IsothermExtraction(locator, compounds, porosity, hysteresis, saturation, regions, lint)


# ---------------------------------------------------------------------------
# flat (CSV) representation

PARSED_COLUMNS = (
    "img", "labels", "degenerate", "figure_locator", "compounds", "porosity",
    "hysteresis", "saturation_lo", "saturation_hi", "saturation_unit", "regions",
)


def _fmt_float(v: float) -> str:
    return repr(float(v))


def extraction_to_row(ext: IsothermExtraction) -> dict[str, str]:
    sat = ext.saturation
    if isinstance(sat, Saturation):
        lo, hi, unit = _fmt_float(sat.lo), _fmt_float(sat.hi), sat.unit
    elif sat == UNKNOWN:
        lo = hi = unit = UNKNOWN
    else:
        lo = hi = unit = NA_TOKEN
    return {
        "figure_locator": ext.figure_locator or NA_TOKEN,
        "compounds": ";".join(ext.compounds) if ext.compounds else NA_TOKEN,
        "porosity": ext.porosity_text or NA_TOKEN,
        "hysteresis": ext.hysteresis or NA_TOKEN,
        "saturation_lo": lo,
        "saturation_hi": hi,
        "saturation_unit": unit,
        "regions": ";".join(str(b) for b in ext.regions) if ext.regions else NA_TOKEN,
    }


def extraction_from_row(row: dict[str, str]) -> IsothermExtraction:
    """Rebuild an extraction from parsed-CSV or ground-truth columns."""

    def get(name):
        v = row.get(name)
        return None if v is None or is_na(v) else v.strip()

    locator = get("figure_locator")
    compounds = tuple(c.strip() for c in get("compounds").split(";")) if get("compounds") else ()
    hysteresis = get("hysteresis")
    if hysteresis is not None:
        hysteresis = hysteresis.lower()
        if hysteresis not in ("yes", "no", UNKNOWN):
            raise ValueError(f"bad hysteresis value {hysteresis!r}")
    lo, hi = get("saturation_lo"), get("saturation_hi")
    if lo is None or hi is None:
        saturation = None
    elif lo == UNKNOWN:
        saturation = UNKNOWN
    else:
        saturation = Saturation(float(lo), float(hi), get("saturation_unit") or "")
    regions_text = get("regions")
    regions = tuple(parse_regions(regions_text)) if regions_text else ()
    return IsothermExtraction(locator, compounds, get("porosity"), hysteresis, saturation, regions)
