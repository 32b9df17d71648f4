"""Analysis of digitized nitrogen isotherms (77 K, uptake in cm³ STP/g).

All interpolation is piecewise linear: digitized points are sparse and
noisy, and splines overshoot between them.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import FitError, InsufficientDataError, ValidationError
from .validation import check_branch, check_interval

log = logging.getLogger(__name__)

AVOGADRO = 6.02214076e23  # 1/mol
N2_CROSS_SECTION_M2 = 0.162e-18
STP_MOLAR_VOLUME_CM3 = 22414.0
N2_MOLAR_MASS = 28.0134  # g/mol
N2_LIQUID_DENSITY = 0.808  # g/cm³ at 77 K

# m²/g of surface per cm³(STP)/g of monolayer capacity
K_BET = AVOGADRO * N2_CROSS_SECTION_M2 / STP_MOLAR_VOLUME_CM3
# cm³ of liquid N2 per cm³(STP) of gas
K_LIQ = N2_MOLAR_MASS / (STP_MOLAR_VOLUME_CM3 * N2_LIQUID_DENSITY)

DEFAULT_BET_RANGE = (0.05, 0.30)


def _normalize_branch(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float).reshape(-1, 2) if len(points) else np.empty((0, 2))
    p, v = check_branch(arr[:, 0], arr[:, 1])
    if len(p) == 0:
        return np.empty((0, 2))
    # sort and average duplicate pressures so the branch is strictly increasing
    uniq, inverse = np.unique(p, return_inverse=True)
    sums = np.bincount(inverse, weights=v)
    counts = np.bincount(inverse)
    return np.column_stack([uniq, sums / counts])


@dataclass
class IsothermCurve:
    compound: str
    doi: str
    adsorption: np.ndarray
    desorption: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def __post_init__(self):
        self.adsorption = _normalize_branch(self.adsorption)
        self.desorption = _normalize_branch(self.desorption)

    @property
    def max_uptake(self) -> float:
        vals = [b[:, 1].max() for b in (self.adsorption, self.desorption) if len(b)]
        return float(max(vals)) if vals else 0.0

    def scaled(self, k: float) -> "IsothermCurve":
        return IsothermCurve(
            self.compound, self.doi,
            self.adsorption * [1.0, k], self.desorption * [1.0, k],
        )


def load_curve(path: str | Path, compound: str | None = None, doi: str = "") -> IsothermCurve:
    """Read a digitized point file with columns ``p_rel, uptake[, branch]``.

    Without a branch column the rows are split at the highest-pressure point:
    the rows up to and including it form the adsorption branch, the rest the
    desorption branch.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = {c.strip() for c in (reader.fieldnames or [])}
        if not {"p_rel", "uptake"} <= cols:
            raise ValidationError(f"{path}: need columns p_rel, uptake; got {sorted(cols)}")
        rows = [{k.strip(): (v or "").strip() for k, v in r.items() if k} for r in reader]

    bad = []
    pts = []
    for i, r in enumerate(rows, start=2):
        try:
            p, v = float(r["p_rel"]), float(r["uptake"])
        except ValueError:
            bad.append(i)
            continue
        if not (0.0 <= p <= 1.0) or v < 0:
            bad.append(i)
        pts.append((p, v, r.get("branch", "").lower()))
    if bad:
        raise ValidationError(f"{path}: invalid p_rel/uptake on lines {bad}")

    if "branch" in cols:
        unknown = sorted({b for _, _, b in pts if b not in ("ads", "des")})
        if unknown:
            raise ValidationError(f"{path}: branch values must be ads/des, got {unknown}")
        ads = [(p, v) for p, v, b in pts if b == "ads"]
        des = [(p, v) for p, v, b in pts if b == "des"]
    else:
        apex = int(np.argmax([p for p, _, _ in pts])) if pts else -1
        ads = [(p, v) for p, v, _ in pts[: apex + 1]]
        des = [(p, v) for p, v, _ in pts[apex + 1:]]
    return IsothermCurve(compound or path.stem, doi, ads, des)


def detect_plateau(curve: IsothermCurve, slope_eps: float = 0.05, p_cutoff: float = 0.9):
    """Uptake range ``(lo, hi)`` of the saturation plateau, or ``None``.

    Segment slopes of the adsorption branch below ``p_cutoff`` are divided by
    the branch's maximum uptake (per unit p/p0). The plateau is the longest
    run of consecutive segments with ``|slope| <= slope_eps``; the earliest
    run wins a tie. Runs shorter than two segments do not count.
    """
    ads = curve.adsorption[curve.adsorption[:, 0] <= p_cutoff]
    if len(ads) < 4:
        raise InsufficientDataError(
            f"plateau detection needs >= 4 adsorption points with p/p0 <= {p_cutoff}, got {len(ads)}"
        )
    vmax = ads[:, 1].max()
    if vmax <= 0:
        return None
    with np.errstate(over="ignore"):
        slopes = np.diff(ads[:, 1]) / np.diff(ads[:, 0]) / vmax
    flat = np.abs(slopes) <= slope_eps

    best_len, best_start = 0, -1
    run_start = None
    for i, f in enumerate(np.append(flat, False)):
        if f and run_start is None:
            run_start = i
        elif not f and run_start is not None:
            if i - run_start > best_len:
                best_len, best_start = i - run_start, run_start
            run_start = None
    if best_len < 2:
        return None
    seg = ads[best_start: best_start + best_len + 1, 1]
    return float(seg.min()), float(seg.max())


def detect_hysteresis(curve: IsothermCurve, gap_tol: float = 0.02) -> Literal["yes", "no", "unknown"]:
    ads, des = curve.adsorption, curve.desorption
    if len(des) == 0 or len(ads) == 0:
        return "unknown"
    lo = max(ads[0, 0], des[0, 0])
    hi = min(ads[-1, 0], des[-1, 0])
    grid = np.union1d(ads[:, 0], des[:, 0])
    grid = grid[(grid >= lo) & (grid <= hi)]
    if len(grid) < 3:
        return "unknown"
    gap = np.interp(grid, des[:, 0], des[:, 1]) - np.interp(grid, ads[:, 0], ads[:, 1])
    return "yes" if gap.max() > gap_tol * curve.max_uptake else "no"


class BETSurfaceArea(RegressorMixin, BaseEstimator):
    """BET fit on the linearized isotherm ``x / (V (1 - x))`` against ``x``.

    ``fit(X, y)`` takes relative pressures ``X`` and uptakes ``y``
    (cm³ STP/g); only points inside ``p_range`` with positive uptake are
    used. ``predict`` evaluates the fitted BET equation.

    Advisory consistency flags (not enforced) are collected in ``flags_``.
    """

    def __init__(self, p_range=DEFAULT_BET_RANGE):
        self.p_range = p_range

    def fit(self, X, y):
        p, v = check_branch(X, y)
        lo, hi = check_interval(*self.p_range, name="p_range")
        mask = (p >= lo) & (p <= hi) & (v > 0) & (p < 1)
        x, vv = p[mask], v[mask]
        if len(x) < 3:
            raise InsufficientDataError(f"BET fit needs >= 3 points in [{lo}, {hi}], got {len(x)}")
        t = x / (vv * (1 - x))
        A = np.column_stack([x, np.ones_like(x)])
        (slope, intercept), *_ = np.linalg.lstsq(A, t, rcond=None)
        slope, intercept = float(slope), float(intercept)
        if slope + intercept <= 0:
            raise FitError(f"unphysical BET fit: slope + intercept = {slope + intercept:.3g}")

        resid = t - (slope * x + intercept)
        ss_tot = float(np.sum((t - t.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0

        self.slope_, self.intercept_ = slope, intercept
        self.v_monolayer_ = 1.0 / (slope + intercept)
        self.bet_c_ = slope / intercept + 1.0 if intercept != 0 else math.inf
        self.surface_area_ = self.v_monolayer_ * K_BET
        self.r2_ = min(1.0, max(0.0, r2))
        self.n_points_ = int(len(x))
        self.flags_ = _rouquerol_flags(x, vv, self.bet_c_, lo, hi)
        return self

    def predict(self, X):
        check_is_fitted(self, "v_monolayer_")
        x = np.asarray(X, dtype=float).reshape(-1)
        c, vm = self.bet_c_, self.v_monolayer_
        if math.isinf(c):
            return vm / (1 - x)
        return vm * c * x / ((1 - x) * (1 - x + c * x))


def _rouquerol_flags(x, v, c, lo, hi) -> list[str]:
    flags = []
    if not c > 0:
        flags.append("negative_c")
    if np.any(np.diff(v * (1 - x)) < 0):
        flags.append("v(1-x)_not_increasing")
    if c > 0 and math.isfinite(c):
        x_m = 1.0 / (math.sqrt(c) + 1.0)
        if not lo <= x_m <= hi:
            flags.append("monolayer_pressure_outside_range")
    return flags


@dataclass
class PorosityResult:
    v_monolayer: float
    bet_c: float
    surface_area: float
    fit_r2: float
    pore_volume: float | None
    points_used: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "v_monolayer": self.v_monolayer,
            "bet_c": None if math.isinf(self.bet_c) else self.bet_c,
            "surface_area": self.surface_area,
            "fit_r2": self.fit_r2,
            "pore_volume": self.pore_volume,
            "points_used": self.points_used,
            "flags": list(self.flags),
        }


def pore_volume(curve: IsothermCurve, p_eval: float = 0.95) -> float:
    """Liquid-equivalent pore volume (cm³/g) from the uptake at ``p_eval``."""
    ads = curve.adsorption
    if len(ads) == 0 or not (ads[0, 0] <= p_eval <= ads[-1, 0]):
        span = "empty" if len(ads) == 0 else f"[{ads[0, 0]}, {ads[-1, 0]}]"
        raise ValidationError(f"p_eval={p_eval} outside adsorption branch range {span}")
    return float(np.interp(p_eval, ads[:, 0], ads[:, 1])) * K_LIQ


def bet_surface_area(curve: IsothermCurve, fit_range=DEFAULT_BET_RANGE, p_eval: float = 0.95) -> PorosityResult:
    ads = curve.adsorption
    model = BETSurfaceArea(p_range=fit_range).fit(ads[:, 0], ads[:, 1])
    try:
        pv = pore_volume(curve, p_eval)
    except ValidationError:
        log.info("%s: adsorption branch does not reach p/p0=%s, no pore volume", curve.compound, p_eval)
        pv = None
    return PorosityResult(
        v_monolayer=model.v_monolayer_,
        bet_c=model.bet_c_,
        surface_area=model.surface_area_,
        fit_r2=model.r2_,
        pore_volume=pv,
        points_used=model.n_points_,
        flags=model.flags_,
    )


def parse_range(text: str) -> tuple[float, float]:
    """``"0.05:0.30"`` -> ``(0.05, 0.30)``."""
    try:
        lo, hi = (float(t) for t in text.split(":"))
    except ValueError:
        raise ValidationError(f"range must look like lo:hi, got {text!r}") from None
    return check_interval(lo, hi)
