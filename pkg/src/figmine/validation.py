"""Input checks shared by the analysis estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array, check_consistent_length

from .errors import ValidationError


def check_branch(pressure, uptake) -> tuple[np.ndarray, np.ndarray]:
    """Validate one isotherm branch and return float arrays.

    Pressures must lie in [0, 1] and uptakes must be nonnegative. Accepts
    1-d arrays or single-column 2-d arrays for the pressure.
    """
    p = np.asarray(pressure, dtype=float)
    if p.ndim == 2 and p.shape[1] == 1:
        p = p[:, 0]
    p = check_array(p, ensure_2d=False, ensure_min_samples=0, dtype=float)
    v = check_array(uptake, ensure_2d=False, ensure_min_samples=0, dtype=float)
    check_consistent_length(p, v)
    bad = [i for i, (pi, vi) in enumerate(zip(p, v)) if not (0.0 <= pi <= 1.0) or vi < 0]
    if bad:
        raise ValidationError(f"points out of range (p/p0 in [0,1], uptake >= 0) at rows {bad}")
    return p, v


def check_interval(lo: float, hi: float, name: str = "range") -> tuple[float, float]:
    if not (0.0 <= lo < hi <= 1.0):
        raise ValidationError(f"{name} must satisfy 0 <= lo < hi <= 1, got {lo}:{hi}")
    return float(lo), float(hi)
