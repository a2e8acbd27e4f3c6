"""Projection onto weakly decreasing schedules within bounds."""

from __future__ import annotations

import numpy as np
from scipy.optimize import isotonic_regression


def decreasing_projection(y, weights=None, lower: float = -np.inf, upper: float = np.inf) -> np.ndarray:
    """Weighted least-squares projection of ``y`` onto decreasing sequences in ``[lower, upper]``.

    Clipping the unconstrained isotonic fit is exact because the bounds are
    the same for every coordinate.
    """
    y = np.asarray(y, dtype=float)
    fit = isotonic_regression(y, weights=weights, increasing=False).x
    return np.clip(fit, lower, upper)
