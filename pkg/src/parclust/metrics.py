"""Point-to-point distance computation and the pluggable-metric seam.

Internally the engine orders euclidean candidates by *squared* distance and
only applies the square root when a value leaves the core (merge log, output
files). Ordering is all the selection algorithm needs, and skipping the sqrt
in the O(n^2) scan is free because squaring is monotone.

Every pairwise kernel here accumulates per pair over coordinates left to
right, independent of tile shape. That makes distances bit-identical no
matter how the dataset is blocked or which worker computes them, which is
what the cross-worker determinism guarantees rest on. Feature scaling is not
performed; inputs are assumed to be pre-scaled.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.spatial.distance import cdist

from .model import ValidationError

__all__ = [
    "MetricKind",
    "distance",
    "internal_distance",
    "internal_pairwise",
    "reported",
    "effective_threshold",
]


class MetricKind(enum.Enum):
    """Supported point metrics. Euclidean is the default.

    euclidean and squared-euclidean induce the identical ordering on pairs;
    they differ only in the units of reported distances and of dmax.
    """

    EUCLIDEAN = "euclidean"
    SQEUCLIDEAN = "squared-euclidean"
    MANHATTAN = "manhattan"
    CHEBYSHEV = "chebyshev"

    @classmethod
    def parse(cls, name: str) -> "MetricKind":
        normalized = name.strip().lower()
        for kind in cls:
            if kind.value == normalized:
                return kind
        choices = ", ".join(k.value for k in cls)
        raise ValidationError(f"unknown metric {name!r}; choose one of: {choices}")


# scipy kernel used for the *internal* value of each metric. All three kernels
# reduce over coordinates with a plain left-to-right loop, so values do not
# depend on tile shape (asserted by tests against an independent accumulation).
_CDIST_KERNEL = {
    MetricKind.EUCLIDEAN: "sqeuclidean",
    MetricKind.SQEUCLIDEAN: "sqeuclidean",
    MetricKind.MANHATTAN: "cityblock",
    MetricKind.CHEBYSHEV: "chebyshev",
}


def internal_pairwise(metric: MetricKind, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """All internal distances between rows of x and rows of y, shape (len(x), len(y))."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValidationError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return cdist(x, y, _CDIST_KERNEL[metric])


def internal_distance(metric: MetricKind, x: np.ndarray, y: np.ndarray) -> float:
    """Internal (ordering) distance between two points."""
    return float(internal_pairwise(metric, x, y)[0, 0])


def distance(metric: MetricKind, x: np.ndarray, y: np.ndarray) -> float:
    """True metric distance between two points, in reported units."""
    return float(reported(metric, internal_distance(metric, x, y)))


def reported(metric: MetricKind, internal):
    """Convert internal distance value(s) to true metric units."""
    if metric is MetricKind.EUCLIDEAN:
        return np.sqrt(internal)
    return internal


def effective_threshold(metric: MetricKind, dmax: float) -> float:
    """Internal-units cutoff equivalent to rejecting pairs with distance > dmax.

    A pair fails the internal comparison (internal > threshold) exactly when
    its metric distance exceeds dmax, so the scan never needs the sqrt.
    """
    if not dmax >= 0.0:
        raise ValidationError(f"dmax must be nonnegative, got {dmax}")
    if metric is MetricKind.EUCLIDEAN:
        return dmax * dmax
    return dmax
