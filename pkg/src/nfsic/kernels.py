"""Isotropic Gaussian kernel and median-heuristic width selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from nfsic.errors import DegenerateInputError, InputError

# Pairwise-distance medians above this many points use a seeded subsample.
MEDIAN_MAX_POINTS = 5000


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Return `a` as a finite 2D float64 array (a 1D input becomes one column)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis]
    if arr.ndim != 2:
        raise InputError(f"{name} must be 1D or 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains NaN or Inf")
    return arr


def sq_distances(points: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (len(locations), len(points))."""
    d2 = (
        np.sum(locations**2, axis=1)[:, np.newaxis]
        + np.sum(points**2, axis=1)[np.newaxis, :]
        - 2.0 * (locations @ points.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


@dataclass(frozen=True)
class GaussianKernel:
    """k(x, v) = exp(-||x - v||^2 / (2 * width_sq))."""

    width_sq: float

    def __post_init__(self):
        w = float(self.width_sq)
        if not np.isfinite(w) or w <= 0:
            raise InputError(f"width_sq must be a positive finite number, got {self.width_sq!r}")
        object.__setattr__(self, "width_sq", w)

    def eval(self, x, v) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        if x.shape != v.shape or x.ndim != 1:
            raise InputError(f"dimension mismatch: {x.shape} vs {v.shape}")
        diff = x - v
        return float(np.exp(-np.dot(diff, diff) / (2.0 * self.width_sq)))

    def matrix(self, points, locations) -> np.ndarray:
        """Kernel values between locations (rows) and points (columns)."""
        points = as_matrix(points, "points")
        locations = as_matrix(locations, "locations")
        if points.shape[1] != locations.shape[1]:
            raise InputError(
                f"dimension mismatch: points have {points.shape[1]} columns, "
                f"locations have {locations.shape[1]}"
            )
        return np.exp(-sq_distances(points, locations) / (2.0 * self.width_sq))


def _middle_pair(values: np.ndarray) -> tuple[float, float]:
    """Order statistics at 0-based ranks (m-1)//2 and m//2 of `values` (m entries).

    Exact. For large inputs a random pilot sample brackets the median so only a
    thin slice has to be partitioned; if the bracket misses, a full partition runs.
    """
    m = values.shape[0]
    k1, k2 = (m - 1) // 2, m // 2
    if m > 200_000:
        pilot = np.sort(values[np.random.default_rng(0).integers(0, m, 20_000)])
        lo, hi = pilot[9_000], pilot[11_000]  # about +-28 standard errors around the median
        below = int(np.count_nonzero(values < lo))
        mid = values[(values >= lo) & (values <= hi)]
        if below <= k1 and below + mid.shape[0] > k2:
            part = np.partition(mid, [k1 - below, k2 - below])
            return float(part[k1 - below]), float(part[k2 - below])
    part = np.partition(values, [k1, k2])
    return float(part[k1]), float(part[k2])


def _median_distance(sq_dists: np.ndarray) -> float:
    # sqrt is monotone, so select on squared distances and take roots of the middle pair only
    a, b = _middle_pair(sq_dists)
    return 0.5 * (np.sqrt(a) + np.sqrt(b))


def median_heuristic(points, max_points: int = MEDIAN_MAX_POINTS, seed: int = 0) -> float:
    """Median of all pairwise Euclidean distances between the rows of `points`.

    For more than `max_points` rows the median is taken over a uniform
    subsample (without replacement) drawn with `seed`; otherwise it is exact.
    The matching kernel is ``GaussianKernel(median ** 2)``.
    """
    pts = as_matrix(points, "points")
    n = pts.shape[0]
    if n < 2:
        raise InputError(f"median heuristic needs at least 2 points, got {n}")
    if n > max_points:
        rng = np.random.default_rng(seed)
        pts = pts[rng.choice(n, size=max_points, replace=False)]
    med = _median_distance(pdist(pts, "sqeuclidean"))
    if med <= 0.0:
        if not np.any(pts != pts[0]):
            raise DegenerateInputError("all points are identical; median distance is zero")
        raise DegenerateInputError("median pairwise distance is zero (too many duplicate points)")
    return med


def median_kernel(points, max_points: int = MEDIAN_MAX_POINTS, seed: int = 0) -> GaussianKernel:
    return GaussianKernel(median_heuristic(points, max_points=max_points, seed=seed) ** 2)
