"""Shared domain types: dataset, candidate pairs, constraints, and the cluster forest.

Everything else in the package operates on these types. The forest is the only
mutable structure; it is owned by the engine's round loop and never shared with
parallel tasks (they receive frozen snapshots instead).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ValidationError",
    "Dataset",
    "CandidatePair",
    "pair_key",
    "ClusterForest",
    "ConstraintSet",
    "MergeEvent",
]


class ValidationError(ValueError):
    """Invalid user input: data files, settings, or constraint values."""


@dataclass(frozen=True)
class Dataset:
    """Immutable row-major matrix of n points with d features each.

    Parameters
    ----------
    values : (n, d) float array
        Feature matrix. Coerced to contiguous float64 and frozen.
    ids : array of n identifiers, optional
        Defaults to 0..n-1. Must be unique. External files may carry an id
        column; internally all algorithms work on dense row indices.
    """

    values: np.ndarray
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"expected a 2-D matrix of points, got {values.ndim} dimensions")
        n, d = values.shape
        if n < 1 or d < 1:
            raise ValidationError(f"dataset must have at least 1 point and 1 feature, got {n}x{d}")
        if not np.isfinite(values).all():
            bad = int(np.argwhere(~np.isfinite(values))[0][0])
            raise ValidationError(f"non-finite feature value in row {bad + 1}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

        ids = self.ids
        if ids is None:
            ids = np.arange(n)
        else:
            ids = np.asarray(ids)
            if ids.shape != (n,):
                raise ValidationError(f"expected {n} ids, got {ids.shape}")
            if np.unique(ids).size != n:
                raise ValidationError("point ids are not unique")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CandidatePair:
    """Two point indices and the metric value between them.

    Canonical orientation is a < b; the pair's sort key is ``pair_key``.
    """

    a: int
    b: int
    dist: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"candidate pair must satisfy a < b, got ({self.a}, {self.b})")
        if not self.dist >= 0.0:
            raise ValueError(f"pair distance must be nonnegative, got {self.dist}")

    def key(self) -> tuple[float, int, int]:
        return pair_key(self.dist, self.a, self.b)


def pair_key(dist: float, a: int, b: int) -> tuple[float, int, int]:
    """Total ordering key for candidate pairs: distance first, indices break ties.

    Distinct pairs never compare equal, which is what makes batched selection
    deterministic regardless of worker count or reduction order.
    """
    return (dist, a, b)


class ClusterForest:
    """Union-find over point indices with per-root sizes and a live-cluster count.

    The surviving root of any union is the smaller of the two root indices, so
    cluster labels are a pure function of the union sequence. Path compression
    is applied on find; union by size is deliberately not used because it would
    make labels depend on internal tree layout.
    """

    __slots__ = ("_parent", "_size", "_count")

    def __init__(self, n: int):
        if n < 1:
            raise ValidationError(f"forest needs at least one point, got n={n}")
        self._parent = np.arange(n, dtype=np.int64)
        self._size = np.ones(n, dtype=np.int64)
        self._count = n

    @property
    def n(self) -> int:
        return self._parent.shape[0]

    @property
    def count(self) -> int:
        """Number of live clusters."""
        return self._count

    def find(self, i: int) -> int:
        """Canonical root of i's cluster, compressing the path walked."""
        parent = self._parent
        if not 0 <= i < parent.shape[0]:
            raise IndexError(f"point index {i} out of range 0..{parent.shape[0] - 1}")
        root = i
        while parent[root] != root:
            root = int(parent[root])
        while parent[i] != root:
            parent[i], i = root, int(parent[i])
        return root

    def union(self, i: int, j: int) -> tuple[int, int]:
        """Merge the clusters of i and j; returns (surviving root, new size).

        The caller must skip same-cluster pairs; unioning them is an error.
        """
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            raise ValueError(f"points {i} and {j} already share root {ri}")
        keep, drop = (ri, rj) if ri < rj else (rj, ri)
        self._parent[drop] = keep
        self._size[keep] += self._size[drop]
        self._count -= 1
        return keep, int(self._size[keep])

    def size_of_root(self, root: int) -> int:
        return int(self._size[root])

    def cluster_size(self, i: int) -> int:
        return int(self._size[self.find(i)])

    def roots_snapshot(self) -> np.ndarray:
        """Root label per point, as a fresh array; fully compresses the forest.

        Uses pointer doubling so the cost is O(n log depth) vectorized passes.
        """
        parent = self._parent
        roots = parent.copy()
        while True:
            nxt = roots[roots]
            if np.array_equal(nxt, roots):
                break
            roots = nxt
        parent[:] = roots  # full compression; roots are unchanged by this
        return roots

    def sizes_by_point(self, roots: np.ndarray | None = None) -> np.ndarray:
        """Cluster size per point."""
        if roots is None:
            roots = self.roots_snapshot()
        return self._size[roots]


@dataclass(frozen=True)
class ConstraintSet:
    """Optional merge constraints.

    kl1  stop threshold: merging never reduces the cluster count below kl1
    kl2  per-cluster size cap: clusters already above kl2 do not merge again
    kl3  combined size cap: a union may not create a cluster above kl3
    kl4  priority threshold: pairs touching a cluster smaller than kl4 merge first
    dmax maximum merge distance in true metric units
    """

    kl1: int | None = None
    kl2: int | None = None
    kl3: int | None = None
    kl4: int | None = None
    dmax: float | None = None

    def __post_init__(self):
        for name in ("kl1", "kl2", "kl3", "kl4"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValidationError(f"{name} must be a positive count, got {v}")
        if self.kl2 is not None and self.kl3 is not None and not self.kl3 > self.kl2:
            raise ValidationError(f"kl3 must exceed kl2, got kl3={self.kl3} kl2={self.kl2}")
        if self.dmax is not None and not self.dmax >= 0.0:
            raise ValidationError(f"dmax must be nonnegative, got {self.dmax}")

    def any_set(self) -> bool:
        return any(v is not None for v in (self.kl1, self.kl2, self.kl3, self.kl4, self.dmax))


@dataclass(frozen=True)
class MergeEvent:
    """One union, as recorded in the merge log.

    Distances are in true metric units (square roots already applied for the
    euclidean metric). point_a/point_b are the candidate pair that triggered
    the union; root_a/root_b are the cluster roots it joined, with root_a
    surviving.
    """

    step: int
    round: int
    root_a: int
    root_b: int
    dist: float
    new_size: int
    point_a: int
    point_b: int
