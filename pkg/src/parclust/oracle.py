"""Brute-force reference implementations, for tests and the oracle subcommand.

These deliberately avoid the block plan, chunked scans, partial selection,
and the scheduler: every pair is materialized outright, sorted once by the
(dist, a, b) key, and processed with live re-checks. Only the core model
types and the metric kernels are shared with the engine path, so agreement
between the two is evidence that batching, snapshot filtering, and parallel
reduction change nothing.

Guards reject large inputs because memory and time are O(n^2) here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import MetricKind, effective_threshold, internal_pairwise, reported
from .model import ClusterForest, ConstraintSet, Dataset, MergeEvent, ValidationError
from .pairgen import EligibilitySnapshot, TopPBuffer

__all__ = [
    "OracleResult",
    "oracle_single_linkage",
    "oracle_top_p",
    "oracle_batched_run",
]

_MAX_ORACLE_POINTS = 5000


@dataclass
class OracleResult:
    """Ordered merge list plus final point-to-root assignments."""

    merges: list[MergeEvent]
    assignments: np.ndarray


def _guard(n: int) -> None:
    if n > _MAX_ORACLE_POINTS:
        raise ValidationError(
            f"oracle is quadratic and capped at {_MAX_ORACLE_POINTS} points, got {n}"
        )


def _sorted_pairs(dataset: Dataset, metric: MetricKind):
    """All point pairs a < b, ascending by (dist, a, b), in internal units."""
    D = internal_pairwise(metric, dataset.values, dataset.values)
    a, b = np.triu_indices(dataset.n, k=1)
    a = a.astype(np.int64)
    b = b.astype(np.int64)
    dist = D[a, b]
    order = np.lexsort((b, a, dist))
    return dist[order], a[order], b[order]


def oracle_single_linkage(
    dataset: Dataset,
    constraints: ConstraintSet = ConstraintSet(),
    metric: MetricKind = MetricKind.EUCLIDEAN,
) -> OracleResult:
    """Nearest-neighbor-method clustering by direct definition.

    Processes every pair in ascending key order with live constraint checks,
    which is the P = infinity degenerate case of the round loop. The kl4
    ordering rule needs round structure and is ignored here; use
    oracle_batched_run for kl4 instances. Merge events carry round 0.
    """
    _guard(dataset.n)
    dist, a, b = _sorted_pairs(dataset, metric)
    kl1, kl2, kl3 = constraints.kl1, constraints.kl2, constraints.kl3
    threshold = None
    if constraints.dmax is not None:
        threshold = effective_threshold(metric, constraints.dmax)
    forest = ClusterForest(dataset.n)
    merges: list[MergeEvent] = []
    for d0, x, y in zip(dist, a, b):
        if forest.count == 1 or (kl1 is not None and forest.count <= kl1):
            break
        if threshold is not None and d0 > threshold:
            break  # pairs are distance-ascending, nothing later can pass
        rx = forest.find(int(x))
        ry = forest.find(int(y))
        if rx == ry:
            continue
        sx = forest.size_of_root(rx)
        sy = forest.size_of_root(ry)
        if kl2 is not None and (sx > kl2 or sy > kl2):
            continue
        if kl3 is not None and sx + sy > kl3:
            continue
        keep, new_size = forest.union(rx, ry)
        merges.append(
            MergeEvent(
                step=len(merges),
                round=0,
                root_a=keep,
                root_b=ry if keep == rx else rx,
                dist=float(reported(metric, float(d0))),
                new_size=new_size,
                point_a=int(x),
                point_b=int(y),
            )
        )
    return OracleResult(merges=merges, assignments=forest.roots_snapshot())


def oracle_top_p(dataset: Dataset, snapshot: EligibilitySnapshot, P: int) -> TopPBuffer:
    """Enumerate, filter, sort, truncate: the reference for top-P selection."""
    _guard(dataset.n)
    if P < 1:
        raise ValidationError(f"P must be at least 1, got {P}")
    D = internal_pairwise(snapshot.metric, dataset.values, dataset.values)
    a, b = np.triu_indices(dataset.n, k=1)
    a = a.astype(np.int64)
    b = b.astype(np.int64)
    dist = D[a, b]
    keep = snapshot.roots[a] != snapshot.roots[b]
    if snapshot.threshold is not None:
        keep &= dist <= snapshot.threshold
    kl2 = snapshot.constraints.kl2
    if kl2 is not None:
        keep &= (snapshot.size_by_point[a] <= kl2) & (snapshot.size_by_point[b] <= kl2)
    kl3 = snapshot.constraints.kl3
    if kl3 is not None:
        keep &= snapshot.size_by_point[a] + snapshot.size_by_point[b] <= kl3
    dist, a, b = dist[keep], a[keep], b[keep]
    order = np.lexsort((b, a, dist))[:P]
    return TopPBuffer(dist=dist[order], a=a[order], b=b[order])


def oracle_batched_run(
    dataset: Dataset,
    constraints: ConstraintSet = ConstraintSet(),
    P: int = 256,
    metric: MetricKind = MetricKind.EUCLIDEAN,
) -> OracleResult:
    """Round-structured reference with the kl4 priority rule.

    Rounds mirror the engine's semantics directly on the full sorted pair
    list: re-derive eligibility from the current forest, take the first P
    eligible pairs (they are the P minimal keys), stable-partition them by
    the kl4 rule using round-start sizes, merge with live re-checks, repeat.
    """
    _guard(dataset.n)
    if P < 1:
        raise ValidationError(f"P must be at least 1, got {P}")
    dist, a, b = _sorted_pairs(dataset, metric)
    kl1, kl2, kl3, kl4 = constraints.kl1, constraints.kl2, constraints.kl3, constraints.kl4
    threshold = None
    if constraints.dmax is not None:
        threshold = effective_threshold(metric, constraints.dmax)
    forest = ClusterForest(dataset.n)
    merges: list[MergeEvent] = []
    round_index = 0
    while True:
        if forest.count == 1 or (kl1 is not None and forest.count <= kl1):
            break
        roots = forest.roots_snapshot()
        sizes = forest.sizes_by_point(roots)
        elig = roots[a] != roots[b]
        if threshold is not None:
            elig &= dist <= threshold
        if kl2 is not None:
            elig &= (sizes[a] <= kl2) & (sizes[b] <= kl2)
        if kl3 is not None:
            elig &= sizes[a] + sizes[b] <= kl3
        chosen = np.flatnonzero(elig)[:P]
        if chosen.shape[0] == 0:
            break
        round_index += 1
        if kl4 is not None:
            smaller = np.minimum(sizes[a[chosen]], sizes[b[chosen]])
            chosen = chosen[np.argsort(smaller >= kl4, kind="stable")]
        for idx in chosen:
            rx = forest.find(int(a[idx]))
            ry = forest.find(int(b[idx]))
            if rx == ry:
                continue
            sx = forest.size_of_root(rx)
            sy = forest.size_of_root(ry)
            if kl2 is not None and (sx > kl2 or sy > kl2):
                continue
            if kl3 is not None and sx + sy > kl3:
                continue
            keep, new_size = forest.union(rx, ry)
            merges.append(
                MergeEvent(
                    step=len(merges),
                    round=round_index,
                    root_a=keep,
                    root_b=ry if keep == rx else rx,
                    dist=float(reported(metric, float(dist[idx]))),
                    new_size=new_size,
                    point_a=int(a[idx]),
                    point_b=int(b[idx]),
                )
            )
            if forest.count == 1 or (kl1 is not None and forest.count <= kl1):
                break
    return OracleResult(merges=merges, assignments=forest.roots_snapshot())
