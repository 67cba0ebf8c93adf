"""Block decomposition and batched top-P extraction of minimal eligible pairs.

The dataset is split into B contiguous blocks; every (i, j) block pair with
i <= j is one scan task, and together the tasks cover each point pair a < b
exactly once. A task scans its pair set in bounded row chunks, never holding
more than O(P) candidates plus one chunk of distances, and returns the P
smallest eligible pairs. Buffers from any number of tasks reduce with
``reduce_topp``, which is associative and commutative because the ordering
key (dist, a, b) is a total order, so the result is independent of task
execution order, of B, and of how the reduction tree is shaped.

Eligibility is evaluated against a snapshot frozen at round start. Pairs
blocked by kl2/kl3/dmax stay blocked forever (cluster sizes only grow and
distances are fixed), so filtering at selection time never hides a merge
that later processing would have allowed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import MetricKind, effective_threshold, internal_pairwise
from .model import CandidatePair, ClusterForest, ConstraintSet, ValidationError

__all__ = [
    "BlockPlan",
    "TopPBuffer",
    "EligibilitySnapshot",
    "plan_blocks",
    "suggested_blocks",
    "make_snapshot",
    "pair_eligible",
    "scan_block_pair",
    "reduce_topp",
    "global_top_p",
]

# Points per block the auto planner aims for: large enough to amortize task
# dispatch, small enough to produce work for every worker.
_TARGET_BLOCK_POINTS = 4096

# Cap on distance-tile entries materialized at once per task (~16 MiB float64).
_CHUNK_ENTRIES = 1 << 21


@dataclass(frozen=True)
class BlockPlan:
    """Contiguous index blocks plus the task list of block pairs."""

    n: int
    bounds: np.ndarray  # B+1 offsets; block i covers bounds[i]..bounds[i+1]-1
    tasks: tuple[tuple[int, int], ...]

    @property
    def num_blocks(self) -> int:
        return self.bounds.shape[0] - 1

    def block_range(self, i: int) -> tuple[int, int]:
        return int(self.bounds[i]), int(self.bounds[i + 1])


def plan_blocks(n: int, blocks: int) -> BlockPlan:
    """Split 0..n-1 into ``blocks`` contiguous ranges (clamped to n) and list
    all block-pair tasks (i, j) with i <= j."""
    if n < 1:
        raise ValidationError(f"need at least one point, got n={n}")
    if blocks < 1:
        raise ValidationError(f"need at least one block, got {blocks}")
    B = min(blocks, n)
    sizes = np.full(B, n // B, dtype=np.int64)
    sizes[: n % B] += 1
    bounds = np.zeros(B + 1, dtype=np.int64)
    np.cumsum(sizes, out=bounds[1:])
    bounds.setflags(write=False)
    tasks = tuple((i, j) for i in range(B) for j in range(i, B))
    return BlockPlan(n=n, bounds=bounds, tasks=tasks)


def suggested_blocks(n: int) -> int:
    return max(1, -(-n // _TARGET_BLOCK_POINTS))


@dataclass(frozen=True, eq=False)
class TopPBuffer:
    """Up to P candidate pairs, ascending by (dist, a, b).

    dist holds internal-unit values (squared for the euclidean metric).
    """

    dist: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __len__(self) -> int:
        return self.dist.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TopPBuffer):
            return NotImplemented
        return (
            np.array_equal(self.dist, other.dist)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def empty(cls) -> "TopPBuffer":
        return cls(
            dist=np.empty(0, dtype=np.float64),
            a=np.empty(0, dtype=np.int64),
            b=np.empty(0, dtype=np.int64),
        )

    @classmethod
    def from_candidates(cls, dist, a, b, P: int) -> "TopPBuffer":
        """Sort candidates by (dist, a, b) and keep the P smallest."""
        dist = np.asarray(dist, dtype=np.float64)
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        order = np.lexsort((b, a, dist))[:P]
        return cls(dist=dist[order], a=a[order], b=b[order])

    def pairs(self) -> list[CandidatePair]:
        return [
            CandidatePair(a=int(a), b=int(b), dist=float(d))
            for d, a, b in zip(self.dist, self.a, self.b)
        ]


@dataclass(frozen=True)
class EligibilitySnapshot:
    """Frozen per-round view used by parallel scan tasks.

    roots and size_by_point are per-point arrays captured from the forest at
    round start; threshold is dmax converted to internal units. Immutable for
    the round, so any number of tasks can read it concurrently.
    """

    roots: np.ndarray
    size_by_point: np.ndarray
    constraints: ConstraintSet
    threshold: float | None
    metric: MetricKind


def make_snapshot(
    forest: ClusterForest, constraints: ConstraintSet, metric: MetricKind
) -> EligibilitySnapshot:
    roots = forest.roots_snapshot()
    sizes = forest.sizes_by_point(roots)
    roots.setflags(write=False)
    sizes.setflags(write=False)
    threshold = None
    if constraints.dmax is not None:
        threshold = effective_threshold(metric, constraints.dmax)
    return EligibilitySnapshot(
        roots=roots,
        size_by_point=sizes,
        constraints=constraints,
        threshold=threshold,
        metric=metric,
    )


def pair_eligible(snapshot: EligibilitySnapshot, a: int, b: int, dist: float) -> bool:
    """True iff the pair may merge, judging by the round-start snapshot.

    All four clauses must hold: different clusters, within dmax, neither
    cluster above kl2, combined size within kl3. dist is in internal units.
    """
    if snapshot.roots[a] == snapshot.roots[b]:
        return False
    if snapshot.threshold is not None and dist > snapshot.threshold:
        return False
    sa = int(snapshot.size_by_point[a])
    sb = int(snapshot.size_by_point[b])
    kl2 = snapshot.constraints.kl2
    if kl2 is not None and (sa > kl2 or sb > kl2):
        return False
    kl3 = snapshot.constraints.kl3
    if kl3 is not None and sa + sb > kl3:
        return False
    return True


def _mask_ineligible(snapshot, D, a_slice, b_slice, extra_mask=None) -> None:
    """Overwrite ineligible entries of the distance tile D with +inf."""
    ra = snapshot.roots[a_slice]
    rb = snapshot.roots[b_slice]
    mask = ra[:, None] == rb[None, :]
    if extra_mask is not None:
        mask |= extra_mask
    if snapshot.threshold is not None:
        mask |= D > snapshot.threshold
    kl2 = snapshot.constraints.kl2
    if kl2 is not None:
        over_a = snapshot.size_by_point[a_slice] > kl2
        over_b = snapshot.size_by_point[b_slice] > kl2
        mask |= over_a[:, None]
        mask |= over_b[None, :]
    kl3 = snapshot.constraints.kl3
    if kl3 is not None:
        sa = snapshot.size_by_point[a_slice]
        sb = snapshot.size_by_point[b_slice]
        mask |= (sa[:, None] + sb[None, :]) > kl3
    np.copyto(D, np.inf, where=mask)


def _chunk_candidates(D, a_base: int, b_base: int, P: int):
    """Indices and values of the <=P smallest finite entries of the tile chunk.

    argpartition splits by distance alone, so everything tied with the P-th
    value is kept and the exact (dist, a, b) cut happens at sort time.
    """
    flat = D.ravel()
    if P == 1:
        # row-major argmin is already the (dist, a, b) minimum: rows ascend
        # by a, columns by b, and argmin returns the first of equal values
        i = int(np.argmin(flat))
        if np.isinf(flat[i]):
            return None
        idx = np.array([i], dtype=np.int64)
    elif flat.shape[0] > P:
        bound = flat[np.argpartition(flat, P - 1)[P - 1]]
        if np.isinf(bound):
            idx = np.flatnonzero(flat < np.inf)
        else:
            idx = np.flatnonzero(flat <= bound)
    else:
        idx = np.flatnonzero(flat < np.inf)
    if idx.shape[0] == 0:
        return None
    dist = flat[idx]
    rows, cols = np.divmod(idx, D.shape[1])
    a = rows.astype(np.int64) + a_base
    b = cols.astype(np.int64) + b_base
    if dist.shape[0] > P:
        order = np.lexsort((b, a, dist))[:P]
        dist, a, b = dist[order], a[order], b[order]
    return dist, a, b


def scan_block_pair(
    dataset, snapshot: EligibilitySnapshot, plan: BlockPlan, task: tuple[int, int], P: int
) -> TopPBuffer:
    """Top-P eligible pairs within one block-pair task.

    Diagonal tasks (i == i) cover the strict upper triangle of their block;
    cross tasks cover the full rectangle. Distance tiles are computed in row
    chunks of bounded size, so peak memory stays O(chunk + P) per task.
    """
    if P < 1:
        raise ValidationError(f"P must be at least 1, got {P}")
    bi, bj = task
    X = dataset.values
    found: list[tuple] = []

    if bi == bj:
        lo, hi = plan.block_range(bi)
        m = hi - lo
        r0 = 0
        while r0 < m - 1:
            width = m - r0 - 1
            rows = max(1, min(m - 1 - r0, _CHUNK_ENTRIES // width))
            r1 = r0 + rows
            D = internal_pairwise(snapshot.metric, X[lo + r0 : lo + r1], X[lo + r0 + 1 : hi])
            # keep b > a: row ii is point lo+r0+ii, col jj is point lo+r0+1+jj
            tri = np.arange(width)[None, :] < np.arange(r1 - r0)[:, None]
            _mask_ineligible(
                snapshot, D, slice(lo + r0, lo + r1), slice(lo + r0 + 1, hi), extra_mask=tri
            )
            got = _chunk_candidates(D, a_base=lo + r0, b_base=lo + r0 + 1, P=P)
            if got is not None:
                found.append(got)
            r0 = r1
    else:
        alo, ahi = plan.block_range(bi)
        blo, bhi = plan.block_range(bj)
        width = bhi - blo
        rows = max(1, _CHUNK_ENTRIES // width)
        for r0 in range(0, ahi - alo, rows):
            r1 = min(r0 + rows, ahi - alo)
            D = internal_pairwise(snapshot.metric, X[alo + r0 : alo + r1], X[blo:bhi])
            _mask_ineligible(snapshot, D, slice(alo + r0, alo + r1), slice(blo, bhi))
            got = _chunk_candidates(D, a_base=alo + r0, b_base=blo, P=P)
            if got is not None:
                found.append(got)

    if not found:
        return TopPBuffer.empty()
    dist = np.concatenate([f[0] for f in found])
    a = np.concatenate([f[1] for f in found])
    b = np.concatenate([f[2] for f in found])
    return TopPBuffer.from_candidates(dist, a, b, P)


def reduce_topp(lhs: TopPBuffer, rhs: TopPBuffer, P: int) -> TopPBuffer:
    """Merge two sorted buffers, keeping the P smallest keys.

    Associative and commutative: keys of distinct pairs never compare equal,
    so the result is the same for any reduction shape.
    """
    if len(lhs) == 0:
        return rhs if len(rhs) <= P else TopPBuffer.from_candidates(rhs.dist, rhs.a, rhs.b, P)
    if len(rhs) == 0:
        return lhs if len(lhs) <= P else TopPBuffer.from_candidates(lhs.dist, lhs.a, lhs.b, P)
    return TopPBuffer.from_candidates(
        np.concatenate([lhs.dist, rhs.dist]),
        np.concatenate([lhs.a, rhs.a]),
        np.concatenate([lhs.b, rhs.b]),
        P,
    )


def global_top_p(dataset, snapshot: EligibilitySnapshot, plan: BlockPlan, P: int) -> TopPBuffer:
    """Serial reference: reduce over the scans of every task in plan order."""
    acc = TopPBuffer.empty()
    for task in plan.tasks:
        acc = reduce_topp(acc, scan_block_pair(dataset, snapshot, plan, task, P), P)
    return acc
