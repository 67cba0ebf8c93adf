"""Round loop: snapshot the forest, select the top-P eligible pairs through
the scheduler, merge them in constraint-aware order, repeat until done.

The engine owns the forest and the merge log on a single thread; all
parallelism happens inside the scheduler between snapshots. Results are a
pure function of (dataset, metric, constraints, P, kl4 ordering): pipeline
sizing and block count are invisible in the output.

Stop conditions, checked before round 1 and re-checked after every union:
a single cluster remains; or the cluster count has come down to kl1; or a
round selects no eligible pairs. With kl1 unset or 1 the count floor never
fires (a lone cluster reports single-cluster instead).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricKind, reported
from .model import ClusterForest, ConstraintSet, Dataset, MergeEvent, ValidationError
from .pairgen import (
    BlockPlan,
    EligibilitySnapshot,
    TopPBuffer,
    make_snapshot,
    plan_blocks,
    suggested_blocks,
)
from .scheduler import PipelineConfig, UtilizationStats, run_round

__all__ = ["RunConfig", "RunResult", "order_batch", "process_batch", "run"]

DEFAULT_PAIRS_PER_BATCH = 256


@dataclass(frozen=True)
class RunConfig:
    """Everything a clustering run needs besides the dataset itself."""

    constraints: ConstraintSet = ConstraintSet()
    pairs_per_batch: int = DEFAULT_PAIRS_PER_BATCH
    metric: MetricKind = MetricKind.EUCLIDEAN
    blocks: int | None = None  # None: one block per ~4096 points
    pipeline: PipelineConfig = PipelineConfig()

    def __post_init__(self):
        if self.pairs_per_batch < 1:
            raise ValidationError(
                f"pairs_per_batch must be at least 1, got {self.pairs_per_batch}"
            )
        if self.blocks is not None and self.blocks < 1:
            raise ValidationError(f"blocks must be at least 1, got {self.blocks}")


@dataclass
class RunResult:
    """Merge log, final labels, and run accounting."""

    merges: list[MergeEvent]
    assignments: np.ndarray  # point index -> surviving root
    rounds: int
    stop_reason: str  # kl1-reached | no-eligible-pairs | single-cluster
    stats: UtilizationStats
    round_counters: list[dict] = field(default_factory=list)

    @property
    def cluster_count(self) -> int:
        return int(np.unique(self.assignments).shape[0])


def order_batch(
    buffer: TopPBuffer, snapshot: EligibilitySnapshot, kl4: int | None
) -> list[tuple[float, int, int]]:
    """Order a sorted buffer for processing, honoring the kl4 priority rule.

    With kl4 unset the buffer order stands. With kl4 set, pairs touching a
    cluster smaller than kl4 (by round-start sizes) move to the front; the
    partition is stable, so both sublists stay ascending by (dist, a, b).
    """
    dist, a, b = buffer.dist, buffer.a, buffer.b
    if kl4 is not None and len(buffer) > 0:
        smaller = np.minimum(snapshot.size_by_point[a], snapshot.size_by_point[b])
        order = np.argsort(smaller >= kl4, kind="stable")
        dist, a, b = dist[order], a[order], b[order]
    return [(float(d), int(x), int(y)) for d, x, y in zip(dist, a, b)]


def process_batch(
    forest: ClusterForest,
    pairs: list[tuple[float, int, int]],
    constraints: ConstraintSet,
    round_index: int,
    *,
    metric: MetricKind,
    start_step: int = 0,
) -> tuple[list[MergeEvent], bool, dict]:
    """Merge the batch in order with live re-checks; stop at the kl1 floor.

    Each pair's roots and sizes are re-derived at its turn: same-root pairs
    are skipped (already absorbed into one cluster this round), kl2/kl3 are
    re-checked against current sizes because earlier unions may have grown a
    cluster past its cap mid-round. Distances are fixed, so the dmax filter
    applied at selection time needs no re-check. Returns the merge events,
    a flag set when the count floor was hit mid-batch, and skip counters.
    """
    kl1, kl2, kl3 = constraints.kl1, constraints.kl2, constraints.kl3
    events: list[MergeEvent] = []
    skips = {"same_root": 0, "kl2": 0, "kl3": 0, "unprocessed": 0}
    stop = False
    for pos, (dist, a, b) in enumerate(pairs):
        ra = forest.find(a)
        rb = forest.find(b)
        if ra == rb:
            skips["same_root"] += 1
            continue
        sa = forest.size_of_root(ra)
        sb = forest.size_of_root(rb)
        if kl2 is not None and (sa > kl2 or sb > kl2):
            skips["kl2"] += 1
            continue
        if kl3 is not None and sa + sb > kl3:
            skips["kl3"] += 1
            continue
        keep, new_size = forest.union(ra, rb)
        events.append(
            MergeEvent(
                step=start_step + len(events),
                round=round_index,
                root_a=keep,
                root_b=rb if keep == ra else ra,
                dist=float(reported(metric, dist)),
                new_size=new_size,
                point_a=a,
                point_b=b,
            )
        )
        if forest.count == 1 or (kl1 is not None and forest.count <= kl1):
            stop = True
            skips["unprocessed"] = len(pairs) - pos - 1
            break
    return events, stop, skips


def _stop_reason(count: int, kl1: int | None) -> str | None:
    if count == 1:
        return "single-cluster"
    if kl1 is not None and count <= kl1:
        return "kl1-reached"
    return None


def run(dataset: Dataset, config: RunConfig) -> RunResult:
    """Cluster the dataset to completion and return the full result."""
    constraints = config.constraints
    metric = config.metric
    P = config.pairs_per_batch
    blocks = config.blocks if config.blocks is not None else suggested_blocks(dataset.n)
    plan: BlockPlan = plan_blocks(dataset.n, blocks)
    forest = ClusterForest(dataset.n)
    merges: list[MergeEvent] = []
    round_counters: list[dict] = []
    agg = UtilizationStats()
    rounds = 0

    while True:
        reason = _stop_reason(forest.count, constraints.kl1)
        if reason is not None:
            break
        snapshot = make_snapshot(forest, constraints, metric)
        buffer, stats = run_round(dataset, snapshot, plan, P, config.pipeline)
        agg.absorb(stats)
        if len(buffer) == 0:
            reason = "no-eligible-pairs"
            break
        rounds += 1
        ordered = order_batch(buffer, snapshot, constraints.kl4)
        events, _, skips = process_batch(
            forest,
            ordered,
            constraints,
            rounds,
            metric=metric,
            start_step=len(merges),
        )
        merges.extend(events)
        round_counters.append(
            {"round": rounds, "selected": len(buffer), "merged": len(events), **skips}
        )

    return RunResult(
        merges=merges,
        assignments=forest.roots_snapshot(),
        rounds=rounds,
        stop_reason=reason,
        stats=agg,
        round_counters=round_counters,
    )
