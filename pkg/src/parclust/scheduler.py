"""Two-level bounded-buffer pipeline that executes scan tasks in parallel.

Topology for one round: the coordinator (the calling thread) pushes every
task from the plan into a bounded input queue. Each of M managers runs a
feeder thread that moves tasks from the input queue into the manager's
bounded worker queue, W worker threads that scan block pairs, and a reducer
thread that folds worker buffers into the manager's running top-P as they
arrive. Each manager emits one reduced buffer on the bounded output queue;
the coordinator folds those into the final result.

Every queue is a blocking bounded hand-off, so producers wait when a pool is
full and consumers wait when it is empty, and the number of candidate
buffers alive at once is capped by the configured pool sizes. The data flow
is a straight line (coordinator -> feeders -> workers -> reducers ->
coordinator) with no back edges, so no circular wait can form.

The reduced result is a pure function of (dataset, snapshot, plan, P):
reduce_topp is associative and commutative over the total pair order, which
makes manager count, worker count, buffer sizes, and completion timing
invisible in the output.
"""

from __future__ import annotations

import os
import queue
import threading
import time
from dataclasses import dataclass, field, replace

from .model import ValidationError
from .pairgen import TopPBuffer, reduce_topp, scan_block_pair

__all__ = [
    "PipelineConfig",
    "UtilizationStats",
    "WorkerError",
    "run_round",
    "report_utilization",
]

_THREAD_CAP_ENV = "PARCLUST_THREADS"


class WorkerError(RuntimeError):
    """A worker failed while scanning; the message names the block pair."""


@dataclass(frozen=True)
class PipelineConfig:
    """Thread and buffer-pool sizing for the round pipeline.

    ``workers_per_manager=None`` means derive from available parallelism at
    resolve time. ``input_buffers`` must cover one slot per manager so no
    manager starves at steady state.
    """

    managers: int = 4
    workers_per_manager: int | None = None
    input_buffers: int = 12
    output_buffers: int = 12
    buffers_per_worker: int = 3

    def __post_init__(self):
        for name in ("managers", "input_buffers", "output_buffers", "buffers_per_worker"):
            value = getattr(self, name)
            if value < 1:
                raise ValidationError(f"{name} must be at least 1, got {value}")
        if self.workers_per_manager is not None and self.workers_per_manager < 1:
            raise ValidationError(
                f"workers_per_manager must be at least 1, got {self.workers_per_manager}"
            )
        if self.input_buffers < self.managers:
            raise ValidationError(
                f"input_buffers ({self.input_buffers}) must be >= managers ({self.managers})"
            )

    def resolve(self) -> "PipelineConfig":
        """Fill in derived worker counts and apply the thread-cap env var.

        PARCLUST_THREADS caps total compute parallelism (managers times
        workers per manager); manager count is reduced first, then workers.
        """
        cap = None
        raw = os.environ.get(_THREAD_CAP_ENV)
        if raw is not None and raw.strip():
            try:
                cap = int(raw)
            except ValueError as exc:
                raise ValidationError(f"{_THREAD_CAP_ENV} must be an integer, got {raw!r}") from exc
            if cap < 1:
                raise ValidationError(f"{_THREAD_CAP_ENV} must be at least 1, got {cap}")
        managers = self.managers
        if cap is not None:
            managers = min(managers, cap)
        workers = self.workers_per_manager
        if workers is None:
            avail = os.cpu_count() or 1
            workers = max(1, avail // managers)
        if cap is not None:
            workers = max(1, min(workers, cap // managers))
        return replace(
            self,
            managers=managers,
            workers_per_manager=workers,
            input_buffers=max(self.input_buffers, managers),
        )


@dataclass
class UtilizationStats:
    """Timing ledger for one round or an aggregate over rounds.

    Keys are stable thread names ("m0.w1" for workers, "m0" for managers).
    tasks_executed is the multiset of completed scan tasks, in no particular
    order.
    """

    worker_busy: dict[str, float] = field(default_factory=dict)
    worker_idle: dict[str, float] = field(default_factory=dict)
    manager_reduce: dict[str, float] = field(default_factory=dict)
    tasks_executed: list[tuple[int, int]] = field(default_factory=list)
    wall_time: float = 0.0

    def absorb(self, other: "UtilizationStats") -> None:
        """Accumulate another round's stats into this aggregate."""
        for key, value in other.worker_busy.items():
            self.worker_busy[key] = self.worker_busy.get(key, 0.0) + value
        for key, value in other.worker_idle.items():
            self.worker_idle[key] = self.worker_idle.get(key, 0.0) + value
        for key, value in other.manager_reduce.items():
            self.manager_reduce[key] = self.manager_reduce.get(key, 0.0) + value
        self.tasks_executed.extend(other.tasks_executed)
        self.wall_time += other.wall_time

    def as_dict(self) -> dict:
        return {
            "worker_busy_s": {k: self.worker_busy[k] for k in sorted(self.worker_busy)},
            "worker_idle_s": {k: self.worker_idle[k] for k in sorted(self.worker_idle)},
            "manager_reduce_s": {k: self.manager_reduce[k] for k in sorted(self.manager_reduce)},
            "tasks_executed": len(self.tasks_executed),
            "wall_time_s": self.wall_time,
        }


def report_utilization(stats: UtilizationStats) -> str:
    """Human-readable per-worker utilization percentages plus an aggregate."""

    def pct(busy: float, idle: float) -> float:
        total = busy + idle
        return 100.0 * busy / total if total > 0 else 0.0

    lines = []
    for name in sorted(stats.worker_busy):
        busy = stats.worker_busy[name]
        idle = stats.worker_idle.get(name, 0.0)
        lines.append(
            f"worker {name}: busy {busy:.3f}s idle {idle:.3f}s util {pct(busy, idle):.1f}%"
        )
    for name in sorted(stats.manager_reduce):
        lines.append(f"manager {name}: reduce {stats.manager_reduce[name]:.3f}s")
    total_busy = sum(stats.worker_busy.values())
    total_idle = sum(stats.worker_idle.values())
    lines.append(
        f"aggregate: busy {total_busy:.3f}s idle {total_idle:.3f}s "
        f"util {pct(total_busy, total_idle):.1f}% over {len(stats.tasks_executed)} tasks, "
        f"wall {stats.wall_time:.3f}s"
    )
    return "\n".join(lines)


_DONE = object()  # sentinel closing a queue stream


def _run_round_serial(dataset, snapshot, plan, P, started):
    """Degenerate single-worker pipeline run inline, skipping thread spawn.

    Produces the same buffer (reduce order is irrelevant by associativity)
    and the same stats shape as a one-manager, one-worker pipeline.
    """
    stats = UtilizationStats()
    acc = TopPBuffer.empty()
    busy = 0.0
    reduce_time = 0.0
    executed = []
    for task in plan.tasks:
        t0 = time.perf_counter()
        try:
            buf = scan_block_pair(dataset, snapshot, plan, task, P)
        except BaseException as exc:  # noqa: BLE001 - uniform failure contract
            raise WorkerError(f"scan task for block pair {task} failed: {exc}") from exc
        t1 = time.perf_counter()
        busy += t1 - t0
        executed.append(task)
        acc = reduce_topp(acc, buf, P)
        reduce_time += time.perf_counter() - t1
    stats.worker_busy["m0.w0"] = busy
    stats.worker_idle["m0.w0"] = 0.0
    stats.manager_reduce["m0"] = reduce_time
    stats.tasks_executed = executed
    stats.wall_time = time.perf_counter() - started
    return acc, stats


def _worker(name, dataset, snapshot, plan, P, task_q, result_q, abort):
    """Pull tasks, scan, hand buffers to the reducer; report timings on exit."""
    busy = 0.0
    idle = 0.0
    executed = []
    error = None
    while True:
        t0 = time.perf_counter()
        task = task_q.get()
        idle += time.perf_counter() - t0
        if task is _DONE:
            break
        if abort.is_set() or error is not None:
            continue  # keep draining so feeders never block forever
        t0 = time.perf_counter()
        try:
            buf = scan_block_pair(dataset, snapshot, plan, task, P)
        except BaseException as exc:  # noqa: BLE001 - reported, then re-raised by coordinator
            error = (task, exc)
            abort.set()
            continue
        busy += time.perf_counter() - t0
        executed.append(task)
        result_q.put(("buffer", buf))
    result_q.put(("worker-done", name, busy, idle, executed, error))


def _feeder(input_q, task_q, workers: int):
    """Move tasks from the shared input pool into this manager's worker pool."""
    while True:
        task = input_q.get()
        if task is _DONE:
            break
        task_q.put(task)
    # propagate shutdown: one close marker per worker
    for _ in range(workers):
        task_q.put(_DONE)


def _reducer(name, P, result_q, output_q, workers: int):
    """Fold worker buffers into a running top-P as they arrive (no barrier)."""
    acc = TopPBuffer.empty()
    reduce_time = 0.0
    stats = {"busy": {}, "idle": {}, "executed": []}
    error = None
    remaining = workers
    while remaining > 0:
        item = result_q.get()
        if item[0] == "buffer":
            t0 = time.perf_counter()
            acc = reduce_topp(acc, item[1], P)
            reduce_time += time.perf_counter() - t0
        else:
            _, wname, busy, idle, executed, werr = item
            stats["busy"][wname] = busy
            stats["idle"][wname] = idle
            stats["executed"].extend(executed)
            if werr is not None and error is None:
                error = werr
            remaining -= 1
    output_q.put((name, acc, reduce_time, stats, error))


def run_round(dataset, snapshot, plan, P: int, config: PipelineConfig):
    """Execute every task in the plan once and return (top-P buffer, stats).

    The buffer is identical to the serial global_top_p result for any
    pipeline sizing. A worker failure aborts the round with WorkerError
    naming the failed task's block pair.
    """
    cfg = config.resolve()
    started = time.perf_counter()
    if cfg.managers * cfg.workers_per_manager == 1:
        return _run_round_serial(dataset, snapshot, plan, P, started)
    input_q: queue.Queue = queue.Queue(maxsize=cfg.input_buffers)
    output_q: queue.Queue = queue.Queue(maxsize=cfg.output_buffers)
    abort = threading.Event()
    threads = []
    for mi in range(cfg.managers):
        W = cfg.workers_per_manager
        task_q: queue.Queue = queue.Queue(maxsize=W * cfg.buffers_per_worker)
        result_q: queue.Queue = queue.Queue(maxsize=W * cfg.buffers_per_worker)
        threads.append(
            threading.Thread(
                target=_feeder, args=(input_q, task_q, W), name=f"m{mi}.feeder", daemon=True
            )
        )
        threads.append(
            threading.Thread(
                target=_reducer,
                args=(f"m{mi}", P, result_q, output_q, W),
                name=f"m{mi}.reducer",
                daemon=True,
            )
        )
        for wi in range(W):
            threads.append(
                threading.Thread(
                    target=_worker,
                    args=(f"m{mi}.w{wi}", dataset, snapshot, plan, P, task_q, result_q, abort),
                    name=f"m{mi}.w{wi}",
                    daemon=True,
                )
            )
    for t in threads:
        t.start()

    for task in plan.tasks:
        input_q.put(task)
    for _ in range(cfg.managers):
        input_q.put(_DONE)

    stats = UtilizationStats()
    acc = TopPBuffer.empty()
    failure = None
    for _ in range(cfg.managers):
        mname, buf, reduce_time, mstats, error = output_q.get()
        acc = reduce_topp(acc, buf, P)
        stats.manager_reduce[mname] = reduce_time
        stats.worker_busy.update(mstats["busy"])
        stats.worker_idle.update(mstats["idle"])
        stats.tasks_executed.extend(mstats["executed"])
        if error is not None and failure is None:
            failure = error
    for t in threads:
        t.join()
    stats.wall_time = time.perf_counter() - started
    if failure is not None:
        task, exc = failure
        raise WorkerError(f"scan task for block pair {task} failed: {exc}") from exc
    return acc, stats
