"""Constrained single-linkage clustering with batched top-P pair selection.

Clusters are built by repeatedly merging the globally closest pairs of
points whose clusters may still combine, P pairs per round, with the scan
work spread over a two-level manager/worker pipeline. Results are exactly
deterministic: independent of block count, worker count, and buffer sizes.
"""

from .dataio import generate_synthetic, load_dataset, write_dataset, write_outputs
from .engine import RunConfig, RunResult, run
from .metrics import MetricKind
from .model import ClusterForest, ConstraintSet, Dataset, MergeEvent, ValidationError
from .oracle import OracleResult, oracle_batched_run, oracle_single_linkage, oracle_top_p
from .pairgen import BlockPlan, TopPBuffer, global_top_p, make_snapshot, plan_blocks
from .scheduler import PipelineConfig, UtilizationStats, report_utilization, run_round

__version__ = "0.1.0"

__all__ = [
    "BlockPlan",
    "ClusterForest",
    "ConstraintSet",
    "Dataset",
    "MergeEvent",
    "MetricKind",
    "OracleResult",
    "PipelineConfig",
    "RunConfig",
    "RunResult",
    "TopPBuffer",
    "UtilizationStats",
    "ValidationError",
    "generate_synthetic",
    "global_top_p",
    "load_dataset",
    "make_snapshot",
    "oracle_batched_run",
    "oracle_single_linkage",
    "oracle_top_p",
    "plan_blocks",
    "report_utilization",
    "run",
    "run_round",
    "write_dataset",
    "write_outputs",
    "__version__",
]
