"""Dataset ingestion, synthetic data generation, and result writing.

All single-threaded plumbing around the clustering core. Text formats
throughout: delimited feature tables in, CSV and JSON out. Feature values
are 64-bit floats end to end; files are written with round-trip-exact
formatting so generate -> save -> load preserves every bit.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .model import Dataset, ValidationError

__all__ = [
    "load_dataset",
    "write_dataset",
    "generate_synthetic",
    "write_outputs",
    "replay_merges",
]

# %.17g prints every float64 with enough digits to parse back bit-exactly.
_FLOAT_FMT = "%.17g"


def _parse_feature(token: str, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ValidationError(f"line {line_no}: non-numeric value {token!r}") from None
    if not np.isfinite(value):
        raise ValidationError(f"line {line_no}: non-finite feature value {token!r}")
    return value


def _looks_like_header(fields: list[str]) -> bool:
    for tok in fields:
        try:
            float(tok)
        except ValueError:
            return True
    return False


def load_dataset(
    path: str, *, id_column: str | int | None = None, delimiter: str = ","
) -> Dataset:
    """Read a delimited text file into a validated Dataset.

    The first line is treated as a header when any of its fields fails to
    parse as a number. ``id_column`` selects an identifier column by header
    name or by 0-based position; remaining columns are features. Diagnostics
    cite 1-based physical line numbers.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read().splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror or exc}") from exc
    lines = [(i + 1, s) for i, s in enumerate(raw) if s.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty input")

    first_fields = [t.strip() for t in lines[0][1].split(delimiter)]
    ncols = len(first_fields)
    header: list[str] | None = None
    if _looks_like_header(first_fields):
        header = first_fields
        lines = lines[1:]
        if not lines:
            raise ValidationError(f"{path}: no data rows after header")

    id_idx: int | None = None
    if id_column is not None:
        if isinstance(id_column, str) and header is not None and id_column in header:
            id_idx = header.index(id_column)
        else:
            try:
                id_idx = int(id_column)
            except (TypeError, ValueError):
                raise ValidationError(
                    f"id column {id_column!r} not found in header and not an index"
                ) from None
            if not 0 <= id_idx < ncols:
                raise ValidationError(
                    f"id column index {id_idx} out of range for {ncols} columns"
                )

    ids: list[str] = []
    data = np.empty((len(lines), ncols - (1 if id_idx is not None else 0)), dtype=np.float64)
    for r, (line_no, line) in enumerate(lines):
        fields = [t.strip() for t in line.split(delimiter)]
        if len(fields) != ncols:
            raise ValidationError(
                f"line {line_no}: expected {ncols} columns, got {len(fields)}"
            )
        c = 0
        for j, tok in enumerate(fields):
            if j == id_idx:
                ids.append(tok)
                continue
            data[r, c] = _parse_feature(tok, line_no)
            c += 1

    if id_idx is not None:
        id_arr = np.asarray(ids)
        if np.unique(id_arr).size != id_arr.size:
            seen: set = set()
            dup = next(v for v in ids if v in seen or seen.add(v))
            raise ValidationError(f"{path}: duplicate id {dup!r}")
        return Dataset(values=data, ids=id_arr)
    return Dataset(values=data)


def write_dataset(dataset: Dataset, path: str, *, delimiter: str = ",") -> None:
    """Write the feature matrix as delimited text, round-trip exact."""
    np.savetxt(path, dataset.values, fmt=_FLOAT_FMT, delimiter=delimiter)


def generate_synthetic(
    n: int, d: int, clusters: int, spread: float, seed: int
) -> tuple[Dataset, np.ndarray]:
    """Gaussian blobs around uniformly drawn centers, reproducible from seed.

    Returns the dataset and the ground-truth label per point. Points are
    spread near-evenly across blobs (first n mod clusters blobs get one
    extra point) and stored grouped by blob.
    """
    if n < 1 or d < 1 or clusters < 1:
        raise ValidationError(
            f"n, d, clusters must all be at least 1, got n={n} d={d} clusters={clusters}"
        )
    if not spread >= 0.0:
        raise ValidationError(f"spread must be nonnegative, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-100.0, 100.0, size=(clusters, d))
    counts = np.full(clusters, n // clusters, dtype=np.int64)
    counts[: n % clusters] += 1
    labels = np.repeat(np.arange(clusters, dtype=np.int64), counts)
    values = centers[labels] + rng.normal(0.0, spread, size=(n, d))
    return Dataset(values=values), labels


def replay_merges(n: int, pairs) -> np.ndarray:
    """Rebuild assignments from (root_a, root_b) merge rows on a fresh forest.

    Implemented with a plain label-propagation array rather than the forest
    type so output files can be checked without trusting the union-find.
    """
    labels = np.arange(n, dtype=np.int64)
    for root_a, root_b in pairs:
        a, b = int(root_a), int(root_b)
        keep, gone = (a, b) if a < b else (b, a)
        labels[labels == gone] = keep
    return labels


def write_outputs(result, out_dir: str, *, dataset: Dataset, config_echo: dict) -> dict:
    """Write assignments.csv, merges.csv, and stats.json into out_dir.

    assignments.csv maps each point id to the id of its cluster root, one
    row per point in input order. merges.csv logs unions as point indices
    with distances in true metric units. Returns the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "assignments": os.path.join(out_dir, "assignments.csv"),
        "merges": os.path.join(out_dir, "merges.csv"),
        "stats": os.path.join(out_dir, "stats.json"),
    }

    ids = dataset.ids
    with open(paths["assignments"], "w", encoding="utf-8") as fh:
        fh.write("id,cluster\n")
        for i, root in enumerate(result.assignments):
            fh.write(f"{ids[i]},{ids[root]}\n")

    with open(paths["merges"], "w", encoding="utf-8") as fh:
        fh.write("step,round,root_a,root_b,distance,new_size\n")
        for e in result.merges:
            fh.write(f"{e.step},{e.round},{e.root_a},{e.root_b},{e.dist!r},{e.new_size}\n")

    skip_totals: dict[str, int] = {}
    for counters in getattr(result, "round_counters", []):
        for key in ("same_root", "kl2", "kl3", "unprocessed"):
            skip_totals[key] = skip_totals.get(key, 0) + counters.get(key, 0)
    stats_obj = getattr(result, "stats", None)
    payload = {
        "config": config_echo,
        "n": dataset.n,
        "d": dataset.d,
        "rounds": getattr(result, "rounds", None),
        "merges": len(result.merges),
        "final_clusters": int(np.unique(result.assignments).shape[0]),
        "stop_reason": getattr(result, "stop_reason", None),
        "skips": skip_totals,
        "round_counters": list(getattr(result, "round_counters", [])),
        "wall_time_s": stats_obj.wall_time if stats_obj is not None else None,
        "utilization": stats_obj.as_dict() if stats_obj is not None else None,
    }
    with open(paths["stats"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
