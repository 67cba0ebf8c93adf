"""End-to-end acceptance checks for the clustering engine.

Each test_criterion_NN test covers one acceptance gate; the terminal summary
hook in conftest prints a single PASS/FAIL/SKIP line per criterion. Timing
budgets that are part of a gate are asserted inside that gate's test.
"""

import json
import os
import random
import statistics
import subprocess
import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import cdist

from parclust.dataio import generate_synthetic, write_outputs
from parclust.engine import RunConfig, run
from parclust.metrics import MetricKind, distance, effective_threshold, internal_distance
from parclust.model import ConstraintSet, Dataset
from parclust.oracle import oracle_batched_run, oracle_single_linkage
from parclust.scheduler import PipelineConfig

from conftest import merge_multiset, merge_signature, same_partition

SERIAL = PipelineConfig(managers=1, workers_per_manager=1)


# --- criterion 1: engine output equals the brute-force reference exactly ---

def _random_instance(py_rng, n_max, p_choices):
    n = py_rng.randint(2, n_max)
    d = py_rng.randint(1, 25)
    metric = py_rng.choice(list(MetricKind))
    rng = np.random.default_rng(py_rng.randrange(2**32))
    x = rng.normal(0.0, py_rng.choice([0.1, 1.0, 10.0]), size=(n, d))
    if py_rng.random() < 0.3:
        x = np.round(x, 1)  # quantize to force genuine distance ties
    kwargs = {}
    if py_rng.random() < 0.4:
        kwargs["kl2"] = py_rng.randint(2, n)
    if py_rng.random() < 0.3:
        lo = (kwargs.get("kl2") or 1) + 1
        kwargs["kl3"] = py_rng.randint(lo, lo + n)
    if py_rng.random() < 0.4:
        k = min(200, n * (n - 1) // 2)
        ai = rng.integers(0, n, size=4 * k)
        bi = rng.integers(0, n, size=4 * k)
        keep = ai != bi
        if np.any(keep):
            sample = [
                distance(metric, x[a], x[b])
                for a, b in zip(ai[keep][:k], bi[keep][:k])
            ]
            kwargs["dmax"] = float(np.quantile(sample, py_rng.uniform(0.0, 1.0)))
    if py_rng.random() < 0.5:
        kwargs["kl1"] = 1 if py_rng.random() < 0.3 else py_rng.randint(1, n)
    use_kl4 = py_rng.random() < 0.25
    if use_kl4:
        kwargs["kl4"] = py_rng.randint(1, max(2, n // 2))
    P = py_rng.choice(p_choices)
    return Dataset(values=x), ConstraintSet(**kwargs), P, metric, use_kl4


def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    py_rng = random.Random(20260819)
    checked = 0
    # stratified so small-P instances (many rounds each) stay affordable
    strata = [(120, 600, (64, 1024)), (40, 400, (4,)), (40, 250, (1,))]
    for count, n_max, p_choices in strata:
        for _ in range(count):
            ds, con, P, metric, use_kl4 = _random_instance(py_rng, n_max, p_choices)
            got = run(
                ds,
                RunConfig(constraints=con, pairs_per_batch=P, metric=metric, pipeline=SERIAL),
            )
            if use_kl4:
                want = oracle_batched_run(ds, con, P=P, metric=metric)
            else:
                want = oracle_single_linkage(ds, con, metric)
            context = f"instance {checked}: n={ds.n} d={ds.d} P={P} {metric.value} {con}"
            assert np.array_equal(got.assignments, want.assignments), context
            assert merge_multiset(got.merges) == merge_multiset(want.merges), context
            checked += 1
    assert checked >= 200
    assert time.perf_counter() - t0 < 120.0


# --- criterion 2: merge distances and all dendrogram cuts match an MST ---

def test_criterion_02_mst_equivalence():
    t0 = time.perf_counter()
    for n in (100, 500, 1000):
        rng = np.random.default_rng(1000 + n)
        x = rng.normal(size=(n, 6))
        res = run(Dataset(values=x), RunConfig(pipeline=SERIAL))
        assert res.stop_reason == "single-cluster"
        assert len(res.merges) == n - 1

        tree = minimum_spanning_tree(csr_matrix(cdist(x, x)))
        np.testing.assert_allclose(
            np.sort([e.dist for e in res.merges]), np.sort(tree.data), rtol=1e-9, atol=0.0
        )

        coo = tree.tocoo()
        edges = sorted(zip(coo.data.tolist(), coo.row.tolist(), coo.col.tolist()))
        mst_labels = np.arange(n)
        eng_labels = np.arange(n)
        for step, (_, i, j) in enumerate(edges):
            la, lb = mst_labels[i], mst_labels[j]
            mst_labels[mst_labels == max(la, lb)] = min(la, lb)
            e = res.merges[step]
            eng_labels[eng_labels == e.root_b] = e.root_a
            k = n - step - 1
            assert same_partition(mst_labels, eng_labels), f"n={n} cut k={k}"
    assert time.perf_counter() - t0 < 60.0


# --- criterion 3: pipeline shape never changes the output files ---

def test_criterion_03_determinism_across_parallelism(tmp_path):
    t0 = time.perf_counter()
    ds, _ = generate_synthetic(20000, 8, 40, 1.0, seed=333)
    configs = [
        PipelineConfig(),  # stock settings: 4 managers, 12 input buffers, 3 per worker
        PipelineConfig(managers=1, workers_per_manager=1),
        PipelineConfig(managers=2, workers_per_manager=3, input_buffers=4,
                       output_buffers=2, buffers_per_worker=1),
        PipelineConfig(managers=8, workers_per_manager=1, input_buffers=16,
                       output_buffers=3, buffers_per_worker=2),
    ]
    reference = None
    for i, pipe in enumerate(configs):
        res = run(ds, RunConfig(pairs_per_batch=4096, pipeline=pipe))
        out = tmp_path / f"cfg{i}"
        write_outputs(res, str(out), dataset=ds, config_echo={})
        blob = (
            (out / "assignments.csv").read_bytes(),
            (out / "merges.csv").read_bytes(),
        )
        if reference is None:
            reference = blob
        else:
            assert blob[0] == reference[0], f"assignments.csv differs for config {i}"
            assert blob[1] == reference[1], f"merges.csv differs for config {i}"
    assert time.perf_counter() - t0 < 180.0


# --- criterion 4: batch size is invisible in the final clustering ---

def test_criterion_04_batch_invariance():
    t0 = time.perf_counter()
    ds, _ = generate_synthetic(2000, 8, 10, 2.0, seed=444)
    results = {
        P: run(ds, RunConfig(pairs_per_batch=P, pipeline=SERIAL)) for P in (1, 16, 4096)
    }
    base = results[1]
    for P in (16, 4096):
        assert np.array_equal(base.assignments, results[P].assignments), f"P={P}"
        assert sorted(merge_signature(base.merges)) == sorted(
            merge_signature(results[P].merges)
        ), f"P={P}"
    assert time.perf_counter() - t0 < 60.0


# --- criterion 5: 200k-point run finishes within memory and time bounds ---

_CAPACITY_SCRIPT = """
import json, resource, time
from parclust.dataio import generate_synthetic
from parclust.engine import RunConfig, run
from parclust.model import ConstraintSet

t0 = time.perf_counter()
ds, _ = generate_synthetic(200000, 8, 200, 1.0, seed=99)
res = run(ds, RunConfig(constraints=ConstraintSet(kl1=199000), pairs_per_batch=1024))
wall = time.perf_counter() - t0
rss_mib = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
print(json.dumps({
    "wall_s": wall,
    "rss_mib": rss_mib,
    "merges": len(res.merges),
    "clusters": res.cluster_count,
    "stop": res.stop_reason,
}))
"""


def test_criterion_05_capacity_and_memory():
    # fresh interpreter so peak RSS reflects this run alone
    proc = subprocess.run(
        [sys.executable, "-c", _CAPACITY_SCRIPT],
        capture_output=True,
        text=True,
        timeout=1800,
    )
    assert proc.returncode == 0, proc.stderr[-2000:]
    data = json.loads(proc.stdout.strip().splitlines()[-1])
    assert data["stop"] == "kl1-reached"
    assert data["clusters"] == 199000
    assert data["merges"] == 1000
    assert data["rss_mib"] < 1024.0, f"peak RSS {data['rss_mib']:.0f} MiB"
    assert data["wall_s"] < 1800.0, f"wall {data['wall_s']:.0f} s"


# --- criterion 6: four workers beat one by at least 1.8x on 50k points ---

@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="needs >= 4 hardware threads")
def test_criterion_06_relative_scaling():
    ds, _ = generate_synthetic(50000, 8, 100, 1.0, seed=666)
    config = dict(constraints=ConstraintSet(kl1=49000), pairs_per_batch=1024)

    def median_wall(workers):
        times = []
        result = None
        for _ in range(3):
            start = time.perf_counter()
            result = run(
                ds,
                RunConfig(
                    **config,
                    pipeline=PipelineConfig(managers=1, workers_per_manager=workers),
                ),
            )
            times.append(time.perf_counter() - start)
        return statistics.median(times), result

    t1, r1 = median_wall(1)
    t4, r4 = median_wall(4)
    assert merge_signature(r1.merges) == merge_signature(r4.merges)
    speedup = t1 / t4
    assert speedup >= 1.8, f"speedup {speedup:.2f}x"


# --- criterion 7: every constraint is honored in the merge log ---

def _replay_round_starts(n, merges):
    """Labels at the start of each round, keyed by round number."""
    labels = np.arange(n)
    starts = {}
    for e in merges:
        if e.round not in starts:
            starts[e.round] = labels.copy()
        la, lb = labels[e.point_a], labels[e.point_b]
        labels[labels == max(la, lb)] = min(la, lb)
    return starts


def _run_with(values, constraints, P=16):
    return run(
        Dataset(values=values),
        RunConfig(constraints=constraints, pairs_per_batch=P, pipeline=SERIAL),
    )


@st.composite
def _points(draw, n_min=6, n_max=80):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(n_min, n_max))
    d = draw(st.integers(1, 5))
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 2.0, size=(n, d))
    if draw(st.booleans()):
        x = np.round(x, 1)
    return x


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_criterion_07_kl2_size_cap(data):
    x = data.draw(_points())
    kl2 = data.draw(st.integers(2, 10))
    res = _run_with(x, ConstraintSet(kl2=kl2))
    labels = np.arange(x.shape[0])
    for e in res.merges:
        la, lb = labels[e.point_a], labels[e.point_b]
        sa = int(np.sum(labels == la))
        sb = int(np.sum(labels == lb))
        assert sa <= kl2 and sb <= kl2, "merged a cluster already above kl2"
        assert e.new_size == sa + sb
        labels[labels == max(la, lb)] = min(la, lb)


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_criterion_07_kl3_combined_cap(data):
    x = data.draw(_points())
    kl3 = data.draw(st.integers(2, 12))
    res = _run_with(x, ConstraintSet(kl3=kl3))
    labels = np.arange(x.shape[0])
    for e in res.merges:
        la, lb = labels[e.point_a], labels[e.point_b]
        combined = int(np.sum(labels == la) + np.sum(labels == lb))
        assert combined <= kl3, "union exceeded the combined size cap"
        assert e.new_size == combined
        labels[labels == max(la, lb)] = min(la, lb)


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_criterion_07_dmax_ceiling(data):
    x = data.draw(_points())
    metric = data.draw(st.sampled_from(list(MetricKind)))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    a = rng.integers(0, x.shape[0], size=50)
    b = rng.integers(0, x.shape[0], size=50)
    sample = [distance(metric, x[i], x[j]) for i, j in zip(a, b) if i != j]
    if not sample:
        return
    dmax = float(np.quantile(sample, 0.5))
    res = run(
        Dataset(values=x),
        RunConfig(constraints=ConstraintSet(dmax=dmax), metric=metric, pipeline=SERIAL),
    )
    cap = effective_threshold(metric, dmax)
    for e in res.merges:
        assert e.dist <= dmax, "reported merge distance above dmax"
        assert internal_distance(metric, x[e.point_a], x[e.point_b]) <= cap


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_criterion_07_kl1_floor_and_stop(data):
    x = data.draw(_points())
    n = x.shape[0]
    kl1 = data.draw(st.integers(1, n + 2))
    res = _run_with(x, ConstraintSet(kl1=kl1))
    count = n
    for _ in res.merges:
        count -= 1
        assert count >= kl1, "merge log dropped the cluster count below kl1"
    final = count
    if res.stop_reason == "kl1-reached":
        assert final <= kl1
        assert final > 1  # a one-cluster finish reports single-cluster instead
    if final > kl1:
        assert res.stop_reason != "kl1-reached"
    if kl1 >= 2 and n > kl1 and final == kl1:
        assert res.stop_reason == "kl1-reached"


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_criterion_07_kl4_priority_order(data):
    x = data.draw(_points(n_min=10))
    kl4 = data.draw(st.integers(2, 6))
    P = data.draw(st.integers(3, 8))
    res = _run_with(x, ConstraintSet(kl4=kl4), P=P)
    starts = _replay_round_starts(x.shape[0], res.merges)
    by_round: dict = {}
    for e in res.merges:
        by_round.setdefault(e.round, []).append(e)
    for rnd, events in by_round.items():
        labels = starts[rnd]
        flags = []
        for e in events:
            sa = int(np.sum(labels == labels[e.point_a]))
            sb = int(np.sum(labels == labels[e.point_b]))
            flags.append(min(sa, sb) < kl4)
        assert flags == sorted(flags, reverse=True), (
            f"round {rnd}: a non-priority merge preceded a priority merge"
        )


# --- criterion 8: five separated blobs come back exactly, kl1 = 5 ---

def test_criterion_08_blob_recovery():
    t0 = time.perf_counter()
    ds, labels = generate_synthetic(5000, 3, 5, 0.5, seed=71)
    centers = np.array([ds.values[labels == lab].mean(axis=0) for lab in range(5)])
    gaps = cdist(centers, centers)
    np.fill_diagonal(gaps, np.inf)
    assert gaps.min() > 20 * 0.5  # blobs are genuinely well separated

    res = run(ds, RunConfig(constraints=ConstraintSet(kl1=5), pairs_per_batch=256))
    assert res.stop_reason == "kl1-reached"
    assert res.cluster_count == 5
    assert same_partition(res.assignments, labels)
    assert time.perf_counter() - t0 < 30.0
