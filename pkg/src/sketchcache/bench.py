"""Benchmark runner: accuracy/latency drill-downs per algorithm, and a
throughput comparison of the compiled vs pure-Python kernel backends.

The drill-down mix queries the whole retained window plus ten sub-windows
at 1/10th and ten at 1/100th of the span, reporting estimate, truth, and
relative error per row (CSV schema: stat, window_start, window_end,
estimate, truth, rel_err, extra).
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np

from . import harness
from .ehkll import EhKll
from .ehuniv import EhUniv
from .errors import SketchCacheError
from .model import TimeWindow, default_gsum_config, default_quantile_config
from .sampler import SampleWindow

QUANTILE_GRID = (0.01, 0.10, 0.25, 0.50, 0.75, 0.90, 0.99)
ALGOS = ("ehkll", "ehuniv", "sampler")


def _load(dataset: str, n: int, seed: int, path: Optional[str]):
    if dataset == "file":
        if not path:
            raise ValueError("dataset 'file' needs --path")
        return harness.load_stream_csv(path)
    values = harness.gen_stream(dataset, n, seed)
    return harness.timestamps(n), values


def _bench_ehkll(ts, values, window_ms, seed, report):
    sketch = EhKll(default_quantile_config(), window_ms, seed=seed)
    t0 = time.perf_counter()
    for t, v in zip(ts.tolist(), values.tolist()):
        sketch.insert(int(t), float(v))
    ingest_s = time.perf_counter() - t0
    floor = int(ts[-1]) - window_ms
    vis = harness.window_values(ts, values, floor, int(ts[-1]))
    vis_ts = ts[-vis.shape[0] :]
    latencies = []
    for start, end in harness.drill_down_windows(vis_ts):
        window = harness.window_values(ts, values, start, end)
        if window.shape[0] == 0:
            continue
        for phi in QUANTILE_GRID:
            truth = harness.oracle_quantile(window, phi)
            t0 = time.perf_counter()
            try:
                est = sketch.quantile(TimeWindow(start, end), phi)
            except SketchCacheError:
                continue
            latencies.append(time.perf_counter() - t0)
            report.add(f"quantile_{phi}", start, end, est, truth, extra="ehkll")
    return {"algo": "ehkll", "ingest_s": ingest_s, "n": len(ts),
            "bytes": sketch.byte_size(), "query_avg_ms": 1e3 * float(np.mean(latencies))}


def _bench_ehuniv(ts, values, window_ms, seed, report):
    sketch = EhUniv(default_gsum_config(), window_ms, seed=seed)
    tokens = values.astype(np.int64)
    t0 = time.perf_counter()
    for t, tok in zip(ts.tolist(), tokens.tolist()):
        sketch.insert(int(t), int(tok))
    ingest_s = time.perf_counter() - t0
    latencies = []
    floor = int(ts[-1]) - window_ms
    vis = harness.window_values(ts, tokens, floor, int(ts[-1]))
    vis_ts = ts[-vis.shape[0] :]
    for start, end in harness.drill_down_windows(vis_ts):
        window = harness.window_values(ts, tokens, start, end)
        if window.shape[0] == 0:
            continue
        q = TimeWindow(start, end)
        for stat, oracle, method in (
            ("distinct", harness.oracle_distinct, sketch.distinct),
            ("entropy", harness.oracle_entropy, sketch.entropy),
            ("l2", harness.oracle_l2, sketch.l2),
        ):
            truth = oracle(window)
            t0 = time.perf_counter()
            try:
                est = method(q)
            except SketchCacheError:
                continue
            latencies.append(time.perf_counter() - t0)
            report.add(stat, start, end, est, truth, extra="ehuniv")
    return {"algo": "ehuniv", "ingest_s": ingest_s, "n": len(ts),
            "bytes": sketch.byte_size(), "query_avg_ms": 1e3 * float(np.mean(latencies))}


def _bench_sampler(ts, values, window_ms, seed, report, p=0.1):
    vals = values.astype(np.float64)
    sw = SampleWindow(p, window_ms, seed=seed)
    t0 = time.perf_counter()
    sw.extend(ts, vals)
    ingest_s = time.perf_counter() - t0
    latencies = []
    floor = int(ts[-1]) - window_ms
    vis = harness.window_values(ts, vals, floor, int(ts[-1]))
    vis_ts = ts[-vis.shape[0] :]
    for start, end in harness.drill_down_windows(vis_ts):
        window = harness.window_values(ts, vals, start, end)
        if window.shape[0] == 0:
            continue
        q = TimeWindow(start, end)
        for stat in ("AVG", "SUM", "COUNT"):
            truth = harness.oracle_moment(window, stat)
            t0 = time.perf_counter()
            try:
                est = sw.query(q, stat)
            except SketchCacheError:
                continue
            latencies.append(time.perf_counter() - t0)
            report.add(stat.lower(), start, end, est, truth, extra=f"sampler_p{p}")
    return {"algo": "sampler", "ingest_s": ingest_s, "n": len(ts),
            "bytes": sw.serialized_bytes(), "query_avg_ms": 1e3 * float(np.mean(latencies))}


def run_bench(
    dataset: str = "zipf",
    n: int = 100_000,
    window_ms: Optional[int] = None,
    algo: str = "all",
    seed: int = 0,
    out: Optional[str] = None,
    path: Optional[str] = None,
) -> tuple[list[dict], harness.AccuracyReport]:
    ts, values = _load(dataset, n, seed, path)
    if window_ms is None:
        window_ms = int(ts[-1] - ts[0]) + harness.DEFAULT_STEP_MS
    wanted = ALGOS if algo == "all" else (algo,)
    report = harness.AccuracyReport()
    summaries = []
    for name in wanted:
        if name == "ehkll":
            summaries.append(_bench_ehkll(ts, values, window_ms, seed, report))
        elif name == "ehuniv":
            summaries.append(_bench_ehuniv(ts, values, window_ms, seed, report))
        elif name == "sampler":
            summaries.append(_bench_sampler(ts, values, window_ms, seed, report))
        else:
            raise ValueError(f"unknown algo {name!r}")
    if out:
        report.to_csv(out)
    return summaries, report


# -- kernel backend comparison -------------------------------------------------


def bench_backends(n: int = 200_000, seed: int = 7) -> list[dict]:
    """Throughput of each kernel backend on the package's hot operations."""
    from .kernels import available_backends

    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, 1 << 48, size=n, dtype=np.uint64)
    counters = np.zeros((3, 2048), dtype=np.int64)
    layer_seeds = rng.integers(0, 1 << 63, size=16, dtype=np.uint64)
    row_seeds = rng.integers(0, 1 << 63, size=3, dtype=np.uint64)
    rows = []
    for name, mod in available_backends().items():
        timings: dict[str, float] = {}

        t0 = time.perf_counter()
        mod.hash64_many(tokens, 12345)
        timings["hash64_many"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        mod.sample_depth_many(tokens, layer_seeds)
        timings["sample_depth_many"] = time.perf_counter() - t0

        work = counters.copy()
        m = n // 10
        t0 = time.perf_counter()
        for tok in tokens[:m].tolist():
            mod.cs_update_est(work, row_seeds, int(tok), 1, work.shape[1] - 1)
        timings["cs_update_est"] = (time.perf_counter() - t0) * (n / m)

        t0 = time.perf_counter()
        mod.admit_mask(seed, 0, n, 0.1)
        timings["admit_mask"] = time.perf_counter() - t0

        for op, secs in timings.items():
            rows.append(
                {"backend": name, "op": op, "n": n, "ops_per_sec": n / secs if secs else float("inf")}
            )
    return rows
