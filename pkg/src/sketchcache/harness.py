"""Evaluation harness: stream generators, exact window oracles, and the
error metrics the accuracy gates are scored with.

The oracles here are deliberately written against numpy primitives rather
than reusing the query engine's exact evaluator, so the two act as
independent references for each other in the cross-check tests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_STEP_MS = 100
ZIPF_ALPHA = 1.01
ZIPF_DOMAIN = 100_000  # tokens are drawn from [0, ZIPF_DOMAIN] inclusive


# -- error metrics -----------------------------------------------------------


def mre(estimate: float, truth: float) -> float:
    """Magnitude of relative error with a tiny floor to absorb zero truths."""
    return abs(estimate - truth) / max(abs(truth), 1e-12)


def rank_error(sorted_truth: np.ndarray, estimate: float, phi: float) -> float:
    """Distance between phi and the rank interval the estimate occupies.

    With duplicated values an estimate corresponds to a rank *interval*
    [lo, hi]; the error is zero when the target rank lands inside it, else
    the gap to the nearest endpoint, normalized by n.
    """
    n = sorted_truth.shape[0]
    lo = np.searchsorted(sorted_truth, estimate, side="left") / n
    hi = np.searchsorted(sorted_truth, estimate, side="right") / n
    if lo <= phi <= hi:
        return 0.0
    return float(min(abs(phi - lo), abs(phi - hi)))


def ks_error(quantile_fn, sorted_truth: np.ndarray, grid: Optional[Sequence[float]] = None) -> float:
    """Worst-case rank error of a quantile estimator over a phi grid.

    Evaluates quantile_fn at each phi (default: 99 evenly spaced interior
    points) and measures how far the returned value's empirical rank strays
    from phi — the Kolmogorov-Smirnov distance restricted to the grid.
    """
    if grid is None:
        grid = [i / 100.0 for i in range(1, 100)]
    return max(rank_error(sorted_truth, quantile_fn(phi), phi) for phi in grid)


# -- stream generators --------------------------------------------------------


def timestamps(n: int, start_ms: int = 0, step_ms: int = DEFAULT_STEP_MS) -> np.ndarray:
    return start_ms + step_ms * np.arange(1, n + 1, dtype=np.int64)


def _zipf_cdf(alpha: float, domain: int) -> np.ndarray:
    weights = (1.0 + np.arange(domain + 1, dtype=np.float64)) ** (-alpha)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


_ZIPF_CDF_CACHE: dict[tuple[float, int], np.ndarray] = {}


def gen_zipf(
    n: int, seed: int, alpha: float = ZIPF_ALPHA, domain: int = ZIPF_DOMAIN
) -> np.ndarray:
    """Heavy-tailed integer tokens via inverse-CDF sampling."""
    key = (alpha, domain)
    cdf = _ZIPF_CDF_CACHE.get(key)
    if cdf is None:
        cdf = _zipf_cdf(alpha, domain)
        _ZIPF_CDF_CACHE[key] = cdf
    rng = np.random.default_rng(seed)
    return np.searchsorted(cdf, rng.random(n), side="right").astype(np.int64)


def gen_uniform(n: int, seed: int, domain: int = ZIPF_DOMAIN) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, domain + 1, size=n, dtype=np.int64)


def gen_normal(
    n: int, seed: int, mu: float = 50_000.0, sigma: float = 10_000.0
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    vals = np.rint(rng.normal(mu, sigma, size=n)).astype(np.int64)
    return np.clip(vals, 0, None)


def gen_dynamic(n: int, seed: int) -> np.ndarray:
    """Three-phase regime shift: heavy-tailed, then flat, then unimodal."""
    third = n // 3
    parts = [
        gen_zipf(third, seed),
        gen_uniform(third, seed + 1),
        gen_normal(n - 2 * third, seed + 2),
    ]
    return np.concatenate(parts)


def gen_stream(kind: str, n: int, seed: int) -> np.ndarray:
    if kind == "zipf":
        return gen_zipf(n, seed)
    if kind == "uniform":
        return gen_uniform(n, seed)
    if kind == "normal":
        return gen_normal(n, seed)
    if kind == "dynamic":
        return gen_dynamic(n, seed)
    raise ValueError(f"unknown stream kind {kind!r}")


def load_stream_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Reads a `ts_ms,value` CSV into (timestamps, values) arrays."""
    ts: list[int] = []
    vals: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header[:2]] != ["ts_ms", "value"]:
            raise ValueError("expected a 'ts_ms,value' header")
        for row in reader:
            if not row:
                continue
            ts.append(int(row[0]))
            vals.append(float(row[1]))
    return np.asarray(ts, dtype=np.int64), np.asarray(vals, dtype=np.float64)


def save_stream_csv(path: str, ts: np.ndarray, values: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts_ms", "value"])
        for t, v in zip(ts.tolist(), values.tolist()):
            writer.writerow([t, v])


# -- exact window oracles ------------------------------------------------------


def window_values(ts: np.ndarray, values: np.ndarray, start: int, end: int) -> np.ndarray:
    """Values with start < t <= end (same half-open convention as queries)."""
    i0 = np.searchsorted(ts, start, side="right")
    i1 = np.searchsorted(ts, end, side="right")
    return values[i0:i1]


def oracle_quantile(window: np.ndarray, phi: float) -> float:
    n = window.shape[0]
    if n == 0:
        raise ValueError("empty window")
    rank = max(1, math.ceil(phi * n))
    return float(np.partition(window, rank - 1)[rank - 1])


def oracle_token_counts(window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.unique(window, return_counts=True)


def oracle_distinct(window: np.ndarray) -> float:
    return float(np.unique(window).shape[0])


def oracle_entropy(window: np.ndarray) -> float:
    _, counts = np.unique(window, return_counts=True)
    p = counts / counts.sum()
    return max(0.0, float(-(p * np.log2(p)).sum()))


def oracle_l2(window: np.ndarray) -> float:
    _, counts = np.unique(window, return_counts=True)
    return float(np.sqrt((counts.astype(np.float64) ** 2).sum()))


def oracle_topk(window: np.ndarray, k: int) -> list[tuple[int, float]]:
    tokens, counts = np.unique(window, return_counts=True)
    order = np.lexsort((tokens, -counts))
    return [(int(tokens[i]), float(counts[i])) for i in order[:k]]


def oracle_moment(window: np.ndarray, stat: str) -> float:
    n = window.shape[0]
    if n == 0:
        raise ValueError("empty window")
    if stat == "COUNT":
        return float(n)
    if stat == "SUM":
        return float(window.sum(dtype=np.float64))
    if stat == "AVG":
        return float(window.mean(dtype=np.float64))
    if stat in ("STDDEV", "STDVAR"):
        if n < 2:
            raise ValueError("need two samples for variance")
        var = float(np.var(window.astype(np.float64), ddof=1))
        return math.sqrt(var) if stat == "STDDEV" else var
    raise ValueError(f"unknown moment stat {stat!r}")


# -- report plumbing -----------------------------------------------------------

REPORT_FIELDS = ("stat", "window_start", "window_end", "estimate", "truth", "rel_err", "extra")


@dataclass
class ReportRow:
    stat: str
    window_start: int
    window_end: int
    estimate: float
    truth: float
    extra: str = ""

    @property
    def rel_err(self) -> float:
        return mre(self.estimate, self.truth)


@dataclass
class AccuracyReport:
    rows: list[ReportRow] = field(default_factory=list)

    def add(self, *args, **kwargs) -> ReportRow:
        row = ReportRow(*args, **kwargs)
        self.rows.append(row)
        return row

    def max_rel_err(self, stat: Optional[str] = None) -> float:
        errs = [r.rel_err for r in self.rows if stat is None or r.stat == stat]
        return max(errs) if errs else 0.0

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_FIELDS)
            for r in self.rows:
                writer.writerow(
                    [r.stat, r.window_start, r.window_end, r.estimate, r.truth, r.rel_err, r.extra]
                )

    @classmethod
    def from_csv(cls, path: str) -> "AccuracyReport":
        report = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                report.add(
                    rec["stat"],
                    int(rec["window_start"]),
                    int(rec["window_end"]),
                    float(rec["estimate"]),
                    float(rec["truth"]),
                    extra=rec.get("extra", "") or "",
                )
        return report


def drill_down_windows(ts: np.ndarray, levels: Iterable[int] = (1, 10, 100)) -> list[tuple[int, int]]:
    """The benchmark's query mix: the whole window plus suffix drill-downs.

    For each divisor d > 1, ten evenly spaced sub-windows of length span/d.
    """
    t0 = int(ts[0]) - 1
    t1 = int(ts[-1])
    span = t1 - t0
    windows: list[tuple[int, int]] = []
    for d in levels:
        if d == 1:
            windows.append((t0, t1))
            continue
        width = span // d
        if width <= 0:
            continue
        for i in range(10):
            end = t1 - (i * span) // 10
            start = end - width
            if start >= t0:
                windows.append((start, end))
    return windows
