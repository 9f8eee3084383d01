"""Tests for the evaluation harness: metrics, generators, oracles, reports.

Generator outputs are pinned to frozen fingerprints so that accuracy gates
elsewhere in the suite cannot drift silently with a generator change.
"""

from __future__ import annotations

import numpy as np
import pytest

from sketchcache import harness
from sketchcache.harness import (
    AccuracyReport,
    drill_down_windows,
    gen_dynamic,
    gen_normal,
    gen_stream,
    gen_uniform,
    gen_zipf,
    ks_error,
    load_stream_csv,
    mre,
    oracle_distinct,
    oracle_entropy,
    oracle_l2,
    oracle_moment,
    oracle_quantile,
    oracle_topk,
    rank_error,
    save_stream_csv,
    timestamps,
    window_values,
)


class TestMetrics:
    def test_mre_basic(self):
        assert mre(110.0, 100.0) == pytest.approx(0.1)
        assert mre(90.0, 100.0) == pytest.approx(0.1)
        assert mre(100.0, 100.0) == 0.0
        assert mre(0.0, 0.0) == 0.0

    def test_mre_zero_truth_floor(self):
        assert mre(1e-13, 0.0) == pytest.approx(0.1)
        assert mre(1.0, 0.0) == pytest.approx(1e12)

    def test_rank_error_exact_hit(self):
        truth = np.arange(1.0, 11.0)  # ranks 0.1 .. 1.0
        # estimate 5.0 occupies the rank interval [0.4, 0.5]
        assert rank_error(truth, 5.0, 0.45) == 0.0
        assert rank_error(truth, 5.0, 0.40) == 0.0
        assert rank_error(truth, 5.0, 0.50) == 0.0
        assert rank_error(truth, 5.0, 0.60) == pytest.approx(0.1)
        assert rank_error(truth, 5.0, 0.30) == pytest.approx(0.1)

    def test_rank_error_duplicates_widen_interval(self):
        truth = np.array([1.0, 1.0, 1.0, 2.0])
        assert rank_error(truth, 1.0, 0.10) == 0.0
        assert rank_error(truth, 1.0, 0.75) == 0.0
        assert rank_error(truth, 1.0, 0.90) == pytest.approx(0.15)

    def test_rank_error_out_of_support(self):
        truth = np.arange(1.0, 11.0)
        assert rank_error(truth, -5.0, 0.3) == pytest.approx(0.3)
        assert rank_error(truth, 99.0, 0.3) == pytest.approx(0.7)

    def test_ks_error_of_exact_oracle_is_zero(self):
        truth = np.sort(np.random.default_rng(1).normal(size=2_000))
        assert ks_error(lambda phi: oracle_quantile(truth, phi), truth) == 0.0

    def test_ks_error_of_constant_estimator(self):
        truth = np.arange(1.0, 101.0)
        err = ks_error(lambda phi: 50.0, truth)
        assert err == pytest.approx(0.49)  # phi=0.99 vs rank interval 0.5

    def test_ks_error_custom_grid(self):
        truth = np.arange(1.0, 11.0)
        assert ks_error(lambda phi: 5.0, truth, grid=[0.45]) == 0.0


class TestTimestamps:
    def test_convention(self):
        ts = timestamps(5)
        assert ts.tolist() == [100, 200, 300, 400, 500]
        assert ts.dtype == np.int64

    def test_offset_and_step(self):
        ts = timestamps(3, start_ms=1_000, step_ms=7)
        assert ts.tolist() == [1_007, 1_014, 1_021]


class TestGenerators:
    def test_zipf_frozen_head(self):
        assert gen_zipf(12, seed=0).tolist() == [
            1046, 12, 0, 0, 9336, 32795, 721, 3280, 334, 43566, 9644, 0,
        ]
        assert gen_zipf(6, seed=1).tolist() == [227, 53018, 2, 51804, 20, 78]

    def test_uniform_frozen_head(self):
        assert gen_uniform(6, seed=0).tolist() == [
            85063, 63696, 51114, 26978, 30783, 4097,
        ]

    def test_zipf_determinism_and_bounds(self):
        a = gen_zipf(5_000, seed=3)
        b = gen_zipf(5_000, seed=3)
        assert np.array_equal(a, b)
        assert a.min() >= 0 and a.max() <= harness.ZIPF_DOMAIN
        assert a.dtype == np.int64

    def test_zipf_million_fingerprint(self):
        stream = gen_zipf(1_000_000, seed=0)
        assert oracle_topk(stream, 3) == [(0, 87385.0), (1, 43472.0), (2, 28672.0)]
        assert oracle_distinct(stream) == 79426.0

    def test_normal_properties(self):
        vals = gen_normal(50_000, seed=2)
        assert vals.min() >= 0
        assert vals.dtype == np.int64
        assert abs(vals.mean() - 50_000.0) < 500.0

    def test_dynamic_is_three_known_phases(self):
        n = 9_000
        stream = gen_dynamic(n, seed=4)
        assert stream.shape == (n,)
        third = n // 3
        assert np.array_equal(stream[:third], gen_zipf(third, 4))
        assert np.array_equal(stream[third : 2 * third], gen_uniform(third, 5))
        assert np.array_equal(stream[2 * third :], gen_normal(n - 2 * third, 6))

    def test_gen_stream_dispatch(self):
        for kind in ("zipf", "uniform", "normal", "dynamic"):
            assert gen_stream(kind, 100, 0).shape == (100,)
        with pytest.raises(ValueError):
            gen_stream("cauchy", 100, 0)


class TestWindowValues:
    def test_half_open_convention(self):
        ts = timestamps(10)  # 100..1000
        vals = np.arange(10.0)
        # (start, end]: excludes the sample exactly at start, includes at end
        assert window_values(ts, vals, 100, 300).tolist() == [1.0, 2.0]
        assert window_values(ts, vals, 0, 100).tolist() == [0.0]
        assert window_values(ts, vals, 999, 2_000).tolist() == [9.0]
        assert window_values(ts, vals, 1_000, 2_000).tolist() == []


class TestOracles:
    def test_quantile_rank_convention(self):
        vals = np.arange(1.0, 10.0)  # 1..9
        assert oracle_quantile(vals, 0.5) == 5.0
        assert oracle_quantile(vals, 0.001) == 1.0
        assert oracle_quantile(vals, 1.0) == 9.0
        with pytest.raises(ValueError):
            oracle_quantile(np.array([]), 0.5)

    def test_topk_tie_break_by_token(self):
        window = np.array([3, 3, 1, 1, 2])
        assert oracle_topk(window, 3) == [(1, 2.0), (3, 2.0), (2, 1.0)]

    def test_entropy_edge_cases(self):
        assert oracle_entropy(np.array([7, 7, 7])) == 0.0
        assert oracle_entropy(np.arange(8)) == pytest.approx(3.0)

    def test_l2_and_distinct(self):
        window = np.array([1, 1, 1, 2])
        assert oracle_l2(window) == pytest.approx(np.sqrt(10.0))
        assert oracle_distinct(window) == 2.0

    def test_moment_errors(self):
        with pytest.raises(ValueError):
            oracle_moment(np.array([]), "AVG")
        with pytest.raises(ValueError):
            oracle_moment(np.array([1.0]), "STDDEV")
        with pytest.raises(ValueError):
            oracle_moment(np.array([1.0, 2.0]), "MEDIAN")


class TestStreamCsv:
    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "stream.csv")
        ts = timestamps(50, step_ms=37)
        vals = np.random.default_rng(5).normal(10.0, 2.0, 50)
        save_stream_csv(path, ts, vals)
        ts2, vals2 = load_stream_csv(path)
        assert np.array_equal(ts, ts2)
        assert np.array_equal(vals, vals2)  # repr round-trip is exact

    def test_header_validation(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,val\n1,2\n")
        with pytest.raises(ValueError):
            load_stream_csv(str(path))

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "gaps.csv"
        path.write_text("ts_ms,value\n100,1.5\n\n200,2.5\n")
        ts, vals = load_stream_csv(str(path))
        assert ts.tolist() == [100, 200]
        assert vals.tolist() == [1.5, 2.5]


class TestAccuracyReport:
    def test_max_rel_err_with_filter(self):
        report = AccuracyReport()
        report.add("P50", 0, 100, estimate=11.0, truth=10.0)
        report.add("COUNT", 0, 100, estimate=100.0, truth=100.0)
        assert report.max_rel_err() == pytest.approx(0.1)
        assert report.max_rel_err("COUNT") == 0.0
        assert report.max_rel_err("MISSING") == 0.0

    def test_csv_round_trip(self, tmp_path):
        path = str(tmp_path / "report.csv")
        report = AccuracyReport()
        report.add("P99", 10, 20, estimate=1.23456789, truth=1.3, extra="phi=0.99")
        report.add("DISTINCT", 0, 50, estimate=42.0, truth=40.0)
        report.to_csv(path)
        back = AccuracyReport.from_csv(path)
        assert len(back.rows) == 2
        assert back.rows[0].stat == "P99"
        assert back.rows[0].estimate == 1.23456789
        assert back.rows[0].extra == "phi=0.99"
        assert back.rows[1].extra == ""
        assert back.max_rel_err() == pytest.approx(report.max_rel_err())


class TestDrillDownWindows:
    def test_structure(self):
        ts = timestamps(1_000)  # 100..100_000
        windows = drill_down_windows(ts)
        t0, t1 = int(ts[0]) - 1, int(ts[-1])
        span = t1 - t0
        assert windows[0] == (t0, t1)
        assert len(windows) == 21  # whole + 10 tenths + 10 hundredths
        for start, end in windows:
            assert t0 <= start < end <= t1
        tenths = windows[1:11]
        assert all(end - start == span // 10 for start, end in tenths)
        assert tenths[0][1] == t1  # first drill-down ends at the stream head

    def test_skips_degenerate_levels(self):
        ts = timestamps(5)  # span too small for d=1000
        windows = drill_down_windows(ts, levels=(1, 1000))
        assert windows == [(int(ts[0]) - 1, int(ts[-1]))]
