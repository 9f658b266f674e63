import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tscp import encoder as enc
from tscp.data import LabeledSeries
from tscp.detector import (DetectorConfig, detect, find_peaks, profile_boundaries, read_estimates,
                           similarity_profile, trailing_moving_average)
from tscp.encoder import EncoderConfig

from oracles import brute_peaks

SMALL = dict(filters=8, kernel=3, dilations=(1, 2, 4), stacks=1, head_widths=(8, 8), code_size=4)


class TestFindPeaks:
    def test_single(self):
        assert find_peaks([0, 0, 0.5, 0, 0], 0.1, 1) == [2]

    def test_spacing_suppresses(self):
        assert find_peaks([0, 0.4, 0, 0.6, 0], 0.1, 3) == [3]

    def test_below_threshold(self):
        assert find_peaks([0.01, 0.02, 0.01], 0.1, 1) == []

    def test_plateau_leftmost(self):
        assert find_peaks([0, 0.5, 0.5, 0.5, 0], 0.1, 1) == [1]

    def test_rising_plateau_is_not_a_peak(self):
        assert find_peaks([0, 0.5, 0.5, 0.7, 0], 0.1, 1) == [3]

    def test_edges(self):
        assert find_peaks([0.9, 0.1, 0.8], 0.1, 1) == [0, 2]

    def test_empty(self):
        assert find_peaks([], 0.0, 1) == []

    def test_oracle_1000_series(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(0, 201))
            # quantised values make plateaus and ties common
            x = np.round(rng.uniform(0, 1, n) * rng.choice([4, 10, 1000]), 0) / 10
            theta = float(rng.uniform(0, 0.5))
            spacing = int(rng.integers(1, 30))
            assert find_peaks(x, theta, spacing) == brute_peaks(x, theta, spacing)

    @settings(max_examples=200, deadline=None)
    @given(x=st.lists(st.floats(0, 1), max_size=60), t1=st.floats(0, 1), dt=st.floats(0, 1),
           spacing=st.integers(1, 10))
    def test_threshold_monotone(self, x, t1, dt, spacing):
        low = set(find_peaks(x, t1, spacing))
        high = set(find_peaks(x, t1 + dt, spacing))
        assert high <= low

    @settings(max_examples=200, deadline=None)
    @given(x=st.lists(st.floats(0, 1), max_size=60), theta=st.floats(0, 1), spacing=st.integers(1, 10))
    def test_invariants(self, x, theta, spacing):
        peaks = find_peaks(x, theta, spacing)
        assert all(b - a >= spacing for a, b in zip(peaks, peaks[1:]))
        assert all(x[p] >= theta for p in peaks)


class TestMovingAverage:
    def test_trailing_excludes_current(self):
        ma = trailing_moving_average(np.array([1.0, 3.0, 5.0, 7.0]), 2)
        np.testing.assert_allclose(ma, [1.0, 1.0, 2.0, 4.0])

    def test_against_loop(self):
        x = np.random.default_rng(0).normal(size=50)
        for W in (1, 3, 10, 60):
            ref = [x[0]] + [x[max(0, i - W):i].mean() for i in range(1, 50)]
            np.testing.assert_allclose(trailing_moving_average(x, W), ref, atol=1e-12)


def _params(w, seed=0):
    return enc.init(EncoderConfig(window_len=w, **SMALL), seed)


class TestProfile:
    def test_boundary_arithmetic(self):
        b = profile_boundaries(500, 100, 1)
        assert b.size == 301 and b[0] == 100 and b[-1] == 400

    @pytest.mark.parametrize("T,w,s", [(500, 100, 1), (503, 40, 7), (80, 40, 3)])
    def test_row_count(self, T, w, s):
        assert profile_boundaries(T, w, s).size == (T - 2 * w) // s + 1

    def test_too_short(self):
        with pytest.raises(ValueError):
            similarity_profile(_params(30), np.zeros(59), DetectorConfig(window_len=30))

    def test_window_mismatch(self):
        with pytest.raises(ValueError):
            similarity_profile(_params(30), np.zeros(200), DetectorConfig(window_len=20))

    def test_constant_series(self):
        params = _params(30)
        # non-zero biases so a constant window gives a non-degenerate embedding
        for k, t in params.tensors.items():
            if k.endswith(".b"):
                t.data = np.full_like(t.data, 0.1)
        s = LabeledSeries(np.full((300, 1), 2.5))
        cfg = DetectorConfig(window_len=30)
        prof = similarity_profile(params, s, cfg)
        np.testing.assert_allclose(prof.sim, 1.0, atol=1e-6)
        assert prof.diff.max() < 1e-6
        assert len(detect(params, s, cfg)) == 0

    def test_profile_invariants(self):
        x = np.random.default_rng(0).normal(size=(400, 1))
        prof = similarity_profile(_params(30, 3), x, DetectorConfig(window_len=30, ma_width=5))
        assert prof.sim.min() >= -1 and prof.sim.max() <= 1
        assert prof.diff.min() >= 0
        assert len(prof.sim) == len(prof.ma) == len(prof.diff) == len(prof.boundaries)
        np.testing.assert_allclose(prof.diff, np.maximum(0, prof.ma - prof.sim))

    def test_profile_matches_direct_encoding(self):
        x = np.random.default_rng(1).normal(size=(200, 1)).astype(np.float32)
        params = _params(25, 4)
        prof = similarity_profile(params, x, DetectorConfig(window_len=25, stride=9))
        for k in (0, 5, prof.boundaries.size - 1):
            t = prof.boundaries[k]
            zh = enc.encode(params, x[None, t - 25:t]).data[0]
            zf = enc.encode(params, x[None, t:t + 25]).data[0]
            cos = zh @ zf / np.linalg.norm(zh) / np.linalg.norm(zf)
            assert prof.sim[k] == pytest.approx(cos, abs=1e-5)

    def test_stride_consistency(self):
        x = np.random.default_rng(2).normal(size=(300, 1))
        params = _params(30, 5)
        p1 = similarity_profile(params, x, DetectorConfig(window_len=30, stride=1))
        p2 = similarity_profile(params, x, DetectorConfig(window_len=30, stride=2))
        lookup = dict(zip(p1.boundaries.tolist(), p1.sim))
        for b, s in zip(p2.boundaries, p2.sim):
            assert s == pytest.approx(lookup[int(b)], abs=1e-6)

    def test_separate_heads_path(self):
        x = np.random.default_rng(2).normal(size=(200, 1))
        params = enc.init(EncoderConfig(window_len=30, separate_heads=True, **SMALL), 0)
        prof = similarity_profile(params, x, DetectorConfig(window_len=30))
        assert prof.sim.size == 141


class TestDetect:
    def test_estimates_respect_config(self):
        x = np.random.default_rng(3).normal(size=(600, 1))
        x[300:] += 4
        cfg = DetectorConfig(window_len=30, threshold=0.01, stride=3, min_spacing=40)
        est = detect(_params(30, 1), x, cfg)
        assert all(b - a >= 40 for a, b in zip(est.indices, est.indices[1:]))
        assert all(s >= 0.01 for s in est.scores)

    def test_threshold_monotone(self):
        x = np.random.default_rng(3).normal(size=(600, 1))
        x[300:] += 4
        params = _params(30, 1)
        counts = [len(detect(params, x, DetectorConfig(window_len=30, threshold=th)))
                  for th in (0.01, 0.02, 0.04, 0.08, 0.16)]
        assert counts == sorted(counts, reverse=True)

    def test_csv_round_trip(self, tmp_path):
        x = np.random.default_rng(3).normal(size=(400, 1))
        x[200:] += 5
        cfg = DetectorConfig(window_len=30, threshold=0.0)
        est = detect(_params(30, 2), x, cfg)
        est.write_csv(tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text().splitlines()[0] == "index,score"
        assert read_estimates(tmp_path / "e.csv") == est.indices


def test_profile_csv(tmp_path):
    prof = similarity_profile(_params(30), np.random.default_rng(0).normal(size=(100, 1)),
                              DetectorConfig(window_len=30))
    prof.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "boundary,sim,ma,diff"
    assert len(lines) == 1 + 41
