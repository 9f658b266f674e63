import numpy as np
import pytest

from tscp.data import (LabeledSeries, LoadError, SynthSpec, load_csv, read_labels, synth_generate,
                       write_csv, write_labels, znormalize)


class TestLabeledSeries:
    def test_bad_labels(self):
        with pytest.raises(ValueError):
            LabeledSeries(np.zeros(10), [5, 3])
        with pytest.raises(ValueError):
            LabeledSeries(np.zeros(10), [0])
        with pytest.raises(ValueError):
            LabeledSeries(np.zeros(10), [10])

    def test_shape(self):
        s = LabeledSeries(np.zeros(7))
        assert (s.T, s.d) == (7, 1)


class TestLoadCsv:
    def test_simple(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("v\n1\n2\n3\n")
        s = load_csv(p)
        assert (s.T, s.d) == (3, 1)
        assert s.change_points == []

    def test_label_column(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("value,changepoint\n1,0\n2,0\n3,1\n4,0\n")
        s = load_csv(p, label_column="changepoint")
        assert s.change_points == [2]
        assert s.d == 1
        np.testing.assert_array_equal(s.values[:, 0], [1, 2, 3, 4])

    def test_channels_in_file_order(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,flag,b\n1,0,10\n2,1,20\n")
        s = load_csv(p, label_column="flag")
        np.testing.assert_array_equal(s.values, [[1, 10], [2, 20]])
        assert s.change_points == [1]

    def test_no_header(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("1,2\n3,4\n")
        assert load_csv(p, has_header=False).values.shape == (2, 2)

    def test_ragged(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,2\n3\n")
        with pytest.raises(LoadError, match="row 3"):
            load_csv(p)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a\n1\nx\n")
        with pytest.raises(LoadError, match="row 3"):
            load_csv(p)

    def test_missing(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,2\n,4\n")
        with pytest.raises(LoadError, match="missing"):
            load_csv(p)
        s = load_csv(p, forward_fill=True)
        np.testing.assert_array_equal(s.values, [[1, 2], [1, 4]])

    def test_unreadable(self, tmp_path):
        with pytest.raises(LoadError):
            load_csv(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        s = LabeledSeries(rng.normal(size=(50, 3)) * 1e3, [10, 33])
        write_csv(s, tmp_path / "s.csv", label_column="changepoint")
        back = load_csv(tmp_path / "s.csv", label_column="changepoint")
        np.testing.assert_array_equal(back.values, s.values.astype(np.float32).astype(np.float64))
        assert back.change_points == [10, 33]


def test_label_sidecar(tmp_path):
    write_labels([5, 17, 40], tmp_path / "l.txt")
    assert read_labels(tmp_path / "l.txt") == [5, 17, 40]
    (tmp_path / "bad.txt").write_text("3\nfoo\n")
    with pytest.raises(LoadError):
        read_labels(tmp_path / "bad.txt")


class TestZnormalize:
    def test_basic(self):
        out = znormalize(LabeledSeries(np.array([1.0, 2.0, 3.0])))
        assert abs(out.values.mean()) < 1e-12
        assert out.values.std() == pytest.approx(1.0)

    def test_constant_channel(self):
        out = znormalize(LabeledSeries(np.array([[5.0, 1.0], [5.0, 2.0]])))
        np.testing.assert_array_equal(out.values[:, 0], 0)

    def test_idempotent_and_stats(self):
        s = LabeledSeries(np.random.default_rng(0).normal(3, 7, size=(500, 4)), [100])
        once = znormalize(s)
        twice = znormalize(once)
        np.testing.assert_allclose(once.values, twice.values, atol=1e-6)
        assert np.abs(once.values.mean(axis=0)).max() < 1e-6
        assert np.abs(once.values.std(axis=0) - 1).max() < 1e-3
        assert once.change_points == [100]


class TestSynth:
    def test_segments_and_labels(self):
        s = synth_generate(SynthSpec(n_segments=3, segment_len=(100, 200), seed=1))
        assert len(s.change_points) == 2

    def test_deterministic(self):
        spec = SynthSpec(n_segments=5, kinds=("mean_shift", "var_shift", "freq_shift", "trend_change"), seed=9)
        assert synth_generate(spec).values.tobytes() == synth_generate(spec).values.tobytes()

    @pytest.mark.parametrize("seed", range(20))
    def test_boundaries_equal_labels(self, seed):
        spec = SynthSpec(n_segments=6, segment_len=(50, 80), kinds=("mean_shift", "trend_change"), seed=seed)
        s = synth_generate(spec)
        rng = np.random.default_rng(seed)
        lengths = rng.integers(50, 81, size=6)
        assert s.change_points == np.cumsum(lengths)[:-1].tolist()
        assert s.T == lengths.sum()

    def test_mean_shift_magnitude(self):
        for seed in range(100):
            s = synth_generate(SynthSpec(n_segments=2, segment_len=(200, 300), magnitude=(5, 5), seed=seed))
            cp = s.change_points[0]
            gap = abs(s.values[cp:].mean() - s.values[:cp].mean())
            assert gap >= 3.0

    @pytest.mark.parametrize("kind", ["var_shift", "freq_shift", "trend_change"])
    def test_other_kinds_finite(self, kind):
        s = synth_generate(SynthSpec(n_segments=4, channels=2, kinds=(kind,), seed=2))
        assert np.all(np.isfinite(s.values)) and s.d == 2

    def test_var_shift_changes_spread(self):
        s = synth_generate(SynthSpec(n_segments=2, segment_len=(400, 400), kinds=("var_shift",),
                                     magnitude=(4, 4), seed=0))
        a, b = s.values[:400, 0], s.values[400:, 0]
        assert b.std() > 3 * a.std()

    @pytest.mark.parametrize("bad", [dict(n_segments=1), dict(magnitude=(0, 1)), dict(kinds=("nope",)),
                                     dict(segment_len=(10, 5))])
    def test_invalid_spec(self, bad):
        with pytest.raises(ValueError):
            SynthSpec(**bad)


def test_value_columns_select(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("timestamps,value,anomaly,changepoint,trend\n1,5,0,0,9\n2,6,0,1,9\n3,7,0,0,9\n")
    s = load_csv(p, label_column="changepoint", value_columns=["value"])
    np.testing.assert_array_equal(s.values[:, 0], [5, 6, 7])
    assert s.change_points == [1]
    with pytest.raises(LoadError):
        load_csv(p, value_columns=["nope"])
