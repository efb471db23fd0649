import numpy as np
import pytest

from tsap.data import (
    DatasetFormatError,
    Fixed,
    Random,
    Series,
    TaskProfile,
    build_task,
    dominant_period,
    generate_normal,
    read_csv,
    write_csv,
)
from tsap.inject import AnomalyType


class TestNormal:
    def test_shape_and_scale(self):
        X = generate_normal(8, 256, "ecg", 0)
        assert X.shape == (8, 256)
        np.testing.assert_allclose(X.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(X.std(axis=1), 1.0, atol=1e-12)

    def test_deterministic(self):
        np.testing.assert_array_equal(generate_normal(3, 64, "gait", 7), generate_normal(3, 64, "gait", 7))
        assert not np.array_equal(generate_normal(3, 64, "gait", 7), generate_normal(3, 64, "gait", 8))

    def test_rows_do_not_depend_on_n(self):
        np.testing.assert_array_equal(generate_normal(2, 64, "ecg", 3), generate_normal(5, 64, "ecg", 3)[:2])

    def test_gait_period(self):
        x = generate_normal(1, 512, "gait", 1, period=32.0)[0]
        assert abs(dominant_period(x) - 32) <= 1
        assert x.min() == -1.0 and x.max() == 1.0

    def test_bad_family(self):
        with pytest.raises(ValueError, match="unknown family"):
            generate_normal(2, 16, "eeg")

    def test_series_validation(self):
        with pytest.raises(ValueError):
            Series(np.array([1.0, np.inf]))
        assert len(Series([1.0, 2.0])) == 2


class TestTask:
    def test_labels_and_fixed_level(self):
        prof = TaskProfile("platform", level=Fixed(0.2), length=Fixed(0.3))
        split = build_task(prof, n_trn=16, n_test=40, K=64, seed=0)
        assert split.y_test.sum() == 4
        for i, a in zip(np.flatnonzero(split.y_test), split.anomaly_params):
            lo, hi = a.window(64)
            np.testing.assert_array_equal(split.X_test[i, lo:hi], 0.2)
            assert a.length == 0.3
        assert len(split.val_idx) == 20

    def test_ten_percent_anomalies(self):
        split = build_task(TaskProfile("platform"), n_trn=8, n_test=200, K=32, seed=4)
        assert split.y_test.sum() == 20 and len(split.val_idx) == 100

    def test_random_location_spread(self):
        prof = TaskProfile("mean_shift", length=Fixed(0.1), ratio=0.5)
        split = build_task(prof, n_trn=2, n_test=200, K=64, seed=5)
        locs = np.array([a.location for a in split.anomaly_params])
        lo, hi = prof.domain(64).location
        assert len(locs) == 100
        assert (locs.max() - locs.min()) >= 0.8 * (hi - lo)

    def test_random_ranges_respected(self):
        prof = TaskProfile("mean_shift", level=Random(0.5, 0.6))
        split = build_task(prof, n_trn=8, n_test=50, K=64, seed=1)
        assert all(0.5 <= a.level <= 0.6 for a in split.anomaly_params)

    def test_deterministic(self):
        prof = TaskProfile("trend", level=Fixed(0.1))
        a, b = build_task(prof, 8, 20, 32, seed=3), build_task(prof, 8, 20, 32, seed=3)
        np.testing.assert_array_equal(a.X_test, b.X_test)
        np.testing.assert_array_equal(a.val_idx, b.val_idx)

    def test_profile_round_trip(self):
        prof = TaskProfile("frequency_shift", level=Random(1.0, 2.0), location=Fixed(0.2), family="gait")
        assert TaskProfile.from_dict(prof.to_dict()) == prof
        assert prof.anomaly_type is AnomalyType.FREQUENCY_SHIFT

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            TaskProfile("platform", ratio=0.0)

    def test_extremum_length_rejected(self):
        with pytest.raises(ValueError):
            TaskProfile("extremum", length=Fixed(0.2))


class TestCsv:
    def test_round_trip(self, tmp_path):
        split = build_task(TaskProfile("amplitude"), n_trn=6, n_test=10, K=32, seed=2)
        back = read_csv(write_csv(split, tmp_path / "d"))
        np.testing.assert_array_equal(back.X_trn, split.X_trn)
        np.testing.assert_array_equal(back.X_test, split.X_test)
        np.testing.assert_array_equal(back.y_test, split.y_test)
        np.testing.assert_array_equal(back.val_idx, split.val_idx)

    def test_ragged_rows(self, tmp_path):
        split = build_task(TaskProfile("amplitude"), n_trn=2, n_test=10, K=8, seed=2)
        d = write_csv(split, tmp_path)
        (d / "train.csv").write_text("1,2,3\n1,2\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            read_csv(d)

    def test_bad_label(self, tmp_path):
        split = build_task(TaskProfile("amplitude"), n_trn=2, n_test=10, K=8, seed=2)
        d = write_csv(split, tmp_path)
        (d / "test_labels.csv").write_text("0\n2\n")
        with pytest.raises(DatasetFormatError, match="label"):
            read_csv(d)

    def test_k_mismatch(self, tmp_path):
        split = build_task(TaskProfile("amplitude"), n_trn=2, n_test=10, K=8, seed=2)
        d = write_csv(split, tmp_path)
        (d / "train.csv").write_text("1,2,3\n")
        with pytest.raises(DatasetFormatError, match="K="):
            read_csv(d)

    def test_empty_file(self, tmp_path):
        split = build_task(TaskProfile("amplitude"), n_trn=2, n_test=10, K=8, seed=2)
        d = write_csv(split, tmp_path)
        (d / "test.csv").write_text("")
        with pytest.raises(DatasetFormatError, match="no data"):
            read_csv(d)

    def test_non_numeric(self, tmp_path):
        split = build_task(TaskProfile("amplitude"), n_trn=2, n_test=10, K=8, seed=2)
        d = write_csv(split, tmp_path)
        (d / "test.csv").write_text("a,b\n")
        with pytest.raises(DatasetFormatError):
            read_csv(d)
