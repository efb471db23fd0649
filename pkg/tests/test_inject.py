import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsap.data import Series
from tsap.inject import (
    NEUTRAL_LEVEL,
    AnomalyType,
    AugParams,
    HyperDomain,
    InvalidParamsError,
    build_aug_dataset,
    desk_domain,
    inject,
    inject_batch,
    paper_domain,
    sample_params,
)

TYPES = list(AnomalyType)


def oracle_inject(x, a):
    """Loop-by-loop restatement of the window formulas."""
    K = len(x)
    out = [float(v) for v in x]
    l = math.floor(a.location * K)
    if a.anomaly_type is AnomalyType.EXTREMUM:
        out[l] = a.level
        return np.array(out)
    m = max(1, math.floor(a.length * K + 1e-9))
    stop = min(K, l + m)
    m = stop - l
    for t in range(l, stop):
        k = t - l
        if a.anomaly_type is AnomalyType.PLATFORM:
            out[t] = a.level
        elif a.anomaly_type is AnomalyType.MEAN_SHIFT:
            out[t] = x[t] + a.level
        elif a.anomaly_type is AnomalyType.AMPLITUDE:
            out[t] = x[t] * a.level
        elif a.anomaly_type is AnomalyType.TREND:
            out[t] = x[t] + a.level * k
        else:
            if m < 2:
                continue
            p = math.fmod(k * (1.0 + a.level), m)
            i = math.floor(p)
            f = p - i
            out[t] = (1 - f) * x[l + i % m] + f * x[l + (i + 1) % m]
    return np.array(out)


@st.composite
def series_and_params(draw):
    K = draw(st.integers(2, 64))
    t = draw(st.sampled_from(TYPES))
    x = np.array(draw(st.lists(st.floats(-10, 10), min_size=K, max_size=K)))
    loc = draw(st.floats(0.0, 0.999))
    length = draw(st.floats(1e-3, 1.0 - loc)) if t is not AnomalyType.EXTREMUM else 1.0 / K
    level = draw(st.floats(-5, 5))
    return x, AugParams(t, loc, length, level)


class TestExamples:
    def test_platform(self):
        a = AugParams("platform", 0.25, 0.5, 1.0)
        np.testing.assert_array_equal(inject(np.zeros(8), a), [0, 0, 1, 1, 1, 1, 0, 0])

    def test_trend(self):
        a = AugParams("trend", 0.0, 0.5, 0.1)
        np.testing.assert_allclose(inject(np.zeros(6), a), [0, 0.1, 0.2, 0, 0, 0], atol=1e-15)

    def test_extremum(self):
        a = AugParams("extremum", 0.4, 1 / 5, -3.0)
        np.testing.assert_array_equal(inject(np.zeros(5), a), [0, 0, -3, 0, 0])

    def test_frequency_shift_raises_dominant_frequency(self):
        K = 512
        x = np.sin(2 * np.pi * 8 * np.arange(K) / K)
        a = AugParams("frequency_shift", 0.25, 0.5, 1.0)
        lo, hi = a.window(K)

        def peak(v):
            return int(np.argmax(np.abs(np.fft.rfft(v - v.mean()))[1:]) + 1)

        assert peak(inject(x, a)[lo:hi]) > peak(x[lo:hi])

    def test_series_wrapper_preserved(self):
        s = Series(np.zeros(8))
        out = inject(s, AugParams("platform", 0.0, 0.25, 2.0))
        assert isinstance(out, Series)
        np.testing.assert_array_equal(out.values[:2], [2.0, 2.0])

    def test_input_not_mutated(self):
        x = np.zeros(8)
        inject(x, AugParams("platform", 0.0, 0.5, 1.0))
        assert not x.any()


class TestProperties:
    @settings(max_examples=1000, deadline=None)
    @given(series_and_params())
    def test_matches_oracle_and_is_local(self, xa):
        x, a = xa
        out = inject(x, a)
        lo, hi = a.window(len(x))
        outside = np.ones(len(x), bool)
        outside[lo:hi] = False
        np.testing.assert_array_equal(out[outside], x[outside])
        np.testing.assert_allclose(out, oracle_inject(x, a), rtol=0, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(series_and_params())
    def test_neutral_levels(self, xa):
        x, a = xa
        if a.anomaly_type not in NEUTRAL_LEVEL:
            return
        b = AugParams(a.anomaly_type, a.location, a.length, NEUTRAL_LEVEL[a.anomaly_type])
        np.testing.assert_array_equal(inject(x, b), x)

    def test_thousand_pairs_fast(self):
        import time

        rng = np.random.default_rng(0)
        t0 = time.perf_counter()
        for i in range(1000):
            t = TYPES[i % len(TYPES)]
            x = rng.normal(size=int(rng.integers(2, 300)))
            a = sample_params(desk_domain(t), rng)
            out = inject(x, a)
            lo, hi = a.window(len(x))
            assert np.array_equal(out[:lo], x[:lo]) and np.array_equal(out[hi:], x[hi:])
            np.testing.assert_allclose(out, oracle_inject(x, a), rtol=0, atol=1e-12)
        assert time.perf_counter() - t0 < 5.0


class TestValidation:
    def test_window_overflow(self):
        with pytest.raises(InvalidParamsError, match="exceeds"):
            AugParams("platform", 0.8, 0.5, 1.0)

    @pytest.mark.parametrize("loc", [-0.1, 1.0])
    def test_location_range(self, loc):
        with pytest.raises(InvalidParamsError):
            AugParams("mean_shift", loc, 0.1, 1.0)

    def test_unknown_type(self):
        with pytest.raises(ValueError, match="unknown anomaly type"):
            AugParams("wobble", 0.1, 0.1, 1.0)

    def test_aliases(self):
        assert AnomalyType.parse("Frequency-Shift") is AnomalyType.FREQUENCY_SHIFT
        assert AnomalyType.parse("spike") is AnomalyType.EXTREMUM

    def test_too_short(self):
        with pytest.raises(InvalidParamsError):
            inject(np.zeros(1), AugParams("platform", 0.0, 1.0, 1.0))

    def test_two_dimensional_rejected(self):
        with pytest.raises(InvalidParamsError):
            inject(np.zeros((2, 4)), AugParams("platform", 0.0, 0.5, 1.0))

    def test_empty_domain(self):
        with pytest.raises(ValueError):
            HyperDomain("platform", (0.1, 0.2), (0.3, 0.2), (-1, 1))

    def test_batch_shape_mismatch(self):
        with pytest.raises(InvalidParamsError):
            inject_batch(np.zeros((3, 8)), [AugParams("platform", 0.0, 0.5, 1.0)])


class TestSampling:
    def test_platform_level_uniform(self):
        rng = np.random.default_rng(0)
        dom = paper_domain("platform")
        lv = np.array([sample_params(dom, rng).level for _ in range(10_000)])
        assert lv.min() >= -1 and lv.max() <= 1
        # uniform on [-1, 1]: sd of the mean is sqrt(1/3 / n)
        assert abs(lv.mean()) < 3 * math.sqrt(1 / 3 / 10_000)

    def test_degenerate_interval(self):
        dom = desk_domain("platform").with_fixed(level=0.2)
        rng = np.random.default_rng(1)
        assert all(sample_params(dom, rng).level == 0.2 for _ in range(50))

    def test_deterministic(self):
        dom = desk_domain("trend")
        a = [sample_params(dom, np.random.default_rng(5)) for _ in range(2)]
        assert a[0] == a[1]

    @pytest.mark.parametrize("t", TYPES)
    def test_samples_inside_domain(self, t):
        dom = desk_domain(t)
        rng = np.random.default_rng(2)
        for _ in range(200):
            a = sample_params(dom, rng)
            assert dom.contains(a) or a.location < dom.location[0] + 1e-12
            a.window(256)

    def test_type_mismatch(self):
        with pytest.raises(ValueError):
            sample_params(desk_domain("platform"), np.random.default_rng(0), "trend")

    def test_build_aug_dataset(self):
        X = np.random.default_rng(0).normal(size=(5, 32))
        pairs = build_aug_dataset(X, desk_domain("mean_shift"), np.random.default_rng(1))
        assert len(pairs) == 5
        for x, (xa, a) in zip(X, pairs):
            np.testing.assert_array_equal(xa, inject(x, a))


    @pytest.mark.parametrize("t", TYPES)
    def test_aug_dataset_changes_series(self, t):
        X = np.random.default_rng(3).normal(size=(20, 64))
        dom = desk_domain(t, K=64)
        for x, (xa, a) in zip(X, build_aug_dataset(X, dom, np.random.default_rng(4))):
            assert not np.array_equal(x, xa)

    def test_aug_dataset_reproducible(self):
        X = np.random.default_rng(3).normal(size=(4, 64))
        a = build_aug_dataset(X, desk_domain("trend"), np.random.default_rng(9))
        b = build_aug_dataset(X, desk_domain("trend"), np.random.default_rng(9))
        assert all(np.array_equal(p[0], q[0]) and p[1] == q[1] for p, q in zip(a, b))


class TestDomains:
    def test_paper_physionet_normalised(self):
        d = paper_domain("platform")
        np.testing.assert_allclose(d.location, (100 / 2700, 2000 / 2700))
        np.testing.assert_allclose(d.length, (400 / 2700, 600 / 2700))
        assert d.level == (-1.0, 1.0)

    def test_paper_amplitude_and_trend(self):
        assert paper_domain("amplitude").level == (1.0, 6.0)
        assert paper_domain("trend").level == (-0.01, 0.01)
        assert paper_domain("extremum").level == (-15.0, 15.0)

    def test_missing_entry(self):
        with pytest.raises(ValueError):
            paper_domain("frequency_shift", "physionet")

    def test_normalize_unit_box(self):
        d = desk_domain("platform")
        np.testing.assert_allclose(d.normalize(d.lower()), 0.0)
        np.testing.assert_allclose(d.normalize(d.upper()), 1.0)
