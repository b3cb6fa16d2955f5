import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cepstral_tde.cepstrum import (
    MeanCepstrum,
    PowerCepstrum,
    RahmonicModel,
    SubtractionConfig,
    build_cepstrogram,
    cepstrum_subtract,
    estimate_delay_autocorr,
    mean_cepstrum,
    pick_delay,
    power_cepstrum,
    rahmonic_strength,
    trailing_mean_cepstra,
)
from cepstral_tde.signal_core import (
    LogPowerSpectrum,
    SampledSignal,
    autocorrelation,
    frame_signal,
    log_power_spectrum,
    power_spectrum,
)

from .helpers import FS, echo_signal

STEP = 1 / FS


def cepstrum_of(x, window="hann") -> PowerCepstrum:
    return power_cepstrum(log_power_spectrum(power_spectrum(x, window, sample_rate_hz=FS)))


def brute_force_peak(values, step, q_min, q_max) -> float:
    best_q, best_v = None, -np.inf
    for k, v in enumerate(values):
        q = k * step
        if q_min - 1e-12 <= q <= q_max + 1e-12 and v > best_v:
            best_q, best_v = q, v
    return best_q


class TestRahmonicStrength:
    @pytest.mark.parametrize("n, alpha, expected", [(1, 1.0, 2.0), (2, 1.0, -1.0), (3, 0.5, 2 / 3 * 0.125)])
    def test_examples(self, n, alpha, expected):
        assert rahmonic_strength(n, alpha) == pytest.approx(expected, rel=1e-15)

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            rahmonic_strength(0, 0.5)

    @given(st.floats(1e-3, 1.0))
    def test_model_invariants(self, alpha):
        a = RahmonicModel(alpha, 224e-6).strengths
        vals = np.array([a[n] for n in sorted(a)])
        assert np.all(np.sign(vals[:-1]) == -np.sign(vals[1:]))
        assert np.all(np.abs(vals[1:]) < np.abs(vals[:-1]))

    def test_model_rejects_alpha(self):
        with pytest.raises(ValueError):
            RahmonicModel(0.0, 1e-4)


class TestPowerCepstrum:
    def test_constant_log_spectrum(self):
        nfft = 64
        c = power_cepstrum(LogPowerSpectrum(np.full(nfft // 2 + 1, 2.5), FS / nfft, nfft, False))
        assert c.values[0] == pytest.approx(2.5, abs=1e-14)
        np.testing.assert_allclose(c.values[1:], 0.0, atol=1e-14)
        assert c.quefrency_step_s == pytest.approx(STEP)

    @settings(max_examples=50)
    @given(arrays(np.float64, st.integers(16, 256), elements=st.floats(-1e3, 1e3)))
    def test_dc_is_log_mean(self, x):
        lps = log_power_spectrum(power_spectrum(x))
        full = np.concatenate([lps.values, lps.values[-2:0:-1]])
        assert power_cepstrum(lps).values[0] == pytest.approx(full.mean(), rel=1e-9, abs=1e-9)

    def test_echo_rahmonics(self, echo_frame):
        c = cepstrum_of(echo_frame).values
        for n, k in enumerate((56, 112, 168), start=1):
            expected = rahmonic_strength(n, 1.0) / 2
            assert c[k] == pytest.approx(expected, rel=0.05)
            window = c[k - 3:k + 4]
            assert np.abs(c[k]) == np.abs(window).max()

    def test_no_echo_no_rahmonic(self):
        c = cepstrum_of(echo_signal(alpha=0.0).samples).values
        band = np.abs(c[10:501])
        assert np.abs(c[56]) < 5 * np.median(band)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            power_cepstrum(LogPowerSpectrum(np.array([0.0, np.inf, 0.0]), 1.0, 4, False))


class TestCepstrogram:
    def test_rows_and_single_frame(self, echo_frame):
        sig = SampledSignal(np.concatenate([echo_frame] * 20), FS)
        cg = build_cepstrogram(frame_signal(sig, 0.1, 0.1))
        assert len(cg) == 20 and cg.values.shape[1] == 32768 // 2 + 1
        np.testing.assert_array_equal(cg.values[3], cepstrum_of(echo_frame).values[: cg.n_quefrency])

    def test_full_transit_row_count(self):
        sig = SampledSignal(np.zeros(2700 * 2500), 25_000.0)
        assert len(build_cepstrogram(frame_signal(sig, 0.1, 0.1), max_quefrency_s=0.002)) == 2700

    def test_empty(self):
        cg = build_cepstrogram(frame_signal(SampledSignal(np.zeros(100), FS), 0.1, 0.1))
        assert cg.values.shape[0] == 0

    def test_workers_bit_identical(self, short_transit):
        rec = short_transit[0]
        frames = frame_signal(rec, 0.1, 0.1)
        one = build_cepstrogram(frames, max_quefrency_s=2e-3, workers=1)
        three = build_cepstrogram(frames, max_quefrency_s=2e-3, workers=3)
        assert one.values.tobytes() == three.values.tobytes()


class TestMeanAndSubtraction:
    @staticmethod
    def cg_from(rows):
        from cepstral_tde.cepstrum import Cepstrogram

        rows = np.asarray(rows, dtype=float)
        return Cepstrogram(rows, np.arange(rows.shape[0]) * 0.1, STEP, 2 * (rows.shape[1] - 1))

    def test_identical_rows(self):
        v = np.random.default_rng(0).standard_normal(33)
        assert np.array_equal(mean_cepstrum(self.cg_from([v] * 7)).values, v)

    def test_opposite_rows(self):
        v = np.random.default_rng(1).standard_normal(33)
        assert not mean_cepstrum(self.cg_from([v, -v])).values.any()

    def test_empty_selection(self):
        with pytest.raises(ValueError):
            mean_cepstrum(self.cg_from(np.ones((3, 5))), [])

    def test_matches_arithmetic_mean(self):
        rows = np.random.default_rng(2).standard_normal((50, 9))
        cg = self.cg_from(rows)
        m = mean_cepstrum(cg).values
        np.testing.assert_allclose(m, rows.mean(axis=0), rtol=0, atol=1e-15)
        assert m.tobytes() == mean_cepstrum(cg, range(50)).values.tobytes()
        np.testing.assert_allclose(mean_cepstrum(cg, slice(10, 20)).values, rows[10:20].mean(axis=0), atol=1e-15)

    def test_trailing_mean(self):
        rows = np.arange(12.0).reshape(6, 2)
        tm = trailing_mean_cepstra(self.cg_from(rows), 3)
        np.testing.assert_array_equal(tm[0], rows[0])
        np.testing.assert_allclose(tm[5], rows[3:6].mean(axis=0))

    def test_factor_zero_is_identity(self):
        c = PowerCepstrum(np.random.default_rng(3).standard_normal(17), STEP)
        out = cepstrum_subtract(c, MeanCepstrum(np.ones(17), 4), SubtractionConfig(0.0))
        assert out.values.tobytes() == c.values.tobytes()

    def test_factor_one_on_mean(self):
        v = np.random.default_rng(4).standard_normal(17)
        out = cepstrum_subtract(PowerCepstrum(v, STEP), MeanCepstrum(v.copy(), 1), SubtractionConfig(1.0))
        assert not out.values.any()

    def test_vector_factor(self):
        c = PowerCepstrum(np.ones(4), STEP)
        out = cepstrum_subtract(c, MeanCepstrum(np.ones(4), 1), SubtractionConfig(np.array([0, 1, 2, 0.5])))
        np.testing.assert_array_equal(out.values, [1, 0, -1, 0.5])
        with pytest.raises(ValueError):
            cepstrum_subtract(c, MeanCepstrum(np.ones(4), 1), SubtractionConfig(np.ones(3)))

    def test_axis_mismatch(self):
        with pytest.raises(ValueError):
            cepstrum_subtract(PowerCepstrum(np.ones(4), STEP), MeanCepstrum(np.ones(5), 1))

    @pytest.mark.parametrize("bad", [-0.1, np.nan, [[1.0]]])
    def test_bad_factor(self, bad):
        with pytest.raises(ValueError):
            SubtractionConfig(bad)


class TestPicking:
    def test_echo_delay(self, echo_frame):
        est = pick_delay(cepstrum_of(echo_frame), 40e-6, 2000e-6)
        assert abs(est.delay_s - 224e-6) <= STEP
        assert est.search_window_s == (40e-6, 2000e-6)

    def test_late_window_picks_third_rahmonic(self, echo_frame):
        c = cepstrum_of(echo_frame)
        est = pick_delay(c, 500e-6, 2000e-6)
        assert est.delay_s == pytest.approx(brute_force_peak(c.values, c.quefrency_step_s, 500e-6, 2000e-6))
        assert abs(est.delay_s - 672e-6) <= STEP

    def test_tie_goes_to_q_min(self):
        est = pick_delay(PowerCepstrum(np.ones(1000), STEP), 40e-6, 2000e-6)
        assert est.delay_s == pytest.approx(40e-6)

    @pytest.mark.parametrize("window", [(41e-6, 43e-6), (100e-6, 50e-6), (0.0, 1e-4), (40e-6, 1.0)])
    def test_bad_window(self, window):
        with pytest.raises(ValueError):
            pick_delay(PowerCepstrum(np.ones(1000), STEP), *window)

    @settings(max_examples=100)
    @given(arrays(np.float64, 600, elements=st.floats(-10, 10)), st.integers(10, 300), st.integers(1, 280))
    def test_estimate_invariants(self, values, lo, width):
        c = PowerCepstrum(values, STEP)
        q_min, q_max = lo * STEP, (lo + width) * STEP
        est = pick_delay(c, q_min, q_max)
        assert q_min - 1e-15 <= est.delay_s <= q_max + 1e-15
        k = est.delay_s / STEP
        assert abs(k - round(k)) < 1e-9
        assert est.delay_s == pytest.approx(brute_force_peak(values, STEP, q_min, q_max))

    @settings(max_examples=20, deadline=None)
    @given(st.floats(1e-4, 1e4))
    def test_amplitude_invariance(self, echo_frame, g):
        base = pick_delay(cepstrum_of(echo_frame))
        scaled = pick_delay(cepstrum_of(g * echo_frame))
        assert scaled.delay_s == base.delay_s

    def test_rahmonic_ratio(self, echo_frame):
        c = cepstrum_of(echo_frame).values
        assert abs(c[112] / c[56]) == pytest.approx(0.5, rel=0.15)


class TestAutocorrelationEstimate:
    def test_echo(self, echo_frame):
        est = estimate_delay_autocorr(autocorrelation(echo_frame, 2e-3, FS))
        assert abs(est.delay_s - 224e-6) <= STEP
        assert est.method == "autocorrelation"

    def test_periodic_sine(self):
        t = np.arange(25_000) / FS
        x = np.sin(2 * np.pi * t / 100e-6)
        est = estimate_delay_autocorr(autocorrelation(x, 2e-3, FS))
        assert est.delay_s == pytest.approx(100e-6)

    def test_no_echo_is_insignificant(self, echo_frame):
        white = np.random.default_rng(9).standard_normal(25_000)
        noise = estimate_delay_autocorr(autocorrelation(white, 2e-3, FS))
        echo = estimate_delay_autocorr(autocorrelation(echo_frame, 2e-3, FS))
        assert noise.significance < 6 < echo.significance
