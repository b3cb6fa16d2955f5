import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cepstral_tde.cepstrum import METHODS, build_cepstrogram
from cepstral_tde.harness import (
    AnalysisConfig,
    DelayEstimateSeries,
    GroundTruthTrack,
    derived_seed,
    mae,
    predicted_delays,
    run_estimators,
    subtraction_bias,
    sweep_snr,
    sweep_subtraction_factor,
)
from cepstral_tde.signal_core import SampledSignal, frame_signal
from cepstral_tde.transit import NoiseModel, TransitTrack, color_noise, mix_at_snr, straight_transit

ALL = list(METHODS)


def series(delays, config=None):
    d = np.asarray(delays, dtype=float)
    return DelayEstimateSeries("cepstrum", np.arange(d.size) * 0.1, d, np.ones(d.size), np.ones(d.size),
                               config or {})


def truth_of(delays):
    d = np.asarray(delays, dtype=float)
    return GroundTruthTrack(np.arange(d.size) * 0.1, d)


class TestPredictedDelays:
    def test_constant_range(self):
        tr = straight_transit(200.0, 1.0, 200.0)
        gt = predicted_delays(TransitTrack(np.arange(5) * 0.1, np.full(5, 200.0), 0.2, 200.0, 0.0))
        np.testing.assert_allclose(gt.true_delays_s * 1e6, 130.9, atol=0.05)
        assert len(predicted_delays(tr)) == 1

    def test_cpa_zero(self):
        gt = predicted_delays(TransitTrack(np.array([0.0]), np.array([0.0]), 0.0, 0.0, 1.0))
        assert gt.true_delays_s[0] == 2 / 1520

    def test_empty(self):
        gt = predicted_delays(TransitTrack(np.array([]), np.array([]), 0.0, 0.0, 1.0))
        assert len(gt) == 0


class TestMAE:
    def test_exact(self):
        t = np.linspace(200e-6, 1200e-6, 10)
        assert mae(series(t), truth_of(t)).mae_s == 0.0

    def test_constant_offset(self):
        t = np.linspace(200e-6, 1200e-6, 10)
        assert mae(series(t + 4e-6), truth_of(t)).mae_s == pytest.approx(4e-6, rel=1e-9)

    def test_symmetric_errors(self):
        t = np.full(10, 500e-6)
        est = t + np.where(np.arange(10) < 5, 10e-6, -10e-6)
        r = mae(series(est), truth_of(t))
        assert r.mae_s == pytest.approx(10e-6, rel=1e-9)
        assert r.frame_count == 10 and r.frames_excluded == 0

    def test_out_of_window_truth_excluded(self):
        t = np.array([20e-6, 500e-6, 3000e-6])
        r = mae(series([40e-6, 504e-6, 2000e-6]), truth_of(t))
        assert r.frame_count == 1 and r.frames_excluded == 2
        assert r.mae_s == pytest.approx(4e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mae(series([1e-4, 2e-4]), truth_of([1e-4]))


class TestRunEstimators:
    def test_empty_methods(self, short_transit):
        assert run_estimators(short_transit[0], short_transit[1], [], AnalysisConfig()) == []

    def test_unknown_method(self, short_transit):
        with pytest.raises(ValueError, match="unknown"):
            run_estimators(short_transit[0], short_transit[1], ["cepstrum", "music"])

    def test_truth_length_checked(self, short_transit):
        rec, truth, _ = short_transit
        bad = GroundTruthTrack(truth.frame_times_s[:-1], truth.true_delays_s[:-1])
        with pytest.raises(ValueError):
            run_estimators(rec, bad, ["cepstrum"])

    def test_series_shape(self, short_transit):
        rec, truth, _ = short_transit
        out = run_estimators(rec, None, ALL)
        assert [s.method for s in out] == ALL
        for s in out:
            assert len(s) == len(truth)
            assert np.all((s.delays_s >= 40e-6 - 1e-12) & (s.delays_s <= 2000e-6 + 1e-12))
            assert len(s.estimates) == len(truth)

    def test_noiseless_accuracy(self, medium_transit):
        rec, truth, _ = medium_transit
        reports = {s.method: mae(s, truth) for s in run_estimators(rec, truth, ALL, AnalysisConfig())}
        assert reports["cepstrum-subtracted"].mae_s < 10e-6
        assert np.isfinite(reports["autocorrelation"].mae_s)
        # Over-subtraction at the default factor still beats no subtraction.
        assert reports["cepstrum-subtracted"].mae_s < reports["cepstrum"].mae_s

    def test_workers_do_not_change_results(self, short_transit):
        rec, truth, _ = short_transit
        a = run_estimators(rec, truth, ALL, AnalysisConfig(workers=1))
        b = run_estimators(rec, truth, ALL, AnalysisConfig(workers=3))
        for x, y in zip(a, b):
            assert x.delays_s.tobytes() == y.delays_s.tobytes()
            assert x.peak_values.tobytes() == y.peak_values.tobytes()

    def test_trailing_mean_mode(self, short_transit):
        rec, truth, _ = short_transit
        full = run_estimators(rec, truth, ["cepstrum-subtracted"], AnalysisConfig(a=1.0))[0]
        trail = run_estimators(rec, truth, ["cepstrum-subtracted"], AnalysisConfig(a=1.0, mean_mode="trailing"))[0]
        assert trail.config["mean_mode"] == "trailing"
        assert mae(trail, truth).mae_s > mae(full, truth).mae_s

    @settings(max_examples=5)
    @given(st.floats(1e-3, 1e3))
    def test_amplitude_invariance(self, short_transit, g):
        rec, truth, _ = short_transit
        cfg = AnalysisConfig(a=1.0)
        base = [mae(s, truth).mae_s for s in run_estimators(rec, truth, ALL, cfg)]
        scaled = SampledSignal(g * rec.samples, rec.sample_rate_hz)
        assert [mae(s, truth).mae_s for s in run_estimators(scaled, truth, ALL, cfg)] == base


class TestSubtractionSweep:
    def test_zero_matches_plain(self, short_transit):
        rec, truth, _ = short_transit
        res = sweep_subtraction_factor(rec, truth, [0.0])
        plain = mae(run_estimators(rec, truth, ["cepstrum"])[0], truth)
        assert res.reports[(0.0, "cepstrum-subtracted")].mae_s == plain.mae_s

    def test_duplicates_and_order(self, short_transit):
        rec, truth, _ = short_transit
        with pytest.warns(UserWarning, match="duplicate"):
            a = sweep_subtraction_factor(rec, truth, [1.5, 0.0, 1.0, 1.0])
        b = sweep_subtraction_factor(rec, truth, [0.0, 1.0, 1.5])
        assert a.grid == (0.0, 1.0, 1.5)
        assert a.mae_us("cepstrum-subtracted").tolist() == b.mae_us("cepstrum-subtracted").tolist()

    def test_negative_factor(self, short_transit):
        with pytest.raises(ValueError):
            sweep_subtraction_factor(short_transit[0], short_transit[1], [-1.0, 1.0])

    def test_optimum_at_0db(self, medium_transit):
        rec, truth, _ = medium_transit
        noise = color_noise(NoiseModel.flat(seed=derived_seed(0, 0)), rec.duration_s)
        noisy = mix_at_snr(rec, noise, 0.0)
        grid = [0.0, 0.5, 1.0, 1.5, 2.0]
        res = sweep_subtraction_factor(noisy, truth, grid)
        curve = res.mae_us("cepstrum-subtracted")
        assert grid[int(np.argmin(curve))] >= 1.0
        assert curve[grid.index(1.5)] < curve[0]


@pytest.fixture(scope="module")
def sweep(short_transit):
    rec, truth, _ = short_transit
    return sweep_snr(rec, truth, NoiseModel.flat(), [-6, 0, 6, 30], ALL, AnalysisConfig(a=1.0),
                     repetitions=2, master_seed=5)


class TestSnrSweep:
    def test_pooled_counts(self, sweep, short_transit):
        n = len(short_transit[1])
        for (snr, m), r in sweep.reports.items():
            assert r.frame_count + r.frames_excluded == 2 * n
            assert r.parameters["snr_db"] == snr

    def test_high_snr_near_noiseless(self, sweep, short_transit):
        rec, truth, _ = short_transit
        clean = {s.method: mae(s, truth).mae_s * 1e6 for s in run_estimators(rec, truth, ALL, AnalysisConfig(a=1.0))}
        for m in ALL:
            assert sweep.reports[(30.0, m)].mae_s * 1e6 <= 2 * clean[m]

    def test_subtracted_improves_with_snr(self, sweep):
        curve = sweep.mae_us("cepstrum-subtracted")
        rises = np.diff(curve)
        assert np.sum(rises > 0) <= 1 and np.all(rises <= 5.0)

    def test_deterministic(self, sweep, short_transit):
        rec, truth, _ = short_transit
        again = sweep_snr(rec, truth, NoiseModel.flat(), [30, 0, -6, 6], ALL, AnalysisConfig(a=1.0, workers=2),
                          repetitions=2, master_seed=5)
        assert again.rows() == sweep.rows()

    def test_bad_repetitions(self, short_transit):
        with pytest.raises(ValueError):
            sweep_snr(short_transit[0], short_transit[1], NoiseModel.flat(), [0], ALL, repetitions=0)


class TestBias:
    def test_full_mean_improves(self, short_transit):
        rec, truth, _ = short_transit
        cg = build_cepstrogram(frame_signal(rec, 0.1, 0.1), max_quefrency_s=2e-3)
        rep = subtraction_bias(cg, truth, trailing_frames=10)
        assert rep.median_improvement > 1.0
        assert rep.segment_frames == 10
        assert rep.peak_ratio == pytest.approx(rep.trailing_mean_peak / rep.full_mean_peak)

    def test_empty_segment(self, short_transit):
        rec, truth, _ = short_transit
        cg = build_cepstrogram(frame_signal(rec, 0.1, 0.1), max_quefrency_s=2e-3)
        with pytest.raises(ValueError):
            subtraction_bias(cg, truth, segment=slice(5, 5))


class TestConfig:
    def test_snapshot_excludes_workers(self):
        snap = AnalysisConfig(workers=4).snapshot()
        assert "workers" not in snap and snap["a"] == 1.5

    @pytest.mark.parametrize("kw", [dict(mean_mode="median"), dict(q_min_s=3e-3), dict(a=-1.0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            AnalysisConfig(**kw)

    def test_derived_seed(self):
        assert derived_seed(0, 1, 2) == derived_seed(0, 1, 2)
        assert len({derived_seed(0, i, r) for i in range(5) for r in range(3)}) == 15
