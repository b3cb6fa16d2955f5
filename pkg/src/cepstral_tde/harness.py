"""Per-frame delay estimation against ground truth, MAE, and parameter sweeps.

Three estimators are compared frame by frame: the plain power cepstrum, the
cepstrum after mean subtraction, and the autocorrelation. MAE pools every
frame whose true delay lies inside the search window; frames outside it are
counted but not scored.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .cepstrum import (
    DEFAULT_Q_MAX_S,
    DEFAULT_Q_MIN_S,
    METHODS,
    Cepstrogram,
    DelayEstimate,
    SubtractionConfig,
    build_cepstrogram,
    mean_cepstrum,
    pick_rows,
    subtract_rows,
    trailing_mean_cepstra,
)
from .signal_core import DEFAULT_FLOOR_REL, FrameSequence, SampledSignal, _autocorr_rows, frame_signal
from .transit import (
    DEFAULT_BAND_HZ,
    EnvironmentModel,
    NoiseModel,
    TransitTrack,
    color_noise,
    multipath_delays,
    snr_gain,
)

_AC_CHUNK_ROWS = 16


@dataclass(frozen=True)
class AnalysisConfig:
    frame_len_s: float = 0.1
    window: str = "hann"
    nfft: int | None = None
    floor_rel: float = DEFAULT_FLOOR_REL
    q_min_s: float = DEFAULT_Q_MIN_S
    q_max_s: float = DEFAULT_Q_MAX_S
    a: float = 1.5
    mean_mode: str = "full"
    """``full``: one mean over the whole recording. ``trailing``: running mean
    over the last ``trailing_frames`` frames."""
    trailing_frames: int = 20
    workers: int = 1

    def __post_init__(self):
        if self.mean_mode not in ("full", "trailing"):
            raise ValueError(f"mean_mode must be 'full' or 'trailing', got {self.mean_mode!r}")
        if not 0 < self.q_min_s < self.q_max_s:
            raise ValueError("need 0 < q_min_s < q_max_s")
        if self.a < 0:
            raise ValueError("subtraction factor must be nonnegative")

    def snapshot(self) -> dict:
        """Parameters that affect results (worker count excluded)."""
        d = asdict(self)
        d.pop("workers")
        return d


@dataclass(frozen=True)
class GroundTruthTrack:
    frame_times_s: NDArray[np.float64]
    true_delays_s: NDArray[np.float64]

    def __post_init__(self):
        if np.shape(self.frame_times_s) != np.shape(self.true_delays_s):
            raise ValueError("frame times and delays differ in length")

    def __len__(self) -> int:
        return len(self.true_delays_s)


@dataclass(frozen=True)
class DelayEstimateSeries:
    method: str
    frame_times_s: NDArray[np.float64]
    delays_s: NDArray[np.float64]
    peak_values: NDArray[np.float64]
    significance: NDArray[np.float64]
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.delays_s)

    @property
    def estimates(self) -> list[DelayEstimate]:
        window = (self.config.get("q_min_s", DEFAULT_Q_MIN_S), self.config.get("q_max_s", DEFAULT_Q_MAX_S))
        return [DelayEstimate(float(d), float(p), window, self.method, float(s))
                for d, p, s in zip(self.delays_s, self.peak_values, self.significance)]


@dataclass(frozen=True)
class MAEReport:
    method: str
    mae_s: float
    frame_count: int
    frames_excluded: int
    parameters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SweepResult:
    variable: str
    grid: tuple[float, ...]
    reports: dict[tuple[float, str], MAEReport]

    def methods(self) -> list[str]:
        seen: list[str] = []
        for _, m in self.reports:
            if m not in seen:
                seen.append(m)
        return seen

    def mae_us(self, method: str) -> NDArray[np.float64]:
        return np.array([self.reports[(g, method)].mae_s * 1e6 for g in self.grid])

    def rows(self) -> list[tuple[float, str, float, int, int]]:
        """``(grid_value, method, mae_us, frames_used, frames_excluded)`` per point."""
        out = []
        for g in self.grid:
            for m in self.methods():
                r = self.reports[(g, m)]
                out.append((g, m, r.mae_s * 1e6, r.frame_count, r.frames_excluded))
        return out


@dataclass(frozen=True)
class BiasReport:
    """Effect of the mean-estimation span on the subtracted rahmonic peak."""

    median_improvement: float
    """Median over frames of (peak/median ratio after full-mean subtraction)
    divided by (the same ratio without subtraction)."""
    full_mean_peak: float
    trailing_mean_peak: float
    segment_frames: int

    @property
    def peak_ratio(self) -> float:
        return self.trailing_mean_peak / self.full_mean_peak


def predicted_delays(track: TransitTrack, env: EnvironmentModel = EnvironmentModel()) -> GroundTruthTrack:
    """Geometric multipath delay at each logged track time."""
    return GroundTruthTrack(track.times_s.copy(), multipath_delays(track.ground_ranges_m, env))


def _chunked(n_rows: int, chunk: int, workers: int, fn: Callable[[int, int], None]) -> None:
    starts = range(0, n_rows, chunk)
    if workers > 1 and n_rows > chunk:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda s: fn(s, min(s + chunk, n_rows)), starts))
    else:
        for s in starts:
            fn(s, min(s + chunk, n_rows))


def autocorrelation_rows(frames: FrameSequence, max_lag_s: float, workers: int = 1) -> NDArray[np.float64]:
    """Biased autocorrelation of every frame for lags ``0..max_lag``."""
    n_lags = int(math.floor(max_lag_s * frames.sample_rate_hz + 1e-9)) + 1
    out = np.empty((len(frames), n_lags))

    def work(a: int, b: int) -> None:
        out[a:b] = _autocorr_rows(frames.frames[a:b], n_lags)

    _chunked(len(frames), _AC_CHUNK_ROWS, workers, work)
    return out


@dataclass
class _Features:
    frames: FrameSequence
    cepstrogram: Cepstrogram | None = None
    autocorr: NDArray[np.float64] | None = None
    _means: dict = field(default_factory=dict)

    def mean_rows(self, cfg: AnalysisConfig) -> NDArray[np.float64]:
        key = (cfg.mean_mode, cfg.trailing_frames)
        if key not in self._means:
            cg = self.cepstrogram
            if cfg.mean_mode == "full":
                self._means[key] = mean_cepstrum(cg).values
            else:
                self._means[key] = trailing_mean_cepstra(cg, cfg.trailing_frames)
        return self._means[key]


def _frames_for(recording: SampledSignal, cfg: AnalysisConfig) -> FrameSequence:
    return frame_signal(recording, cfg.frame_len_s, cfg.frame_len_s)


def _features(frames: FrameSequence, cfg: AnalysisConfig, methods: Iterable[str]) -> _Features:
    methods = set(methods)
    feats = _Features(frames)
    if methods & {"cepstrum", "cepstrum-subtracted"}:
        feats.cepstrogram = build_cepstrogram(
            frames, cfg.window, cfg.nfft, cfg.floor_rel,
            max_quefrency_s=cfg.q_max_s, workers=cfg.workers,
        )
    if "autocorrelation" in methods:
        feats.autocorr = autocorrelation_rows(frames, cfg.q_max_s, cfg.workers)
    return feats


def _check_methods(methods: Sequence[str]) -> None:
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")


def _series(feats: _Features, method: str, cfg: AnalysisConfig) -> DelayEstimateSeries:
    fs = feats.frames.sample_rate_hz
    if method == "autocorrelation":
        rows = feats.autocorr
    elif method == "cepstrum":
        rows = feats.cepstrogram.values
    else:
        rows = subtract_rows(feats.cepstrogram.values, feats.mean_rows(cfg), SubtractionConfig(cfg.a))
    k, peak, sig = pick_rows(rows, 1.0 / fs, cfg.q_min_s, cfg.q_max_s)
    snap = cfg.snapshot()
    if method != "cepstrum-subtracted":
        snap.pop("a")
    return DelayEstimateSeries(method, np.asarray(feats.frames.start_times_s, dtype=float),
                               k / fs, peak, sig, snap)


def run_estimators(recording: SampledSignal, truth: GroundTruthTrack | None,
                   methods: Sequence[str], cfg: AnalysisConfig = AnalysisConfig()
                   ) -> list[DelayEstimateSeries]:
    """One :class:`DelayEstimateSeries` per requested method, in request order.

    The subtracted method computes its mean cepstrum from the whole
    recording before estimating any frame (or a trailing mean if
    ``cfg.mean_mode == "trailing"``). ``truth`` may be ``None`` when no
    ground truth is available; otherwise its length must match the number of
    frames.
    """
    _check_methods(methods)
    if not methods:
        return []
    frames = _frames_for(recording, cfg)
    if truth is not None and len(truth) != len(frames):
        raise ValueError(f"recording has {len(frames)} frames but truth has {len(truth)}")
    feats = _features(frames, cfg, methods)
    return [_series(feats, m, cfg) for m in methods]


def _abs_errors(series: DelayEstimateSeries, truth: GroundTruthTrack
                ) -> tuple[NDArray[np.float64], int]:
    if len(series) != len(truth):
        raise ValueError(f"series has {len(series)} frames but truth has {len(truth)}")
    q_min = series.config.get("q_min_s", DEFAULT_Q_MIN_S)
    q_max = series.config.get("q_max_s", DEFAULT_Q_MAX_S)
    t = np.asarray(truth.true_delays_s)
    inside = (t >= q_min) & (t <= q_max)
    return np.abs(series.delays_s[inside] - t[inside]), int((~inside).sum())


def mae(series: DelayEstimateSeries, truth: GroundTruthTrack) -> MAEReport:
    """Mean absolute delay error over the frames whose truth is in the search window."""
    err, excluded = _abs_errors(series, truth)
    value = float(err.mean()) if err.size else float("nan")
    return MAEReport(series.method, value, int(err.size), excluded, dict(series.config))


def _clean_grid(grid: Iterable[float], name: str) -> tuple[float, ...]:
    values = [float(g) for g in grid]
    if not values:
        raise ValueError(f"{name} grid is empty")
    unique = sorted(set(values))
    if len(unique) != len(values):
        warnings.warn(f"duplicate {name} grid values removed", stacklevel=3)
    return tuple(unique)


def sweep_subtraction_factor(recording: SampledSignal, truth: GroundTruthTrack, grid: Iterable[float],
                             cfg: AnalysisConfig = AnalysisConfig()) -> SweepResult:
    """MAE of the subtracted-cepstrum estimator for each factor in ``grid``.

    The cepstrogram and its mean are computed once and reused.
    """
    values = _clean_grid(grid, "subtraction factor")
    if values[0] < 0:
        raise ValueError("subtraction factors must be nonnegative")
    frames = _frames_for(recording, cfg)
    if len(truth) != len(frames):
        raise ValueError(f"recording has {len(frames)} frames but truth has {len(truth)}")
    feats = _features(frames, cfg, ["cepstrum-subtracted"])
    reports = {}
    for a in values:
        series = _series(feats, "cepstrum-subtracted", replace(cfg, a=a))
        reports[(a, "cepstrum-subtracted")] = mae(series, truth)
    return SweepResult("a", values, reports)


def derived_seed(master_seed: int, *path: int) -> int:
    """Stable 32-bit seed for a grid point, independent of evaluation order."""
    return int(np.random.SeedSequence([int(master_seed), *map(int, path)]).generate_state(1)[0])


def sweep_snr(clean_recording: SampledSignal, truth: GroundTruthTrack, noise_model: NoiseModel,
              snr_grid_db: Iterable[float], methods: Sequence[str],
              cfg: AnalysisConfig = AnalysisConfig(), *, repetitions: int = 1, master_seed: int = 0,
              band_hz: tuple[float, float] = DEFAULT_BAND_HZ) -> SweepResult:
    """MAE per method at each SNR, pooled over ``repetitions`` noise draws.

    Noise for grid point ``i`` and repetition ``r`` is drawn from
    ``noise_model`` with seed ``derived_seed(master_seed, i, r)``.
    """
    _check_methods(methods)
    values = _clean_grid(snr_grid_db, "SNR")
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    frames = _frames_for(clean_recording, cfg)
    if len(truth) != len(frames):
        raise ValueError(f"recording has {len(frames)} frames but truth has {len(truth)}")
    duration = len(clean_recording) / clean_recording.sample_rate_hz

    reports = {}
    for i, snr in enumerate(values):
        errs: dict[str, list[NDArray]] = {m: [] for m in methods}
        excluded: dict[str, int] = {m: 0 for m in methods}
        snaps: dict[str, dict] = {}
        for r in range(repetitions):
            noise = color_noise(noise_model.with_seed(derived_seed(master_seed, i, r)), duration,
                                clean_recording.sample_rate_hz)
            g = snr_gain(clean_recording, noise, snr, band_hz)
            mixed = SampledSignal(clean_recording.samples + g * noise.samples, clean_recording.sample_rate_hz)
            del noise
            for s in run_estimators(mixed, truth, methods, cfg):
                e, x = _abs_errors(s, truth)
                errs[s.method].append(e)
                excluded[s.method] += x
                snaps[s.method] = s.config
            del mixed
        for m in methods:
            pooled = np.concatenate(errs[m])
            value = float(pooled.mean()) if pooled.size else float("nan")
            params = dict(snaps[m], snr_db=snr, repetitions=repetitions, master_seed=master_seed)
            reports[(snr, m)] = MAEReport(m, value, int(pooled.size), excluded[m], params)
    return SweepResult("snr_db", values, reports)


def _true_bins(delays_s: NDArray, step_s: float) -> NDArray[np.intp]:
    return np.rint(np.asarray(delays_s) / step_s).astype(np.intp)


def subtraction_bias(cg: Cepstrogram, truth: GroundTruthTrack, segment: slice | None = None,
                     cfg: AnalysisConfig = AnalysisConfig(), *, trailing_frames: int = 20) -> BiasReport:
    """Compare full-recording and short-span mean subtraction at the true delay.

    ``median_improvement`` is computed over every frame whose truth lies in
    the search window. The peak comparison uses ``segment`` (the last
    ``trailing_frames`` frames by default): the rahmonic magnitude at the
    true-delay bin after subtracting the full-recording mean versus after
    subtracting the mean of the segment itself.
    """
    if len(truth) != len(cg):
        raise ValueError("truth and cepstrogram differ in length")
    step = cg.quefrency_step_s
    lo = int(math.ceil(cfg.q_min_s / step - 1e-9))
    hi = int(math.floor(cfg.q_max_s / step + 1e-9))
    if hi >= cg.n_quefrency:
        raise ValueError("cepstrogram is truncated below the search window")
    kt = _true_bins(truth.true_delays_s, step)
    inside = (kt >= lo) & (kt <= hi)
    rows = np.arange(len(cg))

    full = mean_cepstrum(cg).values
    plain = cg.values
    sub = cg.values - full

    def ratio(v: NDArray) -> NDArray:
        med = np.median(np.abs(v[:, lo:hi + 1]), axis=1)
        return np.abs(v[rows, np.minimum(kt, cg.n_quefrency - 1)]) / med

    improvement = float(np.median((ratio(sub) / ratio(plain))[inside]))

    if segment is None:
        segment = slice(len(cg) - trailing_frames, len(cg))
    seg = rows[segment]
    seg = seg[inside[seg]]
    if seg.size == 0:
        raise ValueError("segment holds no frames with truth inside the search window")
    seg_mean = mean_cepstrum(cg, seg).values
    full_peak = float(np.median(np.abs(sub[seg, kt[seg]])))
    seg_peak = float(np.median(np.abs(plain[seg, kt[seg]] - seg_mean[kt[seg]])))
    return BiasReport(improvement, full_peak, seg_peak, int(seg.size))
