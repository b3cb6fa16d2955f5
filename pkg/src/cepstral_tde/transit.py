"""Synthetic hydrophone recordings of a vessel transiting a fixed sensor.

Isovelocity shallow water, one specular seafloor reflection (image source
below a flat bottom), broadband Gaussian source noise and optional coloured
ambient noise. The echo delay is frozen within each analysis frame.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import fft as sp_fft
from scipy.signal import get_window, oaconvolve

from .signal_core import SampledSignal

DEFAULT_SAMPLE_RATE_HZ = 250_000.0
DEFAULT_BAND_HZ = (0.0, 90_000.0)
FRACTIONAL_DELAY_TAPS = 64
COLOR_FIR_TAPS = 8191
_NOISE_BLOCK = 1 << 18
_BAND_POWER_NPERSEG = 4096


@dataclass(frozen=True)
class EnvironmentModel:
    sound_speed_mps: float = 1520.0
    water_depth_m: float = 20.0
    source_height_m: float = 20.0
    """Height of the source above the seafloor (a surface vessel sits at the depth)."""
    receiver_height_m: float = 1.0

    def __post_init__(self):
        if not self.sound_speed_mps > 0 or not self.water_depth_m > 0:
            raise ValueError("sound speed and water depth must be positive")
        if not 0 < self.receiver_height_m < self.source_height_m <= self.water_depth_m:
            raise ValueError(
                "need 0 < receiver height < source height <= water depth, got "
                f"{self.receiver_height_m}, {self.source_height_m}, {self.water_depth_m}"
            )


@dataclass(frozen=True)
class PathGeometry:
    ground_range_m: float
    direct_len_m: float
    indirect_len_m: float
    delta_l_m: float
    delay_s: float


@dataclass(frozen=True)
class TransitTrack:
    times_s: NDArray[np.float64]
    ground_ranges_m: NDArray[np.float64]
    cpa_time_s: float
    cpa_range_m: float
    speed_mps: float

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=np.float64)
        r = np.asarray(self.ground_ranges_m, dtype=np.float64)
        if t.shape != r.shape or t.ndim != 1:
            raise ValueError("times and ranges must be 1-D sequences of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("track times must be strictly increasing")
        if np.any(r < 0):
            raise ValueError("ground ranges must be nonnegative")
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "ground_ranges_m", r)

    def __len__(self) -> int:
        return self.times_s.size

    @property
    def step_s(self) -> float:
        if self.times_s.size < 2:
            return 0.1
        return float(np.median(np.diff(self.times_s)))


@dataclass(frozen=True)
class EchoModel:
    alpha: float
    tau_beta_s: float

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.tau_beta_s > 0:
            raise ValueError(f"tau_beta_s must be positive, got {self.tau_beta_s}")


@dataclass(frozen=True)
class NoiseModel:
    """Reference one-sided PSD (units**2 / Hz) tabulated on ascending frequencies.

    The PSD is linearly interpolated between table points and taken as zero
    above the last one.
    """

    freqs_hz: NDArray[np.float64]
    psd: NDArray[np.float64]
    seed: int = 0

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=np.float64)
        p = np.asarray(self.psd, dtype=np.float64)
        if f.ndim != 1 or f.shape != p.shape or f.size < 2:
            raise ValueError("PSD table needs at least two (freq, psd) points")
        if np.any(np.diff(f) <= 0):
            raise ValueError("PSD frequencies must be strictly ascending")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("PSD values must be finite and nonnegative")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "psd", p)

    @classmethod
    def flat(cls, band_hz: tuple[float, float] = DEFAULT_BAND_HZ, level: float = 1.0,
             seed: int = 0) -> NoiseModel:
        return cls(np.array(band_hz, dtype=float), np.full(2, float(level)), seed)

    def with_seed(self, seed: int) -> NoiseModel:
        return NoiseModel(self.freqs_hz, self.psd, int(seed))

    def psd_at(self, f: ArrayLike) -> NDArray[np.float64]:
        f = np.asarray(f, dtype=float)
        out = np.interp(f, self.freqs_hz, self.psd)
        out[(f < self.freqs_hz[0]) | (f > self.freqs_hz[-1])] = 0.0
        return out


def multipath_delays(ground_ranges_m: ArrayLike, env: EnvironmentModel = EnvironmentModel()
                     ) -> NDArray[np.float64]:
    """Vectorised bottom-bounce delay for an array of ground ranges."""
    d = np.asarray(ground_ranges_m, dtype=np.float64)
    a = env.source_height_m + env.receiver_height_m
    b = env.source_height_m - env.receiver_height_m
    direct = np.hypot(d, b)
    indirect = np.hypot(d, a)
    # a**2 - b**2 over the sum avoids cancellation at long range.
    delta_l = (4.0 * env.source_height_m * env.receiver_height_m) / (indirect + direct)
    return delta_l / env.sound_speed_mps


def multipath_delay(ground_range_m: float, env: EnvironmentModel = EnvironmentModel()) -> PathGeometry:
    """Path lengths and delay of the seafloor-reflected arrival.

    The reflected path is the straight line from the receiver to the source's
    image mirrored through the seafloor.

    >>> round(multipath_delay(0.0).delay_s * 1e6, 1)
    1315.8
    """
    if ground_range_m < 0:
        raise ValueError(f"ground range must be nonnegative, got {ground_range_m}")
    d = float(ground_range_m)
    a = env.source_height_m + env.receiver_height_m
    b = env.source_height_m - env.receiver_height_m
    direct = math.hypot(d, b)
    indirect = math.hypot(d, a)
    delay = float(multipath_delays(d, env))
    return PathGeometry(ground_range_m=d, direct_len_m=direct, indirect_len_m=indirect,
                        delta_l_m=delay * env.sound_speed_mps, delay_s=delay)


def straight_transit(cpa_range_m: float, speed_mps: float, start_range_m: float,
                     step_s: float = 0.1) -> TransitTrack:
    """Constant-speed straight-line pass from ``start_range_m`` in and back out.

    Samples are placed symmetrically about the closest point of approach, so
    the first sample may sit up to one step inside ``start_range_m``.
    """
    if not speed_mps > 0 or not step_s > 0:
        raise ValueError("speed and step must be positive")
    if not start_range_m >= cpa_range_m >= 0:
        raise ValueError("need start_range >= cpa_range >= 0")
    leg_s = math.sqrt(start_range_m**2 - cpa_range_m**2) / speed_mps
    n = int(math.floor(2.0 * leg_s / step_s + 1e-9)) + 1
    times = np.arange(n) * step_s
    cpa_time = (n - 1) * step_s / 2.0
    along = speed_mps * (times - cpa_time)
    ranges = np.hypot(cpa_range_m, along)
    return TransitTrack(times, ranges, cpa_time, float(cpa_range_m), float(speed_mps))


def _check_band(band_hz: tuple[float, float], sample_rate_hz: float) -> tuple[float, float]:
    lo, hi = float(band_hz[0]), float(band_hz[1])
    if hi > sample_rate_hz / 2 * (1 + 1e-12):
        raise ValueError(f"band upper edge {hi} Hz exceeds Nyquist {sample_rate_hz / 2} Hz")
    if not 0 <= lo < hi:
        raise ValueError(f"invalid band {band_hz}")
    return lo, hi


def _band_limited(n: int, sample_rate_hz: float, band: tuple[float, float],
                  rng: np.random.Generator) -> NDArray[np.float64]:
    lo, hi = band
    m = sp_fft.next_fast_len(n, real=True)
    spec = sp_fft.rfft(rng.standard_normal(m))
    f = sp_fft.rfftfreq(m, 1.0 / sample_rate_hz)
    keep = (f >= lo) & (f <= hi) & (f > 0)
    spec[~keep] = 0.0
    # Unit expected variance for any band.
    scale = math.sqrt(m / max(1, 2 * int(keep.sum())))
    return sp_fft.irfft(spec, n=m)[:n] * scale


def synth_source_noise(duration_s: float, sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
                       band_hz: tuple[float, float] = DEFAULT_BAND_HZ, seed: int = 0
                       ) -> SampledSignal:
    """Zero-mean, unit-variance Gaussian noise with a brick-wall band limit.

    The sharp upper edge mimics a receiver anti-alias filter; it is what puts
    strong, frame-independent structure into the low-quefrency cepstrum.
    """
    band = _check_band(band_hz, sample_rate_hz)
    n = int(round(duration_s * sample_rate_hz))
    rng = np.random.default_rng(seed)
    return SampledSignal(_band_limited(n, sample_rate_hz, band, rng), sample_rate_hz)


def fractional_delay_kernel(frac: float, taps: int = FRACTIONAL_DELAY_TAPS) -> NDArray[np.float64]:
    """Hann-windowed sinc for a delay of ``frac`` in [0, 1) samples.

    Tap ``q`` multiplies ``x[n - i - (q - taps//2 + 1)]`` where ``i`` is the
    integer part of the delay. ``frac == 0`` gives an exact unit impulse.
    """
    half = taps // 2
    j = np.arange(-half + 1, half + 1)
    if frac == 0.0:
        return (j == 0).astype(np.float64)
    t = j - frac
    return np.sinc(t) * 0.5 * (1.0 + np.cos(np.pi * t / half))


def _echo_segment(s: NDArray, delay_samples: float, alpha: float, start: int, length: int
                  ) -> NDArray[np.float64]:
    """``s[n] + alpha * s[n - delay]`` for ``n`` in ``[start, start + length)``."""
    i = int(math.floor(delay_samples))
    frac = delay_samples - i
    direct = s[start:start + length]
    if frac == 0.0:
        if start - i < 0:
            raise ValueError("segment reaches before the start of the source")
        delayed = s[start - i:start - i + length]
    else:
        half = FRACTIONAL_DELAY_TAPS // 2
        lo, hi = start - i - half, start + length - i + half - 1
        if lo < 0 or hi > s.size:
            raise ValueError("segment needs source samples outside the available range")
        delayed = np.convolve(s[lo:hi], fractional_delay_kernel(frac), mode="valid")
    return direct + alpha * delayed


def _valid_region(n: int, delay_samples: float) -> tuple[int, int]:
    i = int(math.floor(delay_samples))
    if delay_samples == i:
        return i, n
    half = FRACTIONAL_DELAY_TAPS // 2
    return i + half, min(n, n + i - half + 1)


def apply_static_echo(signal: SampledSignal, echo: EchoModel) -> SampledSignal:
    """Add one delayed, scaled copy of ``signal`` to itself.

    Only samples where the delayed copy is fully defined are returned: from
    the delay (plus half the interpolator length for sub-sample delays) to
    the end of the input.
    """
    fs = signal.sample_rate_hz
    d = echo.tau_beta_s * fs
    if echo.tau_beta_s >= signal.duration_s:
        raise ValueError("echo delay is not shorter than the signal")
    start, stop = _valid_region(len(signal), d)
    if stop <= start:
        raise ValueError("signal too short for the fractional-delay interpolator")
    x = _echo_segment(signal.samples, d, echo.alpha, start, stop - start)
    return SampledSignal(x, fs)


def simulate_transit(
    track: TransitTrack,
    env: EnvironmentModel = EnvironmentModel(),
    alpha: float = 0.5,
    seed: int = 0,
    *,
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
    band_hz: tuple[float, float] = DEFAULT_BAND_HZ,
    frame_len_s: float | None = None,
    spherical_spreading: bool = False,
    workers: int = 1,
) -> tuple[SampledSignal, NDArray[np.float64]]:
    """Clean recording of a transit plus the true delay of every frame.

    Each track sample starts one frame of ``frame_len_s`` (the track step by
    default). The frame's source noise is an independent block seeded from
    ``(seed, frame_index)``, and its echo delay is fixed at the geometric
    delay for that sample's ground range. Frames are concatenated.

    With ``spherical_spreading`` the echo is additionally scaled by
    direct/indirect path length.
    """
    if len(track) == 0:
        raise ValueError("track is empty")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    band = _check_band(band_hz, sample_rate_hz)
    step = track.step_s if frame_len_s is None else frame_len_s
    n = int(round(step * sample_rate_hz))
    truth = multipath_delays(track.ground_ranges_m, env)
    gains = np.full(len(track), float(alpha))
    if spherical_spreading:
        a = env.source_height_m + env.receiver_height_m
        b = env.source_height_m - env.receiver_height_m
        r = track.ground_ranges_m
        gains *= np.hypot(r, b) / np.hypot(r, a)

    # Lead-in covers the largest delay this environment can produce.
    lead = int(math.ceil(float(multipath_delays(0.0, env)) * sample_rate_hz)) + FRACTIONAL_DELAY_TAPS // 2 + 1
    block = lead + n + FRACTIONAL_DELAY_TAPS // 2 + 1
    out = np.empty(len(track) * n)

    def frame(m: int) -> None:
        rng = np.random.default_rng([seed, m])
        s = _band_limited(block, sample_rate_hz, band, rng)
        out[m * n:(m + 1) * n] = _echo_segment(s, truth[m] * sample_rate_hz, gains[m], lead, n)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(frame, range(len(track))))
    else:
        for m in range(len(track)):
            frame(m)
    return SampledSignal(out, sample_rate_hz), truth


def _white_blocks(seed: int, start: int, stop: int) -> NDArray[np.float64]:
    # White samples [start, stop) of an endless stream made of fixed blocks,
    # each seeded from (seed, block index).
    first, last = start // _NOISE_BLOCK, (stop - 1) // _NOISE_BLOCK
    parts = [np.random.default_rng([seed, b]).standard_normal(_NOISE_BLOCK) for b in range(first, last + 1)]
    cat = np.concatenate(parts)
    off = first * _NOISE_BLOCK
    return cat[start - off:stop - off]


def _shaping_filter(model: NoiseModel, sample_rate_hz: float, taps: int = COLOR_FIR_TAPS
                    ) -> NDArray[np.float64]:
    f = sp_fft.rfftfreq(taps, 1.0 / sample_rate_hz)
    # Unit-variance white noise has one-sided PSD 2/fs.
    amp = np.sqrt(model.psd_at(f) * sample_rate_hz / 2.0)
    h = np.roll(sp_fft.irfft(amp, n=taps), taps // 2)
    return h * get_window("hann", taps, fftbins=False)


def color_noise(model: NoiseModel, duration_s: float,
                sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> SampledSignal:
    """Gaussian noise whose one-sided PSD follows ``model``.

    White noise is shaped by a linear-phase FIR whose magnitude response is
    the square root of the reference PSD (frequency-sampled, Hann-tapered).
    The white stream is generated in fixed seeded blocks and filtered in
    chunks, so the output depends only on the seed and the length.
    """
    probe = model.psd_at(sp_fft.rfftfreq(COLOR_FIR_TAPS, 1.0 / sample_rate_hz))
    if not np.any(probe > 0):
        raise ValueError("reference PSD is zero everywhere below Nyquist")
    n = int(round(duration_s * sample_rate_hz))
    h = _shaping_filter(model, sample_rate_hz)
    out = np.empty(n)
    for a in range(0, n, _NOISE_BLOCK):
        b = min(a + _NOISE_BLOCK, n)
        w = _white_blocks(model.seed, a, b + h.size - 1)
        out[a:b] = oaconvolve(w, h, mode="valid")
    return SampledSignal(out, sample_rate_hz)


def band_power(x: NDArray, sample_rate_hz: float, band_hz: tuple[float, float]) -> float:
    """Mean power inside ``band_hz`` from an averaged Hann periodogram.

    Linear in ``x**2``, so scaling ``x`` by ``g`` scales the result by
    exactly ``g**2`` up to rounding.
    """
    x = np.asarray(x, dtype=np.float64)
    nper = min(_BAND_POWER_NPERSEG, x.size)
    if nper < 2:
        raise ValueError("signal too short to measure band power")
    w = get_window("hann", nper, fftbins=True)
    f = sp_fft.rfftfreq(nper, 1.0 / sample_rate_hz)
    sel = (f >= band_hz[0]) & (f <= band_hz[1])
    nseg = x.size // nper
    segs = x[:nseg * nper].reshape(nseg, nper)
    acc = np.zeros(f.size)
    for a in range(0, nseg, 256):
        spec = sp_fft.rfft(segs[a:a + 256] * w, axis=-1)
        acc += (spec.real**2 + spec.imag**2).sum(axis=0)
    # Periodogram normalised so that a full-band sum returns mean power.
    dens = acc / (nseg * np.sum(w**2) * nper)
    dens[1:(nper + 1) // 2] *= 2.0
    return float(dens[sel].sum())


def snr_gain(signal: SampledSignal, noise: SampledSignal, snr_db: float,
             band_hz: tuple[float, float] = DEFAULT_BAND_HZ) -> float:
    """Factor that puts ``noise`` at ``snr_db`` below ``signal`` in-band."""
    if signal.sample_rate_hz != noise.sample_rate_hz or len(signal) != len(noise):
        raise ValueError("signal and noise must share sample rate and length")
    ps = band_power(signal.samples, signal.sample_rate_hz, band_hz)
    pn = band_power(noise.samples, noise.sample_rate_hz, band_hz)
    if pn <= 0:
        raise ValueError("noise has no power in the band")
    return math.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(signal: SampledSignal, noise: SampledSignal, snr_db: float,
               band_hz: tuple[float, float] = DEFAULT_BAND_HZ) -> SampledSignal:
    """``signal + g * noise`` with ``g`` chosen so the in-band SNR is ``snr_db``.

    The signal power is that of the recording passed in (direct path plus
    echo when a clean transit is supplied).
    """
    g = snr_gain(signal, noise, snr_db, band_hz)
    return SampledSignal(signal.samples + g * noise.samples, signal.sample_rate_hz)
