"""Framing, windowing, spectra and autocorrelation for single-channel recordings.

Everything here is a pure function of its inputs and runs in float64.
Spectra are stored one-sided (``nfft // 2 + 1`` bins) but hold two-sided
power values, so the mirror half is implied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy import fft as sp_fft
from scipy.signal import get_window

WindowKind = Literal["hann", "rectangular"]

DEFAULT_FLOOR_REL = 1e-12
ABSOLUTE_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class SampledSignal:
    """Uniformly sampled real time series."""

    samples: NDArray[np.float64]
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class FrameSequence:
    """Equal-length analysis frames cut from one signal.

    ``frames`` is a read-only ``(n_frames, frame_len_samples)`` view onto the
    source samples; no copy is made.
    """

    frames: NDArray[np.float64]
    frame_len_samples: int
    hop_samples: int
    sample_rate_hz: float
    start_times_s: NDArray[np.float64] = field(repr=False)

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class PowerSpectrum:
    values: NDArray[np.float64]
    bin_hz: float
    nfft: int

    @property
    def freqs_hz(self) -> NDArray[np.float64]:
        return np.arange(self.values.size) * self.bin_hz

    def two_sided_total(self) -> float:
        """Sum of the implied two-sided spectrum (mirror bins counted twice)."""
        v = self.values
        if self.nfft % 2 == 0:
            return float(v[0] + v[-1] + 2.0 * v[1:-1].sum())
        return float(v[0] + 2.0 * v[1:].sum())


@dataclass(frozen=True)
class LogPowerSpectrum:
    values: NDArray[np.float64]
    bin_hz: float
    nfft: int
    floor_applied: bool


@dataclass(frozen=True)
class Autocorrelation:
    values: NDArray[np.float64]
    lag_step_s: float

    @property
    def lags_s(self) -> NDArray[np.float64]:
        return np.arange(self.values.size) * self.lag_step_s


def default_nfft(frame_len: int) -> int:
    """Next power of two at or above ``frame_len``."""
    if frame_len < 1:
        raise ValueError("frame_len must be positive")
    return 1 << (int(frame_len) - 1).bit_length()


def make_window(kind: WindowKind, length: int) -> NDArray[np.float64]:
    """Analysis window scaled to unit mean.

    Unit mean (coherent gain 1) makes the peak power of a bin-centred sine
    identical for every window kind.
    """
    if kind == "rectangular":
        return np.ones(length)
    if kind == "hann":
        w = get_window("hann", length, fftbins=True)
        return w / w.mean()
    raise ValueError(f"unknown window kind {kind!r}; expected 'hann' or 'rectangular'")


def frame_signal(signal: SampledSignal, frame_len_s: float, hop_s: float) -> FrameSequence:
    """Cut ``signal`` into complete frames; a trailing partial frame is dropped.

    Examples
    --------
    >>> sig = SampledSignal(np.zeros(250_000 * 10), 250_000.0)
    >>> len(frame_signal(sig, 0.1, 0.1))
    100
    """
    if not frame_len_s > 0 or not hop_s > 0:
        raise ValueError(f"frame and hop lengths must be positive, got {frame_len_s}, {hop_s}")
    fs = signal.sample_rate_hz
    frame_len = int(round(frame_len_s * fs))
    hop = int(round(hop_s * fs))
    if frame_len < 2:
        raise ValueError(f"frame of {frame_len_s} s at {fs} Hz holds fewer than 2 samples")
    if hop < 1:
        raise ValueError(f"hop of {hop_s} s at {fs} Hz is shorter than one sample")

    x = signal.samples
    if x.size < frame_len:
        frames = np.empty((0, frame_len))
    else:
        frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    n = frames.shape[0]
    return FrameSequence(
        frames=frames,
        frame_len_samples=frame_len,
        hop_samples=hop,
        sample_rate_hz=fs,
        start_times_s=np.arange(n) * (hop / fs),
    )


def forward_dft(x: NDArray, nfft: int) -> NDArray[np.complex128]:
    """One-sided DFT of real data along the last axis, zero-padded to ``nfft``."""
    return sp_fft.rfft(np.asarray(x, dtype=np.float64), n=nfft, axis=-1)


def inverse_dft(spectrum: NDArray, nfft: int) -> NDArray[np.float64]:
    """Inverse of :func:`forward_dft` (real output of length ``nfft``)."""
    return sp_fft.irfft(spectrum, n=nfft, axis=-1)


def _power_rows(frames: NDArray, window: NDArray, nfft: int) -> NDArray[np.float64]:
    # Shared by the single-frame API and the batched cepstrogram path so
    # both produce identical bits.
    spec = forward_dft(frames * window, nfft)
    return (spec.real**2 + spec.imag**2) / nfft


def _log_rows(power: NDArray, floor_rel: float) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    peak = power.max(axis=-1, keepdims=True)
    floor = np.where(peak > 0, floor_rel * peak, ABSOLUTE_LOG_FLOOR)
    floored = power < floor
    return np.log(np.maximum(power, floor)), floored.any(axis=-1)


def power_spectrum(frame: NDArray, window: WindowKind = "hann", nfft: int | None = None, *,
                   sample_rate_hz: float = 1.0) -> PowerSpectrum:
    """Two-sided power of the windowed, zero-padded frame.

    ``values[k] = |DFT(w * x)[k]|**2 / nfft``, so the two-sided total equals
    the windowed-frame energy (Parseval). ``bin_hz`` is only meaningful if
    ``sample_rate_hz`` is given.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ValueError("frame must be 1-D")
    if nfft is None:
        nfft = default_nfft(frame.size)
    if nfft < frame.size:
        raise ValueError(f"nfft ({nfft}) is shorter than the frame ({frame.size})")
    w = make_window(window, frame.size)
    values = _power_rows(frame[None, :], w, nfft)[0]
    return PowerSpectrum(values=values, bin_hz=sample_rate_hz / nfft, nfft=nfft)


def log_power_spectrum(ps: PowerSpectrum, floor_rel: float = DEFAULT_FLOOR_REL) -> LogPowerSpectrum:
    """Natural log of ``ps`` with bins clipped at ``floor_rel * max(ps)``.

    An all-zero spectrum maps to ``ln(1e-300)`` everywhere.
    """
    if not floor_rel > 0:
        raise ValueError(f"floor_rel must be positive, got {floor_rel}")
    values, floored = _log_rows(ps.values[None, :], floor_rel)
    return LogPowerSpectrum(values=values[0], bin_hz=ps.bin_hz, nfft=ps.nfft,
                            floor_applied=bool(floored[0]))


def _autocorr_rows(frames: NDArray, n_lags: int) -> NDArray[np.float64]:
    n = frames.shape[-1]
    nfft = default_nfft(2 * n - 1)
    spec = forward_dft(frames, nfft)
    return inverse_dft(spec.real**2 + spec.imag**2, nfft)[..., :n_lags]


def autocorrelation(frame: NDArray, max_lag_s: float, sample_rate_hz: float) -> Autocorrelation:
    """Biased autocorrelation ``r[l] = sum_n x[n] x[n + l]`` for ``0 <= l <= max_lag``.

    Computed as the inverse transform of the (unwindowed) power spectrum with
    enough zero padding that no circular wrap occurs.
    """
    frame = np.asarray(frame, dtype=np.float64)
    max_lag = int(np.floor(max_lag_s * sample_rate_hz + 1e-9))
    if max_lag_s <= 0 or max_lag >= frame.size:
        raise ValueError(f"max lag {max_lag_s} s must be positive and shorter than the frame")
    values = _autocorr_rows(frame[None, :], max_lag + 1)[0]
    return Autocorrelation(values=values, lag_step_s=1.0 / sample_rate_hz)
