"""Power cepstrum, mean-cepstrum subtraction and peak-picking delay estimators.

The power cepstrum of a frame holding a signal plus one echo of relative
amplitude ``alpha`` and delay ``tau`` is the cepstrum of the source alone
plus an impulse train (the rahmonics) at ``n * tau`` with strengths
``(2/n) (-1)**(n+1) alpha**n``. The source part does not depend on ``tau``,
so averaging cepstra over many frames with a moving echo estimates it, and
subtracting ``a`` times that average leaves mostly the rahmonics.

Cepstra use the normalised inverse DFT, so ``values[0]`` is the mean of the
two-sided log power spectrum and an integer-sample rahmonic appears with
height ``a_n / 2``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import NDArray

from .signal_core import (
    DEFAULT_FLOOR_REL,
    Autocorrelation,
    FrameSequence,
    LogPowerSpectrum,
    WindowKind,
    _log_rows,
    _power_rows,
    default_nfft,
    inverse_dft,
    make_window,
)

Method = Literal["cepstrum", "cepstrum-subtracted", "autocorrelation"]
METHODS: tuple[str, ...] = ("cepstrum", "cepstrum-subtracted", "autocorrelation")

DEFAULT_Q_MIN_S = 40e-6
DEFAULT_Q_MAX_S = 2000e-6

# Rows per FFT batch when building cepstrograms; fixed so batching never
# depends on the worker count.
_CHUNK_ROWS = 32


@dataclass(frozen=True)
class PowerCepstrum:
    values: NDArray[np.float64]
    quefrency_step_s: float

    @property
    def quefrencies_s(self) -> NDArray[np.float64]:
        return np.arange(self.values.size) * self.quefrency_step_s


@dataclass(frozen=True)
class Cepstrogram:
    """Stack of per-frame cepstra sharing one quefrency axis.

    ``values`` has shape ``(M, n_quefrency)``. Rows may be truncated to the
    low-quefrency part of the axis; the per-quefrency statistics used here do
    not depend on the discarded bins.
    """

    values: NDArray[np.float64]
    frame_times_s: NDArray[np.float64]
    quefrency_step_s: float
    nfft: int

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_quefrency(self) -> int:
        return self.values.shape[1]

    def row(self, m: int) -> PowerCepstrum:
        return PowerCepstrum(self.values[m], self.quefrency_step_s)


@dataclass(frozen=True)
class MeanCepstrum:
    values: NDArray[np.float64]
    m_used: int


@dataclass(frozen=True)
class SubtractionConfig:
    """Subtraction factor ``a``: a scalar or one value per quefrency bin."""

    factor: float | NDArray[np.float64] = 1.0

    def __post_init__(self):
        f = np.asarray(self.factor, dtype=np.float64)
        if f.ndim > 1:
            raise ValueError("subtraction factor must be a scalar or a 1-D vector")
        if np.any(~np.isfinite(f)) or np.any(f < 0):
            raise ValueError("subtraction factor must be finite and nonnegative")
        object.__setattr__(self, "factor", float(f) if f.ndim == 0 else f)

    def as_array(self, n: int) -> NDArray[np.float64] | float:
        if isinstance(self.factor, float):
            return self.factor
        if self.factor.size != n:
            raise ValueError(f"subtraction vector has {self.factor.size} bins, cepstrum has {n}")
        return self.factor


def rahmonic_strength(n: int, alpha: float) -> float:
    """Strength of the ``n``-th rahmonic for an echo of relative amplitude ``alpha``."""
    if int(n) != n or n < 1:
        raise ValueError(f"rahmonic number must be a positive integer, got {n}")
    n = int(n)
    sign = 1.0 if n % 2 == 1 else -1.0
    return sign * (2.0 / n) * alpha**n


@dataclass(frozen=True)
class RahmonicModel:
    alpha: float
    tau_beta_s: float
    n_max: int = 8
    strengths: dict[int, float] = field(init=False)

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.tau_beta_s > 0:
            raise ValueError("tau_beta_s must be positive")
        object.__setattr__(
            self, "strengths", {n: rahmonic_strength(n, self.alpha) for n in range(1, self.n_max + 1)}
        )

    def quefrency_s(self, n: int) -> float:
        return n * self.tau_beta_s


@dataclass(frozen=True)
class DelayEstimate:
    delay_s: float
    peak_value: float
    search_window_s: tuple[float, float]
    method: str
    significance: float
    """Peak value over the median absolute value inside the search window."""


def power_cepstrum(lps: LogPowerSpectrum) -> PowerCepstrum:
    """Inverse DFT of the two-sided log power spectrum.

    ``bin_hz * nfft`` recovers the sample rate; when the spectrum was built
    without one (``bin_hz`` relative to a unit rate) the step is in samples.
    """
    if not np.all(np.isfinite(lps.values)):
        raise ValueError("log power spectrum contains non-finite values")
    values = inverse_dft(lps.values, lps.nfft)
    return PowerCepstrum(values=values, quefrency_step_s=1.0 / (lps.bin_hz * lps.nfft))


def _cepstrum_rows(frames: NDArray, window: NDArray, nfft: int, floor_rel: float,
                   n_keep: int) -> NDArray[np.float64]:
    logp, _ = _log_rows(_power_rows(frames, window, nfft), floor_rel)
    return inverse_dft(logp, nfft)[:, :n_keep]


def build_cepstrogram(
    frames: FrameSequence,
    window: WindowKind = "hann",
    nfft: int | None = None,
    floor_rel: float = DEFAULT_FLOOR_REL,
    *,
    max_quefrency_s: float | None = None,
    workers: int = 1,
) -> Cepstrogram:
    """Power cepstrum of every frame, in frame order.

    Parameters
    ----------
    frames : FrameSequence
        Analysis frames. An empty sequence gives an empty cepstrogram.
    window, nfft, floor_rel
        As for :func:`~cepstral_tde.signal_core.power_spectrum` and
        :func:`~cepstral_tde.signal_core.log_power_spectrum`.
    max_quefrency_s : float, optional
        Keep only bins up to this quefrency (inclusive). Defaults to the
        non-redundant half of the axis, ``nfft // 2 + 1`` bins.
    workers : int
        Threads used for the per-frame transforms. Output is bit-identical
        for any value.
    """
    fs = frames.sample_rate_hz
    n = frames.frame_len_samples
    if nfft is None:
        nfft = default_nfft(n)
    if nfft < n:
        raise ValueError(f"nfft ({nfft}) is shorter than the frame ({n})")
    n_keep = nfft // 2 + 1
    if max_quefrency_s is not None:
        n_keep = min(n_keep, int(math.floor(max_quefrency_s * fs + 1e-9)) + 1)

    m_total = len(frames)
    out = np.empty((m_total, n_keep))
    w = make_window(window, n)

    def work(start: int) -> None:
        stop = min(start + _CHUNK_ROWS, m_total)
        out[start:stop] = _cepstrum_rows(frames.frames[start:stop], w, nfft, floor_rel, n_keep)

    starts = range(0, m_total, _CHUNK_ROWS)
    if workers > 1 and m_total > _CHUNK_ROWS:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return Cepstrogram(values=out, frame_times_s=np.asarray(frames.start_times_s, dtype=float),
                       quefrency_step_s=1.0 / fs, nfft=nfft)


def _selected_rows(n_rows: int, frame_selection) -> NDArray[np.intp]:
    if frame_selection is None:
        return np.arange(n_rows)
    if isinstance(frame_selection, slice):
        return np.arange(n_rows)[frame_selection]
    idx = np.asarray(frame_selection, dtype=np.intp).ravel()
    if idx.size and (idx.min() < -n_rows or idx.max() >= n_rows):
        raise ValueError("frame selection indexes outside the cepstrogram")
    return idx


def _sequential_mean(rows: NDArray, idx: NDArray[np.intp]) -> NDArray[np.float64]:
    # Row-by-row accumulation in index order, so the result depends only on
    # the selected rows. Deviations are taken from the first row, which makes
    # the mean of identical rows exactly that row.
    pivot = rows[idx[0]]
    acc = np.zeros(rows.shape[1])
    for i in idx[1:]:
        acc += rows[i] - pivot
    return pivot + acc / idx.size


def mean_cepstrum(cg: Cepstrogram, frame_selection: slice | range | Sequence[int] | None = None
                  ) -> MeanCepstrum:
    """Per-quefrency arithmetic mean over the selected frames (all by default)."""
    idx = _selected_rows(len(cg), frame_selection)
    if idx.size == 0:
        raise ValueError("frame selection is empty")
    return MeanCepstrum(values=_sequential_mean(cg.values, idx), m_used=int(idx.size))


def trailing_mean_cepstra(cg: Cepstrogram, window_frames: int) -> NDArray[np.float64]:
    """Row ``m`` is the mean of frames ``m - window_frames + 1 .. m``.

    Early rows use the frames available so far. Unlike the full-recording
    mean this follows a slowly moving echo, so it absorbs part of the
    rahmonic energy and biases the subtraction.
    """
    if window_frames < 1:
        raise ValueError("window_frames must be at least 1")
    out = np.empty_like(cg.values)
    for m in range(len(cg)):
        idx = np.arange(max(0, m - window_frames + 1), m + 1)
        out[m] = _sequential_mean(cg.values, idx)
    return out


def cepstrum_subtract(c: PowerCepstrum, mean: MeanCepstrum,
                      cfg: SubtractionConfig = SubtractionConfig()) -> PowerCepstrum:
    """Return ``c - a * mean`` bin by bin."""
    n = c.values.size
    if mean.values.size != n:
        raise ValueError(f"cepstrum has {n} bins but mean has {mean.values.size}")
    a = cfg.as_array(n)
    if isinstance(a, float) and a == 0.0:
        return PowerCepstrum(c.values.copy(), c.quefrency_step_s)
    return PowerCepstrum(c.values - a * mean.values, c.quefrency_step_s)


def subtract_rows(values: NDArray, mean_values: NDArray, cfg: SubtractionConfig) -> NDArray[np.float64]:
    """Batched :func:`cepstrum_subtract` over a ``(M, n)`` array."""
    n = values.shape[-1]
    if mean_values.shape[-1] != n:
        raise ValueError(f"cepstra have {n} bins but mean has {mean_values.shape[-1]}")
    a = cfg.as_array(n)
    if isinstance(a, float) and a == 0.0:
        return values.copy()
    return values - a * mean_values


def window_bins(step_s: float, n_bins: int, q_min_s: float, q_max_s: float) -> tuple[int, int]:
    """Inclusive bin range ``[lo, hi]`` covered by the quefrency window."""
    if not 0 < q_min_s < q_max_s:
        raise ValueError(f"need 0 < q_min < q_max, got ({q_min_s}, {q_max_s})")
    extent = (n_bins - 1) * step_s
    if q_max_s > extent * (1 + 1e-9):
        raise ValueError(f"q_max {q_max_s} s exceeds the axis extent {extent} s")
    lo = int(math.ceil(q_min_s / step_s - 1e-9))
    hi = int(math.floor(q_max_s / step_s + 1e-9))
    if lo > hi:
        raise ValueError(f"window [{q_min_s}, {q_max_s}] s contains no bins at step {step_s} s")
    return lo, hi


def pick_rows(values: NDArray, step_s: float, q_min_s: float, q_max_s: float
              ) -> tuple[NDArray[np.intp], NDArray[np.float64], NDArray[np.float64]]:
    """Vectorised peak picking over rows of ``values``.

    Returns the peak bin index, peak value and peak-to-median significance
    for every row. ``argmax`` returns the first maximum, so ties go to the
    smallest quefrency.
    """
    values = np.atleast_2d(values)
    lo, hi = window_bins(step_s, values.shape[1], q_min_s, q_max_s)
    seg = values[:, lo:hi + 1]
    k = np.argmax(seg, axis=1)
    peak = seg[np.arange(seg.shape[0]), k]
    med = np.median(np.abs(seg), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sig = np.where(med > 0, peak / med, np.inf)
    return k + lo, peak, sig


def _estimate(values: NDArray, step_s: float, q_min_s: float, q_max_s: float, method: str
              ) -> DelayEstimate:
    k, peak, sig = pick_rows(values, step_s, q_min_s, q_max_s)
    return DelayEstimate(delay_s=float(k[0] * step_s), peak_value=float(peak[0]),
                         search_window_s=(q_min_s, q_max_s), method=method,
                         significance=float(sig[0]))


def pick_delay(c: PowerCepstrum, q_min_s: float = DEFAULT_Q_MIN_S, q_max_s: float = DEFAULT_Q_MAX_S,
               *, method: str = "cepstrum") -> DelayEstimate:
    """Quefrency of the largest cepstrum value inside ``[q_min_s, q_max_s]``."""
    return _estimate(c.values, c.quefrency_step_s, q_min_s, q_max_s, method)


def estimate_delay_autocorr(ac: Autocorrelation, q_min_s: float = DEFAULT_Q_MIN_S,
                            q_max_s: float = DEFAULT_Q_MAX_S) -> DelayEstimate:
    """Lag of the largest autocorrelation value inside ``[q_min_s, q_max_s]``."""
    return _estimate(ac.values, ac.lag_step_s, q_min_s, q_max_s, "autocorrelation")
