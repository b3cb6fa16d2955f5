"""Shared signal builders for the test suite."""

import numpy as np
from scipy.ndimage import median_filter, uniform_filter1d

from cepstral_tde import EchoModel, SampledSignal, apply_static_echo, synth_source_noise
from cepstral_tde.signal_core import PowerSpectrum

FS = 250_000.0
FRAME = 25_000
FULL_BAND = (0.0, 125_000.0)

# One "CRITERION n: PASS|FAIL ..." line per acceptance check, echoed in the
# terminal summary.
ACCEPTANCE_LINES: list[str] = []


def echo_signal(tau_s=224e-6, alpha=1.0, seconds=0.1, seed=1, band=FULL_BAND) -> SampledSignal:
    """White source plus one echo, trimmed to exactly ``seconds``."""
    n = int(round(seconds * FS))
    src = synth_source_noise(seconds + 0.01, FS, band, seed=seed)
    out = apply_static_echo(src, EchoModel(alpha, tau_s))
    return SampledSignal(out.samples[:n], FS)


def spectral_nulls(ps: PowerSpectrum, f_lo=1_000.0, f_hi=120_000.0) -> np.ndarray:
    """Frequencies of deep notches: runs >10 dB below a running median."""
    one_sided = ps.values[: ps.nfft // 2 + 1]
    db = 10 * np.log10(np.maximum(uniform_filter1d(one_sided, 41), 1e-300))
    below = db < median_filter(db, 1001, mode="nearest") - 10.0
    f = ps.freqs_hz
    below &= (f > f_lo) & (f < f_hi)
    edges = np.flatnonzero(np.diff(below.astype(int)))
    starts, stops = edges[::2] + 1, edges[1::2] + 1
    return np.array([f[s + np.argmin(db[s:e])] for s, e in zip(starts, stops)])
