"""WAV, CSV, scenario and manifest I/O.

CSV output uses ``.`` decimals regardless of locale, times in seconds and
delays or quefrencies in microseconds.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
import platform
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy
from scipy.io import wavfile

from . import __version__
from .cepstrum import Cepstrogram
from .harness import BiasReport, DelayEstimateSeries, GroundTruthTrack, MAEReport, SweepResult
from .signal_core import SampledSignal
from .transit import DEFAULT_BAND_HZ, DEFAULT_SAMPLE_RATE_HZ, EnvironmentModel, NoiseModel, TransitTrack

SEED_ENV_VAR = "CEPSTRAL_TDE_SEED"

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE
_SUPPORTED = {(_WAVE_FORMAT_PCM, 16), (_WAVE_FORMAT_PCM, 24), (_WAVE_FORMAT_IEEE_FLOAT, 32)}


class WavFormatError(ValueError):
    pass


class ScenarioError(ValueError):
    pass


class TrackFormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# WAV
# --------------------------------------------------------------------------

def _wav_header(path: Path) -> tuple[int, int, int, int]:
    """Return ``(format_tag, channels, sample_rate, bits)`` from the RIFF header."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise WavFormatError(f"{path}: not a RIFF/WAVE file or header truncated")
        fmt = None
        while True:
            ch = fh.read(8)
            if len(ch) < 8:
                break
            cid, size = ch[:4], struct.unpack("<I", ch[4:])[0]
            if cid == b"fmt ":
                body = fh.read(size)
                if len(body) < 16:
                    raise WavFormatError(f"{path}: truncated fmt chunk")
                tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", body[:16])
                if tag == _WAVE_FORMAT_EXTENSIBLE:
                    if len(body) < 26:
                        raise WavFormatError(f"{path}: truncated extensible fmt chunk")
                    tag = struct.unpack("<H", body[24:26])[0]
                fmt = (tag, channels, rate, bits)
            elif cid == b"data":
                if fmt is None:
                    raise WavFormatError(f"{path}: data chunk precedes fmt chunk")
                return fmt
            else:
                fh.seek(size + (size & 1), os.SEEK_CUR)
    raise WavFormatError(f"{path}: missing fmt or data chunk (header truncated?)")


def read_wav(path: str | os.PathLike) -> SampledSignal:
    """Read a mono PCM16, PCM24 or float32 WAV file, scaled to [-1, 1]."""
    path = Path(path)
    tag, channels, rate, bits = _wav_header(path)
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono audio, file has {channels} channels")
    if (tag, bits) not in _SUPPORTED:
        raise WavFormatError(
            f"{path}: unsupported encoding (format tag {tag:#06x}, {bits} bits); "
            "expected PCM16, PCM24 or float32"
        )
    try:
        fs, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise WavFormatError(f"{path}: expected mono audio, file has {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        # 24-bit samples arrive left-justified in int32.
        x = data / 2147483648.0
    else:
        x = data.astype(np.float64)
    return SampledSignal(x, float(fs))


def write_wav(path: str | os.PathLike, signal: SampledSignal, encoding: str = "float32") -> None:
    """Write mono audio. ``float32`` keeps full precision; ``pcm16`` clips to [-1, 1)."""
    rate = int(round(signal.sample_rate_hz))
    if encoding == "float32":
        data = signal.samples.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV encoding {encoding!r}")
    wavfile.write(Path(path), rate, data)


# --------------------------------------------------------------------------
# Tracks and truth
# --------------------------------------------------------------------------

def read_track_csv(path: str | os.PathLike, frame_times_s: Iterable[float] | None = None) -> TransitTrack:
    """Read a ``time_s,range_m`` log; optionally interpolate onto frame times."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise TrackFormatError(f"{path}: empty track file")
    header = [c.strip() for c in rows[0]]
    if header != ["time_s", "range_m"]:
        raise TrackFormatError(f"{path}: header must be 'time_s,range_m', got {','.join(header)!r}")
    if len(rows) < 2:
        raise TrackFormatError(f"{path}: track has no data rows")
    times, ranges = [], []
    for i, r in enumerate(rows[1:], start=1):
        try:
            t, d = float(r[0]), float(r[1])
        except (ValueError, IndexError) as exc:
            raise TrackFormatError(f"{path}: data row {i} is malformed: {r}") from exc
        if times and t <= times[-1]:
            raise TrackFormatError(f"{path}: time not increasing at data row {i} (t={t})")
        if d < 0:
            raise TrackFormatError(f"{path}: negative range at data row {i} ({d})")
        times.append(t)
        ranges.append(d)
    t = np.array(times)
    d = np.array(ranges)
    if frame_times_s is not None:
        ft = np.asarray(list(frame_times_s), dtype=float)
        d = np.interp(ft, t, d)
        t = ft
    k = int(np.argmin(d))
    return TransitTrack(t, d, float(t[k]), float(d[k]), float("nan"))


def write_truth_csv(path: str | os.PathLike, truth: GroundTruthTrack) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_time_s", "true_delay_us"])
        for t, d in zip(truth.frame_times_s, truth.true_delays_s):
            w.writerow([f"{t:.6f}", f"{d * 1e6:.6f}"])


def read_truth_csv(path: str | os.PathLike) -> GroundTruthTrack:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return GroundTruthTrack(data[:, 0], data[:, 1] * 1e-6)


def write_estimates_csv(path: str | os.PathLike, series: Iterable[DelayEstimateSeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_time_s", "method", "delay_us", "peak_value"])
        for s in series:
            for t, d, p in zip(s.frame_times_s, s.delays_s, s.peak_values):
                w.writerow([f"{t:.6f}", s.method, f"{d * 1e6:.3f}", f"{p:.9g}"])


def write_mae_csv(path: str | os.PathLike, reports: Iterable[MAEReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "mae_us", "frames_used", "frames_excluded"])
        for r in reports:
            w.writerow([r.method, f"{r.mae_s * 1e6:.6f}", r.frame_count, r.frames_excluded])


def write_sweep_csv(path: str | os.PathLike, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid_value", "method", "mae_us", "frames_used", "frames_excluded"])
        for g, m, mae_us, used, excl in result.rows():
            w.writerow([f"{g:.6g}", m, f"{mae_us:.6f}", used, excl])


def write_bias_csv(path: str | os.PathLike, report: BiasReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        w.writerow(["median_improvement", f"{report.median_improvement:.9g}"])
        w.writerow(["full_mean_peak", f"{report.full_mean_peak:.9g}"])
        w.writerow(["trailing_mean_peak", f"{report.trailing_mean_peak:.9g}"])
        w.writerow(["peak_ratio", f"{report.peak_ratio:.9g}"])
        w.writerow(["segment_frames", report.segment_frames])


def write_cepstrogram_csv(cg: Cepstrogram, path: str | os.PathLike, q_max_us: float = 300.0) -> None:
    """Write ``|C|`` for quefrency bins ``0 .. floor(q_max / step)``.

    Layout: a header row ``frame_time_s, q_0, q_1, ...`` (quefrencies in µs),
    then one row per frame starting with the frame time. With a 4 µs step and
    ``q_max_us=300`` that is 1 + 76 columns.
    """
    step_us = cg.quefrency_step_s * 1e6
    last = int(math.floor(q_max_us / step_us + 1e-9))
    if q_max_us < 0 or last >= cg.n_quefrency:
        raise ValueError(
            f"q_max {q_max_us} us is beyond the cepstrogram axis "
            f"({(cg.n_quefrency - 1) * step_us:.3f} us)"
        )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_time_s"] + [f"{k * step_us:.3f}" for k in range(last + 1)])
        for t, row in zip(cg.frame_times_s, cg.values):
            w.writerow([f"{t:.6f}"] + [f"{v:.6e}" for v in np.abs(row[:last + 1])])


def read_psd_csv(path: str | os.PathLike, seed: int = 0) -> NoiseModel:
    """Two-column ``freq_hz,psd`` table, ascending in frequency."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns freq_hz,psd")
    return NoiseModel(data[:, 0], data[:, 1], seed)


# --------------------------------------------------------------------------
# Scenarios and manifests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    env: EnvironmentModel = field(default_factory=EnvironmentModel)
    cpa_range_m: float = 10.0
    speed_mps: float = 1.5
    start_range_m: float = 200.0
    step_s: float = 0.1
    alpha: float = 0.5
    spherical_spreading: bool = False
    psd: str = "flat"
    """``flat`` or a path to a ``freq_hz,psd`` CSV."""
    snr_db: float | None = None
    seed: int = 0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    band_hz: tuple[float, float] = DEFAULT_BAND_HZ

    def noise_model(self) -> NoiseModel:
        if self.psd == "flat":
            return NoiseModel.flat(self.band_hz, seed=self.seed)
        return read_psd_csv(self.psd, self.seed)

    def as_dict(self) -> dict:
        return {
            "environment": {
                "sound_speed_mps": self.env.sound_speed_mps,
                "water_depth_m": self.env.water_depth_m,
                "source_height_m": self.env.source_height_m,
                "receiver_height_m": self.env.receiver_height_m,
            },
            "track": {"cpa_range_m": self.cpa_range_m, "speed_mps": self.speed_mps,
                      "start_range_m": self.start_range_m, "step_s": self.step_s},
            "echo": {"alpha": self.alpha, "spherical_spreading": self.spherical_spreading},
            "noise": {"psd": self.psd, "snr_db": self.snr_db, "seed": self.seed},
            "source": {"sample_rate_hz": self.sample_rate_hz, "band_low_hz": self.band_hz[0],
                       "band_high_hz": self.band_hz[1]},
        }


_SCENARIO_KEYS = {
    "environment": {"sound_speed_mps", "water_depth_m", "source_height_m", "receiver_height_m"},
    "track": {"cpa_range_m", "speed_mps", "start_range_m", "step_s"},
    "echo": {"alpha", "spherical_spreading"},
    "noise": {"psd", "psd_file", "snr_db", "seed"},
    "source": {"sample_rate_hz", "band_low_hz", "band_high_hz"},
}


def read_scenario(path: str | os.PathLike, *, environ: dict | None = None) -> Scenario:
    """Parse an INI-style scenario file. Unknown sections or keys are errors.

    The ``CEPSTRAL_TDE_SEED`` environment variable, when set, replaces the
    noise seed.
    """
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    for sec in cp.sections():
        if sec not in _SCENARIO_KEYS:
            raise ScenarioError(f"{path}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in _SCENARIO_KEYS[sec]:
                raise ScenarioError(f"{path}: unknown key '{key}' in [{sec}]")

    def num(sec: str, key: str, default: float) -> float:
        if not cp.has_option(sec, key):
            return default
        try:
            return float(cp[sec][key])
        except ValueError as exc:
            raise ScenarioError(f"{path}: [{sec}] {key} is not a number") from exc

    try:
        env = EnvironmentModel(
            sound_speed_mps=num("environment", "sound_speed_mps", 1520.0),
            water_depth_m=num("environment", "water_depth_m", 20.0),
            source_height_m=num("environment", "source_height_m", 20.0),
            receiver_height_m=num("environment", "receiver_height_m", 1.0),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc

    psd = "flat"
    if cp.has_section("noise"):
        raw = cp["noise"].get("psd_file") or cp["noise"].get("psd") or "flat"
        if raw.strip().lower() != "flat":
            p = Path(raw.strip())
            psd = str(p if p.is_absolute() else path.parent / p)
            if not Path(psd).is_file():
                raise ScenarioError(f"{path}: PSD file not found: {psd}")
    snr: float | None = None
    if cp.has_option("noise", "snr_db") and cp["noise"]["snr_db"].strip().lower() not in ("", "none"):
        snr = num("noise", "snr_db", 0.0)
    seed = int(num("noise", "seed", 0))
    env_vars = os.environ if environ is None else environ
    if env_vars.get(SEED_ENV_VAR):
        seed = int(env_vars[SEED_ENV_VAR])
    spreading = False
    if cp.has_option("echo", "spherical_spreading"):
        spreading = cp.getboolean("echo", "spherical_spreading")

    sc = Scenario(
        env=env,
        cpa_range_m=num("track", "cpa_range_m", 10.0),
        speed_mps=num("track", "speed_mps", 1.5),
        start_range_m=num("track", "start_range_m", 200.0),
        step_s=num("track", "step_s", 0.1),
        alpha=num("echo", "alpha", 0.5),
        spherical_spreading=spreading,
        psd=psd,
        snr_db=snr,
        seed=seed,
        sample_rate_hz=num("source", "sample_rate_hz", DEFAULT_SAMPLE_RATE_HZ),
        band_hz=(num("source", "band_low_hz", DEFAULT_BAND_HZ[0]),
                 num("source", "band_high_hz", DEFAULT_BAND_HZ[1])),
    )
    if not 0 < sc.alpha <= 1:
        raise ScenarioError(f"{path}: [echo] alpha must lie in (0, 1]")
    return sc


def write_manifest(path: str | os.PathLike, command: str, config: dict) -> None:
    """JSON record of everything needed to reproduce a run (no timestamps)."""
    doc = {
        "command": command,
        "config": config,
        "versions": {
            "cepstral_tde": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (np.ndarray, tuple)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
