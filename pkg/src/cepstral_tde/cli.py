"""Command-line driver.

Subcommands::

    simulate     scenario -> recording.wav + truth.csv
    cepstrogram  WAV -> cepstrogram.csv (optionally mean-subtracted)
    estimate     WAV [+ track CSV] -> estimates.csv [+ mae.csv]
    sweep-a      scenario -> sweep_a.csv (MAE vs subtraction factor)
    sweep-snr    scenario -> sweep_snr.csv (MAE vs SNR per method)

Exit status is 0 on success, 1 on runtime errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cepstrum import METHODS, Cepstrogram, build_cepstrogram, mean_cepstrum, trailing_mean_cepstra
from .fileio import (
    Scenario,
    read_scenario,
    read_track_csv,
    read_wav,
    write_cepstrogram_csv,
    write_estimates_csv,
    write_mae_csv,
    write_manifest,
    write_sweep_csv,
    write_truth_csv,
    write_wav,
)
from .harness import (
    AnalysisConfig,
    GroundTruthTrack,
    derived_seed,
    mae,
    run_estimators,
    sweep_snr,
    sweep_subtraction_factor,
)
from .signal_core import SampledSignal, frame_signal
from .transit import color_noise, mix_at_snr, multipath_delays, simulate_transit, straight_transit

log = logging.getLogger("cepstral_tde")

# Seed stream reserved for the ambient noise added by `simulate`.
_SIMULATE_NOISE_STREAM = 1_000_000


def parse_grid(text: str) -> list[float]:
    """``start:step:stop`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            start, step, stop = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 12) for i in range(n)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}; use start:step:stop or a,b,c") from None


def _existing_file(text: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"file not found: {text}")
    return p


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _add_analysis_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("analysis")
    g.add_argument("--frame-len", type=float, default=0.1, help="frame length in seconds (default 0.1)")
    g.add_argument("--window", choices=["hann", "rectangular"], default="hann")
    g.add_argument("--nfft", type=int, default=None, help="FFT length (default: next power of two)")
    g.add_argument("--floor-rel", type=float, default=1e-12, help="log floor relative to peak bin")
    g.add_argument("--q-min-us", type=float, default=40.0)
    g.add_argument("--q-max-us", type=float, default=2000.0)
    g.add_argument("--a", type=float, default=1.5, help="cepstrum subtraction factor (default 1.5)")
    g.add_argument("--mean-mode", choices=["full", "trailing"], default="full")
    g.add_argument("--trailing-frames", type=_positive_int, default=20)
    g.add_argument("--workers", type=_positive_int, default=1)


def _analysis_config(args: argparse.Namespace) -> AnalysisConfig:
    return AnalysisConfig(
        frame_len_s=args.frame_len, window=args.window, nfft=args.nfft, floor_rel=args.floor_rel,
        q_min_s=args.q_min_us * 1e-6, q_max_s=args.q_max_us * 1e-6, a=args.a,
        mean_mode=args.mean_mode, trailing_frames=args.trailing_frames, workers=args.workers,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cepstral-tde", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesise a transit recording")
    p.add_argument("--scenario", type=_existing_file, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--encoding", choices=["float32", "pcm16"], default="float32")
    p.add_argument("--workers", type=_positive_int, default=1)

    p = sub.add_parser("cepstrogram", help="per-frame power cepstra of a WAV file")
    p.add_argument("--wav", type=_existing_file, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--subtract", action="store_true", help="subtract a times the mean cepstrum")
    p.add_argument("--plot-q-max-us", type=float, default=300.0,
                   help="highest quefrency written to the CSV (default 300 us)")
    _add_analysis_args(p)

    p = sub.add_parser("estimate", help="per-frame multipath delay estimates")
    p.add_argument("--wav", type=_existing_file, required=True)
    p.add_argument("--track", type=_existing_file, help="time_s,range_m log for scoring")
    p.add_argument("--scenario", type=_existing_file, help="environment used with --track")
    p.add_argument("--methods", nargs="+", choices=list(METHODS), default=["cepstrum-subtracted"])
    p.add_argument("--out", type=Path, default=Path("."))
    _add_analysis_args(p)

    for name, default_grid, helptext in (
        ("sweep-a", "0:0.5:2.5", "MAE against the subtraction factor"),
        ("sweep-snr", "-15:3:15", "MAE against SNR for each method"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--scenario", type=_existing_file, required=True)
        p.add_argument("--grid", type=parse_grid, default=parse_grid(default_grid))
        p.add_argument("--out", type=Path, default=Path("."))
        if name == "sweep-snr":
            p.add_argument("--methods", nargs="+", choices=list(METHODS), default=list(METHODS))
            p.add_argument("--repetitions", type=_positive_int, default=1)
        _add_analysis_args(p)
    return parser


def _simulate(sc: Scenario, workers: int = 1) -> tuple[SampledSignal, GroundTruthTrack]:
    track = straight_transit(sc.cpa_range_m, sc.speed_mps, sc.start_range_m, sc.step_s)
    log.info("simulating %d frames", len(track))
    rec, truth = simulate_transit(track, sc.env, sc.alpha, sc.seed, sample_rate_hz=sc.sample_rate_hz,
                                  band_hz=sc.band_hz, spherical_spreading=sc.spherical_spreading,
                                  workers=workers)
    return rec, GroundTruthTrack(track.times_s, truth)


def _add_scenario_noise(sc: Scenario, rec: SampledSignal) -> SampledSignal:
    if sc.snr_db is None:
        return rec
    model = sc.noise_model().with_seed(derived_seed(sc.seed, _SIMULATE_NOISE_STREAM))
    noise = color_noise(model, rec.duration_s, rec.sample_rate_hz)
    return mix_at_snr(rec, noise, sc.snr_db, sc.band_hz)


def _cmd_simulate(args) -> None:
    sc = read_scenario(args.scenario)
    rec, truth = _simulate(sc, args.workers)
    rec = _add_scenario_noise(sc, rec)
    args.out.mkdir(parents=True, exist_ok=True)
    write_wav(args.out / "recording.wav", rec, args.encoding)
    write_truth_csv(args.out / "truth.csv", truth)
    write_manifest(args.out / "manifest.json", "simulate",
                   {"scenario": sc.as_dict(), "encoding": args.encoding})


def _cmd_cepstrogram(args) -> None:
    cfg = _analysis_config(args)
    rec = read_wav(args.wav)
    log.info("quefrency step %.3f us", 1e6 / rec.sample_rate_hz)
    frames = frame_signal(rec, cfg.frame_len_s, cfg.frame_len_s)
    q_keep = max(cfg.q_max_s, args.plot_q_max_us * 1e-6)
    cg = build_cepstrogram(frames, cfg.window, cfg.nfft, cfg.floor_rel, max_quefrency_s=q_keep,
                           workers=cfg.workers)
    if args.subtract and len(cg):
        if cfg.mean_mode == "full":
            mean = mean_cepstrum(cg).values
        else:
            mean = trailing_mean_cepstra(cg, cfg.trailing_frames)
        cg = Cepstrogram(cg.values - cfg.a * mean, cg.frame_times_s, cg.quefrency_step_s, cg.nfft)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_cepstrogram_csv(cg, args.out, args.plot_q_max_us)
    write_manifest(args.out.with_suffix(".manifest.json"), "cepstrogram",
                   {"wav": str(args.wav), "subtract": args.subtract, "analysis": cfg.snapshot(),
                    "sample_rate_hz": rec.sample_rate_hz, "plot_q_max_us": args.plot_q_max_us})


def _cmd_estimate(args) -> None:
    cfg = _analysis_config(args)
    rec = read_wav(args.wav)
    log.info("quefrency step %.3f us", 1e6 / rec.sample_rate_hz)
    frames = frame_signal(rec, cfg.frame_len_s, cfg.frame_len_s)
    truth = None
    if args.track:
        sc = read_scenario(args.scenario) if args.scenario else Scenario()
        track = read_track_csv(args.track, frame_times_s=frames.start_times_s)
        truth = GroundTruthTrack(track.times_s, multipath_delays(track.ground_ranges_m, sc.env))
    series = run_estimators(rec, truth, args.methods, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_estimates_csv(args.out / "estimates.csv", series)
    config = {"wav": str(args.wav), "methods": args.methods, "analysis": cfg.snapshot(),
              "sample_rate_hz": rec.sample_rate_hz}
    if truth is not None:
        reports = [mae(s, truth) for s in series]
        write_mae_csv(args.out / "mae.csv", reports)
        for r in reports:
            print(f"{r.method}: MAE {r.mae_s * 1e6:.2f} us over {r.frame_count} frames")
        config["track"] = str(args.track)
    write_manifest(args.out / "estimates.manifest.json", "estimate", config)


def _cmd_sweep_a(args) -> None:
    cfg = _analysis_config(args)
    sc = read_scenario(args.scenario)
    rec, truth = _simulate(sc, cfg.workers)
    rec = _add_scenario_noise(sc, rec)
    result = sweep_subtraction_factor(rec, truth, args.grid, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(args.out / "sweep_a.csv", result)
    write_manifest(args.out / "sweep_a.manifest.json", "sweep-a",
                   {"scenario": sc.as_dict(), "grid": list(result.grid), "analysis": cfg.snapshot()})


def _cmd_sweep_snr(args) -> None:
    cfg = _analysis_config(args)
    sc = read_scenario(args.scenario)
    rec, truth = _simulate(sc, cfg.workers)
    result = sweep_snr(rec, truth, sc.noise_model(), args.grid, args.methods, cfg,
                       repetitions=args.repetitions, master_seed=sc.seed, band_hz=sc.band_hz)
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(args.out / "sweep_snr.csv", result)
    write_manifest(args.out / "sweep_snr.manifest.json", "sweep-snr",
                   {"scenario": sc.as_dict(), "grid": list(result.grid), "methods": args.methods,
                    "repetitions": args.repetitions, "analysis": cfg.snapshot()})


_COMMANDS = {
    "simulate": _cmd_simulate,
    "cepstrogram": _cmd_cepstrogram,
    "estimate": _cmd_estimate,
    "sweep-a": _cmd_sweep_a,
    "sweep-snr": _cmd_sweep_snr,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
