import time

import pytest
from hypothesis import settings

from cepstral_tde import simulate_transit, straight_transit
from cepstral_tde.cepstrum import build_cepstrogram
from cepstral_tde.harness import GroundTruthTrack
from cepstral_tde.signal_core import frame_signal

from .helpers import ACCEPTANCE_LINES, echo_signal

# FFT timings vary too much for per-example deadlines.
settings.register_profile("repo", deadline=None)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def echo_frame():
    return echo_signal().samples


@pytest.fixture(scope="session")
def short_transit():
    # 61 frames spanning the whole 131..1316 us delay range.
    track = straight_transit(10.0, 399.5 / 3.0, 200.0)
    rec, truth = simulate_transit(track, alpha=0.5, seed=0)
    return rec, GroundTruthTrack(track.times_s, truth), track


@pytest.fixture(scope="session")
def medium_transit():
    # The 300-frame downsized transit used for end-to-end MAE checks.
    track = straight_transit(10.0, 399.5 / 30.0, 200.0)
    rec, truth = simulate_transit(track, alpha=0.5, seed=0)
    return rec, GroundTruthTrack(track.times_s, truth), track


@pytest.fixture(scope="session")
def full_transit():
    """Full-length transit (about 2700 frames) with its cepstrogram up to 2 ms.

    Also returns the wall time spent building it.
    """
    t0 = time.perf_counter()
    track = straight_transit(10.0, 1.5, 200.0)
    rec, truth = simulate_transit(track, alpha=0.5, seed=0)
    cg = build_cepstrogram(frame_signal(rec, 0.1, 0.1), max_quefrency_s=2e-3)
    del rec
    return cg, GroundTruthTrack(track.times_s, truth), time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
