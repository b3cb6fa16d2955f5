"""Multipath time delay estimation from single-hydrophone recordings with the power cepstrum."""

__version__ = "0.1.0"

from .cepstrum import (
    Cepstrogram,
    DelayEstimate,
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
)
from .signal_core import (
    SampledSignal,
    autocorrelation,
    frame_signal,
    log_power_spectrum,
    power_spectrum,
)
from .transit import (
    EchoModel,
    EnvironmentModel,
    NoiseModel,
    apply_static_echo,
    color_noise,
    mix_at_snr,
    multipath_delay,
    simulate_transit,
    straight_transit,
    synth_source_noise,
)
