"""Simulator and analysis bench for a self-differencing Geiger-gated APD
single-photon detector."""

from .apd import (
    APDParams,
    AvalancheEvent,
    GateConfig,
    LaserConfig,
    capacitive_response,
    gen_gate_waveform,
    linear_mode_response,
    simulate_events,
    synthesize_output,
)
from .characterize import (
    Histogram,
    Metrics,
    TDCConfig,
    TestSignalSpec,
    afterpulse_per_ns,
    afterpulse_prob,
    dark_prob,
    efficiency,
    fit_afterpulse_decay,
    fwhm,
    gen_test_signal,
    measure_gate_peaks,
    scan_active_time,
    tdc_histogram,
    uniformity_test,
)
from .config import RunConfig, default_config, load_config, parse_config, save_config, serialize_config
from .sdchain import (
    DigitalPulse,
    NotchConfig,
    SDConfig,
    discriminate,
    notch_filter_chain,
    self_difference,
    stretch_pulses,
    tune,
)
from .waveform import (
    Waveform,
    band_limit,
    db_to_ratio,
    delay,
    dump_waveform,
    load_waveform,
    peak_to_peak,
    quantized_delay,
    ratio_to_db,
    scale,
    subtract,
    suppression_db,
)

__version__ = "0.1.0"
