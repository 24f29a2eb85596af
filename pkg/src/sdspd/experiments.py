"""The five canonical experiments, each a pure function of (config, seed)
that writes its artifacts into an output directory.

The characterization run processes the waveform chain in gate-aligned chunks
(with a re-settled margin) so 1e7-gate runs fit in memory; chunks that
contain no events are skipped once an event-free interior chunk is shown to
produce no discriminator crossings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import plots
from .apd import (
    AvalancheEvent,
    capacitive_response,
    gen_gate_waveform,
    linear_mode_response,
    simulate_events,
    synthesize_output,
    write_events_csv,
)
from .characterize import (
    Histogram,
    MeasurementError,
    Metrics,
    NonExponentialDecayError,
    TDCConfig,
    TestSignalSpec,
    curve_fwhm,
    dark_prob,
    afterpulse_per_ns,
    afterpulse_prob,
    efficiency,
    fit_afterpulse_decay,
    fwhm,
    gen_test_signal,
    measure_gate_peaks,
    scan_active_time,
    tdc_histogram,
    write_histogram_csv,
    write_metrics_csv,
)
from .config import RunConfig, save_config
from .sdchain import (
    DigitalPulse,
    SDConfig,
    discriminate,
    self_difference,
    stretch_pulses,
    tune,
    write_pulses_csv,
)
from .waveform import Waveform, dump_waveform, suppression_db

# Delay-line loss of the test bench at 10 GHz (scales as sqrt(f), the skin
# effect of the coaxial delay); the broadband test schema and a narrowband
# clock then see different effective losses, which is what limits
# clock-signal suppression.
TESTBENCH_SKIN_DB = 1.31

# Active-time scans probe with a short pulse at low mean photon number so the
# measured curve is the intra-gate profile, not the probe width.
SCAN_MU = 0.01
SCAN_PROBE_FWHM_PS = 50.0

MAX_DECAY_LAG = 15  # gates of time-since-detection used for the decay fit

_DIGITAL_HIGH_V = 2.4


def _require_grid(cfg: RunConfig, sample_rate: float) -> int:
    per = cfg.gate.t_r_ps * sample_rate / 1e12
    if abs(per - round(per)) > 1e-6:
        raise MeasurementError(
            f"gate period {cfg.gate.t_r_ps} ps is not an integer number of samples "
            f"at {sample_rate} Hz"
        )
    return int(round(per))


def _gate_chunk_waveform(period_samples: np.ndarray, g0: int, count: int,
                         t_r: float, sample_rate: float) -> Waveform:
    return Waveform(sample_rate, g0 * t_r, np.tile(period_samples, count))


def chain_discriminate(
    events,
    cfg: RunConfig,
    chunk_gates: int = 20_000,
) -> tuple[np.ndarray, np.ndarray]:
    """synthesize -> self_difference -> discriminate over the whole run.

    Returns (gate indices, rise times in ps) of the discriminated pulses.
    Chunk boundaries fall on gate boundaries; each chunk is synthesized with
    a margin of delay_periods + 2 gates so the delayed arm and the band-limit
    state are fully settled before the collected region starts.
    """
    sample_rate = cfg.sample_rate_hz
    per = _require_grid(cfg, sample_rate)
    t_r = cfg.gate.t_r_ps
    n_gates = cfg.n_gates
    margin = cfg.sd.delay_periods + 2

    one_gate = gen_gate_waveform(cfg.gate, 1, sample_rate)
    period_samples = one_gate.samples
    assert period_samples.size == per

    ev_gates = np.array([e.gate_index for e in events], dtype=np.int64)

    # An event-free interior chunk either yields no crossings (matched chain:
    # quiet chunks can be skipped wholesale) or it yields background
    # crossings and every chunk must run.
    probe_gates = margin + 4
    probe_wf = _gate_chunk_waveform(period_samples, 0, probe_gates, t_r, sample_rate)
    probe_out = self_difference(
        synthesize_output([], probe_wf, cfg.apd), cfg.sd, t_r
    )
    probe_pulses = [
        p for p in discriminate(probe_out, cfg.sd, t_r)
        if p.t_rise_ps >= margin * t_r
    ]
    skip_quiet = not probe_pulses

    gates_out: list[np.ndarray] = []
    times_out: list[np.ndarray] = []
    for g0 in range(0, n_gates, chunk_gates):
        g1 = min(g0 + chunk_gates, n_gates)
        synth_g0 = max(0, g0 - margin)
        lo = np.searchsorted(ev_gates, synth_g0)
        hi = np.searchsorted(ev_gates, g1)
        chunk_events = events[lo:hi]
        if skip_quiet and not chunk_events and g0 > 0:
            continue
        gate_wf = _gate_chunk_waveform(
            period_samples, synth_g0, g1 - synth_g0, t_r, sample_rate
        )
        out = self_difference(
            synthesize_output(chunk_events, gate_wf, cfg.apd), cfg.sd, t_r
        )
        pulses = discriminate(out, cfg.sd, t_r)
        if not pulses:
            continue
        t = np.array([p.t_rise_ps for p in pulses])
        keep = t >= g0 * t_r
        t = t[keep]
        gates_out.append((t // t_r).astype(np.int64))
        times_out.append(t)
    if not gates_out:
        return np.empty(0, np.int64), np.empty(0, np.float64)
    return np.concatenate(gates_out), np.concatenate(times_out)


def _refine_times(gates: np.ndarray, times: np.ndarray, events) -> np.ndarray:
    """Replace each pulse's rise time with its event's timestamp.

    Event timestamps carry the detection jitter continuously, so TDC
    statistics stay independent of the synthesis grid; pulses with no
    matching event (chain transients) keep the waveform crossing time.
    """
    by_gate = {e.gate_index: e.t_ps for e in events}
    return np.array([by_gate.get(int(g), t) for g, t in zip(gates, times)])


@dataclass(frozen=True)
class CharacterizeResult:
    metrics: Metrics
    tdc_main: Histogram
    tdc_dark: Histogram
    tdc_zoom: Histogram | None
    decay_lags_ns: np.ndarray
    decay_rates: np.ndarray
    afterpulse_tau_ns: float
    n_pulses: int


def _decay_lag_analysis(pulse_gates: np.ndarray, ratio: int, t_r: float):
    """Afterpulse hazard per gate of lag since the previous detection.

    Gaps between consecutive detections give the discrete survival estimate
    hazard(k) = #(gap == k) / #(gap >= k), restricted at each lag to pairs
    whose target gate g_prev + k is non-illuminated (illuminated gates carry
    photon counts).  Lag 1 sits in the subtraction dead gate, where the echo
    of the previous detection suppresses counts, so it is excluded.
    """
    if pulse_gates.size < 2:
        raise MeasurementError("too few pulses for a decay analysis")
    ordered = np.sort(pulse_gates)
    g_prev = ordered[:-1]
    gaps = np.diff(ordered)
    max_lag = MAX_DECAY_LAG
    counts = np.zeros(max_lag, dtype=np.int64)
    opportunities = np.zeros(max_lag, dtype=np.int64)
    for k in range(2, max_lag + 1):
        non_illum = (g_prev + k) % ratio != 0
        counts[k - 1] = int((gaps[non_illum] == k).sum())
        opportunities[k - 1] = int((gaps[non_illum] >= k).sum())
    usable = [k for k in range(2, max_lag + 1) if opportunities[k - 1] > 0]
    rates = counts[np.array(usable) - 1] / opportunities[np.array(usable) - 1]

    # Normalize counts to a common opportunity base so the survival decline
    # does not bias the fitted time constant, then fit on the lag histogram.
    opp_ref = opportunities.max()
    norm_counts = np.zeros(max_lag, dtype=np.int64)
    for k in usable:
        norm_counts[k - 1] = int(round(
            counts[k - 1] * opp_ref / opportunities[k - 1]
        ))
    edges = (np.arange(max_lag + 1) + 0.5) * t_r
    hist = Histogram(edges, norm_counts)
    windows = [((k - 0.5) * t_r, (k + 0.5) * t_r) for k in usable]
    tau_ns, _ = fit_afterpulse_decay(hist, windows)
    lags_ns = np.array(usable) * t_r * 1e-3
    return lags_ns, rates, tau_ns, counts, opportunities


def run_characterize(
    cfg: RunConfig, out_dir, chunk_gates: int = 20_000, write_event_files: bool = True
) -> CharacterizeResult:
    """Full closed loop: simulate, synthesize, self-difference, discriminate,
    histogram, metrics.  Writes metrics.csv, the TDC histogram CSVs and
    figures, and the event/pulse streams."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_r = cfg.gate.t_r_ps
    ratio = cfg.ratio
    settle = cfg.sd.delay_periods + 1

    events = simulate_events(cfg.gate, cfg.laser, cfg.apd, cfg.n_gates, cfg.seed)
    gates, times = chain_discriminate(events, cfg, chunk_gates)
    refined = _refine_times(gates, times, events)

    # Laser-off companion run of equal length for C_dc (Fig. 7(b)-style).
    dark_is_self = cfg.laser.mu == 0.0
    if dark_is_self:
        dark_gates, dark_refined = gates, refined
    else:
        dark_cfg = replace(cfg, laser=replace(cfg.laser, mu=0.0), seed=cfg.seed + 1)
        dark_events = simulate_events(
            dark_cfg.gate, dark_cfg.laser, dark_cfg.apd, dark_cfg.n_gates, dark_cfg.seed
        )
        dark_gates, dark_times = chain_discriminate(dark_events, dark_cfg, chunk_gates)
        dark_refined = _refine_times(dark_gates, dark_times, dark_events)

    counted = gates >= settle
    n_counted = cfg.n_gates - settle
    n_illum = len(range(settle + (-settle) % ratio, cfg.n_gates, ratio))
    illum_mask = counted & (gates % ratio == 0)
    c_dc = float((dark_gates >= settle).sum() / n_counted)

    tdc = TDCConfig()
    hist_main = tdc_histogram(
        [DigitalPulse(t, cfg.sd.out_pulse_fwhm_ps) for t in refined[counted]], tdc
    )
    hist_dark = tdc_histogram(
        [DigitalPulse(t, cfg.sd.out_pulse_fwhm_ps) for t in dark_refined], tdc
    )

    if dark_is_self:
        p_dc, p_dc_ns = dark_prob(c_dc, cfg.gate.f_g_hz, cfg.apd.active_fwhm_ps * 1e-3)
        metrics = Metrics(
            eta=math.nan, p_dc=p_dc, p_dc_ns=p_dc_ns, p_a=math.nan, p_a_ns=math.nan,
            jitter_fwhm_ps=math.nan, active_fwhm_ps=cfg.apd.active_fwhm_ps,
            ratio=ratio, c_i=math.nan, c_ni=math.nan, c_dc=c_dc,
        )
        result = CharacterizeResult(
            metrics, hist_main, hist_dark, None,
            np.empty(0), np.empty(0), math.nan, int(gates.size),
        )
    else:
        c_i = float(illum_mask.sum() / n_illum)
        c_ni = float((counted & ~illum_mask).sum() / (n_counted - n_illum))
        eta = efficiency(
            cfg.laser.mu, c_dc * cfg.gate.f_g_hz, c_i * cfg.laser.f_p_hz,
            cfg.gate.f_g_hz, cfg.laser.f_p_hz,
        )
        p_dc, p_dc_ns = dark_prob(c_dc, cfg.gate.f_g_hz, cfg.apd.active_fwhm_ps * 1e-3)
        p_a = afterpulse_prob(c_ni, c_i, c_dc, ratio)
        p_a_ns = afterpulse_per_ns(
            p_a, cfg.laser.f_p_hz, cfg.laser.mu, eta, cfg.gate.f_g_hz,
            cfg.apd.active_fwhm_ps * 1e-3,
        )

        # Jitter: photon pulses folded at the laser period.
        zoom_cfg = TDCConfig(trigger_rate_hz=cfg.laser.f_p_hz, bin_width_ps=20.0)
        zoom_pulses = [
            DigitalPulse(t, cfg.sd.out_pulse_fwhm_ps) for t in refined[illum_mask]
        ]
        hist_zoom = tdc_histogram(zoom_pulses, zoom_cfg)
        peak_center = hist_zoom.centers_ps[int(np.argmax(hist_zoom.counts))]
        jitter = fwhm(hist_zoom, (peak_center - 1000.0, peak_center + 1000.0))

        lags_ns, rates, tau_ns, _, _ = _decay_lag_analysis(gates[counted], ratio, t_r)

        metrics = Metrics(
            eta=eta, p_dc=p_dc, p_dc_ns=p_dc_ns, p_a=p_a, p_a_ns=p_a_ns,
            jitter_fwhm_ps=jitter, active_fwhm_ps=cfg.apd.active_fwhm_ps,
            ratio=ratio, c_i=c_i, c_ni=c_ni, c_dc=c_dc,
        )
        result = CharacterizeResult(
            metrics, hist_main, hist_dark, hist_zoom,
            lags_ns, rates, tau_ns, int(gates.size),
        )

    write_metrics_csv(result.metrics, out / "metrics.csv")
    write_histogram_csv(hist_main, out / "tdc_main.csv")
    write_histogram_csv(hist_dark, out / "tdc_dark.csv")
    save_config(cfg, out / "config.cfg")
    if write_event_files:
        write_events_csv(events, out / "events.csv")
        stream = stretch_pulses(
            [DigitalPulse(t, cfg.sd.out_pulse_fwhm_ps) for t in np.sort(times)],
            cfg.sd.stretch_ns,
        )
        write_pulses_csv(stream, out / "pulses.csv")
    plots.tdc_figure(hist_main, out / "tdc_main.png", "TDC, laser on", t_r)
    plots.tdc_figure(hist_dark, out / "tdc_dark.png", "TDC, laser off", t_r)
    if result.tdc_zoom is not None:
        write_histogram_csv(result.tdc_zoom, out / "tdc_zoom.csv")
        plots.tdc_figure(
            result.tdc_zoom, out / "tdc_zoom.png", "Illuminated-gate zoom", t_r
        )
        with open(out / "afterpulse_decay.csv", "w") as f:
            f.write("lag_ns,rate_per_gate\n")
            for lag, rate in zip(result.decay_lags_ns, result.decay_rates):
                f.write(f"{lag:.12g},{rate:.9g}\n")
        with open(out / "afterpulse_fit.csv", "w") as f:
            f.write("tau_ns\n")
            f.write(f"{result.afterpulse_tau_ns:.9g}\n")
        plots.decay_figure(
            result.decay_lags_ns, result.decay_rates, result.afterpulse_tau_ns,
            out / "afterpulse_decay.png",
        )
    return result


@dataclass(frozen=True)
class TestSignalResult:
    tuned: SDConfig
    suppression_db: float
    sine_suppression_db: float
    sweep_mv: np.ndarray
    gate1_peaks_v: np.ndarray
    gate2_peaks_v: np.ndarray


def default_test_chain() -> SDConfig:
    """Chain used on the AWG bench: spec defaults plus the measured
    delay-line dispersion."""
    return SDConfig(delay_skin_db=TESTBENCH_SKIN_DB)


def run_testsignal(
    spec: TestSignalSpec,
    out_dir,
    chain: SDConfig | None = None,
    n_gates: int = 16,
) -> TestSignalResult:
    """Tune on the event-free schema, report suppression (including the
    200 MHz clock comparison), and sweep pseudo-event amplitudes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec.validate()
    chain = chain if chain is not None else default_test_chain()
    t_gate = spec.gate_period_ps

    reference = gen_test_signal(replace(spec, event_mv=0.0), n_gates)
    tuned, achieved = tune(reference, chain, t_gate)
    residual = self_difference(reference, tuned, t_gate)
    window = ((tuned.delay_periods + 1) * t_gate, n_gates * t_gate)

    # Same-amplitude pure 200 MHz clock through the test-signal-tuned chain.
    t = np.arange(reference.n) * reference.dt_ps
    sine = Waveform(
        reference.sample_rate, 0.0,
        spec.rail_mv * 1e-3 * np.sin(2e-12 * np.pi * 2e8 * t),
    )
    sine_supp = suppression_db(
        sine, self_difference(sine, tuned, t_gate), window
    )

    signal = gen_test_signal(spec, n_gates)
    dump_waveform(signal, out / "test_signal.txt")
    dump_waveform(residual, out / "residual.txt")

    event_gate = spec.event_every * math.ceil(
        (tuned.delay_periods + 1) / spec.event_every
    )
    if spec.event_mv != 0.0:
        sweep = np.arange(10.0, 101.0, 10.0)
        g1, g2 = [], []
        for mv in sweep:
            diff = self_difference(
                gen_test_signal(replace(spec, event_mv=float(mv)), n_gates),
                tuned, t_gate,
            )
            a, b = measure_gate_peaks(diff, t_gate, (event_gate, event_gate + 1))
            g1.append(a)
            g2.append(b)
        sweep_mv = sweep
        gate1 = np.array(g1)
        gate2 = np.array(g2)
    else:
        sweep_mv = np.empty(0)
        gate1 = np.empty(0)
        gate2 = np.empty(0)

    with open(out / "suppression.csv", "w") as f:
        f.write("delay_fine_ps,trim_db,suppression_db,sine_suppression_db\n")
        f.write(
            f"{tuned.delay_fine_ps:.12g},{tuned.trim_db:.12g},"
            f"{achieved:.9g},{sine_supp:.9g}\n"
        )
    with open(out / "peak_sweep.csv", "w") as f:
        f.write("event_mv,gate1_peak_v,gate2_peak_v\n")
        for mv, a, b in zip(sweep_mv, gate1, gate2):
            f.write(f"{mv:.12g},{a:.9g},{b:.9g}\n")
    plots.waveform_figure(
        [(signal, "test signal"), (residual, "tuned residual")],
        out / "test_signal.png",
        window=(0, min(4, n_gates) * t_gate),
    )
    if sweep_mv.size:
        plots.sweep_figure(sweep_mv, gate1, gate2, out / "peak_sweep.png")
    return TestSignalResult(tuned, achieved, sine_supp, sweep_mv, gate1, gate2)


@dataclass(frozen=True)
class ScanResult:
    offsets_ps: np.ndarray
    rates_hz: np.ndarray
    active_fwhm_ps: float
    duty_cycle: float


def run_scan(
    cfg: RunConfig,
    out_dir,
    offsets_ps=None,
    gates_per_offset: int = 500_000,
    probe_mu: float = SCAN_MU,
    probe_fwhm_ps: float = SCAN_PROBE_FWHM_PS,
) -> ScanResult:
    """Scan the laser pulse across the gate; the FWHM of rate vs offset is
    the measured active time."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if offsets_ps is None:
        offsets_ps = np.arange(-1000.0, 1001.0, 25.0)
    offsets_ps = np.asarray(list(offsets_ps), dtype=np.float64)
    if offsets_ps.size == 0:
        raise MeasurementError("scan requires a non-empty offset list")

    base = replace(
        cfg,
        laser=replace(cfg.laser, mu=probe_mu, pulse_fwhm_ps=probe_fwhm_ps),
        n_gates=gates_per_offset,
    )
    settle = cfg.sd.delay_periods + 1
    duration_s = (gates_per_offset - settle) * cfg.gate.t_r_ps * 1e-12

    def one_run(offset_ps: float, seed: int) -> float:
        run_cfg = replace(
            base, laser=replace(base.laser, offset_ps=offset_ps), seed=seed
        )
        events = simulate_events(
            run_cfg.gate, run_cfg.laser, run_cfg.apd, run_cfg.n_gates, run_cfg.seed
        )
        gates, _ = chain_discriminate(events, run_cfg)
        return float((gates >= settle).sum() / duration_s)

    pairs = scan_active_time(one_run, offsets_ps, base_seed=cfg.seed)
    rates = np.array([r for _, r in pairs])
    active = curve_fwhm(offsets_ps, rates)
    duty = active * 1e-12 * cfg.gate.f_g_hz

    with open(out / "scan.csv", "w") as f:
        f.write("offset_ps,count_rate_hz\n")
        for off, rate in pairs:
            f.write(f"{off:.12g},{rate:.9g}\n")
    with open(out / "scan_summary.csv", "w") as f:
        f.write("active_fwhm_ps,duty_cycle\n")
        f.write(f"{active:.9g},{duty:.9g}\n")
    plots.scan_figure(offsets_ps, rates, active, out / "scan.png")
    return ScanResult(offsets_ps, rates, active, duty)


@dataclass(frozen=True)
class LinearResult:
    pulses: list
    n_ones: int


def run_linear(bits: str, cfg: RunConfig, out_dir) -> LinearResult:
    """Linear photodiode mode on a classical bit-string (Fig. 9 analog):
    one optical pulse per '1' at twice the gate period, through the chain."""
    cfg.validate()
    if not bits or any(b not in "01" for b in bits):
        raise MeasurementError(f"bit string must be non-empty over {{0,1}}, got {bits!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_r = cfg.gate.t_r_ps
    bit_period = 2.0 * t_r
    pulses_in = [
        ((k + 0.5) * bit_period, 1.0) for k, b in enumerate(bits) if b == "1"
    ]
    duration = (len(bits) + 1) * bit_period
    wf = linear_mode_response(
        pulses_in, cfg.apd, cfg.sample_rate_hz, pulse_width_ps=500.0,
        duration_ps=duration,
    )
    diff = self_difference(wf, cfg.sd, t_r)
    pulses = discriminate(diff, cfg.sd, t_r)
    stream = stretch_pulses(pulses, cfg.sd.stretch_ns)

    # Detector output trace: the stretched LVTTL-level pulse train.
    trace = np.zeros(diff.n)
    for p in stream:
        i0 = max(0, diff.index_at(p.t_rise_ps))
        i1 = min(diff.n, diff.index_at(p.t_rise_ps + p.width_ps))
        trace[i0:i1] = _DIGITAL_HIGH_V
    out_wf = Waveform(diff.sample_rate, diff.t0, trace)

    dump_waveform(diff, out / "linear_diff.txt")
    dump_waveform(out_wf, out / "linear_out.txt")
    write_pulses_csv(stream, out / "linear_pulses.csv")
    plots.waveform_figure(
        [(diff, "differential amplifier"), (out_wf, "detector output")],
        out / "linear.png",
    )
    return LinearResult(pulses, sum(b == "1" for b in bits))


@dataclass(frozen=True)
class TuneResult:
    tuned_cfg: RunConfig
    suppression_db: float


def run_tune(cfg: RunConfig, out_dir, n_gates: int = 16) -> TuneResult:
    """Tune the chain on an event-free capacitive-response reference
    generated from the gate config; writes the tuned config."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gate_wf = gen_gate_waveform(cfg.gate, n_gates, cfg.sample_rate_hz)
    reference = capacitive_response(gate_wf, cfg.apd)
    tuned_sd, achieved = tune(reference, cfg.sd, cfg.gate.t_r_ps)
    tuned_cfg = replace(cfg, sd=tuned_sd)
    save_config(tuned_cfg, out / "tuned.cfg")
    with open(out / "tune_summary.csv", "w") as f:
        f.write("delay_fine_ps,trim_db,suppression_db\n")
        f.write(
            f"{tuned_sd.delay_fine_ps:.12g},{tuned_sd.trim_db:.12g},{achieved:.9g}\n"
        )
    residual = self_difference(reference, tuned_sd, cfg.gate.t_r_ps)
    plots.waveform_figure(
        [(reference, "reference"), (residual, "tuned residual")],
        out / "tune.png",
        window=(0, min(6, n_gates) * cfg.gate.t_r_ps),
    )
    return TuneResult(tuned_cfg, achieved)
