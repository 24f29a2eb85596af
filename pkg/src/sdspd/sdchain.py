"""Post-processing electronics: splitter, one-period delay, trim, differential
subtraction, gain stages, comparator discrimination, and the sine-gating
notch-filter alternative.

Polarity convention is fixed: a detection appears as a positive peak in its
own gate and an equal negative echo delay_periods gate periods later; the
discriminator fires on positive-going crossings only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import iirnotch, lfilter

from .waveform import (
    Waveform,
    band_limit,
    db_to_ratio,
    delay,
    peak_to_peak,
    quantized_delay,
    scale,
    subtract,
    suppression_db,
)

# Reference frequency for the delay-line skin-effect loss model.
SKIN_REF_HZ = 1e10


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class SDConfig:
    """Self-differencing chain parameters.

    trim_db is the signed gain adjustment of the undelayed arm (negative
    values attenuate, mirroring the potentiometer).  delay_loss_db models a
    flat delay-line loss (negative = loss); delay_skin_db adds a loss that
    grows as sqrt(f), quoted in dB at 10 GHz, which is what makes suppression
    depend on the input spectrum.  post_gain_db sits between the differential
    amplifier and the comparator.
    """

    splitter_loss_db: float = 3.0
    delay_periods: int = 1
    delay_fine_ps: float = 0.0
    trim_db: float = 0.0
    delay_loss_db: float = 0.0
    delay_skin_db: float = 0.0
    diffamp_gain_db: float = 10.0
    diffamp_risetime_ps: float = 250.0
    post_gain_db: float = 24.0
    threshold_mv: float = 80.0
    out_pulse_fwhm_ps: float = 217.0
    stretch_ns: float = 5.0

    def validate(self) -> None:
        if self.delay_periods < 1:
            raise ChainError(f"sd.delay_periods must be >= 1, got {self.delay_periods}")
        if self.threshold_mv <= 0:
            raise ChainError(f"sd.threshold_mv must be positive, got {self.threshold_mv}")
        if self.splitter_loss_db < 0:
            raise ChainError("sd.splitter_loss_db must be non-negative")
        if self.out_pulse_fwhm_ps <= 0 or self.stretch_ns <= 0:
            raise ChainError("sd pulse widths must be positive")


@dataclass(frozen=True)
class DigitalPulse:
    """Comparator output pulse: threshold-crossing time and width (ps)."""

    t_rise_ps: float
    width_ps: float

    def __post_init__(self):
        if self.width_ps <= 0:
            raise ChainError(f"pulse width must be positive, got {self.width_ps}")


@dataclass(frozen=True)
class NotchConfig:
    """Cascaded notches at f0 and its harmonics, for sine gating."""

    f0_hz: float
    n_harmonics: int = 3
    q: float = 30.0

    def validate(self) -> None:
        if self.f0_hz <= 0 or self.n_harmonics < 1 or self.q <= 0:
            raise ChainError("notch config requires f0 > 0, n_harmonics >= 1, q > 0")


def _delay_arm_response(samples: np.ndarray, sample_rate: float, skin_db: float) -> np.ndarray:
    """Frequency-dependent delay-line loss: |skin_db| * sqrt(f / 10 GHz) dB.

    Magnitude-only FFT filter; exact for periodic signals (circular
    convolution matches the physical steady state).
    """
    spec = np.fft.rfft(samples)
    freqs = np.fft.rfftfreq(samples.size, d=1.0 / sample_rate)
    loss_db = abs(skin_db) * np.sqrt(freqs / SKIN_REF_HZ)
    spec *= 10.0 ** (-loss_db / 20.0)
    return np.fft.irfft(spec, n=samples.size)


def self_difference(apd_out: Waveform, cfg: SDConfig, gate_period_ps: float) -> Waveform:
    """Splitter, delay-and-subtract, band-limited differential gain.

    Arm A (undelayed) is scaled by -splitter_loss + trim; arm B passes the
    delay line (flat loss, skin loss, delay_periods * gate_period +
    delay_fine).  Output = diffamp_gain * band_limit(A - B).
    """
    cfg.validate()
    total_delay = cfg.delay_periods * gate_period_ps + cfg.delay_fine_ps
    if apd_out.n * apd_out.dt_ps < (cfg.delay_periods + 1) * gate_period_ps:
        raise ChainError(
            f"waveform too short: {apd_out.n} samples cover less than "
            f"{cfg.delay_periods + 1} gate periods"
        )
    arm_a = scale(apd_out, -cfg.splitter_loss_db + cfg.trim_db)
    arm_b = scale(apd_out, -cfg.splitter_loss_db + cfg.delay_loss_db)
    if cfg.delay_skin_db != 0.0:
        arm_b = Waveform(
            arm_b.sample_rate,
            arm_b.t0,
            _delay_arm_response(arm_b.samples, arm_b.sample_rate, cfg.delay_skin_db),
        )
    arm_b = delay(arm_b, total_delay)
    diff = subtract(arm_a, arm_b)
    return scale(band_limit(diff, cfg.diffamp_risetime_ps), cfg.diffamp_gain_db)


def tune(
    reference: Waveform, cfg: SDConfig, gate_period_ps: float
) -> tuple[SDConfig, float]:
    """Match the two arms on an event-free reference input.

    Exhaustive grid search: delay_fine over -1/0/+1 sample, trim over
    [-3, +3] dB in 0.01 dB steps, minimizing the residual peak-to-peak of
    self_difference on the interior.  Ties break toward the smallest
    |delay_fine|, then the smallest |trim|.  Returns the tuned config and the
    suppression it achieves (input vs residual peak-to-peak).
    """
    cfg.validate()
    dt = reference.dt_ps
    window = (
        reference.t0 + (cfg.delay_periods + 1) * gate_period_ps,
        reference.t0 + reference.n * dt,
    )
    trims = np.round(np.arange(-300, 301) * 0.01, 2)
    fines = [0.0, -dt, dt]  # tie-break order: |0| < |±dt|

    best = None  # (ptp, |fine|, |trim|, fine, trim)
    # The chain is linear, so band_limit(r*A - B) = r*band_limit(A) -
    # band_limit(B); filtering each arm once lets the trim sweep run as one
    # outer product while still ranking the true self_difference residual
    # (the constant diffamp gain does not affect the ranking).
    arm_a_f = band_limit(scale(reference, -cfg.splitter_loss_db), cfg.diffamp_risetime_ps)
    i_lo = int(np.ceil((window[0] - reference.t0) / dt))
    a_seg = arm_a_f.samples[i_lo:]
    ratios = db_to_ratio(trims)
    for fine in fines:
        arm_b = scale(reference, -cfg.splitter_loss_db + cfg.delay_loss_db)
        if cfg.delay_skin_db != 0.0:
            arm_b = Waveform(
                arm_b.sample_rate,
                arm_b.t0,
                _delay_arm_response(arm_b.samples, arm_b.sample_rate, cfg.delay_skin_db),
            )
        arm_b = delay(arm_b, cfg.delay_periods * gate_period_ps + fine)
        b_seg = band_limit(arm_b, cfg.diffamp_risetime_ps).samples[i_lo:]
        residuals = ratios[:, None] * a_seg - b_seg  # (n_trims, n_window)
        ptps = residuals.max(axis=1) - residuals.min(axis=1)
        for trim, ptp in zip(trims, ptps):
            key = (ptp, abs(fine), abs(trim))
            if best is None or key < best[:3]:
                best = (ptp, abs(fine), abs(trim), fine, trim)

    tuned = replace(cfg, delay_fine_ps=best[3], trim_db=float(best[4]))
    residual = self_difference(reference, tuned, gate_period_ps)
    achieved = suppression_db(reference, residual, window)
    return tuned, achieved


def discriminate(
    processed: Waveform, cfg: SDConfig, gate_period_ps: float
) -> list[DigitalPulse]:
    """Comparator: one pulse per positive-going threshold crossing, at most
    one per gate period (first crossing wins), width out_pulse_fwhm_ps.

    The crossing time is interpolated between the straddling samples.
    """
    cfg.validate()
    v = processed.samples * db_to_ratio(cfg.post_gain_db)
    thr = cfg.threshold_mv * 1e-3
    above = v >= thr
    idx = np.flatnonzero(~above[:-1] & above[1:])
    if idx.size == 0:
        return []
    dt = processed.dt_ps
    t_rise = processed.t0 + (idx + (thr - v[idx]) / (v[idx + 1] - v[idx])) * dt
    gates = np.floor((t_rise - processed.t0) / gate_period_ps).astype(np.int64)
    _, first = np.unique(gates, return_index=True)
    return [DigitalPulse(float(t), cfg.out_pulse_fwhm_ps) for t in t_rise[first]]


def stretch_pulses(pulses, stretch_ns: float) -> list[DigitalPulse]:
    """Lengthen pulses for the output stream, clipping so the stream stays
    strictly ordered and non-overlapping."""
    stretched = []
    width = stretch_ns * 1e3
    for i, pu in enumerate(pulses):
        w = width
        if i + 1 < len(pulses):
            w = min(w, pulses[i + 1].t_rise_ps - pu.t_rise_ps)
        stretched.append(DigitalPulse(pu.t_rise_ps, w))
    return stretched


def notch_filter_chain(apd_out: Waveform, n: NotchConfig) -> Waveform:
    """Cascade of second-order notches at f0, 2 f0, ..., n_harmonics * f0."""
    n.validate()
    if apd_out.sample_rate <= 2.0 * n.f0_hz * n.n_harmonics:
        raise ChainError(
            f"sample rate {apd_out.sample_rate} Hz cannot represent a notch at "
            f"{n.f0_hz * n.n_harmonics} Hz (Nyquist violation)"
        )
    out = apd_out.samples
    for k in range(1, n.n_harmonics + 1):
        b, a = iirnotch(k * n.f0_hz, n.q, fs=apd_out.sample_rate)
        out = lfilter(b, a, out)
    return Waveform(apd_out.sample_rate, apd_out.t0, out)


def write_pulses_csv(pulses, path) -> None:
    """Digital pulse stream interface: header `t_rise_ps,width_ps`."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_rise_ps", "width_ps"])
        for pu in pulses:
            w.writerow([f"{pu.t_rise_ps:.12g}", f"{pu.width_ps:.12g}"])


def read_pulses_csv(path) -> list[DigitalPulse]:
    pulses = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            pulses.append(DigitalPulse(float(row["t_rise_ps"]), float(row["width_ps"])))
    return pulses
