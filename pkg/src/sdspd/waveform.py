"""Sampled-signal algebra shared by the whole chain.

A Waveform is a uniformly sampled voltage record: sample rate in Hz, time of
the first sample in picoseconds, and a float64 voltage array in volts.  All
operations return new waveforms; nothing here mutates shared state, so values
are safe to pass between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

# Residual peak-to-peak of exactly zero means the ratio is unbounded; the
# suppression scale is capped at this documented saturation value.
SUPPRESSION_SATURATION_DB = 120.0

# 10-90% risetime of a single-pole RC equals tau * ln(9) ~ 2.197 tau; the
# conventional "risetime / 2.2" rule is used throughout.
RISETIME_TO_TAU = 2.2


def db_to_ratio(gain_db: float) -> float:
    """Voltage ratio for a gain in dB."""
    return 10.0 ** (gain_db / 20.0)


def ratio_to_db(ratio: float) -> float:
    """Gain in dB for a voltage ratio (> 0)."""
    if ratio <= 0:
        raise ValueError(f"voltage ratio must be positive, got {ratio}")
    return 20.0 * np.log10(ratio)


@dataclass(frozen=True)
class Waveform:
    """Uniformly sampled voltage signal.

    sample_rate: samples per second (Hz)
    t0: time of the first sample (ps)
    samples: voltages (V)

    Sample times satisfy t(i) = t0 + i / sample_rate exactly (computed from
    the index, never accumulated).
    """

    sample_rate: float
    t0: float
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("samples must be a 1-D array with at least one sample")
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def dt_ps(self) -> float:
        """Sample period in ps."""
        return 1e12 / self.sample_rate

    @property
    def t_end_ps(self) -> float:
        """Time just past the last sample (ps)."""
        return self.t0 + self.n * self.dt_ps

    def times_ps(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt_ps

    def index_at(self, t_ps: float) -> int:
        """Index of the sample nearest to t_ps."""
        return int(round((t_ps - self.t0) / self.dt_ps))


def quantized_delay(sample_rate: float, dt_ps: float) -> tuple[int, float]:
    """Quantize a delay to the sample grid.

    Returns (shift in samples, applied delay in ps).  The applied delay is
    what delay() actually realizes; callers that care about the quantization
    residue compare it with the requested value.
    """
    shift = int(round(dt_ps * sample_rate / 1e12))
    return shift, shift * 1e12 / sample_rate


def delay(wf: Waveform, dt_ps: float) -> Waveform:
    """Shift the signal later by dt_ps, quantized to the nearest sample.

    The time window is preserved: the head is zero-padded and the tail is
    dropped.  Integer-sample delays are therefore exact reindexing.
    """
    if dt_ps < 0:
        raise ValueError(f"delay must be non-negative, got {dt_ps} ps")
    shift, _ = quantized_delay(wf.sample_rate, dt_ps)
    if shift == 0:
        return Waveform(wf.sample_rate, wf.t0, wf.samples.copy())
    if shift >= wf.n:
        return Waveform(wf.sample_rate, wf.t0, np.zeros(wf.n))
    out = np.zeros(wf.n)
    out[shift:] = wf.samples[: wf.n - shift]
    return Waveform(wf.sample_rate, wf.t0, out)


def scale(wf: Waveform, gain_db: float) -> Waveform:
    """Apply a gain/attenuation quoted in dB."""
    return Waveform(wf.sample_rate, wf.t0, wf.samples * db_to_ratio(gain_db))


def subtract(a: Waveform, b: Waveform) -> Waveform:
    """Sample-wise a - b on the aligned time overlap."""
    if a.sample_rate != b.sample_rate:
        raise ValueError(
            f"incompatible signals: sample rates differ ({a.sample_rate} vs {b.sample_rate})"
        )
    # Align indices; fractional t0 offsets are quantized like delay().
    offset = int(round((b.t0 - a.t0) / a.dt_ps))
    a_start = max(0, offset)
    b_start = max(0, -offset)
    length = min(a.n - a_start, b.n - b_start)
    if length <= 0:
        raise ValueError("waveforms do not overlap in time")
    out = a.samples[a_start : a_start + length] - b.samples[b_start : b_start + length]
    return Waveform(a.sample_rate, a.t0 + a_start * a.dt_ps, out)


def band_limit(wf: Waveform, risetime_ps: float) -> Waveform:
    """Single-pole low-pass with 10-90% risetime risetime_ps, unity DC gain.

    Discretized step-invariantly (zero-order hold), so the response to any
    signal that is piecewise constant on the grid matches the continuous RC
    at the sample points.  The filter state starts at the first sample, so a
    constant waveform passes unchanged.
    """
    if risetime_ps <= 0:
        raise ValueError(f"risetime must be positive, got {risetime_ps} ps")
    tau = risetime_ps / RISETIME_TO_TAU
    alpha = 1.0 - np.exp(-wf.dt_ps / tau)
    zi = np.array([(1.0 - alpha) * wf.samples[0]])
    out, _ = lfilter([alpha], [1.0, alpha - 1.0], wf.samples, zi=zi)
    return Waveform(wf.sample_rate, wf.t0, out)


def _window_slice(wf: Waveform, window: tuple[float, float]) -> np.ndarray:
    t_lo, t_hi = window
    i_lo = max(0, int(np.ceil((t_lo - wf.t0) / wf.dt_ps)))
    i_hi = min(wf.n, int(np.floor((t_hi - wf.t0) / wf.dt_ps)) + 1)
    if i_hi <= i_lo:
        raise ValueError(f"window ({t_lo}, {t_hi}) ps does not intersect the waveform")
    return wf.samples[i_lo:i_hi]

def peak_to_peak(wf: Waveform, window: tuple[float, float]) -> float:
    """max - min over samples inside the window (ps interval)."""
    seg = _window_slice(wf, window)
    return float(seg.max() - seg.min())


def suppression_db(
    input_wf: Waveform, residual: Waveform, window: tuple[float, float]
) -> float:
    """How far the residual sits below the input, in dB of peak-to-peak.

    An exactly zero residual saturates at SUPPRESSION_SATURATION_DB, and the
    scale is capped there so near-zero float residue reads the same.
    """
    ptp_in = peak_to_peak(input_wf, window)
    if ptp_in == 0.0:
        raise ValueError("input peak-to-peak is zero; suppression undefined")
    ptp_res = peak_to_peak(residual, window)
    if ptp_res == 0.0:
        return SUPPRESSION_SATURATION_DB
    return min(20.0 * np.log10(ptp_in / ptp_res), SUPPRESSION_SATURATION_DB)


def dump_waveform(wf: Waveform, path) -> None:
    """Write the plain-text dump format.

    Line 1: `# sample_rate_hz=<f> t0_ps=<f> n=<int>`, then one voltage per
    line with 12 significant digits (bit-exact for integer-representable
    values).
    """
    with open(path, "w") as f:
        f.write(f"# sample_rate_hz={wf.sample_rate:.12g} t0_ps={wf.t0:.12g} n={wf.n}\n")
        f.writelines(f"{v:.12g}\n" for v in wf.samples)


def load_waveform(path) -> Waveform:
    with open(path) as f:
        header = f.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing waveform header line")
        fields = dict(item.split("=") for item in header[1:].split())
        n = int(fields["n"])
        samples = np.loadtxt(f, dtype=np.float64, ndmin=1)
    if samples.size != n:
        raise ValueError(f"{path}: expected {n} samples, found {samples.size}")
    return Waveform(float(fields["sample_rate_hz"]), float(fields["t0_ps"]), samples)
