"""Measurement bench: AWG-style test signals, TDC histogramming, the
efficiency / dark-count / afterpulse formulas, FWHM extraction, active-time
scans, decay fits, and uniformity tests.

Formula conventions (all verified against the published operating point):

    eta     = (1/mu) ln((1 - R_dc/f_g) / (1 - R_pd/f_p))
    P_dc^ns = P_dc / (f_g * dt)          with f_g * dt the duty cycle
    P_a     = (C_ni - C_dc) * R / (C_i - C_ni)
    P_a^ns  = P_a * f_p * mu * eta / (f_g * dt)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .sdchain import DigitalPulse
from .waveform import Waveform


class MeasurementError(ValueError):
    pass


class NonExponentialDecayError(MeasurementError):
    """Decay fit rejected: the data do not decrease exponentially."""


@dataclass(frozen=True)
class TestSignalSpec:
    """AWG schema mimicking the APD output: per gate, three +rail samples,
    a gap, three -rail samples; the gap samples carry the pseudo-detection
    event on every event_every-th gate.
    """

    rail_mv: float = 300.0
    sample_ps: float = 100.0
    gap_samples: int = 1
    event_width_ps: float = 100.0
    event_mv: float = 100.0
    rep_rate_hz: float = 1e8
    event_every: int = 2
    allow_any_event_mv: bool = False

    @property
    def gate_period_ps(self) -> float:
        return 1e12 / self.rep_rate_hz

    @property
    def sample_rate_hz(self) -> float:
        return 1e12 / self.sample_ps

    def validate(self) -> None:
        if self.event_width_ps not in (100.0, 200.0):
            raise MeasurementError(
                f"event_width_ps must be 100 or 200 ps, got {self.event_width_ps}"
            )
        if not self.allow_any_event_mv and self.event_mv != 0.0 and not (
            10.0 <= self.event_mv <= 100.0
        ):
            raise MeasurementError(
                f"event_mv={self.event_mv} outside the 10-100 mV sweep range "
                "(set allow_any_event_mv for other values)"
            )
        if self.gap_samples < 1 or self.event_every < 1:
            raise MeasurementError("gap_samples and event_every must be >= 1")


@dataclass(frozen=True)
class TDCConfig:
    """Time-to-digital converter: arrival times folded into one trigger
    period and binned."""

    trigger_rate_hz: float = 1e6
    bin_width_ps: float = 20.0

    @property
    def span_ps(self) -> float:
        return 1e12 / self.trigger_rate_hz

    def validate(self) -> None:
        if self.bin_width_ps <= 0:
            raise MeasurementError("bin_width_ps must be positive")
        n = self.span_ps / self.bin_width_ps
        if abs(n - round(n)) > 1e-9:
            raise MeasurementError(
                f"bin_width_ps={self.bin_width_ps} does not divide the span "
                f"{self.span_ps} ps"
            )


@dataclass(frozen=True)
class Histogram:
    bin_edges_ps: np.ndarray  # length n_bins + 1
    counts: np.ndarray  # non-negative integers, length n_bins

    def __post_init__(self):
        edges = np.asarray(self.bin_edges_ps, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.size != counts.size + 1:
            raise MeasurementError("bin_edges must have one more entry than counts")
        if (counts < 0).any():
            raise MeasurementError("histogram counts must be non-negative")
        object.__setattr__(self, "bin_edges_ps", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def centers_ps(self) -> np.ndarray:
        return 0.5 * (self.bin_edges_ps[:-1] + self.bin_edges_ps[1:])

    def window_counts(self, window: tuple[float, float]) -> int:
        lo, hi = window
        c = self.centers_ps
        return int(self.counts[(c >= lo) & (c < hi)].sum())


@dataclass(frozen=True)
class Metrics:
    """Characterization outputs; NaN marks quantities a run cannot provide
    (e.g. eta in a dark-only run)."""

    eta: float
    p_dc: float
    p_dc_ns: float
    p_a: float
    p_a_ns: float
    jitter_fwhm_ps: float
    active_fwhm_ps: float
    ratio: int
    c_i: float
    c_ni: float
    c_dc: float


def gen_test_signal(spec: TestSignalSpec, n_gates: int) -> Waveform:
    """Fig.-5-style AWG waveform for n_gates periods starting at t=0."""
    spec.validate()
    if n_gates < 2:
        raise MeasurementError(f"n_gates must be >= 2, got {n_gates}")
    per = spec.sample_rate_hz / spec.rep_rate_hz
    if abs(per - round(per)) > 1e-9:
        raise MeasurementError(
            f"rep rate {spec.rep_rate_hz} Hz does not fit the {spec.sample_ps} ps grid"
        )
    per = int(round(per))
    schema = 3 + spec.gap_samples + 3
    if schema > per:
        raise MeasurementError(
            f"schema needs {schema} samples but the period holds only {per}"
        )
    event_samples = int(round(spec.event_width_ps / spec.sample_ps))
    if event_samples > spec.gap_samples:
        raise MeasurementError(
            f"event of {spec.event_width_ps} ps does not fit in a "
            f"{spec.gap_samples}-sample gap"
        )
    rail = spec.rail_mv * 1e-3
    period = np.zeros(per)
    period[0:3] = rail
    period[3 + spec.gap_samples : schema] = -rail
    samples = np.tile(period, n_gates)
    if spec.event_mv != 0.0:
        for g in range(0, n_gates, spec.event_every):
            start = g * per + 3
            samples[start : start + event_samples] = spec.event_mv * 1e-3
    return Waveform(spec.sample_rate_hz, 0.0, samples)


def measure_gate_peaks(
    diff_out: Waveform, gate_period_ps: float, gates: tuple[int, int]
) -> tuple[float, float]:
    """Maximum positive sample in each of the two gate windows."""
    peaks = []
    for g in gates:
        lo = diff_out.t0 + g * gate_period_ps
        hi = lo + gate_period_ps
        i_lo = max(0, int(np.ceil((lo - diff_out.t0) / diff_out.dt_ps)))
        i_hi = min(diff_out.n, int(np.ceil((hi - diff_out.t0) / diff_out.dt_ps)))
        if i_hi <= i_lo:
            raise MeasurementError(f"gate {g} lies outside the waveform")
        peaks.append(float(max(diff_out.samples[i_lo:i_hi].max(), 0.0)))
    return peaks[0], peaks[1]


def tdc_histogram(pulses, cfg: TDCConfig) -> Histogram:
    """Fold pulse rise times into one trigger period and bin them."""
    cfg.validate()
    n_bins = int(round(cfg.span_ps / cfg.bin_width_ps))
    edges = np.arange(n_bins + 1) * cfg.bin_width_ps
    times = np.array([p.t_rise_ps for p in pulses], dtype=np.float64)
    folded = np.mod(times, cfg.span_ps)
    counts, _ = np.histogram(folded, bins=edges)
    return Histogram(edges, counts)


def efficiency(mu: float, r_dc: float, r_pd: float, f_g: float, f_p: float) -> float:
    """Detection efficiency from count rates (dark rate r_dc, photon
    detection rate r_pd, both counts/s)."""
    if mu <= 0:
        raise MeasurementError(f"mu must be positive, got {mu}")
    x_dc = r_dc / f_g
    x_pd = r_pd / f_p
    if not x_dc < 1:
        raise MeasurementError(f"R_dc/f_g={x_dc} must be < 1")
    if not x_pd < 1:
        raise MeasurementError(f"R_pd/f_p={x_pd} must be < 1")
    if x_pd < x_dc:
        raise MeasurementError(f"R_pd/f_p={x_pd} must be >= R_dc/f_g={x_dc}")
    return math.log((1.0 - x_dc) / (1.0 - x_pd)) / mu


def dark_prob(c_dc: float, f_g: float, dt_ns: float) -> tuple[float, float]:
    """(P_dc, P_dc per ns): per-gate dark probability and its active-time
    normalization P_dc / (f_g * dt)."""
    if dt_ns <= 0:
        raise MeasurementError(f"dt_ns must be positive, got {dt_ns}")
    if c_dc < 0:
        raise MeasurementError(f"c_dc must be non-negative, got {c_dc}")
    duty = f_g * dt_ns * 1e-9
    return c_dc, c_dc / duty


def afterpulse_prob(c_ni: float, c_i: float, c_dc: float, ratio: float) -> float:
    """Afterpulse probability per detection event from mean counts per
    non-illuminated / illuminated / dark gate."""
    if not c_i > c_ni:
        raise MeasurementError(
            f"no net signal: C_i={c_i} must exceed C_ni={c_ni}"
        )
    if not c_ni >= c_dc >= 0:
        raise MeasurementError(f"need C_ni >= C_dc >= 0, got C_ni={c_ni}, C_dc={c_dc}")
    if ratio < 1:
        raise MeasurementError(f"gate-to-laser ratio must be >= 1, got {ratio}")
    return (c_ni - c_dc) * ratio / (c_i - c_ni)


def afterpulse_per_ns(
    p_a: float, f_p: float, mu: float, eta: float, f_g: float, dt_ns: float
) -> float:
    """Afterpulse probability normalized to the active time, per ns."""
    if min(f_p, mu, eta, f_g, dt_ns) <= 0 or p_a < 0:
        raise MeasurementError("afterpulse_per_ns requires positive arguments")
    duty = f_g * dt_ns * 1e-9
    return p_a * f_p * mu * eta / duty * 1e-9


def _half_crossing(x0, y0, x1, y1, half) -> float:
    return x0 + (half - y0) * (x1 - x0) / (y1 - y0)


def curve_fwhm(x: np.ndarray, y: np.ndarray) -> float:
    """Full width at half maximum of a sampled curve, linearly interpolating
    between the points straddling the half-maximum on each side."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    i_peak = int(np.argmax(y))
    half = y[i_peak] / 2.0
    left = right = None
    for i in range(i_peak, 0, -1):
        if y[i - 1] <= half <= y[i]:
            left = _half_crossing(x[i - 1], y[i - 1], x[i], y[i], half)
            break
    for i in range(i_peak, y.size - 1):
        if y[i + 1] <= half <= y[i]:
            right = _half_crossing(x[i], y[i], x[i + 1], y[i + 1], half)
            break
    if left is None or right is None:
        raise MeasurementError("curve does not fall below half maximum on both sides")
    return float(right - left)


def fwhm(h: Histogram, peak_window: tuple[float, float]) -> float:
    """FWHM of the histogram peak inside peak_window (ps)."""
    lo, hi = peak_window
    centers = h.centers_ps
    mask = (centers >= lo) & (centers < hi)
    if not mask.any():
        raise MeasurementError("peak window contains no histogram bins")
    occupied = int((h.counts[mask] > 0).sum())
    if occupied < 5:
        raise MeasurementError(
            f"only {occupied} occupied bins in the peak window; "
            "use a smaller bin_width to resolve the peak"
        )
    return curve_fwhm(centers[mask], h.counts[mask].astype(np.float64))


def scan_active_time(run, offsets_ps, base_seed: int = 0) -> list[tuple[float, float]]:
    """Count rate versus laser-pulse delay.

    run(offset_ps, seed) must perform one full simulation + discrimination
    and return the count rate (counts/s).  Offsets own their seeds
    (base_seed + index) so results do not depend on execution order.
    """
    offsets = list(offsets_ps)
    if not offsets:
        raise MeasurementError("scan requires at least one offset")
    return [(off, run(off, base_seed + i)) for i, off in enumerate(offsets)]


def fit_afterpulse_decay(h: Histogram, windows) -> tuple[float, float]:
    """Fit A * exp(-t / tau) to counts summed in the given time windows.

    Log-linear least squares on the nonzero window sums; times are window
    centers in ns.  Returns (tau_ns, amplitude).  Raises
    NonExponentialDecayError when the data do not decrease (tau diverges).
    """
    pts = []
    for lo, hi in windows:
        c = h.window_counts((lo, hi))
        if c > 0:
            pts.append((0.5 * (lo + hi) * 1e-3, c))
    if len(pts) < 3:
        raise MeasurementError(
            f"need >= 3 windows with nonzero counts, got {len(pts)}"
        )
    t = np.array([p[0] for p in pts])
    log_c = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(t, log_c, 1)
    if slope >= 0:
        raise NonExponentialDecayError(
            f"counts do not decay (fitted slope {slope:.3g} >= 0); "
            "data are not single-exponential"
        )
    return float(-1.0 / slope), float(np.exp(intercept))


def uniformity_test(h: Histogram, gate_windows) -> float:
    """Chi-square goodness of fit of per-gate counts against uniform.

    Returns the p-value; equal counts in every gate give exactly 1.
    """
    counts = np.array([h.window_counts(w) for w in gate_windows], dtype=np.float64)
    total = counts.sum()
    if total < 100:
        raise MeasurementError(f"need >= 100 counts for the uniformity test, got {int(total)}")
    expected = total / counts.size
    statistic = float(((counts - expected) ** 2 / expected).sum())
    return float(chi2.sf(statistic, counts.size - 1))


def write_histogram_csv(h: Histogram, path) -> None:
    """Histogram interface: header `bin_start_ps,count`."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_start_ps", "count"])
        for start, c in zip(h.bin_edges_ps[:-1], h.counts):
            w.writerow([f"{start:.12g}", int(c)])


def read_histogram_csv(path) -> Histogram:
    starts, counts = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            starts.append(float(row["bin_start_ps"]))
            counts.append(int(row["count"]))
    if len(starts) < 1:
        raise MeasurementError(f"{path}: empty histogram")
    width = starts[1] - starts[0] if len(starts) > 1 else 1.0
    edges = np.append(starts, starts[-1] + width)
    return Histogram(edges, counts)


def write_metrics_csv(m: Metrics, path) -> None:
    """Metrics interface: one header row, one value row, 9 significant
    digits."""
    names = [
        "eta", "p_dc", "p_dc_ns", "p_a", "p_a_ns",
        "jitter_fwhm_ps", "active_fwhm_ps", "ratio", "c_i", "c_ni", "c_dc",
    ]
    values = [getattr(m, n) for n in names]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names)
        w.writerow(
            [str(v) if isinstance(v, int) else f"{v:.9g}" for v in values]
        )
