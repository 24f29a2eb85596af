"""Stochastic model of the Geiger-gated avalanche photodiode.

Covers gate-pulse generation, the capacitive response (derivative of the gate
pulse), Poissonian photon detection with a Gaussian intra-gate efficiency
profile, dark counts, trapped-carrier afterpulsing with single-exponential
release, timing jitter, synthesis of the analog output waveform, and the
linear (non-gated) photodiode mode.

Units: times in ps unless a field name says otherwise, rates in Hz,
voltages in V except avalanche_amp_mv.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .waveform import Waveform, band_limit

# FWHM = 2*sqrt(2*ln 2) * sigma for a Gaussian.
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

CAUSES = ("photon", "dark", "afterpulse")


class ConfigError(ValueError):
    """A configuration field violates its invariant."""


@dataclass(frozen=True)
class GateConfig:
    """Geiger gate drive: a pulse train of amplitude v_p on a DC pedestal.

    shape 'square' gives rectangular pulses of width t_p_ps centered in each
    period; 'sine' gives v_dc + (v_p/2)(1 + sin(2 pi f_g t)).
    """

    f_g_hz: float = 2e8
    t_p_ps: float = 900.0
    v_p: float = 5.0
    v_dc: float = 58.0
    v_br: float = 60.0
    shape: str = "square"

    @property
    def t_r_ps(self) -> float:
        """Gate period in ps."""
        return 1e12 / self.f_g_hz

    def validate(self) -> None:
        if self.f_g_hz <= 0:
            raise ConfigError(f"gate.f_g_hz must be positive, got {self.f_g_hz}")
        if self.t_p_ps >= self.t_r_ps:
            raise ConfigError(
                f"gate.t_p_ps={self.t_p_ps} must be shorter than the period {self.t_r_ps} ps"
            )
        if self.v_dc + self.v_p <= self.v_br:
            raise ConfigError(
                f"gate bias never exceeds breakdown: v_dc+v_p={self.v_dc + self.v_p} "
                f"<= v_br={self.v_br}"
            )
        if self.shape not in ("square", "sine"):
            raise ConfigError(f"gate.shape must be 'square' or 'sine', got {self.shape!r}")


@dataclass(frozen=True)
class LaserConfig:
    """Pulsed laser synchronized to a subharmonic of the gate."""

    f_p_hz: float = 5e7
    mu: float = 1.0
    pulse_fwhm_ps: float = 500.0
    offset_ps: float = 0.0  # pulse center relative to gate center

    def validate(self, f_g_hz: float) -> None:
        if self.f_p_hz <= 0:
            raise ConfigError(f"laser.f_p_hz must be positive, got {self.f_p_hz}")
        if self.mu < 0:
            raise ConfigError(f"laser.mu must be non-negative, got {self.mu}")
        if self.pulse_fwhm_ps < 0:
            raise ConfigError("laser.pulse_fwhm_ps must be non-negative")
        ratio = f_g_hz / self.f_p_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(
                f"laser must run at a subharmonic of the gate: f_g/f_p={ratio}"
            )


@dataclass(frozen=True)
class APDParams:
    """Device physics knobs.

    dark_rate_per_ns is the dark count probability density inside the active
    window; trap_mean/trap_tau_ns/release_trigger_prob parameterize the
    trapped-carrier afterpulsing; cap_gain converts gate slope (V/ps) to the
    capacitive-response voltage; risetime_ps is the front-end band limit.
    """

    eta_peak: float = 0.17035
    active_fwhm_ps: float = 200.0
    jitter_fwhm_ps: float = 150.0
    dark_rate_per_ns: float = 4.5e-6
    trap_mean: float = 3.33
    trap_tau_ns: float = 30.0
    release_trigger_prob: float = 0.5
    avalanche_amp_mv: float = 100.0
    avalanche_width_ps: float = 100.0
    cap_gain: float = 12.0
    risetime_ps: float = 250.0

    def validate(self) -> None:
        if not 0.0 <= self.eta_peak <= 1.0:
            raise ConfigError(f"apd.eta_peak must be in [0,1], got {self.eta_peak}")
        for name in ("active_fwhm_ps", "jitter_fwhm_ps", "trap_tau_ns",
                     "avalanche_width_ps", "risetime_ps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"apd.{name} must be positive")
        if self.dark_rate_per_ns < 0 or self.trap_mean < 0:
            raise ConfigError("apd.dark_rate_per_ns and apd.trap_mean must be non-negative")
        if not 0.0 <= self.release_trigger_prob <= 1.0:
            raise ConfigError("apd.release_trigger_prob must be in [0,1]")


@dataclass(frozen=True)
class AvalancheEvent:
    """One avalanche: its gate, timestamp, and cause.

    t_ps carries the detection-time jitter; t_base_ps is the time the
    avalanche is placed at when synthesizing the analog waveform (identical
    per gate for photon events so that self-differencing cancellation and the
    half-rate ceiling are exact).  Only gate_index, t_ps and cause are part
    of the file interface.
    """

    gate_index: int
    t_ps: float
    cause: str
    t_base_ps: float = field(default=math.nan, compare=False)

    def __post_init__(self):
        if math.isnan(self.t_base_ps):
            object.__setattr__(self, "t_base_ps", self.t_ps)


def gen_gate_waveform(cfg: GateConfig, n_gates: int, sample_rate: float) -> Waveform:
    """Gate drive waveform for n_gates periods starting at t=0."""
    cfg.validate()
    if n_gates < 1:
        raise ValueError(f"n_gates must be >= 1, got {n_gates}")
    dt = 1e12 / sample_rate
    t_r = cfg.t_r_ps
    n = int(round(n_gates * t_r / dt))
    t = np.arange(n) * dt
    if cfg.shape == "sine":
        v = cfg.v_dc + 0.5 * cfg.v_p * (1.0 + np.sin(2e-12 * np.pi * cfg.f_g_hz * t))
    else:
        phase = t % t_r
        lo = 0.5 * (t_r - cfg.t_p_ps)
        hi = 0.5 * (t_r + cfg.t_p_ps)
        v = np.where((phase >= lo) & (phase < hi), cfg.v_dc + cfg.v_p, cfg.v_dc)
    return Waveform(sample_rate, 0.0, v)


def capacitive_response(gate_wf: Waveform, p: APDParams) -> Waveform:
    """cap_gain times the time-derivative of the gate drive, band-limited.

    Central differences in the interior, one-sided at the boundaries; the
    derivative is in V/ps so cap_gain carries V per (V/ps).
    """
    deriv = np.gradient(gate_wf.samples, gate_wf.dt_ps)
    raw = Waveform(gate_wf.sample_rate, gate_wf.t0, p.cap_gain * deriv)
    return band_limit(raw, p.risetime_ps)


def effective_efficiency(laser: LaserConfig, p: APDParams) -> tuple[float, float]:
    """Photon detection efficiency for one laser pulse, and the nominal
    detection time relative to the gate center.

    The optical pulse (Gaussian, FWHM pulse_fwhm_ps, centered offset_ps from
    the gate center) is weighted by the Gaussian intra-gate efficiency
    profile (peak eta_peak, FWHM active_fwhm_ps, centered in the gate):

        eta_eff = eta_peak * sa/sqrt(sa^2+sp^2) * exp(-off^2 / (2(sa^2+sp^2)))

    The nominal detection time is the center of the product distribution,
    off * sa^2/(sa^2+sp^2).
    """
    sa = p.active_fwhm_ps * FWHM_TO_SIGMA
    sp = laser.pulse_fwhm_ps * FWHM_TO_SIGMA
    var = sa * sa + sp * sp
    eta = p.eta_peak * (sa / math.sqrt(var)) * math.exp(
        -laser.offset_ps**2 / (2.0 * var)
    )
    nominal = laser.offset_ps * sa * sa / var
    return eta, nominal


def simulate_events(
    g: GateConfig,
    l: LaserConfig,
    p: APDParams,
    n_gates: int,
    seed: int,
) -> list[AvalancheEvent]:
    """Monte-Carlo event stream for n_gates gates, one seeded RNG per call.

    Per gate, priority photon > dark > afterpulse, at most one event.
    Photon clicks fire with probability 1 - exp(-mu * eta_eff) in illuminated
    gates; dark clicks with dark_rate * active window width, uniform in the
    window; trap releases landing in a later gate's active window trigger
    with release_trigger_prob.  Every avalanche deposits Poisson(trap_mean)
    fresh traps with exponential release times (tau = trap_tau_ns).

    Jitter is added to photon timestamps only; dark and afterpulse times are
    already random draws and adding jitter would distort their stated
    distributions (uniform in the window, exponential in release time).
    """
    g.validate()
    l.validate(g.f_g_hz)
    p.validate()
    if n_gates < 1:
        raise ValueError(f"n_gates must be >= 1, got {n_gates}")

    rng = np.random.default_rng(seed)
    t_r = g.t_r_ps
    half_win = 0.5 * p.active_fwhm_ps
    tau_ps = p.trap_tau_ns * 1e3
    ratio = int(round(g.f_g_hz / l.f_p_hz))

    eta_eff, nominal_off = effective_efficiency(l, p)
    p_click = 1.0 - math.exp(-l.mu * eta_eff) if l.mu > 0 else 0.0
    p_dark = p.dark_rate_per_ns * p.active_fwhm_ps * 1e-3

    # Photon candidates: vectorized over illuminated gates.
    illuminated = np.arange(0, n_gates, ratio, dtype=np.int64)
    if p_click > 0.0:
        photon_gates = illuminated[rng.random(illuminated.size) < p_click]
    else:
        photon_gates = np.empty(0, dtype=np.int64)
    jitter_sigma = p.jitter_fwhm_ps * FWHM_TO_SIGMA
    photon_jitter = rng.normal(0.0, jitter_sigma, photon_gates.size)

    # Dark candidates: chunked Bernoulli over every gate.
    dark_gates_parts = []
    if p_dark > 0.0:
        chunk = 1_000_000
        for start in range(0, n_gates, chunk):
            m = min(chunk, n_gates - start)
            hits = np.flatnonzero(rng.random(m) < p_dark)
            if hits.size:
                dark_gates_parts.append(hits.astype(np.int64) + start)
    dark_gates = (
        np.concatenate(dark_gates_parts) if dark_gates_parts else np.empty(0, np.int64)
    )
    dark_pos = rng.uniform(-half_win, half_win, dark_gates.size)

    events: list[AvalancheEvent] = []
    pending: list[float] = []  # heap of afterpulse candidate times (ps)
    i_ph = i_dk = 0
    n_ph, n_dk = photon_gates.size, dark_gates.size

    def gate_center(gate: int) -> float:
        return (gate + 0.5) * t_r

    def deposit_traps(t_event: float, gate: int) -> None:
        k = rng.poisson(p.trap_mean)
        if k == 0:
            return
        t_rel = t_event + rng.exponential(tau_ps, k)
        for t in t_rel:
            gate_rel = int(t // t_r)
            if gate_rel <= gate or gate_rel >= n_gates:
                continue
            if abs(t - gate_center(gate_rel)) > half_win:
                continue
            if rng.random() < p.release_trigger_prob:
                heapq.heappush(pending, float(t))

    while True:
        g_ph = int(photon_gates[i_ph]) if i_ph < n_ph else n_gates
        g_dk = int(dark_gates[i_dk]) if i_dk < n_dk else n_gates
        g_ap = int(pending[0] // t_r) if pending else n_gates
        gate = min(g_ph, g_dk, g_ap)
        if gate >= n_gates:
            break

        if gate == g_ph:
            t_base = gate_center(gate) + nominal_off
            ev = AvalancheEvent(gate, t_base + photon_jitter[i_ph], "photon", t_base)
            i_ph += 1
        elif gate == g_dk:
            t = gate_center(gate) + dark_pos[i_dk]
            ev = AvalancheEvent(gate, t, "dark", t)
            i_dk += 1
        else:
            t = heapq.heappop(pending)
            ev = AvalancheEvent(gate, t, "afterpulse", t)

        # The gate has avalanched: lower-priority candidates in it are consumed.
        while i_dk < n_dk and dark_gates[i_dk] == gate:
            i_dk += 1
        while pending and int(pending[0] // t_r) == gate:
            heapq.heappop(pending)

        events.append(ev)
        deposit_traps(ev.t_ps, gate)

    return events


def _deposit_pulses(
    samples: np.ndarray, wf_t0: float, dt: float, events, amp_v: float, width_ps: float
) -> None:
    n = samples.size
    width = max(1, int(round(width_ps / dt)))
    for ev in events:
        start = int(round((ev.t_base_ps - wf_t0) / dt))
        if start < 0 or start + width > n:
            raise ValueError(
                f"event at {ev.t_ps} ps (gate {ev.gate_index}) falls outside the waveform"
            )
        samples[start : start + width] += amp_v


def synthesize_output(events, gate_wf: Waveform, p: APDParams) -> Waveform:
    """Analog APD output: capacitive response plus avalanche pulses.

    Each event adds a rectangle of amplitude avalanche_amp_mv and width
    avalanche_width_ps at its synthesis time; the sum is band-limited by the
    front-end risetime (linearity makes this identical to band-limiting the
    parts separately).
    """
    deriv = np.gradient(gate_wf.samples, gate_wf.dt_ps)
    raw = p.cap_gain * deriv
    _deposit_pulses(
        raw, gate_wf.t0, gate_wf.dt_ps, events, p.avalanche_amp_mv * 1e-3,
        p.avalanche_width_ps,
    )
    return band_limit(Waveform(gate_wf.sample_rate, gate_wf.t0, raw), p.risetime_ps)


def linear_mode_response(
    optical_pulses,
    p: APDParams,
    sample_rate: float,
    pulse_width_ps: float = 500.0,
    responsivity_v_per_w: float = 0.5,
    duration_ps: float | None = None,
) -> Waveform:
    """Standard (non-gated) photodiode mode: voltage proportional to power.

    optical_pulses is a sequence of (time_ps, power_w); each pulse becomes a
    rectangle of the given width and height responsivity * power, then the
    front-end band limit applies.  No Geiger stochastics of any kind.
    """
    dt = 1e12 / sample_rate
    if duration_ps is None:
        last = max((t for t, _ in optical_pulses), default=0.0)
        duration_ps = last + pulse_width_ps + 20 * dt
    n = max(1, int(round(duration_ps / dt)))
    samples = np.zeros(n)
    width = max(1, int(round(pulse_width_ps / dt)))
    for t_ps, power in optical_pulses:
        if power < 0:
            raise ValueError(f"optical power must be non-negative, got {power}")
        start = int(round(t_ps / dt))
        if start < 0 or start + width > n:
            raise ValueError(f"optical pulse at {t_ps} ps falls outside the waveform")
        samples[start : start + width] += responsivity_v_per_w * power
    return band_limit(Waveform(sample_rate, 0.0, samples), p.risetime_ps)


def write_events_csv(events, path) -> None:
    """Event list interface: header `gate_index,t_ps,cause`."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["gate_index", "t_ps", "cause"])
        for ev in events:
            w.writerow([ev.gate_index, f"{ev.t_ps:.12g}", ev.cause])


def read_events_csv(path) -> list[AvalancheEvent]:
    events = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            cause = row["cause"]
            if cause not in CAUSES:
                raise ValueError(f"{path}: unknown cause {cause!r}")
            events.append(AvalancheEvent(int(row["gate_index"]), float(row["t_ps"]), cause))
    return events
