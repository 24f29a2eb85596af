"""Figure rendering for the experiment reports.

Every experiment writes its delimited output first; these helpers render the
companion figures.  Rendering is deterministic for a given matplotlib
version, which the repeat-run tests rely on.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _new_axes(xlabel, ylabel, title):
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def waveform_figure(traces, path, window=None, title=""):
    """Overlay labelled waveforms; window is an optional (t_lo, t_hi) in ps."""
    fig, ax = _new_axes("time (ns)", "voltage (mV)", title)
    for wf, label in traces:
        t = wf.times_ps()
        v = wf.samples
        if window is not None:
            mask = (t >= window[0]) & (t < window[1])
            t, v = t[mask], v[mask]
        ax.plot(t * 1e-3, v * 1e3, label=label, linewidth=0.9)
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, path)


def tdc_figure(hist, path, title, gate_period_ps=None):
    fig, ax = _new_axes("time in trigger period (ns)", "counts", title)
    centers = hist.centers_ps * 1e-3
    ax.plot(centers, hist.counts, linewidth=0.6)
    if hist.counts.max() > 0:
        ax.set_yscale("symlog", linthresh=1)
    _save(fig, path)


def sweep_figure(event_mv, gate1_v, gate2_v, path):
    fig, ax = _new_axes(
        "pseudo-event amplitude (mV)", "peak voltage (mV)",
        "Gate peaks vs event amplitude",
    )
    ax.plot(event_mv, np.asarray(gate1_v) * 1e3, "o-", label="gate 1")
    ax.plot(event_mv, np.asarray(gate2_v) * 1e3, "s-", label="gate 2")
    ax.legend()
    _save(fig, path)


def scan_figure(offsets_ps, rates_hz, active_fwhm_ps, path):
    fig, ax = _new_axes(
        "laser delay (ps)", "count rate (1/s)",
        f"Active-time scan, FWHM = {active_fwhm_ps:.0f} ps",
    )
    ax.plot(offsets_ps, rates_hz, "o-", markersize=3)
    _save(fig, path)


def decay_figure(lags_ns, rates, tau_ns, path):
    fig, ax = _new_axes(
        "lag after detection (ns)", "afterpulse rate per gate",
        f"Afterpulse decay, tau = {tau_ns:.1f} ns",
    )
    ax.semilogy(lags_ns, rates, "o", label="measured")
    if len(lags_ns) and np.isfinite(tau_ns):
        t = np.linspace(min(lags_ns), max(lags_ns), 100)
        ref = rates[0] * np.exp(-(t - lags_ns[0]) / tau_ns)
        ax.semilogy(t, ref, "-", alpha=0.6, label="exponential fit")
    ax.legend()
    _save(fig, path)
