"""Command-line experiment runner.

Subcommands: tune, testsignal, characterize, scan, linear.  Every command is
a pure function of (config, seed): re-running with the same inputs produces
byte-identical artifacts.  Exit codes: 0 success, 2 configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .apd import ConfigError
from .characterize import MeasurementError, TestSignalSpec
from .config import RunConfig, default_config, load_config
from .experiments import (
    run_characterize,
    run_linear,
    run_scan,
    run_testsignal,
    run_tune,
)
from .sdchain import ChainError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdspd",
        description="Self-differencing single-photon detector simulator",
    )
    parser.add_argument("--config", help="run config file (key=value lines)")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--out", help="output directory (default from config)")
    parser.add_argument("--gates", type=int, help="override run.n_gates")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("tune", help="tune the chain on an event-free reference")

    ts = sub.add_parser("testsignal", help="AWG test-signal bench")
    ts.add_argument("--event-mv", type=float, default=100.0)
    ts.add_argument("--event-width", type=float, default=100.0, choices=[100.0, 200.0])
    ts.add_argument("--gap-samples", type=int, default=1)
    ts.add_argument("--rail-mv", type=float, default=300.0)

    sub.add_parser("characterize", help="full closed-loop characterization")

    sc = sub.add_parser("scan", help="active-time scan")
    sc.add_argument("--offset-min", type=float, default=-1000.0)
    sc.add_argument("--offset-max", type=float, default=1000.0)
    sc.add_argument("--offset-step", type=float, default=25.0)
    sc.add_argument("--gates-per-offset", type=int, default=500_000)

    ln = sub.add_parser("linear", help="linear photodiode mode on a bit string")
    ln.add_argument("bits", help="bit string over {0,1}")
    return parser


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.gates is not None:
        cfg = replace(cfg, n_gates=args.gates)
    if args.out is not None:
        cfg = replace(cfg, outputs=args.out)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_run_config(args)
        out = cfg.outputs
        if args.command == "tune":
            result = run_tune(cfg, out)
            print(
                f"tuned: delay_fine={result.tuned_cfg.sd.delay_fine_ps:g} ps, "
                f"trim={result.tuned_cfg.sd.trim_db:g} dB, "
                f"suppression={result.suppression_db:.2f} dB"
            )
        elif args.command == "testsignal":
            spec = TestSignalSpec(
                rail_mv=args.rail_mv,
                gap_samples=args.gap_samples,
                event_width_ps=args.event_width,
                event_mv=args.event_mv,
            )
            result = run_testsignal(spec, out)
            print(
                f"suppression={result.suppression_db:.2f} dB, "
                f"200 MHz clock={result.sine_suppression_db:.2f} dB"
            )
        elif args.command == "characterize":
            result = run_characterize(cfg, out)
            m = result.metrics
            print(
                f"eta={m.eta:.4f}  P_dc={m.p_dc:.3g}  P_dc_ns={m.p_dc_ns:.3g}/ns  "
                f"P_a={m.p_a:.4f}  P_a_ns={m.p_a_ns:.3g}/ns  "
                f"jitter={m.jitter_fwhm_ps:.0f} ps"
            )
        elif args.command == "scan":
            offsets = np.arange(
                args.offset_min, args.offset_max + 0.5 * args.offset_step,
                args.offset_step,
            )
            result = run_scan(
                cfg, out, offsets_ps=offsets, gates_per_offset=args.gates_per_offset
            )
            print(
                f"active time = {result.active_fwhm_ps:.0f} ps, "
                f"duty cycle = {result.duty_cycle:.3f}"
            )
        elif args.command == "linear":
            result = run_linear(args.bits, cfg, out)
            print(f"{len(result.pulses)} pulses from {result.n_ones} ones")
        else:  # pragma: no cover - argparse enforces the choices
            return EXIT_CONFIG
    except (ConfigError, ChainError, MeasurementError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
