"""Run configuration: flat key=value text with dotted section prefixes.

The format is diff-friendly for experiment logs:

    gate.f_g_hz=200000000.0
    laser.mu=1.0
    apd.eta_peak=0.1718
    sd.trim_db=0.0
    run.n_gates=10000000
    run.seed=12345

Floats serialize via repr() so parse(serialize(cfg)) == cfg exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace

from .apd import APDParams, ConfigError, GateConfig, LaserConfig
from .sdchain import SDConfig

_SECTIONS = {
    "gate": GateConfig,
    "laser": LaserConfig,
    "apd": APDParams,
    "sd": SDConfig,
}


@dataclass(frozen=True)
class RunConfig:
    gate: GateConfig
    laser: LaserConfig
    apd: APDParams
    sd: SDConfig
    n_gates: int = 10_000_000
    seed: int = 12345
    sample_rate_hz: float = 1e10
    outputs: str = "out"

    def validate(self) -> None:
        if self.n_gates < 1:
            raise ConfigError(f"run.n_gates must be >= 1, got {self.n_gates}")
        if self.sample_rate_hz <= 0:
            raise ConfigError("run.sample_rate_hz must be positive")
        self.gate.validate()
        self.laser.validate(self.gate.f_g_hz)
        self.apd.validate()
        self.sd.validate()

    @property
    def ratio(self) -> int:
        """Gate-to-laser frequency ratio R = f_g / f_p."""
        return int(round(self.gate.f_g_hz / self.laser.f_p_hz))


def default_config() -> RunConfig:
    """Reference operating point: 200 MHz square gating, 50 MHz laser at
    one photon per pulse, physics calibrated so a 1e7-gate run reproduces
    eta = 6.4% and P_a = 6.3% through the full chain (see README)."""
    return RunConfig(
        gate=GateConfig(),
        laser=LaserConfig(),
        apd=APDParams(),
        sd=SDConfig(),
    )


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text: str, typ):
    if typ is bool:
        if text not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {text!r}")
        return text == "true"
    if typ is int:
        return int(text)
    if typ is float:
        return float(text)
    return text


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section, obj in (
        ("gate", cfg.gate), ("laser", cfg.laser), ("apd", cfg.apd), ("sd", cfg.sd),
    ):
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name}={_format_value(getattr(obj, f.name))}")
    lines.append(f"run.n_gates={cfg.n_gates}")
    lines.append(f"run.seed={cfg.seed}")
    lines.append(f"run.sample_rate_hz={cfg.sample_rate_hz!r}")
    lines.append(f"run.outputs={cfg.outputs}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    run: dict[str, object] = {}
    run_types = {"n_gates": int, "seed": int, "sample_rate_hz": float, "outputs": str}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} has no section prefix")
        section, _, name = key.partition(".")
        if section == "run":
            if name not in run_types:
                raise ConfigError(f"line {lineno}: unknown key run.{name}")
            run[name] = _parse_value(value, run_types[name])
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        field_types = {f.name: f.type for f in dataclasses.fields(_SECTIONS[section])}
        if name not in field_types:
            raise ConfigError(f"line {lineno}: unknown key {section}.{name}")
        typ = {"float": float, "int": int, "str": str, "bool": bool}[field_types[name]]
        values[section][name] = _parse_value(value, typ)

    cfg = default_config()
    cfg = replace(
        cfg,
        gate=replace(cfg.gate, **values["gate"]),
        laser=replace(cfg.laser, **values["laser"]),
        apd=replace(cfg.apd, **values["apd"]),
        sd=replace(cfg.sd, **values["sd"]),
        **run,
    )
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        f.write(serialize_config(cfg))
