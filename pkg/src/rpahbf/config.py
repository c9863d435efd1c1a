"""INI-style run configuration (``key = value`` under sections).

Sections and keys::

    [system]    every SystemConfig field
    [prn] [analog] [digital]
                TransformerEncoderConfig fields for each encoder
    [training]  the scalar PrHbfNetConfig fields
    [greedy]    GreedyConfig fields

Unknown sections or keys are rejected by name.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import GreedyConfig
from .channel import ConfigError, SystemConfig
from .nn import TransformerEncoderConfig
from .prhbfnet import PrHbfNetConfig

__all__ = ["RunConfig", "load_config", "parse_config", "dump_config", "desk_config"]

_ENCODERS = ("prn", "analog", "digital")


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    network: PrHbfNetConfig = field(default_factory=PrHbfNetConfig)
    greedy: GreedyConfig = field(default_factory=GreedyConfig)


def desk_config() -> RunConfig:
    """Desk-scale defaults: Nt=8, N_RF=4, K=2, Nc=8, M=4."""
    return RunConfig()


def _convert(kind, raw: str, key: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r}") from None


def _scalar_fields(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        default = f.default
        if isinstance(default, (bool, int, float, str)):
            out[f.name] = type(default)
    return out


def _apply(cls, base, section: configparser.SectionProxy, name: str):
    kinds = _scalar_fields(cls)
    changes = {}
    for key, raw in section.items():
        if key not in kinds:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        changes[key] = _convert(kinds[key], raw, key)
    try:
        return dataclasses.replace(base, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    run = desk_config()
    system, network, greedy = run.system, run.network, run.greedy
    encoders = {name: getattr(network, name) for name in _ENCODERS}
    for name in parser.sections():
        section = parser[name]
        if name == "system":
            system = _apply(SystemConfig, system, section, name)
        elif name in _ENCODERS:
            encoders[name] = _apply(TransformerEncoderConfig, encoders[name], section, name)
        elif name == "training":
            network = _apply(PrHbfNetConfig, network, section, name)
        elif name == "greedy":
            greedy = _apply(GreedyConfig, greedy, section, name)
        else:
            raise ConfigError(f"unknown section [{name}]")
    network = dataclasses.replace(network, **encoders)
    return RunConfig(system, network, greedy)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(run: RunConfig) -> str:
    """Serialize every key; ``parse_config(dump_config(r)) == r``."""
    buf = io.StringIO()

    def section(name, obj, cls):
        buf.write(f"[{name}]\n")
        for key in _scalar_fields(cls):
            buf.write(f"{key} = {_fmt(getattr(obj, key))}\n")
        buf.write("\n")

    section("system", run.system, SystemConfig)
    for name in _ENCODERS:
        section(name, getattr(run.network, name), TransformerEncoderConfig)
    section("training", run.network, PrHbfNetConfig)
    section("greedy", run.greedy, GreedyConfig)
    return buf.getvalue()
