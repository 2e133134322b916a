"""Sectioned ``key = value`` source configuration.

Values are SI numbers, optionally with a unit suffix (``4 MHz``, ``350 ps``,
``0.5 m``). Every key has a default and a provenance tag: ``measured`` for
values reported by the experiment this source models, ``assumed`` for
choices made here. Unknown sections or keys are rejected with their line
number; missing keys fall back to the defaults.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

__all__ = [
    "ConfigError",
    "ConfigKey",
    "KEYS",
    "SourceConfig",
    "parse_quantity",
    "load_config",
    "default_config_text",
    "describe_keys",
]

MEASURED = "measured"
ASSUMED = "assumed"


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


_UNITS = {
    "": 1.0,
    "ps": 1e-12, "ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0,
    "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9, "thz": 1e12,
    "nm": 1e-9, "um": 1e-6, "mm": 1e-3, "cm": 1e-2, "m": 1.0,
    "mw": 1.0,
}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([a-zA-Z]*)\s*$")


def parse_quantity(text: Union[str, float], kind: Optional[str] = None) -> float:
    """Parse ``"4 MHz"``-style text to SI units (pump powers stay in mW).

    ``kind`` ("time", "frequency", "length") restricts the accepted suffixes.
    """
    if isinstance(text, (int, float)):
        return float(text)
    m = _QUANTITY.match(text)
    if not m:
        raise ValueError(f"not a number: {text!r}")
    value, unit = float(m.group(1)), m.group(2).lower()
    allowed = {
        "time": {"", "ps", "ns", "us", "ms", "s"},
        "frequency": {"", "hz", "khz", "mhz", "ghz", "thz"},
        "length": {"", "nm", "um", "mm", "cm", "m"},
        "power": {"", "mw"},
    }.get(kind, set(_UNITS))
    if unit not in allowed:
        raise ValueError(f"unit {m.group(2)!r} not valid here: {text!r}")
    return value * _UNITS[unit]


@dataclass(frozen=True)
class ConfigKey:
    section: str
    name: str
    default: str
    kind: Optional[str]
    provenance: str
    note: str

    @property
    def qualified(self) -> str:
        return f"{self.section}.{self.name}"


def _k(section, name, default, kind, provenance, note):
    return ConfigKey(section, name, default, kind, provenance, note)


KEYS: dict[str, ConfigKey] = {k.qualified: k for k in [
    _k("signal_cavity", "fsr", "800 MHz", "frequency", MEASURED, "signal cavity free spectral range"),
    _k("signal_cavity", "fwhm", "4 MHz", "frequency", MEASURED, "signal linewidth"),
    _k("signal_cavity", "peak_transmission", "1", None, ASSUMED, "on-resonance transmission"),
    _k("signal_cavity", "comb_offset", "0 Hz", "frequency", ASSUMED, "nearest resonance offset from lock point"),
    _k("idler_cavity", "fsr", "802 MHz", "frequency", ASSUMED,
       "idler cavity free spectral range; only its nominal 800 MHz is measured"),
    _k("idler_cavity", "fwhm", "5 MHz", "frequency", MEASURED, "idler linewidth"),
    _k("idler_cavity", "peak_transmission", "1", None, ASSUMED, "on-resonance transmission"),
    _k("idler_cavity", "comb_offset", "0 Hz", "frequency", ASSUMED, "nearest resonance offset from lock point"),
    _k("envelope", "fwhm", "120 GHz", "frequency", MEASURED, "phase-matching bandwidth"),
    _k("envelope", "shape", "sinc_squared", "shape", ASSUMED, "sinc_squared or gaussian"),
    _k("etalon", "fsr", "8.4 GHz", "frequency", MEASURED, "idler etalon free spectral range"),
    _k("etalon", "fwhm", "120 MHz", "frequency", MEASURED, "idler etalon bandwidth"),
    _k("etalon", "center_offset", "0 Hz", "frequency", ASSUMED, "etalon peak offset from the idler lock"),
    _k("etalon", "peak_transmission", "1", None, ASSUMED, "insertion loss is folded into single_mode_fraction"),
    _k("rates", "pair_rate_per_mw", "auto", None, ASSUMED,
       "generated pairs/s/mW; auto calibrates to calibration_g2 at calibration_pump"),
    _k("rates", "calibration_g2", "88", None, MEASURED, "g2(0) anchor"),
    _k("rates", "calibration_pump", "1 mW", "power", MEASURED, "pump power of the g2(0) anchor"),
    _k("rates", "eta_signal", "0.06", None, ASSUMED, "signal detection efficiency"),
    _k("rates", "eta_idler", "0.06", None, ASSUMED, "idler detection efficiency"),
    _k("rates", "dark_signal", "200", None, ASSUMED, "signal dark counts per second"),
    _k("rates", "dark_idler", "200", None, ASSUMED, "idler dark counts per second"),
    _k("rates", "duty_cycle", "0.333333333333", None, MEASURED, "chopper open fraction"),
    _k("rates", "single_mode_fraction", "auto", None, ASSUMED,
       "idler survival behind the etalon; auto calibrates to single_mode_rate"),
    _k("rates", "single_mode_rate", "20", None, MEASURED, "filtered coincidence rate per second"),
    _k("rates", "single_mode_pump", "0.9 mW", "power", MEASURED, "pump power of the filtered rate"),
    _k("detector", "jitter_fwhm", "350 ps", "time", MEASURED, "per-detector timing resolution"),
    _k("detector", "dead_time", "0 s", "time", ASSUMED, "0 disables dead time"),
    _k("chopper", "frequency", "1 kHz", "frequency", ASSUMED, "chopper frequency"),
    _k("chopper", "open_fraction", "auto", None, ASSUMED, "auto uses rates.duty_cycle"),
    _k("grid", "tau_span", "400 ns", "time", ASSUMED, "delay grid half width"),
    _k("grid", "tau_step", "16 ps", "time", ASSUMED, "delay grid step"),
    _k("grid", "max_detuning", "6 GHz", "frequency", ASSUMED,
       "mode pairs kept for time-domain work; must stay below 1/(10 tau_step)"),
    _k("counting", "bin_width", "4 ns", "time", MEASURED, "coincidence bin width"),
    _k("counting", "accidental_min", "200 ns", "time", MEASURED, "accidental region start"),
    _k("counting", "accidental_max", "250 ns", "time", MEASURED, "accidental region end"),
    _k("counting", "integration_time", "1200 s", "time", MEASURED, "acquisition time"),
    _k("michelson", "wavelength", "880 nm", "length", MEASURED, "idler wavelength"),
    _k("michelson", "classical_linewidth", "1 MHz", "frequency", ASSUMED, "reference laser linewidth"),
]}

SECTIONS = tuple(dict.fromkeys(k.section for k in KEYS.values()))


def _convert(key: ConfigKey, raw: str):
    raw = raw.strip()
    if key.kind == "shape":
        if raw not in ("sinc_squared", "gaussian"):
            raise ValueError(f"expected sinc_squared or gaussian, got {raw!r}")
        return raw
    if key.default == "auto" and raw == "auto":
        return None
    return parse_quantity(raw, key.kind)


@dataclass(frozen=True)
class SourceConfig:
    """Flat view of all configuration values, SI units (pump in mW)."""

    values: dict
    source: str = "<defaults>"

    def __getitem__(self, qualified: str):
        return self.values[qualified]

    def section(self, name: str) -> dict:
        return {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith(name + ".")}

    def with_values(self, **updates) -> "SourceConfig":
        """Copy with overrides given as ``section__key=value``."""
        vals = dict(self.values)
        for k, v in updates.items():
            q = k.replace("__", ".")
            if q not in KEYS:
                raise ConfigError(f"unknown key {q!r}", source=self.source)
            vals[q] = v
        return SourceConfig(vals, self.source)


def _line_of(text: str, section: str, option: Optional[str]) -> Optional[int]:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if option is None and current == section:
                return n
        elif option is not None and current == section:
            if re.match(rf"^{re.escape(option)}\s*[=:]", s, re.IGNORECASE):
                return n
    return None


def _parse(text: str, source: str) -> SourceConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source) from None
    values = {q: _convert(k, k.default) for q, k in KEYS.items()}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", _line_of(text, section, None), source)
        for option, raw in cp.items(section):
            q = f"{section}.{option}"
            line = _line_of(text, section, option)
            if q not in KEYS:
                raise ConfigError(f"unknown key {option!r} in [{section}]", line, source)
            try:
                values[q] = _convert(KEYS[q], raw)
            except ValueError as exc:
                raise ConfigError(f"{q}: {exc}", line, source) from None
    return SourceConfig(values, source)


def load_config(path: Union[str, Path, None] = None) -> SourceConfig:
    """Read a configuration file; ``None`` gives the shipped defaults."""
    if path is None:
        return _parse(default_config_text(), "source_defaults.cfg")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read: {exc.strerror}", source=str(p)) from None
    return _parse(text, str(p))


def default_config_text() -> str:
    return resources.files("cdcpairs").joinpath("data/source_defaults.cfg").read_text()


def describe_keys(sections) -> str:
    """One line per key: qualified name, default, provenance."""
    rows = [k for k in KEYS.values() if k.section in sections]
    width = max(len(k.qualified) for k in rows)
    return "\n".join(f"  {k.qualified:<{width}}  {k.default:<14} [{k.provenance}] {k.note}" for k in rows)
