"""Parameter presets: loading, overriding and hashing.

Preset files are INI-style key/value text read with :mod:`configparser`.
Sections and keys (units in brackets)::

    [system]      d_gs [GHz], d_es [GHz], thermal_ratio, temperature_label [K],
                  hyperfine_a [MHz, optional]
    [rates]       k_r, gamma0, gamma1, kappa0, kappa1, k_sl_0to1, k_sl_1to0 [s^-1]
    [calibration] t_is [ns], tau_es [ns], is_fraction, k_exp [s^-1],
                  kappa_ratio, gamma_ratio, t1 [ns]
    [laser]       k_exp [s^-1], t_rise [ns], t_fall [ns]
    [microwave]   rabi_period [ns], t2rho [ns], mw_advances_time [bool]
    [detector]    bin_width [ns], shots, efficiency, pl_scale, noise [bool],
                  window_start [ns], window_end [ns], steady_start [ns],
                  steady_end [ns], median_filter [bool]
    [simulation]  dt_sample [ns], dt_max [ns], init_duration [ns],
                  readout_duration [ns], seed

Every section except ``[rates]`` may be omitted; ``[rates]`` may be replaced
by a ``[calibration]`` section, in which case the rates are calibrated on load.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, ParameterError
from .model import CalibrationTargets, RateParams, SpinSystemConfig, calibrate_rates

PRESET_DIR = Path(__file__).parent / "presets"
PRESET_ENV = "SPINSHELVE_PRESETS"
K_EXP = 2.7e7


@dataclass(frozen=True)
class Calibration:
    targets: CalibrationTargets
    kappa_ratio: float
    gamma_ratio: float
    t1: float | None = None

    def run(self, thermal_ratio: float = 2.0) -> RateParams:
        return calibrate_rates(
            self.targets, self.kappa_ratio, self.gamma_ratio, thermal_ratio=thermal_ratio, t1=self.t1
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a protocol simulation needs besides its sweep grids."""

    system: SpinSystemConfig
    k_exp: float = K_EXP
    t_rise: float = 0.79
    t_fall: float = 0.79
    rabi_period: float = 40.0
    t2rho: float = 56.0
    mw_advances_time: bool = False
    bin_width: float = 1.0
    shots: int = 10_000
    efficiency: float = 1.0
    pl_scale: float = 1e6
    noise: bool = False
    window: tuple[float, float] = (0.0, 60.0)
    steady_window: tuple[float, float] = (2000.0, 3000.0)
    median_filter: bool = True
    dt_sample: float = 0.25
    dt_max: float = 0.05
    init_duration: float = 3000.0
    readout_duration: float = 3000.0
    seed: int = 0
    calibration: Calibration | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.k_exp > 0:
            raise ParameterError("k_exp must be positive")
        for name in ("t_rise", "t_fall"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        for name in ("rabi_period", "t2rho", "bin_width", "dt_sample", "dt_max", "pl_scale"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not 0 < self.efficiency <= 1:
            raise ParameterError("efficiency must lie in (0, 1]")
        if self.shots < 1:
            raise ParameterError("shots must be >= 1")
        if not self.window[0] < self.window[1]:
            raise ParameterError("measurement window must have start < end")
        if not self.steady_window[0] < self.steady_window[1]:
            raise ParameterError("steady window must have start < end")

    @property
    def rates(self) -> RateParams:
        return self.system.rates

    def with_rates(self, **changes) -> "ExperimentConfig":
        return replace(self, system=replace(self.system, rates=self.system.rates.replace(**changes)))

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("calibration")
        d["system"]["rates"] = self.rates.to_dict()
        d["window"] = list(self.window)
        d["steady_window"] = list(self.steady_window)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        system = dict(d.pop("system"))
        system["rates"] = RateParams(**system["rates"])
        d["window"] = tuple(d["window"])
        d["steady_window"] = tuple(d["steady_window"])
        return cls(system=SpinSystemConfig(**system), **d)


def preset_search_path() -> list[Path]:
    paths = [Path(p) for p in os.environ.get(PRESET_ENV, "").split(os.pathsep) if p]
    return paths + [PRESET_DIR]


def resolve_preset(name_or_path: str | os.PathLike) -> Path:
    """Find a preset by file path or by bare name on the search path."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    if p.suffix == "" and len(p.parts) == 1:
        for directory in preset_search_path():
            candidate = directory / f"{p.name}.conf"
            if candidate.is_file():
                return candidate
    raise ConfigError(f"preset not found: {name_or_path}")


def available_presets() -> list[str]:
    names = set()
    for directory in preset_search_path():
        if directory.is_dir():
            names.update(p.stem for p in directory.glob("*.conf"))
    return sorted(names)


_BOOL_KEYS = {"mw_advances_time", "noise", "median_filter"}
_INT_KEYS = {"shots", "seed"}
_FLOAT_SECTIONS = {
    "laser": ("k_exp", "t_rise", "t_fall"),
    "microwave": ("rabi_period", "t2rho", "mw_advances_time"),
    "detector": (
        "bin_width", "shots", "efficiency", "pl_scale", "noise", "window_start", "window_end",
        "steady_start", "steady_end", "median_filter",
    ),
    "simulation": ("dt_sample", "dt_max", "init_duration", "readout_duration", "seed"),
}


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)


def _get(cp, section, key, kind=float):
    try:
        raw = cp.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError) as exc:
        raise ConfigError(f"missing config key {section}.{key}") from exc
    try:
        if kind is bool:
            return cp.getboolean(section, key)
        if kind is int:
            return int(float(raw))
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc


def apply_overrides(cp: configparser.ConfigParser, overrides: dict[str, str] | None) -> None:
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override key must be section.key, got {dotted!r}")
        section, key = dotted.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))


def parse_config(text: str, overrides: dict[str, str] | None = None, name: str = "custom") -> ExperimentConfig:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    apply_overrides(cp, overrides)

    calibration = None
    if cp.has_section("calibration"):
        t1 = cp.get("calibration", "t1", fallback=None)
        calibration = Calibration(
            CalibrationTargets(
                t_is=_get(cp, "calibration", "t_is"),
                tau_es=_get(cp, "calibration", "tau_es"),
                is_fraction=_get(cp, "calibration", "is_fraction"),
                k_exp=_get(cp, "calibration", "k_exp"),
            ),
            kappa_ratio=_get(cp, "calibration", "kappa_ratio"),
            gamma_ratio=_get(cp, "calibration", "gamma_ratio"),
            t1=None if t1 in (None, "", "inf", "none") else float(t1),
        )

    thermal_ratio = cp.getfloat("system", "thermal_ratio", fallback=2.0)
    if cp.has_section("rates"):
        rates = RateParams(
            **{k: _get(cp, "rates", k) for k in ("k_r", "gamma0", "gamma1", "kappa0", "kappa1")},
            k_sl_0to1=cp.getfloat("rates", "k_sl_0to1", fallback=0.0),
            k_sl_1to0=cp.getfloat("rates", "k_sl_1to0", fallback=0.0),
        )
    elif calibration is not None:
        rates = calibration.run(thermal_ratio)
    else:
        raise ConfigError("config needs a [rates] or a [calibration] section")

    hyperfine = cp.get("system", "hyperfine_a", fallback=None)
    temp = cp.get("system", "temperature_label", fallback=None)
    try:
        system = SpinSystemConfig(
            rates=rates,
            d_gs=cp.getfloat("system", "d_gs", fallback=3.49),
            d_es=cp.getfloat("system", "d_es", fallback=2.09),
            hyperfine_a=None if hyperfine in (None, "") else float(hyperfine),
            thermal_ratio=thermal_ratio,
            temperature_label=None if temp in (None, "") else float(temp),
            name=name,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    kwargs = {}
    for section, keys in _FLOAT_SECTIONS.items():
        for key in keys:
            if cp.has_option(section, key):
                kind = bool if key in _BOOL_KEYS else int if key in _INT_KEYS else float
                kwargs[key] = _get(cp, section, key, kind)
    if "window_start" in kwargs or "window_end" in kwargs:
        kwargs["window"] = (kwargs.pop("window_start", 0.0), kwargs.pop("window_end", 60.0))
    if "steady_start" in kwargs or "steady_end" in kwargs:
        kwargs["steady_window"] = (kwargs.pop("steady_start", 2000.0), kwargs.pop("steady_end", 3000.0))
    return ExperimentConfig(system=system, calibration=calibration, **kwargs)


def load_config(name_or_path: str | os.PathLike, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = resolve_preset(name_or_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read preset {path}: {exc}") from exc
    return parse_config(text, overrides, name=path.stem)


def default_config(overrides: dict[str, str] | None = None) -> ExperimentConfig:
    return load_config("room_temperature", overrides)
