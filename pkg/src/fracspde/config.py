"""INI-style experiment configuration with strict keys and key-path validation errors."""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .errors import DomainError, FracSPDEError
from .grid import GridSpec
from .kernels import ModelParams
from .noise import LevyMeasureSpec, SigmaSpec, sigma_bounded, sigma_linear, sigma_power, sigma_zero

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "serialize", "SCHEMA"]


class ConfigError(FracSPDEError, ValueError):
    """Malformed or invalid configuration; ``key`` is the dotted key path when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if key:
            where.append(key)
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{' at '.join(where)}: {message}" if where else message)


def _float_list(text: str) -> tuple:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    return tuple(float(p) for p in parts)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options: str) -> Callable:
    def parse(text: str) -> str:
        val = text.strip()
        if val not in options:
            raise ValueError(f"must be one of {options}")
        return val
    return parse


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


# section -> key -> (parser, default, check, bound description)
SCHEMA: dict = {
    "model": {
        "alpha": (float, None, lambda x: 0 < x <= 2, "(0, 2]"),
        "beta": (float, 1.0, lambda x: 0 < x <= 1, "(0, 1]"),
        "nu": (float, 1.0, _positive, "> 0"),
        "d": (int, 1, lambda x: x in (1, 2), "{1, 2}"),
    },
    "grid": {
        "half_width": (float, 8.0, _positive, "> 0"),
        "n": (int, 128, lambda x: x >= 2 and x & (x - 1) == 0, "a power of two >= 2"),
        "T": (float, 1.0, _positive, "> 0"),
        "nt": (int, 32, lambda x: x >= 1, ">= 1"),
        "symbol_tol": (float, 1e-8, _positive, "> 0"),
        "tail_tol": (float, 1e-6, _positive, "> 0"),
    },
    "sigma": {
        "kind": (_choice("linear", "bounded", "power", "zero"), "linear", None, ""),
        "scale": (float, 1.0, math.isfinite, "finite"),
        "rho": (float, 2.0, lambda x: x > 1, "> 1"),
        "mark_power": (float, 1.0, _nonneg, ">= 0"),
    },
    "mu": {
        "form": (_choice("atoms", "exponential", "power"), "atoms", None, ""),
        "atoms": (_float_list, (1.0,), lambda x: len(x) > 0, "nonempty"),
        "masses": (_float_list, (1.0,), lambda x: len(x) > 0 and min(x) >= 0, "nonnegative"),
        "eps": (float, 0.01, _positive, "> 0"),
        "R": (float, 10.0, _positive, "> 0"),
        "rate": (float, 1.0, _positive, "> 0"),
        "exponent": (float, 1.0, lambda x: 0 < x < 2, "(0, 2)"),
        "intensity": (float, 1.0, _positive, "> 0"),
    },
    "initial": {
        "kind": (_choice("constant", "cosine", "bump"), "constant", None, ""),
        "level": (float, 1.0, math.isfinite, "finite"),
        "amplitude": (float, 0.0, math.isfinite, "finite"),
        "width": (float, 1.0, _positive, "> 0"),
    },
    "run": {
        "noise_kind": (_choice("compensated", "noncompensated"), "compensated", None, ""),
        "replicas": (int, 100, lambda x: x >= 1, ">= 1"),
        "seed": (int, 0, lambda x: 0 <= x < 2 ** 64, "[0, 2^64)"),
        "override": (_bool, False, None, ""),
    },
    "ml": {
        "z_min": (float, -50.0, lambda x: x <= 0, "<= 0"),
        "z_max": (float, 0.0, lambda x: x <= 0, "<= 0"),
        "points": (int, 101, lambda x: x >= 2, ">= 2"),
    },
    "density": {
        "t": (float, 1.0, _positive, "> 0"),
        "x_min": (float, 0.0, _nonneg, ">= 0"),
        "x_max": (float, 5.0, _positive, "> 0"),
        "points": (int, 51, lambda x: x >= 2, ">= 2"),
    },
    "kernel": {
        "times": (_float_list, (1.0,), lambda x: len(x) > 0 and min(x) > 0, "positive"),
        "x_min": (float, 0.0, _nonneg, ">= 0"),
        "x_max": (float, 4.0, _positive, "> 0"),
        "points": (int, 41, lambda x: x >= 2, ">= 2"),
    },
    "isometry": {
        "integrand": (_choice("one", "s_abs_h", "cos_x"), "one", None, ""),
        "constant": (float, 1.0, math.isfinite, "finite"),
        "T": (float, 1.0, _positive, "> 0"),
        "half_width": (float, 0.5, _positive, "> 0"),
    },
    "moments": {
        "p": (int, 2, lambda x: x in (1, 2), "{1, 2}"),
        "window_start": (float, -1.0, None, ""),
        "window_end": (float, -1.0, None, ""),
    },
    "bounds": {
        "target": (float, 0.25, lambda x: 0 < x < 1, "(0, 1)"),
        "gamma": (float, 1.0, _positive, "> 0"),
        "form": (_choice("printed", "derived"), "printed", None, ""),
    },
    "upsilon": {
        "gamma_min": (float, 0.01, _positive, "> 0"),
        "gamma_max": (float, 100.0, _positive, "> 0"),
        "points": (int, 41, lambda x: x >= 2, ">= 2"),
        "kappa": (float, 1.0, _positive, "> 0"),
        "L": (float, 1.0, _positive, "> 0"),
    },
    "blowup": {
        "kappa": (float, 1.0, _positive, "> 0"),
        "L": (float, 1.0, _positive, "> 0"),
        "rho": (float, 2.0, lambda x: x > 1, "> 1"),
        "eta": (float, 1.0, _positive, "> 0"),
        "C": (float, 1.0, _positive, "> 0"),
        "D": (float, 1.0, _nonneg, ">= 0"),
        "gamma_exp": (float, 1.0, _positive, "> 0"),
        "theta": (float, 0.0, lambda x: 0 <= x < 1, "[0, 1)"),
        "t_max": (float, 2.0, _positive, "> 0"),
        "steps": (int, 2000, lambda x: x >= 2, ">= 2"),
    },
}

REQUIRED_SECTIONS = ("model",)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return number
        elif current == section and key is not None:
            name = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            if name == key:
                return number
    return None


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration: ``values[section][key]`` with defaults filled in."""

    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.values == other.values

    @property
    def model(self) -> ModelParams:
        m = self.values["model"]
        return ModelParams(m["alpha"], m["beta"], m["nu"], m["d"])

    @property
    def grid(self) -> GridSpec:
        g = self.values["grid"]
        return GridSpec(self.values["model"]["d"], g["half_width"], g["n"], g["T"], g["nt"],
                        g["symbol_tol"], g["tail_tol"])

    @property
    def sigma(self) -> SigmaSpec:
        s = self.values["sigma"]
        if s["kind"] == "linear":
            return sigma_linear(s["scale"], s["mark_power"])
        if s["kind"] == "bounded":
            return sigma_bounded(s["scale"], s["mark_power"])
        if s["kind"] == "power":
            return sigma_power(s["scale"], s["rho"], s["mark_power"])
        return sigma_zero()

    @property
    def mu(self) -> LevyMeasureSpec:
        m = self.values["mu"]
        d = self.values["model"]["d"]
        if m["form"] == "atoms":
            return LevyMeasureSpec.discrete(np.array(m["atoms"]).reshape(-1, d), m["masses"], d=d, label="atoms")
        c, rate, expo = m["intensity"], m["rate"], m["exponent"]
        if m["form"] == "exponential":
            return LevyMeasureSpec.radial_density(lambda r: c * np.exp(-rate * r), m["eps"], m["R"], d=d,
                                                  label="exponential")
        return LevyMeasureSpec.radial_density(lambda r: c * r ** (-d - expo), m["eps"], m["R"], d=d,
                                              label="power")

    def initial_field(self, grid: GridSpec) -> np.ndarray:
        ini = self.values["initial"]
        coords = grid.coordinates()
        r2 = np.sum(coords ** 2, axis=-1)
        if ini["kind"] == "constant":
            return np.full(grid.shape, ini["level"])
        if ini["kind"] == "cosine":
            return ini["level"] + ini["amplitude"] * np.cos(np.pi * coords[..., 0] / grid.half_width)
        return ini["level"] + ini["amplitude"] * np.exp(-r2 / (2.0 * ini["width"] ** 2))


def _validate_objects(cfg: ExperimentConfig, text: str):
    try:
        cfg.model
    except DomainError as exc:
        key = "model.d" if "violates" in str(exc) else "model"
        raise ConfigError(str(exc), key, _line_of(text, "model")) from None
    try:
        cfg.grid
    except DomainError as exc:
        raise ConfigError(str(exc), "grid", _line_of(text, "grid")) from None
    mu = cfg.values["mu"]
    d = cfg.values["model"]["d"]
    if mu["form"] == "atoms":
        if len(mu["atoms"]) != d * len(mu["masses"]):
            raise ConfigError(f"need d={d} coordinates per mass: {len(mu['atoms'])} atoms values for "
                              f"{len(mu['masses'])} masses", "mu.atoms", _line_of(text, "mu", "atoms"))
    elif not mu["eps"] < mu["R"]:
        raise ConfigError("eps must be smaller than R", "mu.eps", _line_of(text, "mu", "eps"))
    try:
        cfg.mu
        cfg.sigma
    except DomainError as exc:
        raise ConfigError(str(exc), "mu", _line_of(text, "mu")) from None
    for sec, lo, hi in (("ml", "z_min", "z_max"), ("density", "x_min", "x_max"), ("kernel", "x_min", "x_max"),
                        ("upsilon", "gamma_min", "gamma_max")):
        if not cfg.values[sec][lo] < cfg.values[sec][hi]:
            raise ConfigError(f"{sec}.{lo} must be smaller than {sec}.{hi}", f"{sec}.{lo}",
                              _line_of(text, sec, lo))


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate an INI document; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError("malformed line", line=line) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message if hasattr(exc, "message") else str(exc), line=exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", line=exc.lineno) from None
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", sec, _line_of(text, sec))
        for key in parser[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError("unknown key", f"{sec}.{key}", _line_of(text, sec, key))
    for sec in REQUIRED_SECTIONS:
        if not parser.has_section(sec):
            raise ConfigError(f"missing required section [{sec}]", sec)
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default, check, bound) in keys.items():
            path = f"{sec}.{key}"
            if parser.has_option(sec, key):
                raw = parser.get(sec, key)
                try:
                    val = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"cannot parse {raw!r}: {exc}", path, _line_of(text, sec, key)) from None
            elif default is None:
                raise ConfigError("required key missing", path)
            else:
                val = default
            if check is not None and not check(val):
                raise ConfigError(f"value {val!r} outside {bound}", path, _line_of(text, sec, key))
            values[sec][key] = val
    cfg = ExperimentConfig(values)
    _validate_objects(cfg, text)
    return cfg


def serialize(cfg: ExperimentConfig) -> str:
    """Render every section and key (defaults included) so that parsing is lossless."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key in keys:
            lines.append(f"{key} = {_format(cfg.values[sec][key])}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, replicas: int | None = None) -> ExperimentConfig:
    values = {sec: dict(keys) for sec, keys in cfg.values.items()}
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed outside [0, 2^64)", "run.seed")
        values["run"]["seed"] = int(seed)
    if replicas is not None:
        if replicas < 1:
            raise ConfigError("replicas must be >= 1", "run.replicas")
        values["run"]["replicas"] = int(replicas)
    return ExperimentConfig(values)
