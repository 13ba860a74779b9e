"""Sectioned key-value configuration files and ``section.key=value`` overrides."""
from __future__ import annotations

import configparser
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, InvalidValue, UnknownKey
from .experiments import ExperimentConfig
from .kernels import GRID_LAYOUTS, Domain, SpatialKernelSpec, TemporalKernelSpec


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _positive(conv, lo_text="> 0"):
    def parse(text):
        v = conv(text)
        if not v > 0:
            raise ValueError(f"expected {lo_text}")
        return v
    return parse


def _count(text):
    v = float(text)
    if v != int(v) or v < 1:
        raise ValueError("expected an integer >= 1")
    return int(v)


def _seed(text):
    v = int(text)
    if v < 0:
        raise ValueError("expected an integer >= 0")
    return v


def _layout(text):
    if text not in GRID_LAYOUTS:
        raise ValueError(f"expected one of {GRID_LAYOUTS}")
    return text


# (section, key) -> (parser, expected-range text)
SCHEMA = {
    ("kernel", "sigma_t"): (_positive(float), "> 0"),
    ("kernel", "l_t"): (_positive(float), "> 0"),
    ("kernel", "sigma_s"): (_positive(float), "> 0"),
    ("kernel", "l_s"): (_positive(float), "> 0"),
    ("grid", "delta"): (_positive(float), "> 0"),
    ("grid", "layout"): (_layout, f"one of {GRID_LAYOUTS}"),
    ("grid", "lower"): (_floats, "comma-separated floats"),
    ("grid", "upper"): (_floats, "comma-separated floats"),
    ("sensing", "N_r"): (_count, "integer >= 1"),
    ("sensing", "sigma_m"): (_positive(float), "> 0"),
    ("sensing", "dt"): (_positive(float), "> 0"),
    ("run", "t_max"): (_positive(float), "> 0"),
    ("run", "trials"): (_count, "integer >= 1"),
    ("run", "seed"): (_seed, "integer >= 0"),
    ("run", "deployments"): (_count, "integer >= 1"),
    ("run", "ode_substeps"): (_count, "integer >= 1"),
    ("run", "out_dir"): (str, "a path"),
}
_CANONICAL = {(s, k.lower()): (s, k) for s, k in SCHEMA}


def _canonical(section: str, key: str) -> tuple[str, str]:
    try:
        return _CANONICAL[(section.strip().lower(), key.strip().lower())]
    except KeyError:
        raise UnknownKey(f"unknown config key {section}.{key}") from None


def parse_override(text: str) -> tuple[str, str, str]:
    """Split ``section.key=value``."""
    lhs, sep, value = text.partition("=")
    section, dot, key = lhs.partition(".")
    if not sep or not dot:
        raise InvalidValue(f"override {text!r} must look like section.key=value")
    s, k = _canonical(section, key)
    return s, k, value.strip()


def _apply(values: dict, section: str, key: str, text: str):
    conv, expected = SCHEMA[(section, key)]
    try:
        values[(section, key)] = conv(text)
    except ValueError as exc:
        raise InvalidValue(f"{section}.{key}={text!r}: expected {expected}") from exc


def parse_config(path=None, overrides=(), seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    """Build a validated config from an optional file plus overrides.

    Missing keys keep the reference defaults. Overrides are applied after the
    file, and explicit ``seed`` / ``out_dir`` arguments last.
    """
    values: dict[tuple[str, str], object] = {}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        text = Path(path).read_text(encoding="utf-8")
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise InvalidValue(f"cannot parse {path}: {exc}") from exc
        for section in cp.sections():
            for key, val in cp.items(section):
                s, k = _canonical(section, key)
                _apply(values, s, k, val)
    for item in overrides:
        s, k, v = parse_override(item)
        _apply(values, s, k, v)
    if seed is not None:
        _apply(values, "run", "seed", str(seed))
    if out_dir is not None:
        values[("run", "out_dir")] = str(out_dir)

    base = ExperimentConfig()
    get = lambda s, k, default: values.get((s, k), default)
    try:
        temporal = TemporalKernelSpec(get("kernel", "sigma_t", base.temporal.sigma_t), get("kernel", "l_t", base.temporal.l_t))
        spatial = SpatialKernelSpec(get("kernel", "sigma_s", base.spatial.sigma_s), get("kernel", "l_s", base.spatial.l_s))
        domain = Domain(get("grid", "lower", base.domain.lower), get("grid", "upper", base.domain.upper))
        cfg = replace(
            base,
            temporal=temporal,
            spatial=spatial,
            domain=domain,
            delta=get("grid", "delta", base.delta),
            grid_layout=get("grid", "layout", base.grid_layout),
            N_r=get("sensing", "N_r", base.N_r),
            sigma_m=get("sensing", "sigma_m", base.sigma_m),
            dt=get("sensing", "dt", base.dt),
            t_max=get("run", "t_max", base.t_max),
            trials=get("run", "trials", base.trials),
            seed=get("run", "seed", base.seed),
            deployments=get("run", "deployments", base.deployments),
            ode_substeps=get("run", "ode_substeps", base.ode_substeps),
            out_dir=get("run", "out_dir", base.out_dir),
        )
        cfg.steps  # horizon must be a whole number of steps
        cfg.grid()  # spacing must divide the domain
    except ConfigError:
        raise
    except ValueError as exc:
        raise InvalidValue(str(exc)) from exc
    return cfg
