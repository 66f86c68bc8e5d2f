"""System and experiment configuration, plus the INI file format that maps onto them.

Files have one section per module (``[scenario]``, ``[stats]``, ``[detequiv]``,
``[montecarlo]``) holding the :class:`SystemConfig` keys, an ``[experiment]``
section and an optional ``[sweep]`` section whose keys are swept fields with
comma-separated values.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for unparsable or invalid configuration files and overrides."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    # Baseline defaults; noise is read as -94 dBm.
    radius_m: float = 1000.0
    num_aps: int = 15
    num_users: int = 40
    antennas_per_ap: int = 32
    ap_power_w: float = 10.0
    noise_dbm: float = -94.0
    pilot_power_w: float = 0.4
    pilot_len: int = 10
    carrier_hz: float = 3.0e9
    ref_dist_m: float = 50.0
    pathloss_exp: float = 3.4
    reg_param_w: float | None = None  # None -> alpha = noise power
    assoc_count: int = 10
    angular_spread_rad: float = 0.3316
    antenna_spacing: float = 0.5
    mc_trials: int = 500
    rng_seed: int = 0

    def __post_init__(self):
        positive = ["radius_m", "antennas_per_ap", "ap_power_w", "pilot_power_w",
                    "pilot_len", "carrier_hz", "ref_dist_m", "pathloss_exp",
                    "assoc_count", "angular_spread_rad", "antenna_spacing"]
        for name in positive:
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be strictly positive, got {value!r}")
        for name in ("num_aps", "num_users", "rng_seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.mc_trials < 2:
            raise ConfigError("mc_trials must be at least 2")
        if self.num_aps > 0 and self.assoc_count > self.num_aps:
            raise ConfigError(
                f"assoc_count ({self.assoc_count}) exceeds num_aps ({self.num_aps})")
        if self.reg_param_w is not None and not self.reg_param_w > 0:
            raise ConfigError("reg_param_w must be strictly positive")

    @property
    def noise_w(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    @property
    def alpha(self) -> float:
        """RZF regularization in watts; defaults to the noise power."""
        return self.noise_w if self.reg_param_w is None else self.reg_param_w

    @property
    def uplink_noise_w(self) -> float:
        # Same receiver noise floor on the pilot link.
        return self.noise_w


SECTIONS: dict[str, tuple[str, ...]] = {
    "scenario": ("radius_m", "num_aps", "num_users", "antennas_per_ap", "ap_power_w",
                 "carrier_hz", "ref_dist_m", "pathloss_exp", "assoc_count",
                 "angular_spread_rad", "antenna_spacing"),
    "stats": ("noise_dbm", "pilot_power_w", "pilot_len"),
    "detequiv": ("reg_param_w",),
    "montecarlo": ("mc_trials", "rng_seed"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(SystemConfig)}
FIELD_SECTION = {name: sec for sec, names in SECTIONS.items() for name in names}

EXPERIMENT_KINDS = ("de_vs_mc_antennas", "de_vs_mc_users", "assoc_sweep", "reg_sweep",
                    "deploy_random", "deploy_kmeans", "gradient_check")
# Sweepable names beyond SystemConfig fields; reg_scale sets alpha = x * noise.
PSEUDO_SWEEP = ("reg_scale",)
GRADIENT_METHODS = ("asymptotic", "exact", "fd")
EXPERIMENT_KEYS = ("kind", "seeds", "output", "layout_file", "fd_eps", "exclusion_m", "max_iter",
                   "gradient")
_REQUIRED_AXIS = {
    "de_vs_mc_antennas": "antennas_per_ap",
    "de_vs_mc_users": "num_users",
    "assoc_sweep": "assoc_count",
    "reg_sweep": "reg_scale",
}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    config: SystemConfig = field(default_factory=SystemConfig)
    sweep: tuple[tuple[str, tuple[float, ...]], ...] = ()
    seeds: tuple[int, ...] = (0,)
    output: str = "results.csv"
    layout_file: str | None = None
    fd_eps: float = 0.5
    exclusion_m: float = 25.0
    max_iter: int = 200
    gradient: str = "asymptotic"

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        for name, values in self.sweep:
            if name not in _FIELD_TYPES and name not in PSEUDO_SWEEP:
                raise ConfigError(f"cannot sweep unknown field {name!r}")
            if len(values) == 0:
                raise ConfigError(f"sweep over {name!r} has no values")
        axis = _REQUIRED_AXIS.get(self.kind)
        if axis is not None and axis not in dict(self.sweep):
            raise ConfigError(f"experiment {self.kind!r} needs a sweep over {axis!r}")
        if self.kind == "reg_sweep" and any(v <= 0 for v in dict(self.sweep)["reg_scale"]):
            raise ConfigError("reg_scale values must be positive")
        if self.gradient not in GRADIENT_METHODS:
            raise ConfigError(f"gradient must be one of {GRADIENT_METHODS}, not {self.gradient!r}")
        if self.fd_eps <= 0 or self.max_iter < 1:
            raise ConfigError("fd_eps must be positive and max_iter >= 1")
        # every sweep point must give a valid config
        for point in self.sweep_points():
            apply_point(self.config, point)

    def sweep_points(self) -> list[dict[str, float]]:
        points: list[dict[str, float]] = [{}]
        for name, values in self.sweep:
            points = [{**p, name: v} for p in points for v in values]
        return points


def apply_point(config: SystemConfig, point: dict[str, float]) -> SystemConfig:
    """Return ``config`` with the swept values substituted."""
    updates: dict[str, Any] = {}
    for name, value in point.items():
        if name == "reg_scale":
            continue
        updates[name] = _coerce(name, value)
    cfg = replace(config, **updates)
    if "reg_scale" in point:
        cfg = replace(cfg, reg_param_w=float(point["reg_scale"]) * cfg.noise_w)
    return cfg


def _coerce(name: str, value: Any):
    typ = _FIELD_TYPES[name]
    if isinstance(value, str):
        value = value.strip()
    if name == "reg_param_w":
        if value is None or (isinstance(value, str) and value.lower() in ("auto", "none", "")):
            return None
        return float(value)
    if typ in (int, "int"):
        f = float(value)
        if not f.is_integer():
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return int(f)
    return float(value)


def _fmt(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return i
    return None


def parse_overrides(items: list[str] | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def loads_config(text: str, overrides: dict[str, str] | None = None,
                 source: str = "<string>") -> tuple[SystemConfig, ExperimentSpec]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    raw: dict[str, dict[str, str]] = {s: dict(parser[s]) for s in parser.sections()}
    for key, value in (overrides or {}).items():
        if "." in key:
            sec, name = key.split(".", 1)
        elif key in FIELD_SECTION:
            sec, name = FIELD_SECTION[key], key
        elif key in EXPERIMENT_KEYS:
            sec, name = "experiment", key
        else:
            raise ConfigError(f"override refers to unknown key {key!r}")
        raw.setdefault(sec, {})[name] = value

    def fail(sec: str, key: str, msg: str):
        line = _line_of(text, key)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: [{sec}] {key}: {msg}")

    known = set(SECTIONS) | {"experiment", "sweep"}
    for sec in raw:
        if sec not in known:
            raise ConfigError(f"{source}: unknown section [{sec}]")

    values: dict[str, Any] = {}
    for sec, names in SECTIONS.items():
        body = raw.get(sec, {})
        for key in body:
            if key not in names:
                fail(sec, key, "unknown key")
        for name in names:
            if name not in body:
                raise ConfigError(f"{source}: missing required key [{sec}] {name}")
            try:
                values[name] = _coerce(name, body[name])
            except (ValueError, ConfigError) as exc:
                fail(sec, name, str(exc))
    try:
        config = SystemConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    exp = raw.get("experiment", {})
    for key in exp:
        if key not in EXPERIMENT_KEYS:
            fail("experiment", key, "unknown key")
    if "kind" not in exp:
        raise ConfigError(f"{source}: missing required key [experiment] kind")
    kwargs: dict[str, Any] = {"kind": exp["kind"], "config": config}
    try:
        if "seeds" in exp:
            kwargs["seeds"] = tuple(int(s) for s in _split_list(exp["seeds"]))
        for key in ("output", "gradient"):
            if key in exp:
                kwargs[key] = exp[key]
        if exp.get("layout_file"):
            kwargs["layout_file"] = exp["layout_file"]
        for key, cast in (("fd_eps", float), ("exclusion_m", float), ("max_iter", int)):
            if key in exp:
                kwargs[key] = cast(exp[key])
    except ValueError as exc:
        raise ConfigError(f"{source}: [experiment] {exc}") from exc
    sweep = []
    for name, value in raw.get("sweep", {}).items():
        try:
            sweep.append((name, tuple(float(v) for v in _split_list(value))))
        except ValueError:
            fail("sweep", name, f"cannot parse values {value!r}")
    kwargs["sweep"] = tuple(sweep)
    try:
        spec = ExperimentSpec(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return config, spec


def load_config(path: str | Path, overrides: dict[str, str] | None = None
                ) -> tuple[SystemConfig, ExperimentSpec]:
    path = Path(path)
    return loads_config(path.read_text(), overrides, source=str(path))


def _split_list(value: str) -> list[str]:
    return [v for v in re.split(r"[,\s]+", value.strip()) if v]


def dumps_config(config: SystemConfig, spec: ExperimentSpec | None = None) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec, names in SECTIONS.items():
        parser[sec] = {name: _fmt(getattr(config, name)) for name in names}
    if spec is not None:
        exp = {"kind": spec.kind, "seeds": ", ".join(str(s) for s in spec.seeds),
               "output": spec.output, "fd_eps": repr(spec.fd_eps),
               "exclusion_m": repr(spec.exclusion_m), "max_iter": str(spec.max_iter),
               "gradient": spec.gradient}
        if spec.layout_file:
            exp["layout_file"] = spec.layout_file
        parser["experiment"] = exp
        if spec.sweep:
            parser["sweep"] = {name: ", ".join(repr(float(v)) for v in values)
                               for name, values in spec.sweep}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_hash(config: SystemConfig, spec: ExperimentSpec | None = None) -> str:
    payload = dumps_config(config, spec)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def as_dict(config: SystemConfig) -> dict[str, Any]:
    return dataclasses.asdict(config)
