"""Experiment configuration: flat key/value YAML, SI units, nominal defaults."""

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from mnpcomm import physics
from mnpcomm.analytic import SeriesControl
from mnpcomm.channel import ChannelGeometry, Scenario
from mnpcomm.link import LinkConfig
from mnpcomm.sim import BOUNDARIES, SimConfig

# the system parameter table; sample_offset "auto" means d / v_f and dt "auto"
# picks 2 ms for impulse responses and 20 ms for error-rate runs
PARAMETERS = {
    "eta": 1e-3,
    "temperature": 300.0,
    "coating_thickness": 1e-9,
    "mean_radius": 50e-9,
    "sd_radius": 10e-9,
    "saturation_magnetization": 5e5,
    "field_gradient": 5.0,
    "distance": 1e-3,
    "height": 10e-6,
    "receiver_width": 0.1e-3,
    "receiver_height": 1e-6,
    "flow_velocity": 0.5e-3,
    "symbol_duration": 2.0,
    "sample_offset": "auto",
    "threshold": 1,
    "n_tx": 1000,
    "sequence_length": 10,
    "n_terms": 500,
    "tail_tolerance": 1e-9,
    "dt": "auto",
    "n_realizations": 1000,
    "seed": 0,
}

SWEEPS = {
    "release_height": "auto",
    "boundary": "bridge",
    "n_jobs": 1,
    # magnetization
    "radii": [40e-9, 50e-9, 60e-9],
    "b_max": 2e-3,
    "n_points": 201,
    # impulse
    "gradients": [5.0, 10.0, 20.0],
    "equilibrium_gradients": [5.0],
    "t_start": 1.8,
    "t_stop": 2.2,
    "n_times": 201,
    "simulate": "auto",
    # ser
    "n_tx_list": [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000],
    "flow_scales": [0.8, 1.0, 1.2],
    "radius_samples": 100_000,
    "ser_floor": 5e-5,
}

DEFAULTS = {**PARAMETERS, **SWEEPS}
DEFAULT_DT = {"impulse": 2e-3, "ser": 20e-3}

_INTEGER_KEYS = {"threshold", "n_tx", "sequence_length", "n_terms", "n_realizations", "seed",
                 "n_points", "n_times", "radius_samples", "n_jobs"}
_LIST_KEYS = {"radii", "gradients", "equilibrium_gradients", "n_tx_list", "flow_scales"}


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending field."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


def _number(key, value, integer=False):
    if isinstance(value, str):
        # YAML 1.1 reads exponent forms without a dot (1e-5) as strings
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer:
        if not math.isfinite(value) or float(value) != int(value):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(key, f"must be finite, got {value!r}")
    return float(value)


def _coerce(key, value):
    if key in ("sample_offset", "dt", "release_height") and value == "auto":
        return value
    if key == "simulate":
        if value == "auto" or isinstance(value, bool):
            return value
        raise ConfigError(key, f"expected true, false or auto, got {value!r}")
    if key == "boundary":
        if value not in BOUNDARIES:
            raise ConfigError(key, f"expected one of {BOUNDARIES}, got {value!r}")
        return value
    if key in _LIST_KEYS:
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(key, f"expected a non-empty list, got {value!r}")
        return [_number(f"{key}[{i}]", v, integer=key == "n_tx_list") for i, v in enumerate(value)]
    return _number(key, value, integer=key in _INTEGER_KEYS)


def _check(values):
    def need(key, ok, text):
        if not ok:
            raise ConfigError(key, f"{text}, got {values[key]!r}")

    for key in ("eta", "temperature", "mean_radius", "saturation_magnetization", "height",
                "receiver_width", "symbol_duration", "tail_tolerance", "b_max", "ser_floor"):
        need(key, values[key] > 0, "must be > 0")
    for key in ("coating_thickness", "sd_radius", "field_gradient", "distance", "flow_velocity"):
        need(key, values[key] >= 0, "must be >= 0")
    need("receiver_height", 0 < values["receiver_height"] <= values["height"],
         "must lie in (0, height]")
    if values["release_height"] != "auto":
        need("release_height", 0 <= values["release_height"] <= values["height"],
             "must lie in [0, height]")
    if values["sample_offset"] != "auto":
        need("sample_offset", values["sample_offset"] > 0, "must be > 0")
    elif values["flow_velocity"] == 0:
        raise ConfigError("sample_offset", "must be set explicitly when flow_velocity is 0")
    if values["dt"] != "auto":
        need("dt", values["dt"] > 0, "must be > 0")
    need("threshold", values["threshold"] >= 1, "must be >= 1")
    need("n_tx", values["n_tx"] >= 0, "must be >= 0")
    for key in ("sequence_length", "n_terms", "n_realizations", "n_points", "n_times",
                "radius_samples", "n_jobs"):
        need(key, values[key] >= 1, "must be >= 1")
    need("seed", 0 <= values["seed"] < 2**64, "must be an unsigned 64-bit integer")
    need("t_start", values["t_start"] > 0, "must be > 0")
    need("t_stop", values["t_stop"] > values["t_start"], "must exceed t_start")
    for key in ("radii", "flow_scales"):
        for i, v in enumerate(values[key]):
            if not v > 0:
                raise ConfigError(f"{key}[{i}]", f"must be > 0, got {v!r}")
    for key in ("gradients", "equilibrium_gradients", "n_tx_list"):
        for i, v in enumerate(values[key]):
            if not v >= 0:
                raise ConfigError(f"{key}[{i}]", f"must be >= 0, got {v!r}")


def parse_assignment(text):
    """Split ``key=value`` and parse the value as YAML (numbers, lists, booleans)."""
    if "=" not in text:
        raise ConfigError(text, "expected key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}: {exc}") from None
    return key, value


@dataclass
class ExperimentConfig:
    """Resolved parameter set; every key present, validated."""

    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def resolve(cls, file_values=None, overrides=None):
        """Defaults, then file values, then command-line overrides."""
        merged = dict(DEFAULTS)
        for source in (file_values or {}, overrides or {}):
            for key, value in source.items():
                if key not in DEFAULTS:
                    raise ConfigError(key, "unknown parameter")
                merged[key] = value
        values = {key: _coerce(key, value) for key, value in merged.items()}
        _check(values)
        return cls(values)

    @classmethod
    def load(cls, path=None, assignments=(), seed=None):
        file_values = {}
        if path is not None:
            text = Path(path).read_text()
            try:
                file_values = yaml.safe_load(text) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(str(path), f"not valid key/value text: {exc}") from None
            if not isinstance(file_values, dict):
                raise ConfigError(str(path), "expected a flat mapping of key: value")
        overrides = dict(parse_assignment(a) for a in assignments)
        if seed is not None:
            overrides["seed"] = seed
        return cls.resolve(file_values, overrides)

    def __getitem__(self, key):
        return self.values[key]

    def scenario(self):
        v = self.values
        geom = ChannelGeometry(
            height=v["height"],
            tx_distance=v["distance"],
            receiver_width=v["receiver_width"],
            receiver_height=v["receiver_height"],
            release_height=None if v["release_height"] == "auto" else v["release_height"],
        )
        return Scenario(
            geometry=geom,
            fluid=physics.FluidEnvironment(v["eta"], v["temperature"], v["flow_velocity"]),
            magnet=physics.MagnetField(v["field_gradient"]),
            sizes=physics.SizeDistribution(v["mean_radius"], v["sd_radius"]),
            coating_thickness=v["coating_thickness"],
            saturation_magnetization=v["saturation_magnetization"],
        )

    def series(self):
        return SeriesControl(self.values["n_terms"], self.values["tail_tolerance"])

    def link(self):
        v = self.values
        return LinkConfig(
            symbol_duration=v["symbol_duration"],
            sample_offset=None if v["sample_offset"] == "auto" else v["sample_offset"],
            threshold=v["threshold"],
            n_tx=v["n_tx"],
            sequence_length=v["sequence_length"],
        )

    def time_step(self, experiment):
        dt = self.values["dt"]
        return DEFAULT_DT[experiment] if dt == "auto" else dt

    def sim(self, experiment):
        v = self.values
        return SimConfig(
            time_step=self.time_step(experiment),
            n_realizations=v["n_realizations"],
            seed=v["seed"],
            boundary=v["boundary"],
            n_jobs=v["n_jobs"],
        )

    def simulate(self, experiment):
        flag = self.values["simulate"]
        return experiment == "impulse" if flag == "auto" else flag
