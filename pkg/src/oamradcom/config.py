"""Scenario configuration: JSON schema, presets and loading.

Angles are given in degrees in JSON and held in radians in memory.  Every
default lives in ``SCHEMA`` and is written back out by ``to_dict``, so a
report's config echo loads to the same scenario.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .forward import ForwardModelError, OamSystemConfig, equal_weights, snr_to_noise_variance
from .scene import SceneError, ScattererState, TargetState

PRESETS = ("paper-sec5",)


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "OAM radar-communication scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "targets"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_tx", "n_rx", "radius", "modes", "wavenumbers"],
            "properties": {
                "n_tx": {"type": "integer", "minimum": 1},
                "n_rx": {"type": "integer", "minimum": 1},
                "radius": {**_pos, "description": "array radius in metres"},
                "modes": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "wavenumbers": {"type": "array", "items": _pos, "minItems": 1,
                                "description": "subcarrier wavenumbers in rad/m"},
                "weights": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0},
                            "default": None, "description": "null means equal weights"},
                "psk_order": {"type": "integer", "default": 4},
                "gain": {**_pos, "default": 1.0, "description": "radar echo constant"},
                "comm_gain": {**_pos, "default": 1.0, "description": "communication channel constant"},
            },
        },
        "targets": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["range", "elevation_deg", "azimuth_deg", "scatterers"],
                "properties": {
                    "range": _pos,
                    "elevation_deg": _num,
                    "azimuth_deg": _num,
                    "spin_rate": {"type": "number", "minimum": 0, "default": 0.0,
                                  "description": "rad/s"},
                    "half_cone_deg": {**_num, "default": 45.0},
                    "speed": {**_num, "default": 0.0, "description": "m/s"},
                    "direction_deg": {**_num, "default": 0.0},
                    "scatterers": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["role"],
                            "properties": {
                                "role": {"enum": ["centroid", "vertex", "body"]},
                                "rotation_radius": {"type": "number", "minimum": 0, "default": 0.0},
                                "initial_phase": {**_num, "default": 0.0, "description": "rad"},
                                "rcs": {"type": "array", "items": _num, "minItems": 2,
                                        "maxItems": 2, "default": [1.0, 0.0],
                                        "description": "[real, imag]"},
                            },
                        },
                    },
                },
            },
        },
        "snr_db": {"type": "array", "items": _num, "minItems": 1, "default": [20.0]},
        "snapshots": {"type": "integer", "minimum": 1, "default": 200},
        "slow_time": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sample_rate": {**_pos, "default": 4000.0, "description": "Hz"},
                "duration": {**_pos, "default": 2.0, "description": "s"},
            },
            "default": {},
        },
        "trials": {"type": "integer", "minimum": 1, "default": 1},
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "r_max": {**_pos, "default": 1000.0, "description": "longest target distance, m"},
                "omega_max": {**_pos, "default": 40 * np.pi, "description": "largest spin rate, rad/s"},
                "theta_min_deg": {**_num, "default": 5.0},
                "theta_max_deg": {**_num, "default": 90.0},
            },
            "default": {},
        },
        "comm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {"type": "integer", "minimum": 0, "default": 0},
                "csi_error": {"type": "number", "minimum": 0, "default": 0.0},
                "rate_min": {"type": "number", "minimum": 0, "default": 6.0},
                "grid_n": {"type": "integer", "minimum": 2, "default": 10},
                "fisher_rate": {**_pos, "default": 64.0,
                                "description": "slow-time sampling of the Fisher sum, Hz"},
            },
            "default": {},
        },
        "out": {"type": "string", "default": "out"},
    },
}


@dataclass
class Bounds:
    r_max: float = 1000.0
    omega_max: float = 40 * np.pi
    theta_min: float = np.deg2rad(5.0)
    theta_max: float = np.deg2rad(90.0)


@dataclass
class CommSettings:
    target: int = 0
    csi_error: float = 0.0
    rate_min: float = 6.0
    grid_n: int = 10
    fisher_rate: float = 64.0


@dataclass
class ScenarioConfig:
    system: OamSystemConfig
    targets: list
    snr_db: list = field(default_factory=lambda: [20.0])
    snapshots: int = 200
    sample_rate: float = 4000.0
    duration: float = 2.0
    trials: int = 1
    seed: int = 0
    bounds: Bounds = field(default_factory=Bounds)
    comm: CommSettings = field(default_factory=CommSettings)
    out: str = "out"

    def at_snr(self, snr_db: float) -> OamSystemConfig:
        return self.system.replace(noise_variance=snr_to_noise_variance(snr_db))

    def cues(self):
        """Coarse ``(range, theta, phi)`` per target used to resolve the range ambiguity."""
        return [(round(t.range), t.elevation, t.azimuth) for t in self.targets]

    def fisher_times(self) -> np.ndarray:
        """Imaging snapshots at ``t = 0`` followed by the slow-time instants."""
        slow = np.arange(int(round(self.duration * self.comm.fisher_rate))) / self.comm.fisher_rate
        return np.concatenate([np.zeros(self.snapshots), slow])


def _fill_defaults(schema: dict, value):
    """Copy of ``value`` with every schema default applied explicitly."""
    if schema.get("type") == "object" and isinstance(value, dict):
        out = dict(value)
        for key, sub in schema.get("properties", {}).items():
            if key not in out and "default" in sub:
                out[key] = copy.deepcopy(sub["default"])
            if key in out:
                out[key] = _fill_defaults(sub, out[key])
        return out
    if schema.get("type") == "array" and isinstance(value, list) and "items" in schema:
        return [_fill_defaults(schema["items"], v) for v in value]
    return value


def _path(error: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in error.absolute_path) or "<root>"


def from_dict(raw: dict) -> ScenarioConfig:
    """Validate a JSON-like dict and build the scenario."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{_path(exc)}: {exc.message}") from None
    d = _fill_defaults(SCHEMA, raw)
    if not d["targets"]:
        raise ConfigError("targets: at least one target is required")
    sysd = d["system"]
    snr = [float(s) for s in d["snr_db"]]
    try:
        weights = sysd["weights"]
        system = OamSystemConfig(
            n_tx=sysd["n_tx"], n_rx=sysd["n_rx"], radius=float(sysd["radius"]),
            modes=np.array(sysd["modes"]), wavenumbers=np.array(sysd["wavenumbers"], dtype=float),
            noise_variance=snr_to_noise_variance(snr[0]),
            weights=None if weights is None else np.array(weights, dtype=float),
            psk_order=sysd["psk_order"], gain=float(sysd["gain"]),
            comm_gain=float(sysd["comm_gain"]))
    except ForwardModelError as exc:
        raise ConfigError(f"system: {exc}") from None
    targets = []
    for i, t in enumerate(d["targets"]):
        try:
            scat = tuple(ScattererState(rotation_radius=float(s["rotation_radius"]),
                                        initial_phase=float(s["initial_phase"]),
                                        rcs=complex(*s["rcs"]), role=s["role"])
                         for s in t["scatterers"])
            targets.append(TargetState(
                range=float(t["range"]), elevation=np.deg2rad(t["elevation_deg"]),
                azimuth=np.deg2rad(t["azimuth_deg"]), spin_rate=float(t["spin_rate"]),
                half_cone_angle=np.deg2rad(t["half_cone_deg"]), speed=float(t["speed"]),
                direction=np.deg2rad(t["direction_deg"]), scatterers=scat))
        except SceneError as exc:
            raise ConfigError(f"targets/{i}: {exc}") from None
    b = d["bounds"]
    bounds = Bounds(float(b["r_max"]), float(b["omega_max"]),
                    np.deg2rad(b["theta_min_deg"]), np.deg2rad(b["theta_max_deg"]))
    if not 0 <= bounds.theta_min < bounds.theta_max <= np.pi:
        raise ConfigError("bounds: need 0 <= theta_min_deg < theta_max_deg <= 180")
    for i, t in enumerate(targets):
        if t.range > bounds.r_max:
            raise ConfigError(f"targets/{i}: range exceeds bounds.r_max")
        if t.spin_rate > bounds.omega_max:
            raise ConfigError(f"targets/{i}: spin rate exceeds bounds.omega_max")
        if not bounds.theta_min <= t.elevation <= bounds.theta_max:
            raise ConfigError(f"targets/{i}: elevation outside the search bounds")
    c = d["comm"]
    comm = CommSettings(int(c["target"]), float(c["csi_error"]), float(c["rate_min"]),
                        int(c["grid_n"]), float(c["fisher_rate"]))
    if comm.target >= len(targets):
        raise ConfigError("comm/target: index out of range")
    st = d["slow_time"]
    return ScenarioConfig(system=system, targets=targets, snr_db=snr, snapshots=d["snapshots"],
                          sample_rate=float(st["sample_rate"]), duration=float(st["duration"]),
                          trials=d["trials"], seed=d["seed"], bounds=bounds, comm=comm,
                          out=d["out"])


def to_dict(cfg: ScenarioConfig) -> dict:
    """Fully explicit JSON-ready form; ``from_dict(to_dict(c))`` rebuilds ``c``."""
    s = cfg.system
    targets = []
    for t in cfg.targets:
        targets.append({
            "range": t.range, "elevation_deg": float(np.rad2deg(t.elevation)),
            "azimuth_deg": float(np.rad2deg(t.azimuth)), "spin_rate": t.spin_rate,
            "half_cone_deg": float(np.rad2deg(t.half_cone_angle)), "speed": t.speed,
            "direction_deg": float(np.rad2deg(t.direction)),
            "scatterers": [{"role": sc.role, "rotation_radius": sc.rotation_radius,
                            "initial_phase": sc.initial_phase,
                            "rcs": [complex(sc.rcs).real, complex(sc.rcs).imag]}
                           for sc in t.scatterers],
        })
    weights = None if np.allclose(s.weights, equal_weights(s.n_modes), rtol=0, atol=1e-15) \
        else [float(w) for w in s.weights]
    return {
        "system": {"n_tx": s.n_tx, "n_rx": s.n_rx, "radius": s.radius,
                   "modes": [int(m) for m in s.modes],
                   "wavenumbers": [float(k) for k in s.wavenumbers], "weights": weights,
                   "psk_order": s.psk_order, "gain": s.gain, "comm_gain": s.comm_gain},
        "targets": targets,
        "snr_db": list(cfg.snr_db),
        "snapshots": cfg.snapshots,
        "slow_time": {"sample_rate": cfg.sample_rate, "duration": cfg.duration},
        "trials": cfg.trials,
        "seed": cfg.seed,
        "bounds": {"r_max": cfg.bounds.r_max, "omega_max": cfg.bounds.omega_max,
                   "theta_min_deg": float(np.rad2deg(cfg.bounds.theta_min)),
                   "theta_max_deg": float(np.rad2deg(cfg.bounds.theta_max))},
        "comm": {"target": cfg.comm.target, "csi_error": cfg.comm.csi_error,
                 "rate_min": cfg.comm.rate_min, "grid_n": cfg.comm.grid_n,
                 "fisher_rate": cfg.comm.fisher_rate},
        "out": cfg.out,
    }


def paper_sec5() -> dict:
    """The three-target cone scenario: 17-element UCA, modes -8..7, 16 subcarriers."""
    k1 = 209.0
    specs = [(82.5, 20.0, 70.0, 8 * np.pi), (170.0, 80.0, 20.0, 10 * np.pi),
             (165.0, 75.0, 25.0, 11.5 * np.pi)]
    targets = []
    for q, (r, th, ph, om) in enumerate(specs):
        targets.append({
            "range": r, "elevation_deg": th, "azimuth_deg": ph, "spin_rate": om,
            "half_cone_deg": 60.0,
            "scatterers": [
                {"role": "centroid"},
                {"role": "vertex", "rotation_radius": 1.0, "initial_phase": 0.3 + q},
                {"role": "body", "rotation_radius": 0.6, "initial_phase": 2.5 + q},
            ],
        })
    return {
        "system": {"n_tx": 17, "n_rx": 17, "radius": 30 * 2 * np.pi / k1,
                   "modes": list(range(-8, 8)), "wavenumbers": [k1 + i for i in range(16)],
                   "gain": 1e8, "comm_gain": 3.62e3},
        "targets": targets,
        "snr_db": [20.0],
        "bounds": {"r_max": 500.0, "omega_max": 40 * np.pi},
    }


def preset(name: str) -> dict:
    if name == "paper-sec5":
        return paper_sec5()
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def read_json(path) -> dict:
    """Raw scenario dict from a file; parse errors carry line and column."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{p}: no such file")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_config(path) -> ScenarioConfig:
    """Load a scenario from a JSON file or a preset name."""
    if isinstance(path, str) and path in PRESETS:
        return from_dict(preset(path))
    return from_dict(read_json(path))
