"""Scenario configuration: JSON schema, validation, and the case-study default.

A scenario is a plain JSON-compatible dict.  Top-level keys:

``horizon``            simulation length, seconds
``seed``               master RNG seed
``checkpoint_freq_hz`` checkpointing frequency (the coordinator interval is
                       its reciprocal)
``t_max``              maximum tolerable anomaly duration, seconds
``plant_mode``         "ideal" (outer plant driven by the commanded body
                       velocity) or "coupled" (driven by the velocity
                       reconstructed from the motor speeds)
``robot``              physical/controller parameter overrides
``noise``              per-loop noise standard deviations
``init``               initial state means per loop
``anomalies``          per-loop anomaly windows
                       ``{t_start, t_end, y_a, gamma}``
``ads``                per-loop detector config
                       ``{kind, mode, detection_time, threshold}``
``bounds``             optional per-loop bound parameters for the online
                       bound columns
"""

from __future__ import annotations

import copy
import json

import numpy as np

from . import robot
from .analysis import BoundParams
from .anomaly import AdsConfig, AnomalySchedule, AnomalyWindow
from .timebase import base_resolution_us, to_us

SUBSYSTEMS = (robot.OUTER, robot.INNER_1, robot.INNER_2)


class ConfigError(ValueError):
    """Scenario validation failure; the message lists every violation."""


def default_config() -> dict:
    """The ground-robot case study: 10 s horizon, 1 Hz checkpointing,
    additive bursts on the outer position sensors and both encoders in
    [3.25, 5) and [8.25, 10) with a 0.25 s detection delay."""
    anomaly_windows = [[3.25, 5.0], [8.25, 10.0]]
    return {
        "horizon": 10.0,
        "seed": 0,
        "checkpoint_freq_hz": 1.0,
        "t_max": 5.0,
        "plant_mode": "ideal",
        "out_dir": ".",
        "robot": {},  # overrides for RobotParams fields
        "noise": {
            "outer_q_std": 0.1,
            "outer_r_std": 0.1,
            "inner_q_std": 50.0,
            "inner_r_std": 50.0,
        },
        "init": {
            "outer": [2.0, 0.0, 1.5707963267948966],
            "inner": [0.0, 40.0],
        },
        "anomalies": {
            robot.OUTER: [
                {"t_start": a, "t_end": b, "y_a": [5.0, 5.0, 0.0] if a < 8 else [-5.0, -5.0, 0.0],
                 "gamma": [1, 1, 0]}
                for a, b in anomaly_windows
            ],
            robot.INNER_1: [
                {"t_start": a, "t_end": b, "y_a": [20000.0] if a < 8 else [-20000.0],
                 "gamma": [1]}
                for a, b in anomaly_windows
            ],
            robot.INNER_2: [
                {"t_start": a, "t_end": b, "y_a": [20000.0] if a < 8 else [-20000.0],
                 "gamma": [1]}
                for a, b in anomaly_windows
            ],
        },
        "ads": {
            sid: {"kind": "specific", "mode": "oracle",
                  "detection_time": 0.25, "threshold": 0.0}
            for sid in SUBSYSTEMS
        },
        "bounds": {},
    }


def build_case_study(**overrides) -> dict:
    """Case-study configuration with optional top-level overrides."""
    cfg = default_config()
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2)
        fh.write("\n")


def validate_config(cfg: dict) -> None:
    """Raise :class:`ConfigError` listing every violated invariant."""
    errors = []
    merged = default_config()
    for k in cfg:
        if k not in merged:
            errors.append(f"unknown key {k!r}")
    params = robot.RobotParams(**cfg.get("robot", {}))
    dt_o = 1.0 / params.outer_rate
    dt_i = 1.0 / params.inner_rate
    base = base_resolution_us([dt_o, dt_i])
    horizon = cfg.get("horizon", 10.0)
    if horizon <= 0:
        errors.append("horizon must be positive")
    elif to_us(horizon) % base != 0:
        errors.append("horizon must be a multiple of the base tick")
    mu = cfg.get("checkpoint_freq_hz", 1.0)
    if mu <= 0:
        errors.append("checkpoint_freq_hz must be positive")
    else:
        period_us = to_us(1.0 / mu)
        for name, dt in ((robot.OUTER, dt_o), (robot.INNER_1, dt_i)):
            if period_us % to_us(dt) != 0:
                errors.append(
                    f"checkpoint period 1/{mu} Hz is not a multiple of the "
                    f"{name} loop period {dt}")
    if cfg.get("plant_mode", "ideal") not in ("ideal", "coupled"):
        errors.append("plant_mode must be 'ideal' or 'coupled'")
    if cfg.get("t_max", 1.0) <= 0:
        errors.append("t_max must be positive")
    for sid, spec in cfg.get("ads", {}).items():
        # detection windows must land on the shared tick grid (the case
        # study uses 0.25 s against a 0.1 s outer period, so the base tick
        # is the right granularity, not the per-loop period)
        d_us = to_us(spec.get("detection_time", 0.0))
        if d_us % base != 0:
            errors.append(
                f"{sid}: detection_time must be an integer multiple of the "
                f"base tick {base / 1e6}")
    for sid, windows in cfg.get("anomalies", {}).items():
        try:
            _schedule_from(windows)
        except ValueError as exc:
            errors.append(f"{sid}: {exc}")
    if errors:
        raise ConfigError("; ".join(errors))


def _schedule_from(windows) -> AnomalySchedule:
    return AnomalySchedule(tuple(
        AnomalyWindow(w["t_start"], w["t_end"],
                      np.asarray(w["y_a"], float),
                      np.asarray(w["gamma"], float))
        for w in windows))


def build_models(cfg: dict):
    """Instantiate the three sub-system models from a validated config."""
    params = robot.RobotParams(**cfg.get("robot", {}))
    noise = {**default_config()["noise"], **cfg.get("noise", {})}
    init = {**default_config()["init"], **cfg.get("init", {})}
    dt_o = 1.0 / params.outer_rate
    dt_i = 1.0 / params.inner_rate

    q_o = noise["outer_q_std"] ** 2 * np.eye(3)
    r_o = noise["outer_r_std"] ** 2 * np.eye(3)
    q_i = noise["inner_q_std"] ** 2 * np.eye(2)
    r_i = np.array([[noise["inner_r_std"] ** 2]])

    mu0_o = np.asarray(init["outer"], float)
    mu0_i = np.asarray(init["inner"], float)
    models = {
        robot.OUTER: robot.bicycle_model(dt_o, q_o, r_o, mu0=mu0_o,
                                         Sigma0=np.zeros((3, 3))),
        robot.INNER_1: robot.dc_motor_model(robot.INNER_1, dt_i, params, q_i,
                                            r_i, mu0=mu0_i,
                                            Sigma0=np.zeros((2, 2))),
        robot.INNER_2: robot.dc_motor_model(robot.INNER_2, dt_i, params, q_i,
                                            r_i, mu0=mu0_i,
                                            Sigma0=np.zeros((2, 2))),
    }
    return params, models


def build_schedules(cfg: dict) -> dict:
    return {sid: _schedule_from(cfg.get("anomalies", {}).get(sid, []))
            for sid in SUBSYSTEMS}


def build_ads(cfg: dict) -> dict:
    merged = {**default_config()["ads"], **cfg.get("ads", {})}
    return {sid: AdsConfig(**merged[sid]) for sid in SUBSYSTEMS}


def build_bound_params(cfg: dict, models) -> dict:
    out = {}
    mu = cfg.get("checkpoint_freq_hz", 1.0)
    for sid, spec in cfg.get("bounds", {}).items():
        out[sid] = BoundParams(
            A_bar=np.asarray(spec["A_bar"], float),
            eps_delta=np.asarray(spec["eps_delta"], float),
            eps_omega=np.asarray(spec["eps_omega"], float),
            phi_bar=np.asarray(spec["phi_bar"], float) if "phi_bar" in spec else None,
            E_max=np.asarray(spec["E_max"], float) if "E_max" in spec else None,
            delta_s=spec.get("delta_s", 0.0),
            mu=mu,
            tick=models[sid].dt,
        )
    return out
