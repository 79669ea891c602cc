#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Config Handler for the walking scenarios
Loads the robot description and scenario YAML files, checks them and turns
them into the objects the planner, controller and simulator take.
Units are part of every key name.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import yaml

from locomotion.alip_core import GRAVITY, AlipParams, FrontalState, SagittalState
from locomotion.alip_planner import GaitSpec, ReachBox
from locomotion.hybrid_simulator import GaitSchedule, IntegrationSettings, ScheduleEntry
from locomotion.momentum_controller import ControllerGains, Gains, ServoGains, WrenchLimits
from locomotion.surrogate_biped import build_robot_model

logger = logging.getLogger(__name__)

_MISSING = object()


class ConfigError(Exception):
    """Invalid or unreadable configuration; the message names the key"""


def load_yaml(path):
    """Read a YAML mapping from disk"""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path, 'r') as handle:
            data = yaml.safe_load(handle)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _get(section, key, where, default=_MISSING, cast=float, check=None, message=None):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    if key not in section or section[key] is None:
        if default is _MISSING:
            raise ConfigError(f"{where}.{key}: missing")
        return default
    try:
        value = cast(section[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: cannot read {section[key]!r}")
    if check is not None and not check(value):
        raise ConfigError(f"{where}.{key}: {message or 'invalid value'} (got {value!r})")
    return value


def _positive(value):
    return value > 0


def _diagonal(section, key, where, default):
    values = section.get(key, default) if isinstance(section, dict) else default
    arr = np.asarray(values, dtype=float)
    if arr.shape != (6,) or np.any(arr <= 0):
        raise ConfigError(f"{where}.{key}: expected 6 positive entries (angular x, y, z; linear x, y, z)")
    return arr


def load_robot_model(path, arm_mass_scale=1.0):
    """Build the SurrogateBiped described by a robot YAML file"""
    description = load_yaml(path)
    try:
        return build_robot_model(description, arm_mass_scale=arm_mass_scale)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}")


@dataclass(frozen=True)
class Tolerances:
    velocity_rel: float = 0.2
    velocity_abs_mps: float = 0.05
    velocity_window_s: float = 1.0
    settle_time_s: float = 2.0
    height_m: float = 0.01
    momentum_ratio: float = 0.3
    prediction_rel: float = 0.05
    wrench_violation: float = 1e-8
    wrench_streak_ticks: int = 20
    clamp_streak_steps: int = 3


@dataclass(frozen=True)
class PlanSettings:
    commands: Tuple[Tuple[float, float], ...] = ((0.0, 0.0),)
    steps: int = 12
    template_mass_kg: Optional[float] = None
    seed: Optional[Tuple[float, float, float, float]] = None  # p_x, L_cy, p_y, L_cx


@dataclass(frozen=True)
class ScenarioConfig:
    path: str
    robot_model: str
    arm_mass_scale: float
    com_height_m: float
    gravity_mps2: float
    step_duration_s: float
    step_width_m: float
    swing_apex_m: float
    velocity_ramp_mps_per_step: float
    reach: Optional[ReachBox]
    schedule: GaitSchedule
    gains: ControllerGains
    friction: float
    torsional_friction: float
    fz_min_n: float
    fz_max_n: float
    torque_cap_nm: float
    integration: IntegrationSettings
    duration_s: float
    output_dir: str
    seed: int
    plan: PlanSettings = field(default_factory=PlanSettings)
    tolerances: Tolerances = field(default_factory=Tolerances)

    def alip_params(self, mass):
        return AlipParams(m=float(mass), H=self.com_height_m, g=self.gravity_mps2)

    def gait_spec(self, v_x=0.0, v_y=0.0):
        return GaitSpec(T=self.step_duration_s, W=self.step_width_m, v_x_des=v_x, v_y_des=v_y,
                        swing_apex=self.swing_apex_m)

    def wrench_limits(self, model):
        return {side: WrenchLimits.for_foot(geom, self.friction, self.torsional_friction,
                                            self.fz_min_n, self.fz_max_n)
                for side, geom in model.feet.items()}

    def template_seed(self):
        if self.plan.seed is None:
            return None
        p_x, L_cy, p_y, L_cx = self.plan.seed
        return SagittalState(p_x, L_cy), FrontalState(p_y, L_cx)


def _schedule(entries, where='schedule'):
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{where}: expected a non-empty list of windows")
    parsed = []
    for i, entry in enumerate(entries):
        w = f"{where}[{i}]"
        parsed.append(ScheduleEntry(_get(entry, 't_start_s', w), _get(entry, 't_end_s', w),
                                    _get(entry, 'v_x_mps', w, 0.0), _get(entry, 'v_y_mps', w, 0.0)))
    try:
        return GaitSchedule(parsed)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}")


def _gains(section):
    section = section or {}
    momentum = section.get('momentum') or {}
    swing = section.get('swing') or {}
    pelvis = section.get('pelvis') or {}
    posture = section.get('posture') or {}
    defaults = Gains()
    return ControllerGains(
        momentum=Gains(_diagonal(momentum, 'kp', 'gains.momentum', defaults.K_P),
                       _diagonal(momentum, 'kd', 'gains.momentum', defaults.K_D)),
        swing=ServoGains(_get(swing, 'kp', 'gains.swing', 400.0, check=_positive),
                         _get(swing, 'kd', 'gains.swing', 40.0, check=_positive)),
        pelvis=ServoGains(_get(pelvis, 'kp', 'gains.pelvis', 200.0, check=_positive),
                          _get(pelvis, 'kd', 'gains.pelvis', 30.0, check=_positive)),
        posture=ServoGains(_get(posture, 'kp', 'gains.posture', 100.0, check=_positive),
                           _get(posture, 'kd', 'gains.posture', 20.0, check=_positive)))


def _plan(section):
    section = section or {}
    commands = section.get('commands_mps', [[0.0, 0.0]])
    try:
        commands = tuple((float(c[0]), float(c[1])) for c in commands)
    except (TypeError, ValueError, IndexError):
        raise ConfigError("plan.commands_mps: expected a list of [v_x, v_y] pairs")
    if not commands:
        raise ConfigError("plan.commands_mps: at least one command is required")
    seed = section.get('template_seed')
    if seed is not None:
        w = 'plan.template_seed'
        seed = (_get(seed, 'p_x_m', w), _get(seed, 'L_cy_kgm2ps', w),
                _get(seed, 'p_y_m', w), _get(seed, 'L_cx_kgm2ps', w))
    mass = section.get('template_mass_kg')
    if mass is not None:
        mass = _get(section, 'template_mass_kg', 'plan', check=_positive, message='must be positive')
    return PlanSettings(commands, int(_get(section, 'steps', 'plan', 12, cast=int, check=lambda v: v >= 2,
                                           message='at least 2 steps')), mass, seed)


def _tolerances(section):
    section = section or {}
    d = Tolerances()
    w = 'tolerances'
    return Tolerances(
        velocity_rel=_get(section, 'velocity_rel', w, d.velocity_rel, check=_positive),
        velocity_abs_mps=_get(section, 'velocity_abs_mps', w, d.velocity_abs_mps, check=_positive),
        velocity_window_s=_get(section, 'velocity_window_s', w, d.velocity_window_s, check=_positive),
        settle_time_s=_get(section, 'settle_time_s', w, d.settle_time_s, check=lambda v: v >= 0),
        height_m=_get(section, 'height_m', w, d.height_m, check=_positive),
        momentum_ratio=_get(section, 'momentum_ratio', w, d.momentum_ratio, check=_positive),
        prediction_rel=_get(section, 'prediction_rel', w, d.prediction_rel, check=_positive),
        wrench_violation=_get(section, 'wrench_violation', w, d.wrench_violation, check=_positive),
        wrench_streak_ticks=_get(section, 'wrench_streak_ticks', w, d.wrench_streak_ticks, cast=int,
                                 check=_positive),
        clamp_streak_steps=_get(section, 'clamp_streak_steps', w, d.clamp_streak_steps, cast=int,
                                check=_positive))


def load_scenario(path, output_dir=None):
    """
    Load and check a scenario file

    Parameters:
    - path: scenario YAML
    - output_dir: overrides the file's output_dir (the --out flag)
    """
    cfg = load_yaml(path)
    base = os.path.dirname(os.path.abspath(path))

    robot = _get(cfg, 'robot_model', 'scenario', cast=str)
    robot_path = robot if os.path.isabs(robot) else os.path.join(base, robot)

    alip = cfg.get('alip') or {}
    gait = cfg.get('gait') or {}
    limits = cfg.get('limits') or {}
    integration = cfg.get('integration') or {}

    reach = None
    reach_cfg = gait.get('reach_box')
    if reach_cfg:
        reach = ReachBox(_get(reach_cfg, 'forward_m', 'gait.reach_box', 0.5, check=_positive),
                         _get(reach_cfg, 'lateral_m', 'gait.reach_box', 0.3, check=_positive))

    try:
        settings = IntegrationSettings(
            dt=_get(integration, 'dt_s', 'integration', 1e-3, check=_positive),
            substeps=_get(integration, 'substeps', 'integration', 1, cast=int),
            stabilization_gain=_get(integration, 'stabilization_gain', 'integration', 1.0))
    except ValueError as exc:
        raise ConfigError(f"integration: {exc}")

    step_duration = _get(gait, 'step_duration_s', 'gait', check=_positive, message='must be positive')
    ticks = step_duration / settings.dt
    if abs(ticks - round(ticks)) > 1e-6:
        raise ConfigError(f"gait.step_duration_s: {step_duration} is not a multiple of integration.dt_s")

    schedule = _schedule(cfg.get('schedule'))
    duration = _get(cfg, 'duration_s', 'scenario', schedule.duration, check=_positive,
                    message='must be positive')

    fz_min = _get(limits, 'fz_min_n', 'limits', 0.0, check=lambda v: v >= 0)
    fz_max = _get(limits, 'fz_max_n', 'limits', 1e4, check=lambda v: v > fz_min,
                  message='must exceed fz_min_n')

    config = ScenarioConfig(
        path=os.path.abspath(path),
        robot_model=robot_path,
        arm_mass_scale=_get(cfg, 'arm_mass_scale', 'scenario', 1.0, check=_positive),
        com_height_m=_get(alip, 'com_height_m', 'alip', check=_positive, message='must be positive'),
        gravity_mps2=_get(alip, 'gravity_mps2', 'alip', GRAVITY, check=_positive),
        step_duration_s=step_duration,
        step_width_m=_get(gait, 'step_width_m', 'gait', check=_positive, message='must be positive'),
        swing_apex_m=_get(gait, 'swing_apex_m', 'gait', 0.08, check=_positive),
        velocity_ramp_mps_per_step=_get(gait, 'velocity_ramp_mps_per_step', 'gait', 0.1125,
                                        check=_positive),
        reach=reach,
        schedule=schedule,
        gains=_gains(cfg.get('gains')),
        friction=_get(limits, 'friction', 'limits', 0.7, check=_positive),
        torsional_friction=_get(limits, 'torsional_friction', 'limits', 0.05, check=_positive),
        fz_min_n=fz_min,
        fz_max_n=fz_max,
        torque_cap_nm=_get(limits, 'torque_cap_nm', 'limits', 1000.0, check=_positive),
        integration=settings,
        duration_s=duration,
        output_dir=output_dir or _get(cfg, 'output_dir', 'scenario', 'results', cast=str),
        seed=_get(cfg, 'seed', 'scenario', 0, cast=int),
        plan=_plan(cfg.get('plan')),
        tolerances=_tolerances(cfg.get('tolerances')))
    logger.debug("loaded scenario %s: %.1f s, %d schedule windows", path, duration,
                 len(schedule.entries))
    return config
