#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
ALIP Foot Placement Planner
End-of-step contact momentum estimates, deadbeat foot placement (u_x, u_y),
per-step contact frames and swing foot references.

Placement convention: u_x, u_y are the CoM position relative to the new
contact point at the start of the next step. The swing foot therefore lands
at (p_end - u) in the current contact frame, where p_end is the template
CoM position at t = T.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from locomotion import PlannerDomainError
from locomotion.alip_core import (FrontalState, SagittalState, alip_velocity,
                                  contact_from_centroidal, flow)

logger = logging.getLogger(__name__)

# tolerance on the step clock when checking 0 <= t <= T
TIME_EPS = 1e-9


class Stance(Enum):
    """
    Support foot of the current step.
    With y pointing left the CoM sits on the -y side of a left support foot
    and on the +y side of a right support foot.
    """
    LEFT_SUPPORT = 0
    RIGHT_SUPPORT = 1

    @property
    def other(self):
        return Stance.RIGHT_SUPPORT if self is Stance.LEFT_SUPPORT else Stance.LEFT_SUPPORT

    @property
    def support_foot(self):
        return 'left' if self is Stance.LEFT_SUPPORT else 'right'

    @property
    def swing_foot(self):
        return 'right' if self is Stance.LEFT_SUPPORT else 'left'


@dataclass(frozen=True)
class GaitSpec:
    T: float
    W: float
    v_x_des: float = 0.0
    v_y_des: float = 0.0
    swing_apex: float = 0.08

    def __post_init__(self):
        if not self.T > 0:
            raise PlannerDomainError(f"step duration must be positive, got {self.T}")
        if not self.W > 0:
            raise PlannerDomainError(f"step width must be positive, got {self.W}")

    def with_velocity(self, v_x, v_y):
        return replace(self, v_x_des=float(v_x), v_y_des=float(v_y))


@dataclass(frozen=True)
class ReachBox:
    """Kinematic reach limits on (u_x, u_y): |u_x| <= forward, |u_y -+ W/2| <= lateral"""
    forward: float = 0.5
    lateral: float = 0.3


class FootPlacement(NamedTuple):
    u_x: float
    u_y: float
    landing_x: float
    landing_y: float
    clamped: bool = False


def _check_step_time(t, spec):
    if not (-TIME_EPS <= t <= spec.T + TIME_EPS):
        raise PlannerDomainError(f"step time {t} outside [0, {spec.T}]")
    return min(max(t, 0.0), spec.T)


def estimate_Lcy_end(state, t, spec, params):
    """Contact momentum about y expected at the end of the current step"""
    t = _check_step_time(t, spec)
    tau = spec.T - t
    return (params.mHl * np.sinh(params.ell * tau) * state.p_x
            + np.cosh(params.ell * tau) * state.L_cy)


def estimate_Lcx_end(state, t, spec, params):
    """Contact momentum about x expected at the end of the current step"""
    t = _check_step_time(t, spec)
    tau = spec.T - t
    return (-params.mHl * np.sinh(params.ell * tau) * state.p_y
            + np.cosh(params.ell * tau) * state.L_cx)


def desired_Lcy(spec, params):
    lT = params.ell * spec.T
    return params.mHl * spec.v_x_des * spec.T / 2.0 * (1.0 + np.cosh(lT)) / np.sinh(lT)


def forward_placement(L_hat_cy, L_d_cy, spec, params):
    lT = params.ell * spec.T
    return (L_d_cy - np.cosh(lT) * L_hat_cy) / (params.mHl * np.sinh(lT))


def p_star(stance, spec):
    """
    Lateral CoM offset from the next support foot at the end of the next
    step, for a step currently supported by ``stance``. Never less than W/2
    in magnitude; positive puts the CoM on the +y side of that foot.
    """
    if stance is Stance.LEFT_SUPPORT:
        return spec.W / 2.0 - min(0.0, spec.v_y_des) * spec.T
    return -spec.W / 2.0 - max(0.0, spec.v_y_des) * spec.T


def desired_Lcx(stance, spec, params):
    """Desired L_cx at the end of the next step, planned during a step supported by ``stance``"""
    lT = params.ell * spec.T
    return (-params.mHl * np.sinh(lT) / (1.0 + np.cosh(lT)) * p_star(stance, spec)
            - params.mHl * (np.cosh(lT) / np.sinh(lT)) * spec.v_y_des * spec.T)


def lateral_placement(L_hat_cx, L_d_cx, spec, params):
    lT = params.ell * spec.T
    return -(L_d_cx - np.cosh(lT) * L_hat_cx) / (params.mHl * np.sinh(lT))


def clamp_placement(placement, stance, spec, reach, p_end):
    """
    Clamp (u_x, u_y) to the reach box; the lateral box is centred on the side
    the CoM must be on for the next support foot. Landing point follows.
    """
    centre = spec.W / 2.0 if stance.other is Stance.RIGHT_SUPPORT else -spec.W / 2.0
    u_x = float(np.clip(placement.u_x, -reach.forward, reach.forward))
    u_y = float(np.clip(placement.u_y, centre - reach.lateral, centre + reach.lateral))
    clamped = (u_x != placement.u_x) or (u_y != placement.u_y)
    if clamped:
        logger.debug("placement clamped from (%.4f, %.4f) to (%.4f, %.4f)",
                     placement.u_x, placement.u_y, u_x, u_y)
    return FootPlacement(u_x, u_y, p_end[0] - u_x, p_end[1] - u_y, clamped)


def plan_step(state_x, state_y, t, stance, spec, params, reach=None):
    """
    Deadbeat placement for the swing foot of the current step

    Parameters:
    - state_x, state_y: measured template states in the current {c}
    - t: time since the start of the step
    - stance: support of the current step (the next step uses stance.other)
    - reach: optional ReachBox
    """
    L_hat_cy = estimate_Lcy_end(state_x, t, spec, params)
    L_hat_cx = estimate_Lcx_end(state_y, t, spec, params)
    u_x = forward_placement(L_hat_cy, desired_Lcy(spec, params), spec, params)
    u_y = lateral_placement(L_hat_cx, desired_Lcx(stance, spec, params), spec, params)

    t = _check_step_time(t, spec)
    x_end = flow(state_x, spec.T - t, params)
    y_end = flow(state_y, spec.T - t, params)
    p_end = (x_end.p_x, y_end.p_y)

    placement = FootPlacement(float(u_x), float(u_y), p_end[0] - u_x, p_end[1] - u_y, False)
    if reach is not None:
        placement = clamp_placement(placement, stance, spec, reach, p_end)
    return placement


class ContactFrame(NamedTuple):
    """Per-step contact frame {c}: origin on the sole, z vertical, x along heading"""
    origin: np.ndarray
    rotation: np.ndarray
    heading: float = 0.0

    def to_local(self, points):
        return (np.asarray(points, dtype=float) - self.origin) @ self.rotation

    def to_world(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.origin

    def vector_to_local(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.rotation

    def vector_to_world(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.rotation.T


def heading_rotation(heading):
    return Rotation.from_euler('z', heading).as_matrix()


def contact_frame_for_step(stance_foot_pose, heading):
    """
    Contact frame for a step, fixed for its whole duration

    Parameters:
    - stance_foot_pose: (position of the polygon reference point, rotation) in world
    - heading: commanded heading (rad)
    """
    position, _ = stance_foot_pose
    return ContactFrame(np.array(position, dtype=float), heading_rotation(heading), float(heading))


def _quintic_blend(s):
    """10s^3 - 15s^4 + 6s^5 and its first two derivatives"""
    return (s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2),
            30.0 * s ** 2 * (1.0 - s) ** 2,
            60.0 * s * (1.0 - s) * (1.0 - 2.0 * s))


@dataclass(frozen=True)
class SwingReference:
    """
    Swing sole trajectory in {c} as a function of step phase s in [0, 1].
    Horizontal: quintic blend lift-off -> landing. Vertical: quintic rise to
    the apex on [0, 0.5], quintic descent to the ground on [0.5, 1].
    Orientation is held flat at the frame heading.
    """
    start: np.ndarray
    end: np.ndarray
    apex: float
    duration: float

    def evaluate(self, s):
        """Position, velocity and acceleration (time derivatives) at phase s"""
        s = float(np.clip(s, 0.0, 1.0))
        T = self.duration
        b, db, ddb = _quintic_blend(s)
        delta = self.end[:2] - self.start[:2]
        pos = np.empty(3)
        vel = np.empty(3)
        acc = np.empty(3)
        pos[:2] = self.start[:2] + delta * b
        vel[:2] = delta * db / T
        acc[:2] = delta * ddb / T ** 2

        if s <= 0.5:
            z0, z1, sh = self.start[2], self.apex, 2.0 * s
        else:
            z0, z1, sh = self.apex, self.end[2], 2.0 * s - 1.0
        b, db, ddb = _quintic_blend(sh)
        pos[2] = z0 + (z1 - z0) * b
        vel[2] = (z1 - z0) * db * 2.0 / T
        acc[2] = (z1 - z0) * ddb * 4.0 / T ** 2
        return pos, vel, acc


def swing_trajectory(liftoff_pose, placement, spec):
    """
    Swing reference from the lift-off sole position (in {c}) to the landing
    point of ``placement``; re-fit whenever the placement changes
    """
    start = np.array(liftoff_pose, dtype=float)
    end = np.array([placement.landing_x, placement.landing_y, 0.0])
    return SwingReference(start, end, float(spec.swing_apex), float(spec.T))


@dataclass
class VelocityRamp:
    """Rate-limits commanded velocity changes to ``max_step`` per step"""
    max_step: float = 0.1125
    v_x: float = 0.0
    v_y: float = 0.0

    def update(self, target_x, target_y):
        """Move one step toward the target command and return the new command"""
        self.v_x += float(np.clip(target_x - self.v_x, -self.max_step, self.max_step))
        self.v_y += float(np.clip(target_y - self.v_y, -self.max_step, self.max_step))
        return self.v_x, self.v_y


class TemplateStep(NamedTuple):
    index: int
    stance: Stance
    x_plus: SagittalState
    y_plus: FrontalState
    x_minus: SagittalState
    y_minus: FrontalState
    placement: FootPlacement
    contact: np.ndarray          # support contact point (x, y) in world
    command: tuple


def template_impact(x_minus, y_minus, placement, params):
    """
    Instantaneous support transfer of the template: the CoM position is
    re-expressed about the landing point and the contact momentum is carried
    over (it is impact invariant). Returns the post-impact states and the
    3-D contact momenta about the old and new contact points.
    """
    pdot_x, pdot_y = alip_velocity(x_minus, y_minus, (0.0, 0.0), params)
    v = np.array([pdot_x, pdot_y, 0.0])
    p_old = np.array([x_minus.p_x, y_minus.p_y, params.H])
    p_new = p_old - np.array([placement.landing_x, placement.landing_y, 0.0])
    L_old = contact_from_centroidal(np.zeros(3), p_old, v, params.m)
    L_new = contact_from_centroidal(np.zeros(3), p_new, v, params.m)
    x_plus = SagittalState(float(p_new[0]), float(L_new[1]))
    y_plus = FrontalState(float(p_new[1]), float(L_new[0]))
    return x_plus, y_plus, L_old, L_new


def template_rollout(x0, y0, stance, spec, params, n_steps, commands=None, reach=None):
    """
    Pure template hybrid rollout: flow for T, plan at the start of each step,
    transfer support instantaneously at t = T

    Parameters:
    - x0, y0: post-impact states of the first step
    - stance: support of the first step
    - commands: optional list of (v_x, v_y) per step; defaults to the GaitSpec's
    - reach: optional ReachBox applied to every placement
    """
    steps: List[TemplateStep] = []
    x, y = x0, y0
    contact = np.zeros(2)
    heading = 0.0
    for k in range(n_steps):
        if commands is not None:
            step_spec = spec.with_velocity(*commands[min(k, len(commands) - 1)])
        else:
            step_spec = spec
        placement = plan_step(x, y, 0.0, stance, step_spec, params, reach=reach)
        x_minus = flow(x, step_spec.T, params)
        y_minus = flow(y, step_spec.T, params)
        steps.append(TemplateStep(k, stance, x, y, x_minus, y_minus, placement, contact.copy(),
                                  (step_spec.v_x_des, step_spec.v_y_des)))

        x, y, _, _ = template_impact(x_minus, y_minus, placement, params)
        rot = heading_rotation(heading)[:2, :2]
        contact = contact + rot @ np.array([placement.landing_x, placement.landing_y])
        stance = stance.other
    return steps


class PeriodicSeed(NamedTuple):
    """Start-of-step template state on the periodic orbit and where the swing foot is"""
    x: SagittalState
    y: FrontalState
    swing_offset: np.ndarray     # lift-off sole position of the swing foot in {c} (x, y)


def periodic_state(spec, params, stance, n_steps=12):
    """Converged post-impact template state for a step supported by ``stance``"""
    first = stance if n_steps % 2 == 0 else stance.other
    steps = template_rollout(SagittalState(0.0, 0.0), FrontalState(0.0, 0.0), first,
                             spec, params, n_steps + 1)
    prev, last = steps[-2], steps[-1]
    assert last.stance is stance
    swing = np.array([-prev.placement.landing_x, -prev.placement.landing_y])
    return PeriodicSeed(last.x_plus, last.y_plus, swing)
