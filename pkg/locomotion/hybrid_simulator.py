#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Hybrid Walking Simulator
Closed-loop full-order walking: constrained integration of the surrogate
biped, time-triggered support transfer with a plastic impact, per-step
contact frames and ALIP state measurement.

Step switching happens at exactly T. The first control tick of every step
runs with both feet in contact; afterwards only the support foot is held.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from locomotion import DivergenceError
from locomotion.alip_core import (FrontalState, SagittalState, com_kinematics,
                                  contact_from_centroidal, flow)
from locomotion.alip_planner import (Stance, VelocityRamp, contact_frame_for_step,
                                     estimate_Lcx_end, estimate_Lcy_end, periodic_state,
                                     plan_step, swing_trajectory)
from locomotion.momentum_controller import ComReference, SwingTarget
from locomotion.rigid_body_dynamics import (Contact, compute_dynamics,
                                            constrained_forward_dynamics, contact_jacobian,
                                            forward_kinematics, impact_map,
                                            integrate_configuration, sole_pose)
from locomotion.surrogate_biped import initial_configuration

logger = logging.getLogger(__name__)

# swing sole height error at switch time that triggers a warning
SNAP_WARN_DISTANCE = 5e-3
# |qd| above this is treated as a blow-up
DIVERGENCE_SPEED = 1e3
# consecutive saturated ticks within a step that trigger a warning
SATURATION_WARN_TICKS = 20


def baumgarte_coefficients(gain, h):
    """(alpha, beta) of the contact drift feedback for gain k and substep h"""
    omega = gain / (2.0 * h)
    return 2.0 * omega, omega * omega


@dataclass(frozen=True)
class ScheduleEntry:
    t_start: float
    t_end: float
    v_x: float
    v_y: float


class GaitSchedule:
    """Piecewise-constant velocity commands; contiguous windows starting at 0"""

    def __init__(self, entries: Sequence[ScheduleEntry]):
        self.entries = tuple(entries)
        if not self.entries:
            raise ValueError("schedule is empty")
        if abs(self.entries[0].t_start) > 1e-12:
            raise ValueError(f"schedule must start at 0, starts at {self.entries[0].t_start}")
        for i, entry in enumerate(self.entries):
            if not entry.t_end > entry.t_start:
                raise ValueError(f"schedule[{i}]: t_end must exceed t_start")
            if i and abs(entry.t_start - self.entries[i - 1].t_end) > 1e-9:
                raise ValueError(f"schedule[{i}]: starts at {entry.t_start}, previous window "
                                 f"ends at {self.entries[i - 1].t_end} (windows must be contiguous)")

    @property
    def duration(self):
        return self.entries[-1].t_end

    def command_at(self, t):
        """Commanded (v_x, v_y); the last window's command holds past the end"""
        for entry in self.entries:
            if entry.t_start <= t < entry.t_end:
                return entry.v_x, entry.v_y
        last = self.entries[-1]
        return last.v_x, last.v_y

    def steady_windows(self, settle_time):
        """(t_start + settle, t_end, v_x, v_y) for windows long enough to settle"""
        return [(e.t_start + settle_time, e.t_end, e.v_x, e.v_y)
                for e in self.entries if e.t_end - e.t_start > settle_time]


@dataclass(frozen=True)
class IntegrationSettings:
    """
    Control period, physics substeps and contact drift correction.
    With k = stabilization_gain and substep h the held soles obey
    e'' + (k/h) e' + (k/2h)^2 e = 0, critically damped and stable under
    semi-implicit Euler for k in (0, 1].
    """
    dt: float = 1e-3
    substeps: int = 1
    stabilization_gain: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not 0 < self.stabilization_gain <= 1:
            raise ValueError("stabilization_gain must be in (0, 1]")


@dataclass(frozen=True)
class SimState:
    q: np.ndarray
    qd: np.ndarray
    tick: int                      # global control tick, t = tick * dt
    tick_in_step: int              # t_step = tick_in_step * dt
    step_index: int
    stance: Stance
    frame: object                  # ContactFrame of the current step
    anchors: Dict[str, Tuple[np.ndarray, np.ndarray]]  # held soles: position, rotation
    liftoff: np.ndarray            # swing sole position in {c} at step start
    command: Tuple[float, float]   # ramped velocity command of the step
    double_support: bool = False


class AlipMeasurement(NamedTuple):
    x: SagittalState
    y: FrontalState
    L_com: np.ndarray      # centroidal angular momentum in {c}
    L_c: np.ndarray        # contact angular momentum in {c}
    p: np.ndarray          # CoM relative to the contact point, in {c}
    v: np.ndarray          # CoM velocity in {c}


class LogRecord(NamedTuple):
    t: float
    step: int
    stance: str
    double_support: int
    p_x: float
    p_y: float
    p_z: float
    L_cx: float
    L_cy: float
    L_com_x: float
    L_com_y: float
    L_com_z: float
    Lhat_cx: float
    Lhat_cy: float
    v_cmd_x: float
    v_cmd_y: float
    v_com_x: float
    v_com_y: float
    v_com_z: float
    com_height: float
    tau_x: float
    tau_y: float
    tau_z: float
    f_x: float
    f_y: float
    f_z: float
    wrench_violation: float
    u_x: float
    u_y: float
    clamped: int
    residual_momentum: float
    residual_swing: float
    residual_posture: float
    contact_residual: float
    dynamics_residual: float
    projected: int
    saturated: int
    max_tau: float
    torque_excess: float
    wrench_fallback: int


class StepRecord(NamedTuple):
    step: int
    stance: str
    t_end: float
    v_cmd_x: float
    v_cmd_y: float
    Lhat_cx_mid: float
    Lhat_cy_mid: float
    Lhat_cx_last: float
    Lhat_cy_last: float
    L_cx_end: float
    L_cy_end: float
    peak_L_c: float
    p_x_minus: float
    p_y_minus: float
    p_x_plus: float
    p_y_plus: float
    L_cx_plus: float
    L_cy_plus: float
    impact_momentum_error: float
    vz_jump: float
    snap_distance: float
    stance_drift: float
    landing_x: float
    landing_y: float


def measure_alip_state(model, q, qd, frame, terms=None):
    """
    ALIP states in {c} from the full-order state

    Parameters:
    - frame: ContactFrame of the current step
    - terms: optional precomputed DynamicsTerms
    """
    if terms is None:
        terms = compute_dynamics(model, q, qd)
    p = frame.to_local(terms.p_com)
    v = frame.vector_to_local(terms.v_com)
    L_com = frame.vector_to_local(terms.h_com.L_com)
    L_c = contact_from_centroidal(L_com, p, v, model.total_mass)
    return AlipMeasurement(SagittalState(float(p[0]), float(L_c[1])),
                           FrontalState(float(p[1]), float(L_c[0])), L_com, L_c, p, v)


class _StepMonitor:
    """Per-step bookkeeping for the step log"""

    def __init__(self):
        self.mid = (np.nan, np.nan)
        self.last = (np.nan, np.nan)
        self.peak = 0.0
        self.placement = None
        self.clamped = 0
        self.saturated = 0
        self.saturation_streak = 0

    def update(self, t_step, T, meas, Lhat, placement, saturated=False):
        if np.isnan(self.mid[0]) and t_step >= T / 2.0:
            self.mid = Lhat
        self.last = Lhat
        self.peak = max(self.peak, float(np.linalg.norm(meas.L_c[:2])))
        self.placement = placement
        self.clamped += int(placement.clamped)
        self.saturated = self.saturated + 1 if saturated else 0
        self.saturation_streak = max(self.saturation_streak, self.saturated)


class WalkingSimulation:
    """
    Closed loop of planner, controller and constrained dynamics

    Parameters:
    - biped: SurrogateBiped
    - params: AlipParams (m is the model's total mass)
    - spec: GaitSpec (velocities overridden by the schedule through the ramp)
    - schedule: GaitSchedule
    - controller: MomentumController
    - settings: IntegrationSettings
    - reach: optional ReachBox
    - ramp_step: velocity change allowed per step (m/s)
    - heading: frame heading (rad), constant
    """

    def __init__(self, biped, params, spec, schedule, controller, settings=None, reach=None,
                 ramp_step=0.1125, heading=0.0):
        self.biped = biped
        self.model = biped.model
        self.params = params
        self.spec = spec
        self.schedule = schedule
        self.controller = controller
        self.settings = settings or IntegrationSettings()
        self.reach = reach
        self.ramp_step = float(ramp_step)
        self.heading = float(heading)
        ticks = spec.T / self.settings.dt
        self.ticks_per_step = int(round(ticks))
        if abs(ticks - self.ticks_per_step) > 1e-9 or self.ticks_per_step < 2:
            raise ValueError(f"step duration {spec.T} must be a multiple of dt {self.settings.dt}")
        if abs(params.m - self.model.total_mass) > 1e-9 * self.model.total_mass:
            raise ValueError("template mass must equal the model's total mass")

    def log(self, txt, t=None, level=logging.INFO):
        """Logging function prefixed with the simulation clock"""
        t = 0.0 if t is None else t
        logger.log(level, '%8.3f %s', t, txt)

    def time(self, state):
        return state.tick * self.settings.dt

    def step_time(self, state):
        return state.tick_in_step * self.settings.dt

    def step_spec(self, state):
        return self.spec.with_velocity(*state.command)

    def initial_state(self, stance=Stance.LEFT_SUPPORT):
        """Start on the periodic orbit of the t = 0 command (ramped) with both feet down"""
        target = self.schedule.command_at(0.0)
        command = VelocityRamp(self.ramp_step).update(*target)
        spec = self.spec.with_velocity(*command)
        seed = periodic_state(spec, self.params, stance)
        frame = contact_frame_for_step((np.zeros(3), np.eye(3)), self.heading)
        q, qd = initial_configuration(self.biped, self.params, frame, stance, seed)
        kin = forward_kinematics(self.model, q)
        anchors = {foot: sole_pose(self.model, kin, foot) for foot in ('left', 'right')}
        liftoff = np.array([seed.swing_offset[0], seed.swing_offset[1], 0.0])
        self.log(f'START stance={stance.support_foot} command=({command[0]:.3f}, {command[1]:.3f})')
        return SimState(q, qd, 0, 0, 0, stance, frame, anchors, liftoff, command, True)

    def contacts(self, state):
        R = state.frame.rotation
        if state.double_support:
            return [Contact(state.stance.support_foot, R), Contact(state.stance.swing_foot, R)]
        return [Contact(state.stance.support_foot, R)]

    def control_tick(self, state):
        """
        Plan, build references and run the controller for the current state

        Returns (ControlOutput, AlipMeasurement, predicted end-of-step (L_cx, L_cy),
        FootPlacement, DynamicsTerms).
        """
        model = self.model
        terms = compute_dynamics(model, state.q, state.qd)
        meas = measure_alip_state(model, state.q, state.qd, state.frame, terms)
        spec = self.step_spec(state)
        t_step = min(self.step_time(state), spec.T)
        frame = state.frame

        placement = plan_step(meas.x, meas.y, t_step, state.stance, spec, self.params, self.reach)
        Lhat = (float(estimate_Lcx_end(meas.y, t_step, spec, self.params)),
                float(estimate_Lcy_end(meas.x, t_step, spec, self.params)))

        x_ref = flow(meas.x, self.settings.dt, self.params)
        y_ref = flow(meas.y, self.settings.dt, self.params)
        pos, vel, acc = com_kinematics(x_ref, y_ref, self.params)
        com_ref = ComReference(frame.to_world(pos), frame.vector_to_world(vel),
                               frame.vector_to_world(acc))

        swing = None
        if not state.double_support:
            ref = swing_trajectory(state.liftoff, placement, spec)
            s_pos, s_vel, s_acc = ref.evaluate(t_step / spec.T)
            swing = SwingTarget(state.stance.swing_foot, frame.to_world(s_pos),
                                frame.vector_to_world(s_vel), frame.vector_to_world(s_acc),
                                frame.rotation)

        out = self.controller.compute(state.q, state.qd, self.contacts(state), com_ref,
                                      frame.rotation, swing, terms)
        return out, meas, Lhat, placement, terms

    def _sole_error(self, anchors, contacts, kin):
        """Pose error of the held soles against their anchors, contact rows (angular; linear)"""
        errors = []
        for c in contacts:
            pos, R = sole_pose(self.model, kin, c.foot)
            a_pos, a_R = anchors[c.foot]
            rot = Rotation.from_matrix(R @ a_R.T).as_rotvec()
            Rt = np.asarray(c.rotation).T
            errors.append(np.concatenate([Rt @ rot, Rt @ (pos - a_pos)]))
        return np.concatenate(errors)

    def _project_position(self, q, anchors, contacts):
        """One Gauss-Newton correction of the held soles toward their anchors"""
        model = self.model
        kin = forward_kinematics(model, q)
        e = self._sole_error(anchors, contacts, kin)
        J = contact_jacobian(model, q, contacts, kin)
        dq = -np.linalg.pinv(J) @ e
        return integrate_configuration(model, q, dq, 1.0), float(np.max(np.abs(e)))

    def advance(self, state, tau, contacts=None):
        """
        Semi-implicit Euler over one control period with the stance soles held.
        Sole drift is fed back on the contact rows as Baumgarte terms.

        Returns (new SimState, executed wrenches of the last substep).
        """
        model = self.model
        contacts = self.contacts(state) if contacts is None else contacts
        h = self.settings.dt / self.settings.substeps
        alpha, beta = baumgarte_coefficients(self.settings.stabilization_gain, h)
        q, qd = state.q, state.qd
        wrenches = []
        for _ in range(self.settings.substeps):
            terms = compute_dynamics(model, q, qd)
            stabilization = None
            if contacts:
                e = self._sole_error(state.anchors, contacts, terms.kinematics)
                J = contact_jacobian(model, q, contacts, terms.kinematics)
                stabilization = -alpha * (J @ qd) - beta * e
            qdd, wrenches = constrained_forward_dynamics(model, q, qd, tau, contacts, terms, stabilization)
            qd = qd + h * qdd
            q = integrate_configuration(model, q, qd, h)
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))) \
                    or np.max(np.abs(qd)) > DIVERGENCE_SPEED:
                t = self.time(state)
                raise DivergenceError(f"state diverged at t={t:.3f}s",
                                      {'t': t, 'step': state.step_index,
                                       'max_abs_qd': float(np.nanmax(np.abs(qd))),
                                       'base_height': float(q[2])})
        anchors = state.anchors
        if state.double_support:
            foot = state.stance.support_foot
            anchors = {foot: state.anchors[foot]}
        return replace(state, q=q, qd=qd, tick=state.tick + 1, tick_in_step=state.tick_in_step + 1,
                       anchors=anchors, double_support=False), wrenches

    def step_transition(self, state, monitor=None):
        """
        Time-triggered support transfer at t_step = T

        Snaps the landing sole to the ground, applies the plastic impact with
        both feet, swaps stance, builds the new contact frame and advances the
        velocity ramp. Returns (new SimState, StepRecord).
        """
        model = self.model
        t = self.time(state)
        old = measure_alip_state(model, state.q, state.qd, state.frame)
        kin = forward_kinematics(model, state.q)
        landing_foot = state.stance.swing_foot
        pos, R = sole_pose(model, kin, landing_foot)
        snap = abs(float(pos[2]))
        if snap > SNAP_WARN_DISTANCE:
            self.log(f'WARNING swing sole {snap * 1000:.1f} mm off the ground at touchdown, snapping',
                     t, logging.WARNING)
        support_pos, _ = sole_pose(model, kin, state.stance.support_foot)
        anchor_pos = state.anchors[state.stance.support_foot][0]
        drift = float(np.linalg.norm(support_pos - anchor_pos))

        new_frame = contact_frame_for_step((np.array([pos[0], pos[1], 0.0]), R), self.heading)
        anchors = {landing_foot: (new_frame.origin.copy(), new_frame.rotation.copy()),
                   state.stance.support_foot: state.anchors[state.stance.support_foot]}
        new_stance = state.stance.other
        both = [Contact(new_stance.support_foot, new_frame.rotation),
                Contact(new_stance.swing_foot, new_frame.rotation)]
        q, _ = self._project_position(state.q, anchors, both)

        terms_minus = compute_dynamics(model, q, state.qd)
        qd_plus, _ = impact_map(model, q, state.qd, both, terms_minus)
        pre = measure_alip_state(model, q, state.qd, new_frame, terms_minus)
        post = measure_alip_state(model, q, qd_plus, new_frame)
        terms_plus = compute_dynamics(model, q, qd_plus)

        target = self.schedule.command_at(t)
        ramp = VelocityRamp(self.ramp_step, *state.command)
        command = ramp.update(*target)

        kin_plus = terms_plus.kinematics
        liftoff_world, _ = sole_pose(model, kin_plus, new_stance.swing_foot)
        liftoff = new_frame.to_local(liftoff_world)

        mon = monitor or _StepMonitor()
        placement = mon.placement
        if mon.clamped:
            self.log(f'WARNING placement clamped to the reach box on {mon.clamped} ticks of step {state.step_index}',
                     t, logging.WARNING)
        if mon.saturation_streak >= SATURATION_WARN_TICKS:
            self.log(f'WARNING normal force saturated for {mon.saturation_streak} consecutive ticks '
                     f'in step {state.step_index}', t, logging.WARNING)
        record = StepRecord(
            step=state.step_index, stance=state.stance.support_foot, t_end=t,
            v_cmd_x=state.command[0], v_cmd_y=state.command[1],
            Lhat_cx_mid=mon.mid[0], Lhat_cy_mid=mon.mid[1],
            Lhat_cx_last=mon.last[0], Lhat_cy_last=mon.last[1],
            L_cx_end=float(old.L_c[0]), L_cy_end=float(old.L_c[1]), peak_L_c=mon.peak,
            p_x_minus=float(old.p[0]), p_y_minus=float(old.p[1]),
            p_x_plus=float(post.p[0]), p_y_plus=float(post.p[1]),
            L_cx_plus=float(post.L_c[0]), L_cy_plus=float(post.L_c[1]),
            impact_momentum_error=float(np.max(np.abs(post.L_c - pre.L_c))),
            vz_jump=float(terms_plus.v_com[2] - terms_minus.v_com[2]),
            snap_distance=snap, stance_drift=drift,
            landing_x=float(placement.landing_x) if placement else np.nan,
            landing_y=float(placement.landing_y) if placement else np.nan)

        self.log(f'STEP {state.step_index} {state.stance.support_foot} -> {new_stance.support_foot}, '
                 f'command=({command[0]:.3f}, {command[1]:.3f})', t, logging.DEBUG)
        new_state = replace(state, q=q, qd=qd_plus, tick_in_step=0, step_index=state.step_index + 1,
                            stance=new_stance, frame=new_frame, anchors=anchors, liftoff=liftoff,
                            command=command, double_support=True)
        return new_state, record

    def _log_record(self, state, out, meas, Lhat, placement, terms, wrenches):
        t = self.time(state)
        lam = wrenches[0].as_vector() if wrenches else np.full(6, np.nan)
        if wrenches and not state.double_support:
            violation = self.controller.limits[state.stance.support_foot].violation(lam)
        else:
            violation = np.nan
        return LogRecord(
            t=t, step=state.step_index, stance=state.stance.support_foot,
            double_support=int(state.double_support),
            p_x=float(meas.p[0]), p_y=float(meas.p[1]), p_z=float(meas.p[2]),
            L_cx=float(meas.L_c[0]), L_cy=float(meas.L_c[1]),
            L_com_x=float(meas.L_com[0]), L_com_y=float(meas.L_com[1]), L_com_z=float(meas.L_com[2]),
            Lhat_cx=Lhat[0], Lhat_cy=Lhat[1],
            v_cmd_x=state.command[0], v_cmd_y=state.command[1],
            v_com_x=float(terms.v_com[0]), v_com_y=float(terms.v_com[1]), v_com_z=float(terms.v_com[2]),
            com_height=float(terms.p_com[2]),
            tau_x=lam[0], tau_y=lam[1], tau_z=lam[2], f_x=lam[3], f_y=lam[4], f_z=lam[5],
            wrench_violation=violation,
            u_x=placement.u_x, u_y=placement.u_y, clamped=int(placement.clamped),
            residual_momentum=out.residual_of(1), residual_swing=out.residual_of(2),
            residual_posture=out.residual_of(3),
            contact_residual=out.contact_residual, dynamics_residual=out.dynamics_residual,
            projected=int(out.projected), saturated=int(out.saturated),
            max_tau=float(np.max(np.abs(out.tau))) if out.tau.size else 0.0,
            torque_excess=out.torque_excess, wrench_fallback=int(out.wrench_fallback))

    def run(self, duration, observers=(), state=None):
        """
        Run the closed loop for ``duration`` seconds

        Parameters:
        - observers: objects with start(sim), next(LogRecord), step(StepRecord), stop()
        - state: starting SimState (defaults to initial_state())

        Returns the final SimState.
        """
        state = state or self.initial_state()
        n_ticks = int(round(duration / self.settings.dt))
        for obs in observers:
            obs.start(self)
        monitor = _StepMonitor()
        try:
            for _ in range(n_ticks):
                if state.tick_in_step >= self.ticks_per_step:
                    state, record = self.step_transition(state, monitor)
                    monitor = _StepMonitor()
                    for obs in observers:
                        obs.step(record)
                out, meas, Lhat, placement, terms = self.control_tick(state)
                monitor.update(self.step_time(state), self.spec.T, meas, Lhat, placement, out.saturated)
                new_state, wrenches = self.advance(state, out.tau)
                record = self._log_record(state, out, meas, Lhat, placement, terms, wrenches)
                for obs in observers:
                    obs.next(record)
                state = new_state
        finally:
            for obs in observers:
                obs.stop()
        return state
