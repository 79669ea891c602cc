#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Centroidal Momentum Controller
Hierarchical task-space controller on top of the no-slip contact constraint:

 - level 0: contact constraint, hard, through the nullspace parametrization
 - level 1: centroidal momentum rate, constrained to a feasible contact wrench
 - level 2: swing foot pose and pelvis orientation
 - level 3: torso and arm posture

Each level is a least-squares problem solved inside the optimal set of all
levels above it. Joint torques come from the actuated rows of the equations
of motion once the contact wrench is fixed by the floating-base rows.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional

import numpy as np
from qpsolvers import solve_qp
from scipy import linalg
from scipy.spatial.transform import Rotation

from locomotion import SingularConstraintError
from locomotion.rigid_body_dynamics import (ContactWrench, compute_dynamics, contact_jacobian,
                                            jdot_qdot, point_bias_acceleration, point_jacobian,
                                            point_velocity, sole_pose, split_wrenches)

logger = logging.getLogger(__name__)

# singular values below this (relative to the largest) are truncated inside a level
LEVEL_SVD_TOL = 1e-10
# a level counts as achieved when its residual is below this (scaled by its target)
LEVEL_RESIDUAL_TOL = 1e-8
# wrench moment rows are corrected ten times more readily than force rows
WRENCH_WEIGHTS = np.array([0.1, 0.1, 0.1, 1.0, 1.0, 1.0])

MOMENTUM_LEVEL = 1
SWING_LEVEL = 2
POSTURE_LEVEL = 3


@dataclass(frozen=True)
class Task:
    """Equality task  matrix @ qdd + bias = target"""
    name: str
    matrix: np.ndarray
    bias: np.ndarray
    target: np.ndarray
    priority: int

    def __post_init__(self):
        if self.priority < 1:
            raise ValueError(f"task '{self.name}': priority must be >= 1")
        if self.matrix.shape[0] != self.bias.shape[0] or self.matrix.shape[0] != self.target.shape[0]:
            raise ValueError(f"task '{self.name}': rows of matrix, bias and target differ")
        if not (np.all(np.isfinite(self.matrix)) and np.all(np.isfinite(self.target))
                and np.all(np.isfinite(self.bias))):
            raise ValueError(f"task '{self.name}': non-finite entries")

    @property
    def rhs(self):
        return self.target - self.bias


@dataclass(frozen=True)
class WrenchLimits:
    """
    Linearized contact wrench cone of a flat rectangular foot.
    Wrench layout is (tau_x, tau_y, tau_z, f_x, f_y, f_z) in {c}, moments
    about the sole polygon centre, x toward the toe.

    Moments follow tau = r x f, so a centre of pressure at x = c gives
    tau_y = -c f_z: a CoP at the toe edge (c = l_t) is tau_y = -l_t f_z and
    one at the heel edge (c = -l_h) is tau_y = l_h f_z. The CoP rows read
    -l_t f_z <= tau_y <= l_h f_z and |tau_x| <= w_f f_z.
    """
    mu: float = 0.7
    mu_z: float = 0.05
    l_t: float = 0.11
    l_h: float = 0.11
    w_f: float = 0.05
    fz_min: float = 0.0
    fz_max: float = 1e4

    def __post_init__(self):
        if self.mu <= 0 or self.mu_z <= 0:
            raise ValueError("friction coefficients must be positive")
        if min(self.l_t, self.l_h, self.w_f) <= 0:
            raise ValueError("foot polygon bounds must be positive")
        if not 0 <= self.fz_min < self.fz_max:
            raise ValueError("normal force bounds must satisfy 0 <= fz_min < fz_max")

    @classmethod
    def for_foot(cls, geometry, mu=0.7, mu_z=0.05, fz_min=0.0, fz_max=1e4):
        return cls(mu, mu_z, geometry.half_length_toe, geometry.half_length_heel,
                   geometry.half_width, fz_min, fz_max)

    def inequalities(self):
        """(G, h) with G @ wrench <= h"""
        mu, mz = self.mu, self.mu_z
        G = np.array([
            [0, 0, 0, 1, 0, -mu],
            [0, 0, 0, -1, 0, -mu],
            [0, 0, 0, 0, 1, -mu],
            [0, 0, 0, 0, -1, -mu],
            [0, 1, 0, 0, 0, -self.l_h],
            [0, -1, 0, 0, 0, -self.l_t],
            [1, 0, 0, 0, 0, -self.w_f],
            [-1, 0, 0, 0, 0, -self.w_f],
            [0, 0, 1, 0, 0, -mz],
            [0, 0, -1, 0, 0, -mz],
            [0, 0, 0, 0, 0, -1],
            [0, 0, 0, 0, 0, 1],
        ], dtype=float)
        h = np.zeros(12)
        h[10] = -self.fz_min
        h[11] = self.fz_max
        return G, h

    def violation(self, wrench):
        """Largest constraint violation (<= 0 when feasible)"""
        G, h = self.inequalities()
        lam = wrench.as_vector() if isinstance(wrench, ContactWrench) else np.asarray(wrench)
        return float(np.max(G @ lam - h))


@dataclass(frozen=True)
class Gains:
    """Diagonals of K_P and K_D, layout (angular; linear)"""
    K_P: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0, 60.0, 60.0, 100.0]))
    K_D: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 10.0, 15.0, 15.0, 20.0]))

    def __post_init__(self):
        for key in ('K_P', 'K_D'):
            value = np.asarray(getattr(self, key), dtype=float)
            if value.shape != (6,) or np.any(value <= 0):
                raise ValueError(f"{key} must be 6 positive diagonal entries")
            object.__setattr__(self, key, value)


@dataclass(frozen=True)
class ServoGains:
    kp: float
    kd: float

    def __post_init__(self):
        if self.kp <= 0 or self.kd <= 0:
            raise ValueError("servo gains must be positive")


@dataclass(frozen=True)
class ControllerGains:
    momentum: Gains = field(default_factory=Gains)
    swing: ServoGains = ServoGains(400.0, 40.0)
    pelvis: ServoGains = ServoGains(200.0, 30.0)
    posture: ServoGains = ServoGains(100.0, 20.0)


class WrenchProjection(NamedTuple):
    hdot_c: np.ndarray
    wrench: ContactWrench
    required: ContactWrench
    projected: bool
    saturated: bool


class LevelResult(NamedTuple):
    priority: int
    tasks: tuple
    residual: float
    rank: int
    achievable: bool


class ControlOutput(NamedTuple):
    tau: np.ndarray
    qdd: np.ndarray
    wrenches: list
    levels: list
    hdot_d: Optional[np.ndarray] = None
    hdot_c: Optional[np.ndarray] = None
    projected: bool = False
    saturated: bool = False
    contact_residual: float = 0.0
    dynamics_residual: float = 0.0
    torque_excess: float = 0.0
    wrench_fallback: bool = False

    def residual_of(self, priority):
        for level in self.levels:
            if level.priority == priority:
                return level.residual
        return float('nan')


class ComReference(NamedTuple):
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray


class SwingTarget(NamedTuple):
    """Swing sole target in world: position, velocity, acceleration and flat orientation"""
    foot: str
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    rotation: np.ndarray


def nullspace_parametrization(J_c, Jdot_qd):
    """
    qdd = qdd_particular + Z_c z satisfies J_c qdd + J_c' qd = 0 for any z

    Returns (qdd_particular, Z_c) with orthonormal Z_c columns.
    """
    J_c = np.asarray(J_c, dtype=float)
    n = J_c.shape[1]
    if J_c.shape[0] == 0:
        return np.zeros(n), np.eye(n)
    Z_c = linalg.null_space(J_c, rcond=1e-10)
    if Z_c.shape[1] != n - J_c.shape[0]:
        raise SingularConstraintError(
            f"contact Jacobian has rank {n - Z_c.shape[1]} < {J_c.shape[0]} rows")
    qdd_particular = linalg.pinv(J_c) @ (-np.asarray(Jdot_qd, dtype=float))
    return qdd_particular, Z_c


def desired_momentum_rate(ref, p_com, h_com, gains, m):
    """
    hdot_d = (0; m a_d) + K_D ((0; m v_d) - h) + K_P (0; m p_d - m p_com)

    Parameters:
    - ref: ComReference in world
    - p_com: measured CoM position in world
    - h_com: measured centroidal momentum, 6-vector (angular; linear)
    """
    h = np.asarray(h_com.as_vector() if hasattr(h_com, 'as_vector') else h_com, dtype=float)
    ff = np.concatenate([np.zeros(3), m * np.asarray(ref.acceleration)])
    h_ref = np.concatenate([np.zeros(3), m * np.asarray(ref.velocity)])
    p_err = np.concatenate([np.zeros(3), m * (np.asarray(ref.position) - np.asarray(p_com))])
    return ff + gains.K_D * (h_ref - h) + gains.K_P * p_err


def momentum_rate_from_wrench(wrench_world, contact_point, p_com, m, gravity):
    """Newton-Euler rate of centroidal momentum produced by a contact wrench (world, at the contact point)"""
    moment, force = wrench_world[:3], wrench_world[3:]
    r = np.asarray(contact_point) - np.asarray(p_com)
    return np.concatenate([np.cross(r, force) + moment, force + m * np.asarray(gravity)])


def wrench_from_momentum_rate(hdot, contact_point, p_com, m, gravity):
    """Unique contact wrench (world, at the contact point) producing ``hdot`` in single support"""
    force = hdot[3:] - m * np.asarray(gravity)
    r = np.asarray(contact_point) - np.asarray(p_com)
    return np.concatenate([hdot[:3] - np.cross(r, force), force])


def project_wrench(lam, limits, weights=WRENCH_WEIGHTS):
    """Weighted minimum-norm correction of ``lam`` onto the wrench cone"""
    G, h = limits.inequalities()
    W = np.diag(weights)
    sol = solve_qp(P=W, q=-W @ lam, G=G, h=h, solver='quadprog')
    if sol is None:
        raise SingularConstraintError("wrench projection QP returned no solution")
    return sol


def constrain_momentum_rate(hdot_d, p_com, m, contact_point, contact_rotation, limits, gravity):
    """
    Make a desired momentum rate consistent with one flat contact

    Returns WrenchProjection; hdot_c equals hdot_d exactly when the required
    wrench is already feasible.
    """
    R = np.asarray(contact_rotation)
    w_world = wrench_from_momentum_rate(hdot_d, contact_point, p_com, m, gravity)
    lam = np.concatenate([R.T @ w_world[:3], R.T @ w_world[3:]])
    required = ContactWrench.from_vector(lam)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if limits.violation(lam) <= 1e-12 * scale:
        return WrenchProjection(np.array(hdot_d, dtype=float), required, required, False, False)

    lam_c = project_wrench(lam, limits)
    saturated = lam[5] < limits.fz_min or lam[5] > limits.fz_max
    if saturated:
        logger.debug("required normal force %.1f N outside [%.1f, %.1f]",
                     lam[5], limits.fz_min, limits.fz_max)
    w_c = np.concatenate([R @ lam_c[:3], R @ lam_c[3:]])
    hdot_c = momentum_rate_from_wrench(w_c, contact_point, p_com, m, gravity)
    return WrenchProjection(hdot_c, ContactWrench.from_vector(lam_c), required, True, bool(saturated))


def momentum_task(A_com, Adot_qd, hdot_c, priority=MOMENTUM_LEVEL):
    return Task('momentum', np.asarray(A_com), np.asarray(Adot_qd), np.asarray(hdot_c), priority)


def _orientation_error(R, R_target):
    """World-frame rotation vector taking R to R_target"""
    return Rotation.from_matrix(R_target @ R.T).as_rotvec()


def swing_foot_task(model, kin, target, gains, priority=SWING_LEVEL):
    """
    PD-servoed 6-DoF sole task (angular; linear rows in world)

    Parameters:
    - kin: Kinematics with velocities
    - target: SwingTarget
    - gains: ServoGains
    """
    geom = model.feet[target.foot]
    point, R = sole_pose(model, kin, target.foot)
    Jw, Jv = point_jacobian(model, kin, geom.body, point)
    dw, a = point_bias_acceleration(kin, geom.body, point)
    w, v = point_velocity(kin, geom.body, point)
    ang = gains.kp * _orientation_error(R, target.rotation) - gains.kd * w
    lin = (np.asarray(target.acceleration) + gains.kp * (np.asarray(target.position) - point)
           + gains.kd * (np.asarray(target.velocity) - v))
    return Task(f'swing_{target.foot}', np.vstack([Jw, Jv]), np.concatenate([dw, a]),
                np.concatenate([ang, lin]), priority)


def pelvis_orientation_task(model, kin, rotation, gains, priority=SWING_LEVEL):
    """Hold the floating base upright at the frame heading"""
    J = np.zeros((3, model.nv))
    J[:, 3:6] = kin.rotation[0]
    target = gains.kp * _orientation_error(kin.rotation[0], rotation) - gains.kd * kin.omega[0]
    return Task('pelvis', J, np.zeros(3), target, priority)


def posture_task(model, q, qd, q_ideal, joints, gains, priority=POSTURE_LEVEL):
    """
    Joint-space PD task on the selected actuated joints

    Parameters:
    - q_ideal: (nj,) ideal joint angles
    - joints: actuated indices included in the task
    """
    joints = list(joints)
    J = np.zeros((len(joints), model.nv))
    J[np.arange(len(joints)), 6 + np.asarray(joints, dtype=int)] = 1.0
    q_j = np.asarray(q)[7:][joints]
    qd_j = np.asarray(qd)[6:][joints]
    target = gains.kp * (np.asarray(q_ideal)[joints] - q_j) - gains.kd * qd_j
    return Task('posture', J, np.zeros(len(joints)), target, priority)


def _group_levels(tasks):
    levels: Dict[int, List[Task]] = {}
    for task in tasks:
        levels.setdefault(task.priority, []).append(task)
    priorities = sorted(levels)
    if priorities and priorities != list(range(1, len(priorities) + 1)):
        raise ValueError(f"task priorities must be dense from 1, got {priorities}")
    return [(p, levels[p]) for p in priorities]


def lexicographic_solve(levels, qdd_particular, Z_c):
    """
    Successive nullspace least squares over z

    Parameters:
    - levels: list of (priority, [Task]) in increasing priority index

    Returns (z, [LevelResult]).
    """
    r = Z_c.shape[1]
    z = np.zeros(r)
    N = np.eye(r)
    results = []
    for priority, tasks in levels:
        A = np.vstack([t.matrix for t in tasks])
        b = np.concatenate([t.rhs for t in tasks]) - A @ qdd_particular
        A_z = A @ Z_c
        rank = 0
        if N.shape[1] > 0:
            AN = A_z @ N
            U, s, Vt = linalg.svd(AN, full_matrices=True)
            if s.size:
                rank = int(np.sum(s > LEVEL_SVD_TOL * max(1.0, s[0])))
            if rank:
                w = Vt[:rank].T @ ((U[:, :rank].T @ (b - A_z @ z)) / s[:rank])
                z = z + N @ w
            N = N @ Vt[rank:].T
        residual = float(np.linalg.norm(A_z @ z - b))
        achievable = residual <= LEVEL_RESIDUAL_TOL * max(1.0, float(np.linalg.norm(b)))
        if not achievable:
            logger.debug("level %d (%s) residual %.3e", priority,
                         ', '.join(t.name for t in tasks), residual)
        results.append(LevelResult(priority, tuple(t.name for t in tasks), residual, rank, achievable))
    return z, results


def distribute_wrench(J_base_T, base_rhs, contacts, limits):
    """
    Contact wrenches balancing the floating-base rows. One contact: unique solution.
    Several: smallest weighted wrench inside every cone.

    Returns (lam, feasible). When the cones admit no split, lam is the
    minimum-norm split and feasible is False.
    """
    k = J_base_T.shape[1]
    if k <= 6:
        lam, *_ = np.linalg.lstsq(J_base_T, base_rhs, rcond=None)
        return lam, True
    W = np.diag(np.concatenate([WRENCH_WEIGHTS if c.rows == 6 else np.ones(3) for c in contacts]))
    blocks = []
    h = []
    for c in contacts:
        G, hc = limits[c.foot].inequalities()
        blocks.append(G if c.rows == 6 else G[:, 3:])
        h.append(hc)
    lam = solve_qp(P=W, q=np.zeros(k), G=linalg.block_diag(*blocks), h=np.concatenate(h),
                   A=J_base_T, b=base_rhs, solver='quadprog')
    if lam is None:
        logger.warning("wrench distribution infeasible over %d contacts, using minimum-norm split",
                       len(contacts))
        lam, *_ = np.linalg.lstsq(J_base_T, base_rhs, rcond=None)
        return lam, False
    return lam, True


def solve_hierarchy(tasks, qdd_particular, Z_c, terms=None, J_c=None, contacts=(), limits=None):
    """
    Lexicographic solve of the prioritized tasks, then torques

    Parameters:
    - tasks: Task list; priorities dense from 1, same priority means stacked rows
    - qdd_particular, Z_c: from nullspace_parametrization
    - terms, J_c, contacts: DynamicsTerms and contact Jacobian; without them
      only accelerations are returned
    - limits: per-foot WrenchLimits, used when several contacts share the load
    """
    z, results = lexicographic_solve(_group_levels(tasks), qdd_particular, Z_c)
    qdd = qdd_particular + Z_c @ z
    if terms is None:
        return ControlOutput(np.zeros(0), qdd, [], results)

    M, h = terms.M, terms.h
    generalized = M @ qdd + h
    if J_c is None or J_c.shape[0] == 0:
        lam = np.zeros(0)
        tau = generalized[6:]
        wrenches = []
        feasible = True
    else:
        lam, feasible = distribute_wrench(J_c[:, :6].T, generalized[:6], contacts, limits or {})
        tau = generalized[6:] - J_c[:, 6:].T @ lam
        wrenches = split_wrenches(contacts, lam)
    full = generalized - np.concatenate([np.zeros(6), tau])
    if lam.size:
        full = full - J_c.T @ lam
    return ControlOutput(tau, qdd, wrenches, results,
                         dynamics_residual=float(np.max(np.abs(full))),
                         wrench_fallback=not feasible)


class MomentumController:
    """
    Composes the controller levels for one control tick

    Parameters:
    - biped: SurrogateBiped (model, nominal posture, posture joints)
    - gains: ControllerGains
    - limits: WrenchLimits per foot
    - torque_cap: |tau| above this is logged, never clipped
    - use_momentum_task: drop level 1 for ablation runs
    """

    def __init__(self, biped, gains, limits, torque_cap=1000.0, use_momentum_task=True):
        self.biped = biped
        self.model = biped.model
        self.gains = gains
        self.limits = dict(limits)
        self.torque_cap = float(torque_cap)
        self.use_momentum_task = use_momentum_task

    def compute(self, q, qd, contacts, com_ref, heading_rotation, swing=None, terms=None):
        """
        One control tick

        Parameters:
        - contacts: active Contact list (one in single support, two at touchdown)
        - com_ref: ComReference in world
        - heading_rotation: rotation of the current contact frame
        - swing: SwingTarget or None in double support
        """
        model = self.model
        m = model.total_mass
        if terms is None:
            terms = compute_dynamics(model, q, qd)
        kin = terms.kinematics
        J_c = contact_jacobian(model, q, contacts, kin)
        Jdqd = jdot_qdot(model, q, qd, contacts, kin)
        qdd_p, Z_c = nullspace_parametrization(J_c, Jdqd)

        hdot_d = desired_momentum_rate(com_ref, terms.p_com, terms.h_com, self.gains.momentum, m)
        projected = saturated = False
        if len(contacts) == 1:
            point, _ = sole_pose(model, kin, contacts[0].foot)
            proj = constrain_momentum_rate(hdot_d, terms.p_com, m, point, contacts[0].rotation,
                                           self.limits[contacts[0].foot], model.gravity)
            hdot_c, projected, saturated = proj.hdot_c, proj.projected, proj.saturated
        else:
            # wrench under-determined with two feet down
            hdot_c = hdot_d

        tasks = []
        priority = 1
        if self.use_momentum_task:
            tasks.append(momentum_task(terms.A_com, terms.Adot_qd, hdot_c, priority))
            priority += 1
        level2 = [pelvis_orientation_task(model, kin, heading_rotation, self.gains.pelvis, priority)]
        if swing is not None:
            level2.append(swing_foot_task(model, kin, swing, self.gains.swing, priority))
        tasks.extend(level2)
        priority += 1
        if self.biped.posture_joints:
            tasks.append(posture_task(model, q, qd, self.biped.nominal_joints,
                                      self.biped.posture_joints, self.gains.posture, priority))

        out = solve_hierarchy(tasks, qdd_p, Z_c, terms, J_c, contacts, self.limits)
        contact_residual = float(np.max(np.abs(J_c @ out.qdd + Jdqd))) if J_c.size else 0.0
        excess = float(max(0.0, np.max(np.abs(out.tau)) - self.torque_cap))
        if excess > 0:
            logger.warning("torque cap exceeded by %.1f N*m (cap %.0f)", excess, self.torque_cap)
        return out._replace(hdot_d=hdot_d, hdot_c=hdot_c, projected=projected, saturated=saturated,
                            contact_residual=contact_residual, torque_excess=excess)
