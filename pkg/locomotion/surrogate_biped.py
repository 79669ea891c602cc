#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Surrogate Biped Module
Builds a RobotModel from its structured description (bodies, joints,
inertias, foot polygons) and places it on the ALIP orbit: a standing pose
with both soles flat and the CoM at the template seed, plus joint rates
matching the seed CoM velocity under the no-slip constraint.
"""

import logging
from typing import Dict, NamedTuple, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from locomotion.alip_core import GRAVITY, com_kinematics
from locomotion.rigid_body_dynamics import (FREE, REVOLUTE, Body, Contact, FootGeometry,
                                            RobotModel, compute_dynamics, contact_jacobian,
                                            forward_kinematics, integrate_configuration,
                                            sole_pose)

logger = logging.getLogger(__name__)

# residual weight of the joint-posture regularizer in the pose solve
POSTURE_WEIGHT = 1e-2


class SurrogateBiped(NamedTuple):
    model: RobotModel
    nominal_joints: np.ndarray     # (nj,) nominal joint angles
    posture_joints: Tuple[int, ...]  # actuated indices outside both legs (torso, arms)
    pelvis: int


def _vector(entry, key, size=3, default=None):
    value = entry.get(key, default)
    if value is None:
        raise ValueError(f"missing '{key}'")
    arr = np.asarray(value, dtype=float)
    if arr.shape != (size,):
        raise ValueError(f"'{key}' must have {size} entries, got {value!r}")
    return arr


def _inertia(entry):
    value = entry.get('inertia_kgm2')
    if value is None:
        raise ValueError("missing 'inertia_kgm2'")
    arr = np.asarray(value, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ValueError("'inertia_kgm2' must be a diagonal (3 entries) or a 3x3 matrix")


def build_robot_model(description: Dict, arm_mass_scale=1.0):
    """
    Build the model and posture data from a parsed robot description

    Parameters:
    - description: mapping with 'bodies', 'feet' and optionally
      'nominal_posture_rad', 'gravity_mps2', 'name'
    - arm_mass_scale: multiplies mass and inertia of bodies tagged 'arm'

    Raises ValueError naming the offending body or key.
    """
    entries = description.get('bodies') or []
    index = {}
    bodies = []
    for i, entry in enumerate(entries):
        name = entry.get('name')
        if not name:
            raise ValueError(f"bodies[{i}]: missing 'name'")
        if name in index:
            raise ValueError(f"bodies[{i}]: duplicate body name '{name}'")
        try:
            joint = entry.get('joint', REVOLUTE)
            parent_name = entry.get('parent')
            if joint == FREE:
                parent = -1
            elif parent_name not in index:
                raise ValueError(f"unknown parent '{parent_name}'")
            else:
                parent = index[parent_name]
            scale = arm_mass_scale if entry.get('group') == 'arm' else 1.0
            axis = _vector(entry, 'axis', default=[0.0, 0.0, 0.0] if joint == FREE else None)
            norm = np.linalg.norm(axis)
            body = Body(name=name,
                        parent=parent,
                        joint_type=joint,
                        mass=float(entry['mass_kg']) * scale,
                        com=_vector(entry, 'com_m', default=[0.0, 0.0, 0.0]),
                        inertia=_inertia(entry) * scale,
                        axis=axis / norm if norm > 0 else axis,
                        origin=_vector(entry, 'origin_m', default=[0.0, 0.0, 0.0]),
                        joint_name=entry.get('joint_name'))
        except KeyError as exc:
            raise ValueError(f"body '{name}': missing {exc}")
        except ValueError as exc:
            raise ValueError(f"body '{name}': {exc}")
        index[name] = i
        bodies.append(body)

    feet = {}
    for side in ('left', 'right'):
        foot = (description.get('feet') or {}).get(side)
        if foot is None:
            raise ValueError(f"feet: missing '{side}'")
        if foot.get('body') not in index:
            raise ValueError(f"feet.{side}: unknown body '{foot.get('body')}'")
        try:
            feet[side] = FootGeometry(body=index[foot['body']],
                                      sole_offset=_vector(foot, 'sole_offset_m'),
                                      half_length_toe=float(foot['half_length_toe_m']),
                                      half_length_heel=float(foot['half_length_heel_m']),
                                      half_width=float(foot['half_width_m']))
        except KeyError as exc:
            raise ValueError(f"feet.{side}: missing {exc}")

    model = RobotModel(bodies, feet, gravity=float(description.get('gravity_mps2', GRAVITY)),
                       name=description.get('name', 'robot'))

    nominal = np.zeros(model.nj)
    for joint, angle in (description.get('nominal_posture_rad') or {}).items():
        if joint not in model.joint_names:
            raise ValueError(f"nominal_posture_rad: unknown joint '{joint}'")
        nominal[model.joint_index(joint)] = float(angle)

    leg_bodies = set()
    for geom in feet.values():
        leg_bodies.update(model.ancestors[geom.body])
    posture = tuple(i - 1 for i in range(1, model.nb) if i not in leg_bodies)
    logger.debug("built %s: %d bodies, %.1f kg, %d posture joints",
                 model.name, model.nb, model.total_mass, len(posture))
    return SurrogateBiped(model, nominal, posture, 0)


def _rotation_error(R, R_target):
    return Rotation.from_matrix(R_target.T @ R).as_rotvec()


def standing_pose(biped, frame, stance, swing_offset, com_target, q_guess=None):
    """
    Solve for a configuration with both soles flat on the ground and the CoM at ``com_target``

    Parameters:
    - biped: SurrogateBiped
    - frame: ContactFrame of the support foot (origin on the ground)
    - stance: Stance of the step
    - swing_offset: (x, y) of the swing sole in the frame
    - com_target: CoM position in the frame
    """
    model = biped.model
    R_c = frame.rotation
    swing_pos = frame.to_world([swing_offset[0], swing_offset[1], 0.0])
    com_world = frame.to_world(com_target)

    q0 = model.neutral_configuration() if q_guess is None else np.array(q_guess, dtype=float)
    if q_guess is None:
        q0[7:] = biped.nominal_joints
        q0[3:7] = Rotation.from_matrix(R_c).as_quat()
        q0[0:3] = com_world
        kin = forward_kinematics(model, q0)
        # drop the pelvis so the support sole starts near the ground
        sole, _ = sole_pose(model, kin, stance.support_foot)
        q0[0:3] += frame.origin - sole

    def residual(dq, posture_weight=POSTURE_WEIGHT):
        q = integrate_configuration(model, q0, dq, 1.0)
        kin = forward_kinematics(model, q)
        support, R_s = sole_pose(model, kin, stance.support_foot)
        swing, R_w = sole_pose(model, kin, stance.swing_foot)
        p_com = (model.masses @ kin.com) / model.total_mass
        return np.concatenate([support - frame.origin,
                               _rotation_error(R_s, R_c),
                               swing - swing_pos,
                               _rotation_error(R_w, R_c),
                               p_com - com_world,
                               _rotation_error(kin.rotation[biped.pelvis], R_c),
                               posture_weight * (q[7:] - biped.nominal_joints)])

    result = least_squares(residual, np.zeros(model.nv), xtol=1e-14, ftol=1e-14, gtol=1e-14,
                           max_nfev=200)
    # the regularizer pulls the constraints off by O(weight^2); polish on the constraints alone
    result = least_squares(lambda dq: residual(dq, 0.0)[:21], result.x, xtol=1e-15, ftol=1e-15,
                           gtol=1e-15, max_nfev=50)
    q = integrate_configuration(model, q0, result.x, 1.0)
    hard = residual(result.x)[:18]
    logger.debug("standing pose solve: %s, max constraint error %.2e", result.message,
                 np.max(np.abs(hard)))
    if np.max(np.abs(hard)) > 1e-6:
        logger.warning("standing pose constraints met only to %.2e", np.max(np.abs(hard)))
    return q


def orbit_velocity(biped, q, frame, com_velocity):
    """
    Joint rates with both feet at rest, zero centroidal angular momentum,
    zero pelvis rate and the given CoM velocity (in the frame)
    """
    model = biped.model
    terms = compute_dynamics(model, q, np.zeros(model.nv))
    contacts = [Contact('left', frame.rotation), Contact('right', frame.rotation)]
    J = contact_jacobian(model, q, contacts, terms.kinematics)
    pelvis_rate = np.zeros((3, model.nv))
    pelvis_rate[:, 3:6] = np.eye(3)
    A = np.vstack([J, terms.A_com[:3], terms.A_com[3:] / model.total_mass, pelvis_rate])
    b = np.concatenate([np.zeros(J.shape[0] + 3),
                        frame.vector_to_world(com_velocity),
                        np.zeros(3)])
    qd, *_ = np.linalg.lstsq(A, b, rcond=None)
    return qd


def initial_configuration(biped, params, frame, stance, seed):
    """
    Full-order state at the start of a step matching a template seed

    Parameters:
    - params: AlipParams (mass must be the model's total mass)
    - seed: PeriodicSeed from alip_planner.periodic_state
    """
    pos, vel, _ = com_kinematics(seed.x, seed.y, params)
    q = standing_pose(biped, frame, stance, seed.swing_offset, pos)
    qd = orbit_velocity(biped, q, frame, vel)
    return q, qd
