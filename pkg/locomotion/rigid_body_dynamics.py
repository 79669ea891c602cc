#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Floating-Base Rigid Body Dynamics
Kinematic tree with one free joint and revolute joints. Provides the mass
matrix, lumped bias forces C + G, contact Jacobians and their drift terms,
the centroidal momentum matrix and its derivative, constrained forward
dynamics and the plastic impact map.

Coordinates:
 - q  = [base position (3, world), base quaternion (4, x-y-z-w), joint angles]
 - qd = [base linear velocity (3, world), base angular rate (3, body), joint rates]

Everything is evaluated in the world frame with a forward recursion over
the tree (velocities and velocity-product accelerations) followed by
Jacobian-transpose projection of the per-body Newton-Euler terms, which
is the backward pass of recursive Newton-Euler written in matrix form.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation

from locomotion import SingularConstraintError
from locomotion.alip_core import GRAVITY, CentroidalMomentum

logger = logging.getLogger(__name__)

FREE = 'free'
REVOLUTE = 'revolute'

# relative singular value below which a contact Jacobian is considered rank deficient
RANK_TOL = 1e-9


def skew(v):
    """Matrix of the cross product v x (.)"""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def axis_angle_matrix(axis, angle):
    """Rodrigues rotation about a unit axis"""
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class Body:
    """
    One rigid link. ``origin`` is the joint location in the parent frame,
    ``axis`` the revolute axis in the parent (equivalently child) frame,
    ``com`` and ``inertia`` are expressed in the body frame, inertia about the CoM.
    """
    name: str
    parent: int
    joint_type: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    axis: np.ndarray = field(default_factory=lambda: np.zeros(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joint_name: Optional[str] = None


@dataclass(frozen=True)
class FootGeometry:
    """Rectangular sole: polygon centre offset from the ankle body and its half extents"""
    body: int
    sole_offset: np.ndarray
    half_length_toe: float
    half_length_heel: float
    half_width: float


class RobotModel:
    """
    Immutable kinematic tree. Body 0 carries the free joint; body i >= 1 carries
    revolute joint i - 1 whose rate sits at qd[5 + i] and angle at q[6 + i].

    Parameters:
    - bodies: list of Body, parents before children
    - feet: mapping 'left'/'right' -> FootGeometry
    - gravity: magnitude of gravity (m/s^2), acting along -z
    """

    def __init__(self, bodies: Sequence[Body], feet: Dict[str, FootGeometry], gravity=GRAVITY, name='robot'):
        self.name = name
        self.bodies = tuple(bodies)
        self.feet = dict(feet)
        self.gravity = np.array([0.0, 0.0, -float(gravity)])
        self._validate()

        self.nb = len(self.bodies)
        self.nj = self.nb - 1
        self.nv = 6 + self.nj
        self.nq = 7 + self.nj
        self.parents = np.array([b.parent for b in self.bodies])
        self.masses = np.array([b.mass for b in self.bodies])
        self.total_mass = float(self.masses.sum())

        # joint bodies on the path root -> i (root excluded)
        self.ancestors: List[Tuple[int, ...]] = []
        for i in range(self.nb):
            chain = []
            k = i
            while k > 0:
                chain.append(k)
                k = self.parents[k]
            self.ancestors.append(tuple(reversed(chain)))

        self.joint_names = tuple(b.joint_name or b.name for b in self.bodies[1:])
        self._joint_lookup = {n: j for j, n in enumerate(self.joint_names)}
        self._body_lookup = {b.name: i for i, b in enumerate(self.bodies)}

        # actuation selector: tau maps to qd[6:]
        self.S = np.hstack([np.zeros((self.nj, 6)), np.eye(self.nj)])

        for arr in ('parents', 'masses', 'S'):
            getattr(self, arr).setflags(write=False)
        self.gravity.setflags(write=False)

    def _validate(self):
        if not self.bodies:
            raise ValueError("robot model has no bodies")
        free = [i for i, b in enumerate(self.bodies) if b.joint_type == FREE]
        if free != [0]:
            raise ValueError("exactly one free joint is required and it must belong to body 0")
        for i, b in enumerate(self.bodies):
            if b.mass <= 0:
                raise ValueError(f"body '{b.name}' has non-positive mass {b.mass}")
            inertia = np.asarray(b.inertia, dtype=float)
            if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T, atol=1e-12):
                raise ValueError(f"body '{b.name}' inertia must be a symmetric 3x3 matrix")
            try:
                np.linalg.cholesky(inertia)
            except np.linalg.LinAlgError:
                raise ValueError(f"body '{b.name}' inertia is not positive definite")
            if i == 0:
                if b.parent != -1:
                    raise ValueError("the floating base must have parent -1")
                continue
            if b.joint_type != REVOLUTE:
                raise ValueError(f"body '{b.name}': unsupported joint type '{b.joint_type}'")
            if not 0 <= b.parent < i:
                raise ValueError(f"body '{b.name}': parent {b.parent} must precede it (tree must be acyclic)")
            if not np.isclose(np.linalg.norm(b.axis), 1.0):
                raise ValueError(f"body '{b.name}': joint axis must be a unit vector")
        for side, foot in self.feet.items():
            if not 0 <= foot.body < len(self.bodies):
                raise ValueError(f"foot '{side}' refers to unknown body {foot.body}")
            if min(foot.half_length_toe, foot.half_length_heel, foot.half_width) <= 0:
                raise ValueError(f"foot '{side}' polygon bounds must be positive")

    def body_index(self, name):
        return self._body_lookup[name]

    def joint_index(self, name):
        """Index of a joint among the actuated coordinates"""
        return self._joint_lookup[name]

    def neutral_configuration(self):
        q = np.zeros(self.nq)
        q[6] = 1.0
        return q


class Contact(NamedTuple):
    """Active contact of one foot; rows are expressed in the contact frame ``rotation``"""
    foot: str
    rotation: np.ndarray
    point_only: bool = False

    @property
    def rows(self):
        return 3 if self.point_only else 6


class ContactWrench(NamedTuple):
    """Reaction wrench at the sole polygon centre, in {c}"""
    moment: np.ndarray
    force: np.ndarray

    def as_vector(self):
        return np.concatenate([self.moment, self.force])

    @classmethod
    def from_vector(cls, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.size == 3:
            return cls(np.zeros(3), lam.copy())
        return cls(lam[:3].copy(), lam[3:6].copy())


class Kinematics(NamedTuple):
    rotation: np.ndarray     # (nb, 3, 3) body to world
    origin: np.ndarray       # (nb, 3) joint origins
    axis: np.ndarray         # (nb, 3) world joint axes (row 0 unused)
    com: np.ndarray          # (nb, 3) body CoM positions
    omega: Optional[np.ndarray] = None        # (nb, 3) world angular velocity
    v_origin: Optional[np.ndarray] = None     # (nb, 3) velocity of joint origins
    domega_bias: Optional[np.ndarray] = None  # (nb, 3) angular acceleration at qdd = 0
    a_origin_bias: Optional[np.ndarray] = None  # (nb, 3) origin acceleration at qdd = 0


class DynamicsTerms(NamedTuple):
    M: np.ndarray
    h: np.ndarray                 # C(q, qd) + G(q)
    A_com: np.ndarray
    Adot_qd: np.ndarray
    h_com: CentroidalMomentum
    p_com: np.ndarray
    v_com: np.ndarray
    kinematics: Kinematics


def base_rotation(q):
    return Rotation.from_quat(q[3:7]).as_matrix()


def forward_kinematics(model, q, qd=None):
    """
    Forward pass over the tree. With ``qd`` the velocities and the
    velocity-product (qdd = 0) accelerations are propagated as well.
    """
    q = np.asarray(q, dtype=float)
    nb = model.nb
    R = np.empty((nb, 3, 3))
    o = np.empty((nb, 3))
    a = np.zeros((nb, 3))
    R[0] = base_rotation(q)
    o[0] = q[0:3]
    for i in range(1, nb):
        body = model.bodies[i]
        p = body.parent
        a[i] = R[p] @ body.axis
        o[i] = o[p] + R[p] @ body.origin
        R[i] = R[p] @ axis_angle_matrix(body.axis, q[6 + i])
    com = o + np.einsum('bij,bj->bi', R, np.array([b.com for b in model.bodies]))
    if qd is None:
        return Kinematics(R, o, a, com)

    qd = np.asarray(qd, dtype=float)
    w = np.empty((nb, 3))
    vo = np.empty((nb, 3))
    dw = np.zeros((nb, 3))
    ao = np.zeros((nb, 3))
    w[0] = R[0] @ qd[3:6]
    vo[0] = qd[0:3]
    for i in range(1, nb):
        p = model.parents[i]
        rate = qd[5 + i]
        d = o[i] - o[p]
        w[i] = w[p] + a[i] * rate
        dw[i] = dw[p] + np.cross(w[p], a[i]) * rate
        vo[i] = vo[p] + np.cross(w[p], d)
        ao[i] = ao[p] + np.cross(dw[p], d) + np.cross(w[p], np.cross(w[p], d))
    return Kinematics(R, o, a, com, w, vo, dw, ao)


def point_jacobian(model, kin, body, point):
    """
    World-frame Jacobians (angular Jw, linear Jv) of a point rigidly attached to ``body``

    Parameters:
    - kin: Kinematics from forward_kinematics
    - point: world position of the point
    """
    Jw = np.zeros((3, model.nv))
    Jv = np.zeros((3, model.nv))
    R0 = kin.rotation[0]
    Jv[:, 0:3] = np.eye(3)
    Jw[:, 3:6] = R0
    Jv[:, 3:6] = -skew(point - kin.origin[0]) @ R0
    for k in model.ancestors[body]:
        axis = kin.axis[k]
        Jw[:, 5 + k] = axis
        Jv[:, 5 + k] = np.cross(axis, point - kin.origin[k])
    return Jw, Jv


def point_bias_acceleration(kin, body, point):
    """Angular and linear acceleration of an attached point at qdd = 0"""
    s = point - kin.origin[body]
    w = kin.omega[body]
    dw = kin.domega_bias[body]
    return dw, kin.a_origin_bias[body] + np.cross(dw, s) + np.cross(w, np.cross(w, s))


def point_velocity(kin, body, point):
    s = point - kin.origin[body]
    return kin.omega[body], kin.v_origin[body] + np.cross(kin.omega[body], s)


def _world_inertias(model, kin):
    inertia = np.array([b.inertia for b in model.bodies])
    return np.einsum('bij,bjk,blk->bil', kin.rotation, inertia, kin.rotation)


def body_velocities(model, q, qd):
    """Per-body (CoM position, CoM velocity, angular velocity, world inertia), for summation checks"""
    kin = forward_kinematics(model, q, qd)
    v_com = kin.v_origin + np.cross(kin.omega, kin.com - kin.origin)
    return kin.com, v_com, kin.omega, _world_inertias(model, kin)


def compute_dynamics(model, q, qd):
    """
    Mass matrix, bias forces and centroidal momentum terms in one pass

    Parameters:
    - model: RobotModel
    - q, qd: configuration and generalized velocity
    """
    kin = forward_kinematics(model, q, qd)
    nb, nv = model.nb, model.nv
    Iw = _world_inertias(model, kin)
    m = model.masses
    Jw = np.empty((nb, 3, nv))
    Jv = np.empty((nb, 3, nv))
    a_bias = np.empty((nb, 3))
    for i in range(nb):
        Jw[i], Jv[i] = point_jacobian(model, kin, i, kin.com[i])
        _, a_bias[i] = point_bias_acceleration(kin, i, kin.com[i])
    w = kin.omega
    dw = kin.domega_bias
    Iw_w = np.einsum('bij,bj->bi', Iw, w)
    gyro = np.einsum('bij,bj->bi', Iw, dw) + np.cross(w, Iw_w)

    M = np.einsum('b,bji,bjk->ik', m, Jv, Jv) + np.einsum('bji,bjk,bkl->il', Jw, Iw, Jw)
    M = 0.5 * (M + M.T)
    force = m[:, None] * (a_bias - model.gravity)
    h = np.einsum('bji,bj->i', Jv, force) + np.einsum('bji,bj->i', Jw, gyro)

    p_com = (m[:, None] * kin.com).sum(axis=0) / model.total_mass
    r = kin.com - p_com
    A_lin = np.einsum('b,bij->ij', m, Jv)
    A_ang = (np.einsum('b,bij,bjk->ik', m, np.array([skew(ri) for ri in r]), Jv)
             + np.einsum('bij,bjk->ik', Iw, Jw))
    A_com = np.vstack([A_ang, A_lin])
    Adot_qd = np.concatenate([(m[:, None] * np.cross(r, a_bias)).sum(axis=0) + gyro.sum(axis=0),
                              (m[:, None] * a_bias).sum(axis=0)])
    hv = A_com @ qd
    v_com = hv[3:] / model.total_mass
    return DynamicsTerms(M, h, A_com, Adot_qd, CentroidalMomentum(hv[:3], hv[3:]), p_com, v_com, kin)


def mass_matrix(model, q):
    return compute_dynamics(model, q, np.zeros(model.nv)).M


def bias_forces(model, q, qd):
    """C(q, qd) + G(q): generalized force needed for zero acceleration"""
    return compute_dynamics(model, q, qd).h


def centroidal_momentum(model, q, qd):
    terms = compute_dynamics(model, q, qd)
    return terms.A_com, terms.Adot_qd, terms.h_com


def com_state(model, q, qd):
    terms = compute_dynamics(model, q, qd)
    return terms.p_com, terms.v_com


def sole_pose(model, kin, foot):
    """World position of the sole polygon centre and the foot rotation"""
    geom = model.feet[foot]
    R = kin.rotation[geom.body]
    return kin.origin[geom.body] + R @ geom.sole_offset, R


def contact_jacobian(model, q, contacts, kin=None):
    """Stacked contact Jacobian, rows (angular; linear) per contact expressed in its frame"""
    if kin is None:
        kin = forward_kinematics(model, q)
    blocks = []
    for c in contacts:
        geom = model.feet[c.foot]
        point, _ = sole_pose(model, kin, c.foot)
        Jw, Jv = point_jacobian(model, kin, geom.body, point)
        Rt = np.asarray(c.rotation).T
        blocks.append(Rt @ Jv if c.point_only else np.vstack([Rt @ Jw, Rt @ Jv]))
    if not blocks:
        return np.zeros((0, model.nv))
    return np.vstack(blocks)


def jdot_qdot(model, q, qd, contacts, kin=None):
    """Contact bias acceleration J_c' qd, same row layout as contact_jacobian"""
    if kin is None or kin.omega is None:
        kin = forward_kinematics(model, q, qd)
    parts = []
    for c in contacts:
        geom = model.feet[c.foot]
        point, _ = sole_pose(model, kin, c.foot)
        dw, a = point_bias_acceleration(kin, geom.body, point)
        Rt = np.asarray(c.rotation).T
        parts.append(Rt @ a if c.point_only else np.concatenate([Rt @ dw, Rt @ a]))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def split_wrenches(contacts, lam):
    """Cut a stacked multiplier vector into one ContactWrench per contact"""
    out = []
    k = 0
    for c in contacts:
        out.append(ContactWrench.from_vector(lam[k:k + c.rows]))
        k += c.rows
    return out


def _check_rank(J):
    if J.shape[0] == 0:
        return
    s = np.linalg.svd(J, compute_uv=False)
    if s[-1] <= RANK_TOL * max(1.0, s[0]):
        raise SingularConstraintError(
            f"contact Jacobian is rank deficient (sigma_min={s[-1]:.3e}, rows={J.shape[0]})")


def constrained_forward_dynamics(model, q, qd, tau, contacts, terms=None, stabilization=None):
    """
    Solve [M, -J^T; J, 0] [qdd; lambda] = [S^T tau - h; -J' qd + stabilization]

    Parameters:
    - stabilization: optional right-hand side added to the contact rows, e.g.
      Baumgarte terms -alpha J qd - beta e (zero keeps J qdd + J' qd = 0)

    Returns (qdd, list of ContactWrench). Without contacts the base is free.
    """
    if terms is None:
        terms = compute_dynamics(model, q, qd)
    rhs_dyn = model.S.T @ np.asarray(tau, dtype=float) - terms.h
    if not contacts:
        return linalg.solve(terms.M, rhs_dyn, assume_a='pos'), []

    J = contact_jacobian(model, q, contacts, terms.kinematics)
    _check_rank(J)
    Jdqd = jdot_qdot(model, q, qd, contacts, terms.kinematics)
    k = J.shape[0]
    rhs_con = -Jdqd if stabilization is None else np.asarray(stabilization, dtype=float) - Jdqd
    K = np.block([[terms.M, -J.T], [J, np.zeros((k, k))]])
    sol = linalg.solve(K, np.concatenate([rhs_dyn, rhs_con]))
    return sol[:model.nv], split_wrenches(contacts, sol[model.nv:])


def impact_map(model, q, qd_minus, new_contacts, terms=None):
    """
    Plastic impact: qd+ = qd- - M^-1 J^T (J M^-1 J^T)^-1 J qd-

    Returns (qd_plus, impulse per contact).
    """
    if terms is None:
        terms = compute_dynamics(model, q, qd_minus)
    qd_minus = np.asarray(qd_minus, dtype=float)
    J = contact_jacobian(model, q, new_contacts, terms.kinematics)
    M_factor = linalg.cho_factor(terms.M)
    Minv_JT = linalg.cho_solve(M_factor, J.T)
    try:
        G_factor = linalg.cho_factor(J @ Minv_JT)
    except linalg.LinAlgError as exc:
        raise SingularConstraintError(f"impact inertia J M^-1 J^T is singular: {exc}")
    impulse = -linalg.cho_solve(G_factor, J @ qd_minus)
    qd_plus = qd_minus + Minv_JT @ impulse
    return qd_plus, split_wrenches(new_contacts, impulse)


def integrate_configuration(model, q, qd, dt):
    """Advance q along qd for dt; base rotation updated on the manifold, quaternion renormalized"""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    out = q.copy()
    out[0:3] = q[0:3] + qd[0:3] * dt
    rot = Rotation.from_quat(q[3:7]) * Rotation.from_rotvec(qd[3:6] * dt)
    quat = rot.as_quat()
    out[3:7] = quat / np.linalg.norm(quat)
    out[7:] = q[7:] + qd[6:] * dt
    return out


def configuration_difference(model, q1, q0):
    """Tangent vector dq with integrate_configuration(q0, dq, 1) == q1"""
    dq = np.empty(model.nv)
    dq[0:3] = q1[0:3] - q0[0:3]
    dq[3:6] = (Rotation.from_quat(q0[3:7]).inv() * Rotation.from_quat(q1[3:7])).as_rotvec()
    dq[6:] = q1[7:] - q0[7:]
    return dq


def kinetic_energy(model, q, qd, terms=None):
    if terms is None:
        terms = compute_dynamics(model, q, qd)
    return 0.5 * float(qd @ terms.M @ qd)


def potential_energy(model, q):
    kin = forward_kinematics(model, q)
    return -float(model.masses @ (kin.com @ model.gravity))
