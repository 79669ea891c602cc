#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
ALIP Template Module
Reduced-order angular-momentum linear inverted pendulum: momentum
transformations, planar dynamics and closed-form step flows.

All quantities live in the per-step contact frame {c}; nothing in here
performs frame transforms.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from locomotion import PlannerDomainError

logger = logging.getLogger(__name__)

GRAVITY = 9.81


@dataclass(frozen=True)
class AlipParams:
    """Template constants. ``ell`` is derived on construction and cannot go stale."""

    m: float
    H: float
    g: float = GRAVITY
    ell: float = field(init=False)

    def __post_init__(self):
        if not self.m > 0:
            raise PlannerDomainError(f"mass must be positive, got {self.m}")
        if not self.H > 0:
            raise PlannerDomainError(f"CoM height must be positive, got {self.H}")
        if not self.g > 0:
            raise PlannerDomainError(f"gravity must be positive, got {self.g}")
        object.__setattr__(self, 'ell', float(np.sqrt(self.g / self.H)))

    @property
    def mH(self):
        return self.m * self.H

    @property
    def mHl(self):
        return self.m * self.H * self.ell


class SagittalState(NamedTuple):
    """x = [p_x, L_cy] in {c}"""
    p_x: float
    L_cy: float


class FrontalState(NamedTuple):
    """y = [p_y, L_cx] in {c}"""
    p_y: float
    L_cx: float


class CentroidalMomentum(NamedTuple):
    L_com: np.ndarray
    K_com: np.ndarray

    def as_vector(self):
        """Stacked (angular; linear) 6-vector"""
        return np.concatenate([self.L_com, self.K_com])


PlanarState = Union[SagittalState, FrontalState]


def contact_from_centroidal(L_com, p_com, v_com, m):
    """
    Parallel axis shift of the centroidal angular momentum to the contact point

    Parameters:
    - L_com: angular momentum about the CoM, in {c}
    - p_com: CoM position relative to the contact point, in {c}
    - v_com: CoM velocity, in {c}
    - m: total mass
    """
    L_com = np.asarray(L_com, dtype=float)
    p = np.asarray(p_com, dtype=float)
    v = np.asarray(v_com, dtype=float)
    return L_com + m * np.cross(p, v)


def alip_velocity(state_x, state_y, L_com_xy, params):
    """Horizontal CoM velocity implied by the contact and centroidal momenta"""
    L_com_x, L_com_y = float(L_com_xy[0]), float(L_com_xy[1])
    pdot_x = (state_x.L_cy - L_com_y) / params.mH
    pdot_y = (-state_y.L_cx + L_com_x) / params.mH
    return pdot_x, pdot_y


def contact_momentum_rate(p_com, m, g_vec, lambda_m):
    """Rate of contact angular momentum: p x m g + reaction moment"""
    p = np.asarray(p_com, dtype=float)
    return np.cross(p, m * np.asarray(g_vec, dtype=float)) + np.asarray(lambda_m, dtype=float)


def state_matrix(params):
    """A of the sagittal system x' = A x; the frontal system is y' = -A y"""
    return np.array([[0.0, 1.0 / params.mH],
                     [params.m * params.g, 0.0]])


def _check_time(t):
    if not np.isfinite(t) or t < 0.0:
        raise PlannerDomainError(f"template flow time must be finite and non-negative, got {t}")


def transition_matrix_sagittal(params, t):
    _check_time(t)
    c = np.cosh(params.ell * t)
    s = np.sinh(params.ell * t)
    return np.array([[c, s / params.mHl],
                     [params.mHl * s, c]])


def transition_matrix_frontal(params, t):
    _check_time(t)
    c = np.cosh(params.ell * t)
    s = np.sinh(params.ell * t)
    return np.array([[c, -s / params.mHl],
                     [-params.mHl * s, c]])


def flow(state, t, params):
    """Closed-form template flow of a sagittal or frontal state over t seconds"""
    if isinstance(state, SagittalState):
        return SagittalState(*(transition_matrix_sagittal(params, t) @ np.asarray(state, dtype=float)))
    if isinstance(state, FrontalState):
        return FrontalState(*(transition_matrix_frontal(params, t) @ np.asarray(state, dtype=float)))
    raise TypeError(f"expected SagittalState or FrontalState, got {type(state).__name__}")


def state_derivative(state, params):
    """Template vector field evaluated at ``state`` (same type, derivative values)"""
    A = state_matrix(params)
    if isinstance(state, SagittalState):
        return SagittalState(*(A @ np.asarray(state, dtype=float)))
    if isinstance(state, FrontalState):
        return FrontalState(*(-A @ np.asarray(state, dtype=float)))
    raise TypeError(f"expected SagittalState or FrontalState, got {type(state).__name__}")


def com_kinematics(state_x, state_y, params):
    """
    Horizontal CoM position, velocity and acceleration of the template
    (zero centroidal angular momentum, constant height H)
    """
    pos = np.array([state_x.p_x, state_y.p_y, params.H])
    vel = np.array([state_x.L_cy / params.mH, -state_y.L_cx / params.mH, 0.0])
    # p'' = (g/H) p horizontally
    acc = np.array([params.ell ** 2 * state_x.p_x, params.ell ** 2 * state_y.p_y, 0.0])
    return pos, vel, acc
