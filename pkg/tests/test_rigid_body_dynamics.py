import copy

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from config_handler import load_yaml
from locomotion import SingularConstraintError
from locomotion.alip_core import AlipParams
from locomotion.alip_planner import GaitSpec, Stance, contact_frame_for_step, periodic_state
from locomotion.rigid_body_dynamics import (Contact, ContactWrench, axis_angle_matrix, body_velocities,
                                            compute_dynamics, configuration_difference,
                                            constrained_forward_dynamics, contact_jacobian,
                                            forward_kinematics, impact_map, integrate_configuration,
                                            jdot_qdot, kinetic_energy, mass_matrix, point_velocity,
                                            potential_energy, skew, sole_pose)
from locomotion.surrogate_biped import build_robot_model, initial_configuration, standing_pose
from validation_suites import BUNDLED_ROBOT, momentum_by_summation, random_state, suite_rbd


def test_bundled_model_dimensions(model):
    assert model.nb == 22
    assert model.nj == 21
    assert model.nv == 27
    assert model.nq == 28
    assert model.total_mass == pytest.approx(88.0)
    assert model.S.shape == (21, 27)


def test_posture_joints_exclude_the_legs(biped):
    names = [biped.model.joint_names[j] for j in biped.posture_joints]
    assert 'torso_pitch' in names
    assert 'left_elbow' in names
    assert not any(n.startswith(('left_hip', 'right_knee', 'left_ankle')) for n in names)


def test_arm_mass_scale_only_touches_arms():
    description = load_yaml(BUNDLED_ROBOT)
    scaled = build_robot_model(description, arm_mass_scale=2.0).model
    assert scaled.total_mass == pytest.approx(88.0 + 14.0)


@pytest.mark.parametrize('mutation, message', [
    (lambda d: d['bodies'][1].update(parent='nowhere'), 'unknown parent'),
    (lambda d: d['bodies'][2].update(name='left_hip_yaw_link'), 'duplicate'),
    (lambda d: d['bodies'][3].update(mass_kg=-1.0), 'non-positive mass'),
    (lambda d: d['feet'].pop('right'), "missing 'right'"),
    (lambda d: d['nominal_posture_rad'].update(tail=0.1), 'unknown joint'),
])
def test_invalid_descriptions_are_rejected(mutation, message):
    description = copy.deepcopy(load_yaml(BUNDLED_ROBOT))
    mutation(description)
    with pytest.raises(ValueError, match=message):
        build_robot_model(description)


def test_rodrigues_matches_scipy(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    np.testing.assert_allclose(axis_angle_matrix(axis, 0.7),
                               Rotation.from_rotvec(axis * 0.7).as_matrix(), atol=1e-12)
    v, w = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(skew(v) @ w, np.cross(v, w))


def test_mass_matrix_is_symmetric_positive_definite(model, rng):
    for _ in range(5):
        q, _ = random_state(model, rng)
        M = mass_matrix(model, q)
        np.testing.assert_allclose(M, M.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(M) > 0)
        assert M[0, 0] == pytest.approx(model.total_mass)


def test_kinetic_energy_matches_body_sum(model, rng):
    q, qd = random_state(model, rng)
    com, v, w, Iw = body_velocities(model, q, qd)
    expected = 0.5 * (model.masses @ np.sum(v * v, axis=1)) + 0.5 * np.einsum('bi,bij,bj->', w, Iw, w)
    assert kinetic_energy(model, q, qd) == pytest.approx(expected, rel=1e-12)


def test_potential_energy_uses_the_com_height(model, rng):
    q, qd = random_state(model, rng)
    terms = compute_dynamics(model, q, qd)
    assert potential_energy(model, q) == pytest.approx(model.total_mass * 9.81 * terms.p_com[2])


def test_centroidal_momentum_matches_summation(model, rng):
    for _ in range(10):
        q, qd = random_state(model, rng)
        terms = compute_dynamics(model, q, qd)
        L, K = momentum_by_summation(model, q, qd, terms.p_com)
        np.testing.assert_allclose(terms.h_com.L_com, L, atol=1e-10)
        np.testing.assert_allclose(terms.h_com.K_com, K, atol=1e-10)
        np.testing.assert_allclose(terms.v_com, K / model.total_mass, atol=1e-12)


def test_bias_forces_at_rest_are_gravity(model, rng):
    q, _ = random_state(model, rng)
    terms = compute_dynamics(model, q, np.zeros(model.nv))
    # the linear base rows carry the weight
    np.testing.assert_allclose(terms.h[0:3], [0.0, 0.0, model.total_mass * 9.81], atol=1e-9)


def test_configuration_difference_inverts_integration(model, rng):
    q, qd = random_state(model, rng)
    q1 = integrate_configuration(model, q, qd, 0.3)
    np.testing.assert_allclose(configuration_difference(model, q1, q), 0.3 * qd, atol=1e-10)
    assert np.linalg.norm(q1[3:7]) == pytest.approx(1.0)


def test_contact_jacobian_gives_sole_velocity(model, rng):
    q, qd = random_state(model, rng)
    R = Rotation.from_euler('z', 0.4).as_matrix()
    kin = forward_kinematics(model, q, qd)
    point, _ = sole_pose(model, kin, 'right')
    w, v = point_velocity(kin, model.feet['right'].body, point)
    J = contact_jacobian(model, q, [Contact('right', R)])
    np.testing.assert_allclose(J @ qd, np.concatenate([R.T @ w, R.T @ v]), atol=1e-12)


def test_contact_bias_matches_finite_difference(model, rng):
    q, qd = random_state(model, rng, speed=0.5)
    contacts = [Contact('left', np.eye(3)), Contact('right', np.eye(3), point_only=True)]
    d = 1e-6
    fd = (contact_jacobian(model, integrate_configuration(model, q, qd, d), contacts) @ qd
          - contact_jacobian(model, integrate_configuration(model, q, qd, -d), contacts) @ qd) / (2 * d)
    np.testing.assert_allclose(jdot_qdot(model, q, qd, contacts), fd, rtol=1e-5, atol=1e-5)


def test_momentum_drift_matches_finite_difference(model, rng):
    q, qd = random_state(model, rng, speed=0.5)
    terms = compute_dynamics(model, q, qd)
    d = 1e-6
    fd = (compute_dynamics(model, integrate_configuration(model, q, qd, d), qd).A_com @ qd
          - compute_dynamics(model, integrate_configuration(model, q, qd, -d), qd).A_com @ qd) / (2 * d)
    np.testing.assert_allclose(terms.Adot_qd, fd, rtol=1e-5, atol=1e-5)


def test_constrained_dynamics_satisfies_both_equations(model, rng):
    q, qd = random_state(model, rng, speed=0.5)
    contacts = [Contact('left', np.eye(3)), Contact('right', np.eye(3))]
    tau = rng.normal(scale=10.0, size=model.nj)
    terms = compute_dynamics(model, q, qd)
    qdd, wrenches = constrained_forward_dynamics(model, q, qd, tau, contacts, terms)
    J = contact_jacobian(model, q, contacts)
    lam = np.concatenate([w.as_vector() for w in wrenches])
    np.testing.assert_allclose(terms.M @ qdd + terms.h, model.S.T @ tau + J.T @ lam, atol=1e-8)
    np.testing.assert_allclose(J @ qdd + jdot_qdot(model, q, qd, contacts), 0.0, atol=1e-8)
    assert all(isinstance(w, ContactWrench) for w in wrenches)


def test_constrained_dynamics_applies_the_stabilization_rows(model, rng):
    q, qd = random_state(model, rng, speed=0.5)
    contacts = [Contact('left', np.eye(3))]
    stabilization = rng.normal(size=6)
    qdd, _ = constrained_forward_dynamics(model, q, qd, np.zeros(model.nj), contacts,
                                          stabilization=stabilization)
    J = contact_jacobian(model, q, contacts)
    np.testing.assert_allclose(J @ qdd + jdot_qdot(model, q, qd, contacts), stabilization, atol=1e-8)


def test_redundant_contacts_are_singular(model, rng):
    q, qd = random_state(model, rng)
    contacts = [Contact('left', np.eye(3)), Contact('left', np.eye(3))]
    with pytest.raises(SingularConstraintError):
        constrained_forward_dynamics(model, q, qd, np.zeros(model.nj), contacts)


def test_impact_stops_the_contact_and_keeps_momentum_about_it(model, rng):
    q, qd = random_state(model, rng)
    contacts = [Contact('right', np.eye(3), point_only=True)]
    qd_plus, impulses = impact_map(model, q, qd, contacts)
    np.testing.assert_allclose(contact_jacobian(model, q, contacts) @ qd_plus, 0.0, atol=1e-10)
    point, _ = sole_pose(model, forward_kinematics(model, q), 'right')
    before, _ = momentum_by_summation(model, q, qd, point)
    after, _ = momentum_by_summation(model, q, qd_plus, point)
    np.testing.assert_allclose(after, before, atol=1e-8)
    assert len(impulses) == 1


def test_impact_never_adds_kinetic_energy(model, rng):
    q, qd = random_state(model, rng)
    contacts = [Contact('left', np.eye(3)), Contact('right', np.eye(3))]
    qd_plus, _ = impact_map(model, q, qd, contacts)
    assert kinetic_energy(model, q, qd_plus) <= kinetic_energy(model, q, qd) + 1e-9


def test_standing_pose_puts_both_soles_flat(biped):
    frame = contact_frame_for_step((np.zeros(3), np.eye(3)), 0.0)
    q = standing_pose(biped, frame, Stance.LEFT_SUPPORT, (0.0, -0.2), np.array([0.0, -0.1, 0.95]))
    kin = forward_kinematics(biped.model, q)
    left, R_l = sole_pose(biped.model, kin, 'left')
    right, R_r = sole_pose(biped.model, kin, 'right')
    np.testing.assert_allclose(left, 0.0, atol=1e-6)
    np.testing.assert_allclose(right, [0.0, -0.2, 0.0], atol=1e-6)
    np.testing.assert_allclose(R_l, np.eye(3), atol=1e-6)
    terms = compute_dynamics(biped.model, q, np.zeros(biped.model.nv))
    np.testing.assert_allclose(terms.p_com, [0.0, -0.1, 0.95], atol=1e-6)


def test_initial_configuration_matches_the_template_seed(biped):
    params = AlipParams(m=biped.model.total_mass, H=0.95)
    spec = GaitSpec(T=0.4, W=0.2, v_x_des=0.225)
    seed = periodic_state(spec, params, Stance.LEFT_SUPPORT)
    frame = contact_frame_for_step((np.zeros(3), np.eye(3)), 0.0)
    q, qd = initial_configuration(biped, params, frame, Stance.LEFT_SUPPORT, seed)
    contacts = [Contact('left', np.eye(3)), Contact('right', np.eye(3))]
    np.testing.assert_allclose(contact_jacobian(biped.model, q, contacts) @ qd, 0.0, atol=1e-8)
    terms = compute_dynamics(biped.model, q, qd)
    assert terms.v_com[0] == pytest.approx(seed.x.L_cy / params.mH, abs=1e-6)
    np.testing.assert_allclose(terms.h_com.L_com, 0.0, atol=1e-6)


def test_rbd_suite_quick(rng):
    assert suite_rbd(rng, n=20, fd_states=3, free_flight=False).passed


@pytest.mark.slow
def test_free_fall_conserves_centroidal_momentum():
    assert suite_rbd(np.random.default_rng(7), n=5, fd_states=1, free_flight=True).passed
