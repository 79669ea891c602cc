import logging

import numpy as np
import pytest

from locomotion import SingularConstraintError
from locomotion.alip_core import AlipParams, CentroidalMomentum
from locomotion.alip_planner import GaitSpec, Stance, contact_frame_for_step, periodic_state
from locomotion.momentum_controller import (ComReference, ControllerGains, Gains, MomentumController,
                                            ServoGains, Task, WrenchLimits, constrain_momentum_rate,
                                            desired_momentum_rate, distribute_wrench,
                                            lexicographic_solve, momentum_rate_from_wrench,
                                            nullspace_parametrization, posture_task, project_wrench,
                                            solve_hierarchy, wrench_from_momentum_rate)
from locomotion.rigid_body_dynamics import Contact, compute_dynamics, contact_jacobian, jdot_qdot
from locomotion.surrogate_biped import initial_configuration
from validation_suites import lexicographic_oracle, suite_wbc, wrench_projection_oracle

GRAVITY = np.array([0.0, 0.0, -9.81])


def _stacked(levels):
    return [(np.vstack([t.matrix for t in lv]), np.concatenate([t.rhs for t in lv])) for lv in levels]


def test_nullspace_parametrization_satisfies_the_constraint(rng):
    J = rng.normal(size=(6, 12))
    b = rng.normal(size=6)
    qdd_p, Z = nullspace_parametrization(J, b)
    assert Z.shape == (12, 6)
    np.testing.assert_allclose(J @ qdd_p + b, 0.0, atol=1e-12)
    np.testing.assert_allclose(J @ Z, 0.0, atol=1e-12)
    np.testing.assert_allclose(Z.T @ Z, np.eye(6), atol=1e-12)


def test_nullspace_parametrization_without_contacts_is_free():
    qdd_p, Z = nullspace_parametrization(np.zeros((0, 7)), np.zeros(0))
    np.testing.assert_allclose(Z, np.eye(7))
    np.testing.assert_allclose(qdd_p, 0.0)


def test_nullspace_parametrization_rejects_rank_deficiency(rng):
    row = rng.normal(size=(1, 8))
    with pytest.raises(SingularConstraintError):
        nullspace_parametrization(np.vstack([row, 2 * row]), np.zeros(2))


def test_task_validation():
    with pytest.raises(ValueError, match='priority'):
        Task('t', np.eye(2), np.zeros(2), np.zeros(2), 0)
    with pytest.raises(ValueError, match='rows'):
        Task('t', np.eye(2), np.zeros(3), np.zeros(2), 1)
    with pytest.raises(ValueError, match='non-finite'):
        Task('t', np.eye(2), np.zeros(2), np.array([np.nan, 0.0]), 1)


def test_priorities_must_be_dense():
    tasks = [Task('a', np.eye(2), np.zeros(2), np.ones(2), 1),
             Task('b', np.eye(2), np.zeros(2), np.ones(2), 3)]
    with pytest.raises(ValueError, match='dense'):
        solve_hierarchy(tasks, np.zeros(2), np.eye(2))


def test_hierarchy_matches_the_dense_oracle(toy_tasks):
    out = solve_hierarchy([t for lv in toy_tasks for t in lv], np.zeros(5), np.eye(5))
    expected, residuals = lexicographic_oracle(_stacked(toy_tasks), 5)
    np.testing.assert_allclose(out.qdd, expected, atol=1e-9)
    np.testing.assert_allclose([lv.residual for lv in out.levels], residuals, atol=1e-9)


def test_top_level_wins_a_conflict(toy_tasks):
    out = solve_hierarchy([t for lv in toy_tasks for t in lv], np.zeros(5), np.eye(5))
    first, second, third = out.levels
    assert first.achievable and first.residual < 1e-10
    # level two repeats level one's row with a conflicting target
    assert not second.achievable
    assert out.residual_of(1) == first.residual
    assert np.isnan(out.residual_of(7))


def test_lower_levels_only_use_the_remaining_freedom():
    a = Task('a', np.array([[1.0, 0.0]]), np.zeros(1), np.array([2.0]), 1)
    b = Task('b', np.eye(2), np.zeros(2), np.array([5.0, 3.0]), 2)
    z, results = lexicographic_solve([(1, [a]), (2, [b])], np.zeros(2), np.eye(2))
    np.testing.assert_allclose(z, [2.0, 3.0])
    assert results[1].rank == 1


def test_desired_rate_at_the_reference_is_feed_forward():
    gains = Gains()
    ref = ComReference(np.array([0.1, 0.0, 0.9]), np.array([0.3, 0.0, 0.0]), np.array([0.5, -0.2, 0.0]))
    h = CentroidalMomentum(np.zeros(3), 80.0 * np.array([0.3, 0.0, 0.0]))
    rate = desired_momentum_rate(ref, ref.position, h, gains, 80.0)
    np.testing.assert_allclose(rate, [0, 0, 0, 40.0, -16.0, 0.0])


def test_desired_rate_damps_angular_momentum():
    gains = Gains()
    ref = ComReference(np.zeros(3), np.zeros(3), np.zeros(3))
    h = CentroidalMomentum(np.array([1.0, 0.0, 0.0]), np.zeros(3))
    rate = desired_momentum_rate(ref, np.zeros(3), h, gains, 80.0)
    assert rate[0] == pytest.approx(-10.0)


def test_wrench_and_momentum_rate_are_inverse(rng):
    point, p_com = np.array([0.0, 0.1, 0.0]), np.array([0.05, 0.0, 0.9])
    hdot = rng.normal(size=6)
    w = wrench_from_momentum_rate(hdot, point, p_com, 80.0, GRAVITY)
    np.testing.assert_allclose(momentum_rate_from_wrench(w, point, p_com, 80.0, GRAVITY), hdot, atol=1e-12)


def test_wrench_limits():
    limits = WrenchLimits(l_t=0.11, l_h=0.11, w_f=0.05)
    assert limits.violation(np.array([0.0, 0.0, 0.0, 0.0, 0.0, 800.0])) <= 0
    # CoP 0.2 m ahead of the polygon centre
    assert limits.violation(np.array([0.0, -160.0, 0.0, 0.0, 0.0, 800.0])) > 0
    # sliding
    assert limits.violation(np.array([0.0, 0.0, 0.0, 600.0, 0.0, 800.0])) > 0
    G, h = limits.inequalities()
    assert G.shape == (12, 6) and h.shape == (12,)
    with pytest.raises(ValueError):
        WrenchLimits(mu=0.0)


def test_cop_rows_put_the_toe_on_negative_tau_y():
    limits = WrenchLimits(l_t=0.15, l_h=0.05, w_f=0.05)
    f_z = 800.0

    def at_cop(c):
        return np.array([0.0, -c * f_z, 0.0, 0.0, 0.0, f_z])

    # 14 cm toward the toe fits a 15 cm toe length
    assert limits.violation(at_cop(0.14)) <= 0
    assert limits.violation(at_cop(0.16)) > 0
    # the heel side only reaches 5 cm
    assert limits.violation(at_cop(-0.04)) <= 0
    assert limits.violation(at_cop(-0.07)) > 0


def test_projection_matches_the_active_set_oracle(rng):
    limits = WrenchLimits()
    for _ in range(5):
        lam = np.concatenate([rng.normal(scale=60.0, size=3), rng.normal(scale=400.0, size=2), [700.0]])
        if limits.violation(lam) <= 0:
            continue
        np.testing.assert_allclose(project_wrench(lam, limits), wrench_projection_oracle(lam, limits),
                                   atol=1e-6)


def test_feasible_momentum_rate_is_left_alone():
    limits = WrenchLimits()
    hdot = np.array([0.0, 0.0, 0.0, 5.0, 0.0, 0.0])
    proj = constrain_momentum_rate(hdot, np.array([0.0, 0.0, 0.9]), 80.0, np.zeros(3), np.eye(3),
                                   limits, GRAVITY)
    assert not proj.projected
    np.testing.assert_array_equal(proj.hdot_c, hdot)


def test_infeasible_momentum_rate_is_projected_into_the_cone():
    limits = WrenchLimits()
    # lateral push far beyond friction
    hdot = np.array([0.0, 0.0, 0.0, 0.0, 2000.0, 0.0])
    proj = constrain_momentum_rate(hdot, np.array([0.0, 0.0, 0.9]), 80.0, np.zeros(3), np.eye(3),
                                   limits, GRAVITY)
    assert proj.projected and not proj.saturated
    assert limits.violation(proj.wrench.as_vector()) <= 1e-8
    assert abs(proj.hdot_c[4]) < 2000.0


def test_falling_faster_than_gravity_saturates():
    limits = WrenchLimits()
    hdot = np.array([0.0, 0.0, 0.0, 0.0, 0.0, -2000.0])
    proj = constrain_momentum_rate(hdot, np.array([0.0, 0.0, 0.9]), 80.0, np.zeros(3), np.eye(3),
                                   limits, GRAVITY)
    assert proj.saturated
    assert proj.wrench.force[2] == pytest.approx(0.0, abs=1e-8)


def test_posture_task_targets_only_the_selected_joints(model):
    q = model.neutral_configuration()
    qd = np.zeros(model.nv)
    task = posture_task(model, q, qd, np.full(model.nj, 0.1), [3, 5], ServoGains(100.0, 20.0))
    assert task.matrix.shape == (2, model.nv)
    assert task.matrix[0, 9] == 1.0 and task.matrix[1, 11] == 1.0
    np.testing.assert_allclose(task.target, [10.0, 10.0])


@pytest.fixture(scope='module')
def standing(biped):
    params = AlipParams(m=biped.model.total_mass, H=0.95)
    spec = GaitSpec(T=0.4, W=0.2)
    seed = periodic_state(spec, params, Stance.LEFT_SUPPORT)
    frame = contact_frame_for_step((np.zeros(3), np.eye(3)), 0.0)
    q, qd = initial_configuration(biped, params, frame, Stance.LEFT_SUPPORT, seed)
    return q, qd, params


def _controller(biped, **kwargs):
    limits = {side: WrenchLimits.for_foot(geom) for side, geom in biped.model.feet.items()}
    return MomentumController(biped, ControllerGains(), limits, **kwargs)


def test_controller_tick_in_double_support(biped, standing):
    q, qd, params = standing
    model = biped.model
    terms = compute_dynamics(model, q, qd)
    contacts = [Contact('left', np.eye(3)), Contact('right', np.eye(3))]
    ref = ComReference(terms.p_com, np.zeros(3), np.zeros(3))
    out = _controller(biped).compute(q, qd, contacts, ref, np.eye(3), None, terms)
    assert out.tau.shape == (model.nj,)
    assert out.contact_residual <= 1e-8
    assert out.dynamics_residual <= 1e-6
    # weight is carried by the two feet
    total_fz = sum(w.force[2] for w in out.wrenches)
    assert total_fz == pytest.approx(model.total_mass * 9.81, rel=0.2)


def test_feasible_wrench_split_is_reported_feasible():
    limits = {'left': WrenchLimits(), 'right': WrenchLimits()}
    contacts = [Contact('left', np.eye(3)), Contact('right', np.eye(3))]
    lam, feasible = distribute_wrench(np.hstack([np.eye(6), np.eye(6)]),
                                      np.array([0.0, 0.0, 0.0, 0.0, 0.0, 800.0]), contacts, limits)
    assert feasible
    np.testing.assert_allclose(lam[5] + lam[11], 800.0, atol=1e-6)


def test_infeasible_wrench_split_warns_and_falls_back(caplog):
    limits = {'left': WrenchLimits(), 'right': WrenchLimits()}
    contacts = [Contact('left', np.eye(3)), Contact('right', np.eye(3))]
    # pulling the base down through unilateral contacts
    rhs = np.array([0.0, 0.0, 0.0, 0.0, 0.0, -100.0])
    with caplog.at_level(logging.WARNING, logger='locomotion.momentum_controller'):
        lam, feasible = distribute_wrench(np.hstack([np.eye(6), np.eye(6)]), rhs, contacts, limits)
    assert not feasible
    np.testing.assert_allclose(lam[:6] + lam[6:], rhs, atol=1e-9)
    assert any('infeasible' in r.getMessage() for r in caplog.records)


def test_controller_tick_in_single_support(biped, standing):
    q, qd, params = standing
    model = biped.model
    terms = compute_dynamics(model, q, qd)
    contacts = [Contact('left', np.eye(3))]
    ref = ComReference(terms.p_com, terms.v_com, np.zeros(3))
    out = _controller(biped).compute(q, qd, contacts, ref, np.eye(3), None, terms)
    assert out.contact_residual <= 1e-8
    J = contact_jacobian(model, q, contacts)
    np.testing.assert_allclose(J @ out.qdd + jdot_qdot(model, q, qd, contacts), 0.0, atol=1e-8)
    wrench = out.wrenches[0].as_vector()
    assert WrenchLimits.for_foot(model.feet['left']).violation(wrench) <= 1e-6
    assert [lv.priority for lv in out.levels] == [1, 2, 3]


def test_momentum_level_can_be_dropped(biped, standing):
    q, qd, _ = standing
    terms = compute_dynamics(biped.model, q, qd)
    ref = ComReference(terms.p_com, np.zeros(3), np.zeros(3))
    out = _controller(biped, use_momentum_task=False).compute(
        q, qd, [Contact('left', np.eye(3))], ref, np.eye(3), None, terms)
    assert [lv.tasks for lv in out.levels][0] == ('pelvis',)


def test_wbc_suite_passes(rng):
    assert suite_wbc(rng, n=10).passed
