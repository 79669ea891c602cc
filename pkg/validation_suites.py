#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Validation Suites
Independent oracles (RK4, finite differences, per-body momentum summation,
dense lexicographic least squares, exhaustive active-set wrench projection)
and the suites that check the implementation against them. Shared by the
test suite and the validate command.
"""

import itertools
import logging
import os
from typing import List, NamedTuple

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation

from locomotion.alip_core import (AlipParams, FrontalState, SagittalState, flow, state_matrix,
                                  transition_matrix_frontal, transition_matrix_sagittal)
from locomotion.alip_planner import (GaitSpec, Stance, desired_Lcx, desired_Lcy, estimate_Lcx_end,
                                     estimate_Lcy_end, forward_placement, lateral_placement,
                                     contact_frame_for_step, plan_step, template_impact,
                                     template_rollout)
from locomotion.momentum_controller import (Task, WrenchLimits, lexicographic_solve, nullspace_parametrization,
                                            project_wrench, solve_hierarchy, WRENCH_WEIGHTS)
from locomotion.rigid_body_dynamics import (Contact, body_velocities, compute_dynamics,
                                            constrained_forward_dynamics, contact_jacobian,
                                            forward_kinematics, impact_map, integrate_configuration,
                                            jdot_qdot, sole_pose)
from locomotion.hybrid_simulator import measure_alip_state

logger = logging.getLogger(__name__)

BUNDLED_ROBOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config', 'surrogate_biped.yaml')

# fixtures for the template suites
TEMPLATE_PARAMS = dict(m=150.0, H=0.9, g=9.81)
SCHEDULE_COMMANDS = [(0.0, 0.0), (0.225, 0.0), (0.45, 0.0), (0.0, -0.225), (-0.225, 0.0), (0.0, 0.225)]
SUITES = ('alip_core', 'alip_planner', 'rbd', 'wbc', 'sim')
MUTATIONS = ('frontal_sign',)


class CheckResult(NamedTuple):
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_error) and self.max_error <= self.tolerance)


class SuiteResult(NamedTuple):
    name: str
    checks: List[CheckResult]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


# ---------------------------------------------------------------- oracles

def rk4_transition(A, t, dt=1e-5):
    """Exact n-fold composition of the classical RK4 step for x' = A x"""
    n = max(1, int(np.ceil(t / dt)))
    hA = A * (t / n)
    step = np.eye(A.shape[0]) + hA + hA @ hA / 2.0 + hA @ hA @ hA / 6.0 + hA @ hA @ hA @ hA / 24.0
    return np.linalg.matrix_power(step, n)


def rk4_flow(state, t, params, dt=1e-5):
    A = state_matrix(params)
    if isinstance(state, FrontalState):
        return FrontalState(*(rk4_transition(-A, t, dt) @ np.asarray(state)))
    return SagittalState(*(rk4_transition(A, t, dt) @ np.asarray(state)))


def momentum_by_summation(model, q, qd, about):
    """Angular (about ``about``) and linear momentum summed body by body"""
    com, v_com, omega, Iw = body_velocities(model, q, qd)
    m = model.masses
    L = (m[:, None] * np.cross(com - about, v_com)).sum(axis=0) + np.einsum('bij,bj->i', Iw, omega)
    return L, (m[:, None] * v_com).sum(axis=0)


def random_state(model, rng, joint_range=1.0, speed=1.0):
    q = model.neutral_configuration()
    q[0:3] = rng.uniform(-0.5, 0.5, 3) + np.array([0.0, 0.0, 1.0])
    q[3:7] = Rotation.random(random_state=rng).as_quat()
    q[7:] = rng.uniform(-joint_range, joint_range, model.nj)
    qd = rng.normal(scale=speed, size=model.nv)
    return q, qd


def free_flight_rk4(model, q, qd, duration, dt):
    """
    Classical RK4 on (position, quaternion, joints, qd) with zero torque and no
    contact; the quaternion is integrated as an ODE and renormalized at the end
    """
    def derivative(q, qd):
        terms = compute_dynamics(model, q, qd)
        qdd = linalg.solve(terms.M, -terms.h, assume_a='pos')
        quat = q[3:7]
        w = qd[3:6]
        dq = np.empty(model.nq)
        dq[0:3] = qd[0:3]
        dq[3:6] = 0.5 * (quat[3] * w + np.cross(quat[0:3], w))
        dq[6] = -0.5 * float(quat[0:3] @ w)
        dq[7:] = qd[6:]
        return dq, qdd

    n = max(1, int(round(duration / dt)))
    h = duration / n
    for _ in range(n):
        k1q, k1v = derivative(q, qd)
        k2q, k2v = derivative(q + 0.5 * h * k1q, qd + 0.5 * h * k1v)
        k3q, k3v = derivative(q + 0.5 * h * k2q, qd + 0.5 * h * k2v)
        k4q, k4v = derivative(q + h * k3q, qd + h * k3v)
        q = q + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd = qd + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    q = q.copy()
    q[3:7] /= np.linalg.norm(q[3:7])
    return q, qd


def lexicographic_oracle(levels, n):
    """
    Dense lexicographic least squares: each level solved over the nullspace
    of all higher levels stacked, holding their optimal values

    Parameters:
    - levels: list of (A, b) in priority order
    """
    x = np.zeros(n)
    stacked = np.zeros((0, n))
    residuals = []
    for A, b in levels:
        N = linalg.null_space(stacked) if stacked.shape[0] else np.eye(n)
        if N.shape[1]:
            y, *_ = np.linalg.lstsq(A @ N, b - A @ x, rcond=1e-10)
            x = x + N @ y
        residuals.append(float(np.linalg.norm(A @ x - b)))
        stacked = np.vstack([stacked, A])
    return x, residuals


def wrench_projection_oracle(lam, limits, weights=WRENCH_WEIGHTS):
    """Exhaustive active-set solution of the weighted wrench projection"""
    G, h = limits.inequalities()
    W = np.diag(weights)
    if np.all(G @ lam <= h + 1e-12):
        return np.array(lam, dtype=float)
    best, best_cost = None, np.inf
    for size in range(1, 7):
        for active in itertools.combinations(range(G.shape[0]), size):
            Ga = G[list(active)]
            if np.linalg.matrix_rank(Ga) < size:
                continue
            K = np.block([[W, Ga.T], [Ga, np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([W @ lam, h[list(active)]]))
            except np.linalg.LinAlgError:
                continue
            x = sol[:6]
            if np.any(G @ x > h + 1e-9):
                continue
            cost = float((x - lam) @ W @ (x - lam))
            if cost < best_cost:
                best, best_cost = x, cost
    return best


def orbit_metrics(steps, spec, params):
    """
    Deadbeat, closure, impact-invariance and per-step CoM displacement
    errors of a template rollout. The end-of-step momentum is deadbeat from
    step 1 on and the whole start state is on the orbit from step 2 on, so
    closure compares steps 4 onward with the step two before.
    """
    deadbeat = closure = impact = displacement = 0.0
    for i, step in enumerate(steps):
        _, _, L_old, L_new = template_impact(step.x_minus, step.y_minus, step.placement, params)
        impact = max(impact, float(np.max(np.abs(L_old[:2] - L_new[:2]))))
        if i < 2:
            continue
        s = spec.with_velocity(*step.command)
        deadbeat = max(deadbeat, abs(step.x_minus.L_cy - desired_Lcy(s, params)),
                       abs(step.y_minus.L_cx - desired_Lcx(step.stance.other, s, params)))
        if i + 1 < len(steps):
            nxt = steps[i + 1]
            com_start = step.contact + np.array([step.x_plus.p_x, step.y_plus.p_y])
            com_next = nxt.contact + np.array([nxt.x_plus.p_x, nxt.y_plus.p_y])
            move = com_next - com_start - np.array(step.command) * s.T
            displacement = max(displacement, float(np.max(np.abs(move))))
        # frontal states repeat every second step
        if i >= 4 and steps[i - 2].command == step.command:
            prev = steps[i - 2]
            closure = max(closure, abs(step.x_minus.p_x - prev.x_minus.p_x),
                          abs(step.x_minus.L_cy - prev.x_minus.L_cy),
                          abs(step.y_minus.p_y - prev.y_minus.p_y),
                          abs(step.y_minus.L_cx - prev.y_minus.L_cx))
    return {'deadbeat': deadbeat, 'closure': closure, 'impact': impact, 'displacement': displacement}


# ---------------------------------------------------------------- suites

def _scaled(state, params):
    """State with momentum expressed as a velocity so both entries weigh alike"""
    return np.array([state[0], state[1] / params.mH])


def suite_alip_core(rng, mutate=None, n=100):
    params = AlipParams(**TEMPLATE_PARAMS)
    frontal = transition_matrix_frontal
    if mutate == 'frontal_sign':
        def frontal(p, t):
            M = transition_matrix_frontal(p, t)
            return M * np.array([[1.0, -1.0], [-1.0, 1.0]])
    err_x = err_y = 0.0
    for _ in range(n):
        t = rng.uniform(1e-3, 1.0)
        x = SagittalState(rng.uniform(-0.3, 0.3), rng.uniform(-60.0, 60.0))
        y = FrontalState(rng.uniform(-0.3, 0.3), rng.uniform(-60.0, 60.0))
        ref_x, ref_y = rk4_flow(x, t, params), rk4_flow(y, t, params)
        got_x = SagittalState(*(transition_matrix_sagittal(params, t) @ np.asarray(x)))
        got_y = FrontalState(*(frontal(params, t) @ np.asarray(y)))
        err_x = max(err_x, np.max(np.abs(_scaled(got_x, params) - _scaled(ref_x, params)))
                    / np.max(np.abs(_scaled(ref_x, params))))
        err_y = max(err_y, np.max(np.abs(_scaled(got_y, params) - _scaled(ref_y, params)))
                    / np.max(np.abs(_scaled(ref_y, params))))
    return SuiteResult('alip_core', [CheckResult('sagittal flow vs RK4 (relative)', err_x, 1e-9),
                                     CheckResult('frontal flow vs RK4 (relative)', err_y, 1e-9)])


def suite_alip_planner(rng, n=100):
    params = AlipParams(**TEMPLATE_PARAMS)
    base = GaitSpec(T=0.4, W=0.2)
    checks = []
    worst = {'deadbeat': 0.0, 'closure': 0.0, 'impact': 0.0, 'displacement': 0.0}
    for v_x, v_y in SCHEDULE_COMMANDS:
        spec = base.with_velocity(v_x, v_y)
        x0 = SagittalState(rng.uniform(-0.1, 0.1), rng.uniform(-30.0, 30.0))
        y0 = FrontalState(rng.uniform(-0.1, 0.1), rng.uniform(-30.0, 30.0))
        steps = template_rollout(x0, y0, Stance.LEFT_SUPPORT, spec, params, 12)
        for key, value in orbit_metrics(steps, spec, params).items():
            worst[key] = max(worst[key], value)
    checks.append(CheckResult('deadbeat end-of-step momentum (k >= 2)', worst['deadbeat'], 1e-8))
    checks.append(CheckResult('pre-impact orbit closure', worst['closure'], 1e-8))
    checks.append(CheckResult('impact invariance of L_c', worst['impact'], 1e-10))
    checks.append(CheckResult('per-step displacement vs v T', worst['displacement'], 1e-6))

    # composition of plan_step against the individual operations
    comp = 0.0
    for _ in range(n):
        spec = base.with_velocity(rng.uniform(-0.45, 0.45), rng.uniform(-0.225, 0.225))
        x = SagittalState(rng.uniform(-0.2, 0.2), rng.uniform(-40.0, 40.0))
        y = FrontalState(rng.uniform(-0.2, 0.2), rng.uniform(-40.0, 40.0))
        t = rng.uniform(0.0, spec.T)
        stance = Stance.LEFT_SUPPORT if rng.random() < 0.5 else Stance.RIGHT_SUPPORT
        placement = plan_step(x, y, t, stance, spec, params)
        u_x = forward_placement(estimate_Lcy_end(x, t, spec, params), desired_Lcy(spec, params), spec, params)
        u_y = lateral_placement(estimate_Lcx_end(y, t, spec, params),
                                desired_Lcx(stance, spec, params), spec, params)
        comp = max(comp, abs(placement.u_x - u_x), abs(placement.u_y - u_y))
    checks.append(CheckResult('plan_step composition', comp, 1e-12))

    # one deadbeat step by direct flow
    one = 0.0
    for _ in range(n):
        spec = base.with_velocity(rng.uniform(-0.45, 0.45), 0.0)
        x = SagittalState(rng.uniform(-0.2, 0.2), rng.uniform(-40.0, 40.0))
        L_hat = estimate_Lcy_end(x, 0.0, spec, params)
        u_x = forward_placement(L_hat, desired_Lcy(spec, params), spec, params)
        nxt = flow(SagittalState(u_x, L_hat), spec.T, params)
        one = max(one, abs(nxt.L_cy - desired_Lcy(spec, params)))
    checks.append(CheckResult('one deadbeat step by flow', one, 1e-9))
    return SuiteResult('alip_planner', checks)


def _load_bundled():
    from config_handler import load_robot_model
    return load_robot_model(BUNDLED_ROBOT)


def suite_rbd(rng, n=1000, fd_states=20, free_flight=True):
    biped = _load_bundled()
    model = biped.model
    sym = cmm = 0.0
    chol_failures = 0
    for _ in range(n):
        q, qd = random_state(model, rng)
        terms = compute_dynamics(model, q, qd)
        sym = max(sym, float(np.max(np.abs(terms.M - terms.M.T))))
        try:
            np.linalg.cholesky(terms.M)
        except np.linalg.LinAlgError:
            chol_failures += 1
        L, K = momentum_by_summation(model, q, qd, terms.p_com)
        cmm = max(cmm, float(np.max(np.abs(np.concatenate([L, K]) - terms.h_com.as_vector()))))
    checks = [CheckResult('mass matrix symmetry', sym, 1e-10),
              CheckResult('mass matrix Cholesky failures', float(chol_failures), 0.0),
              CheckResult('A_com qd vs per-body summation', cmm, 1e-10)]

    adot = jdot = 0.0
    delta = 1e-6
    for _ in range(fd_states):
        q, qd = random_state(model, rng, speed=0.5)
        terms = compute_dynamics(model, q, qd)
        q_p = integrate_configuration(model, q, qd, delta)
        q_m = integrate_configuration(model, q, qd, -delta)
        h_p = compute_dynamics(model, q_p, qd).A_com @ qd
        h_m = compute_dynamics(model, q_m, qd).A_com @ qd
        fd = (h_p - h_m) / (2 * delta)
        adot = max(adot, float(np.max(np.abs(fd - terms.Adot_qd)) / max(1.0, np.max(np.abs(fd)))))
        R = Rotation.from_euler('z', rng.uniform(-np.pi, np.pi)).as_matrix()
        contacts = [Contact('left', R), Contact('right', R)]
        v_p = contact_jacobian(model, q_p, contacts) @ qd
        v_m = contact_jacobian(model, q_m, contacts) @ qd
        fdj = (v_p - v_m) / (2 * delta)
        jdot = max(jdot, float(np.max(np.abs(fdj - jdot_qdot(model, q, qd, contacts)))
                               / max(1.0, np.max(np.abs(fdj)))))
    checks.append(CheckResult('Adot_qd vs central difference (relative)', adot, 1e-5))
    checks.append(CheckResult('Jdot_qd vs central difference (relative)', jdot, 1e-5))

    # instantaneous momentum balance in flight: Ldot = 0, Kdot = m g
    rate = 0.0
    for _ in range(fd_states):
        q, qd = random_state(model, rng)
        terms = compute_dynamics(model, q, qd)
        qdd = linalg.solve(terms.M, -terms.h, assume_a='pos')
        hdot = terms.A_com @ qdd + terms.Adot_qd
        expected = np.concatenate([np.zeros(3), model.total_mass * model.gravity])
        rate = max(rate, float(np.max(np.abs(hdot - expected))))
    checks.append(CheckResult('flight momentum rate', rate, 1e-6))

    if free_flight:
        q, qd = random_state(model, rng, joint_range=0.5, speed=0.3)
        h0 = compute_dynamics(model, q, qd).h_com
        q1, qd1 = free_flight_rk4(model, q, qd, 1.0, 2e-3)
        h1 = compute_dynamics(model, q1, qd1).h_com
        drift_L = float(np.max(np.abs(h1.L_com - h0.L_com)))
        drift_K = float(np.max(np.abs(h1.K_com - h0.K_com - model.total_mass * model.gravity * 1.0)))
        checks.append(CheckResult('free-fall L_com drift over 1 s', drift_L, 1e-6))
        checks.append(CheckResult('free-fall K_com vs m g t over 1 s', drift_K, 1e-6))

    # impact about a point contact conserves angular momentum about that point
    imp = 0.0
    for _ in range(fd_states):
        q, qd = random_state(model, rng, speed=0.5)
        contacts = [Contact('left', np.eye(3), point_only=True)]
        kin = forward_kinematics(model, q)
        point, _ = sole_pose(model, kin, 'left')
        qd_plus, _ = impact_map(model, q, qd, contacts)
        before = momentum_by_summation(model, q, qd, point)[0]
        after = momentum_by_summation(model, q, qd_plus, point)[0]
        imp = max(imp, float(np.max(np.abs(after - before))))
    checks.append(CheckResult('impact conserves L about the contact point', imp, 1e-8))
    return SuiteResult('rbd', checks)


def toy_levels(rng, n=5):
    """Three levels on a 5-DoF toy: two conflicting rank-1 tasks, then a full-rank one"""
    a = rng.normal(size=n)
    b = a + 0.1 * rng.normal(size=n)
    return [
        [Task('first', a[None, :], np.zeros(1), np.array([1.0]), 1)],
        [Task('second', np.vstack([a, b]), np.zeros(2), np.array([-1.0, 2.0]), 2)],
        [Task('third', rng.normal(size=(n, n)), np.zeros(n), rng.normal(size=n), 3)],
    ]


def suite_wbc(rng, n=100):
    checks = []
    # hierarchy vs dense oracle on the toy system
    worst = 0.0
    for _ in range(20):
        levels = toy_levels(rng)
        tasks = [t for level in levels for t in level]
        out = solve_hierarchy(tasks, np.zeros(5), np.eye(5))
        x_ref, _ = lexicographic_oracle([(np.vstack([t.matrix for t in lv]),
                                          np.concatenate([t.rhs for t in lv])) for lv in levels], 5)
        worst = max(worst, float(np.max(np.abs(out.qdd - x_ref))))
    checks.append(CheckResult('hierarchy vs dense lexicographic oracle', worst, 1e-9))

    # local optimality: random perturbations inside the level nullspace never lower the residual
    levels = toy_levels(rng)
    grouped = [(i + 1, lv) for i, lv in enumerate(levels)]
    z, results = lexicographic_solve(grouped, np.zeros(5), np.eye(5))
    decrease = 0.0
    stacked = np.zeros((0, 5))
    for (priority, lv), res in zip(grouped, results):
        A = np.vstack([t.matrix for t in lv])
        b = np.concatenate([t.rhs for t in lv])
        N = linalg.null_space(stacked) if stacked.shape[0] else np.eye(5)
        for _ in range(n):
            if N.shape[1] == 0:
                break
            dz = N @ rng.normal(scale=1e-3, size=N.shape[1])
            decrease = max(decrease, res.residual - float(np.linalg.norm(A @ (z + dz) - b)))
        stacked = np.vstack([stacked, A])
    checks.append(CheckResult('lexicographic perturbation (residual decrease)', decrease, 1e-9))

    # wrench projection vs exhaustive active set
    limits = WrenchLimits()
    proj = 0.0
    for _ in range(n):
        lam = np.concatenate([rng.normal(scale=40.0, size=3), rng.normal(scale=300.0, size=2),
                              [rng.uniform(-200.0, 1500.0)]])
        ref = wrench_projection_oracle(lam, limits)
        got = project_wrench(lam, limits) if limits.violation(lam) > 0 else lam
        proj = max(proj, float(np.max(np.abs(got - ref))))
    checks.append(CheckResult('wrench projection vs active-set oracle', proj, 1e-6))

    # nullspace parametrization on the bundled robot
    biped = _load_bundled()
    model = biped.model
    par = 0.0
    for _ in range(10):
        q, qd = random_state(model, rng)
        contacts = [Contact('left', np.eye(3))]
        J = contact_jacobian(model, q, contacts)
        Jd = jdot_qdot(model, q, qd, contacts)
        qdd_p, Z = nullspace_parametrization(J, Jd)
        par = max(par, float(np.max(np.abs(J @ qdd_p + Jd))), float(np.max(np.abs(J @ Z))),
                  float(np.max(np.abs(Z.T @ Z - np.eye(Z.shape[1])))))
    checks.append(CheckResult('nullspace parametrization', par, 1e-10))
    return SuiteResult('wbc', checks)


def suite_sim(rng, n=50):
    biped = _load_bundled()
    model = biped.model
    worst = 0.0
    for _ in range(n):
        q, qd = random_state(model, rng)
        frame = contact_frame_for_step((rng.uniform(-1.0, 1.0, 3) * [1, 1, 0], np.eye(3)),
                                       rng.uniform(-np.pi, np.pi))
        meas = measure_alip_state(model, q, qd, frame)
        L, _ = momentum_by_summation(model, q, qd, frame.origin)
        worst = max(worst, float(np.max(np.abs(frame.vector_to_local(L) - meas.L_c))))
    checks = [CheckResult('measured L_c vs per-body summation', worst, 1e-10)]

    # constrained dynamics residuals
    res = 0.0
    for _ in range(10):
        q, qd = random_state(model, rng, speed=0.5)
        contacts = [Contact('left', np.eye(3))]
        tau = rng.normal(scale=20.0, size=model.nj)
        terms = compute_dynamics(model, q, qd)
        qdd, wrenches = constrained_forward_dynamics(model, q, qd, tau, contacts, terms)
        J = contact_jacobian(model, q, contacts)
        lam = np.concatenate([w.as_vector() for w in wrenches])
        eq1 = terms.M @ qdd + terms.h - model.S.T @ tau - J.T @ lam
        eq3 = J @ qdd + jdot_qdot(model, q, qd, contacts)
        res = max(res, float(np.max(np.abs(eq1))) / max(1.0, float(np.max(np.abs(terms.h)))),
                  float(np.max(np.abs(eq3))))
    checks.append(CheckResult('constrained dynamics residuals', res, 1e-8))
    return SuiteResult('sim', checks)


def run_suites(only=None, mutate=None, seed=0, quick=False):
    """
    Run the selected suites

    Parameters:
    - only: iterable of suite names (default: all)
    - mutate: name of a fixture mutation the suites must catch
    - quick: fewer random samples and no free-flight integration
    """
    if mutate is not None and mutate not in MUTATIONS:
        raise ValueError(f"unknown mutation '{mutate}', expected one of {MUTATIONS}")
    selected = list(only) if only else list(SUITES)
    unknown = [s for s in selected if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}, expected any of {SUITES}")
    results = []
    for name in selected:
        rng = np.random.default_rng(seed)
        if name == 'alip_core':
            results.append(suite_alip_core(rng, mutate))
        elif name == 'alip_planner':
            results.append(suite_alip_planner(rng, 20 if quick else 100))
        elif name == 'rbd':
            results.append(suite_rbd(rng, 50 if quick else 1000, 5 if quick else 20, not quick))
        elif name == 'wbc':
            results.append(suite_wbc(rng, 20 if quick else 100))
        elif name == 'sim':
            results.append(suite_sim(rng, 10 if quick else 50))
    return results


def format_report(results):
    lines = []
    for suite in results:
        lines.append(f"[{'PASS' if suite.passed else 'FAIL'}] {suite.name}")
        for check in suite.checks:
            lines.append(f"    {'ok  ' if check.passed else 'FAIL'} {check.name}: "
                         f"max error {check.max_error:.3e} (tolerance {check.tolerance:.1e})")
    return '\n'.join(lines)
