#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Scenario Runner Module
Shared functionality behind the plan and simulate commands: building the
robot, planner, controller and simulator from a scenario config, running
them and writing the CSV logs and the summary.
"""

import argparse
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple

import pandas as pd

from config_handler import load_robot_model, load_scenario
from locomotion import DivergenceError
from locomotion.alip_core import flow
from locomotion.alip_planner import Stance, periodic_state, template_rollout
from locomotion.hybrid_simulator import LogRecord, StepRecord, WalkingSimulation
from locomotion.momentum_controller import MomentumController
from log_analysis import format_summary, summarize
from validation_suites import orbit_metrics

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12g'
EXIT_OK = 0
EXIT_FAILED = 1
EXIT_DIVERGED = 2
EXIT_CONFIG = 3

PHASE_COLUMNS = ['orbit', 'v_x_cmd', 'v_y_cmd', 'step', 'stance', 'sample', 't_step',
                 'p_x', 'L_cy', 'p_y', 'L_cx', 'contact_x', 'contact_y']


class CSVWriter:
    """Collects log records and saves them to CSV with a fixed column order"""

    def __init__(self, filename, columns):
        self.filename = filename
        self.columns = list(columns)
        self.results = []

    def start(self):
        self.results = []

    def next(self, record):
        self.results.append(record)

    def frame(self):
        return pd.DataFrame.from_records(self.results, columns=self.columns)

    def stop(self):
        if self.filename is None:
            return
        self.frame().to_csv(self.filename, index=False, float_format=FLOAT_FORMAT)
        logger.info("Results saved to %s", self.filename)


class RunRecorder:
    """Simulation observer feeding the tick and step writers"""

    def __init__(self, output_dir=None):
        def path(name):
            return os.path.join(output_dir, name) if output_dir else None
        self.ticks = CSVWriter(path('tick_log.csv'), LogRecord._fields)
        self.steps = CSVWriter(path('step_log.csv'), StepRecord._fields)

    def start(self, sim):
        self.ticks.start()
        self.steps.start()

    def next(self, record):
        self.ticks.next(record)

    def step(self, record):
        self.steps.next(record)

    def stop(self):
        self.ticks.stop()
        self.steps.stop()


class ScenarioResult(NamedTuple):
    summary: dict
    exit_code: int
    ticks: pd.DataFrame
    steps: pd.DataFrame


def build_simulation(config, arm_mass_scale=None, use_momentum_task=True):
    """Robot, controller and simulator for a scenario"""
    scale = config.arm_mass_scale if arm_mass_scale is None else arm_mass_scale
    biped = load_robot_model(config.robot_model, scale)
    params = config.alip_params(biped.model.total_mass)
    controller = MomentumController(biped, config.gains, config.wrench_limits(biped.model),
                                    torque_cap=config.torque_cap_nm,
                                    use_momentum_task=use_momentum_task)
    return WalkingSimulation(biped, params, config.gait_spec(), config.schedule, controller,
                             settings=config.integration, reach=config.reach,
                             ramp_step=config.velocity_ramp_mps_per_step)


def run_scenario(config, output_dir=None, duration=None, write=True, arm_mass_scale=None,
                 use_momentum_task=True):
    """
    Run a closed-loop scenario and save its logs

    Parameters:
    - config: ScenarioConfig
    - output_dir: where tick_log.csv, step_log.csv and summary.txt go
      (defaults to config.output_dir)
    - duration: overrides config.duration_s
    - write: save files; False keeps everything in memory
    - arm_mass_scale, use_momentum_task: robustness and ablation switches

    Returns ScenarioResult.
    """
    out = (output_dir or config.output_dir) if write else None
    if out:
        os.makedirs(out, exist_ok=True)
    sim = build_simulation(config, arm_mass_scale, use_momentum_task)
    duration = config.duration_s if duration is None else duration
    recorder = RunRecorder(out)

    print(f"Running {os.path.basename(config.path)}: {duration:.1f} s, "
          f"{sim.model.total_mass:.1f} kg surrogate, dt={config.integration.dt * 1000:.1f} ms")
    diverged = False
    error = None
    try:
        sim.run(duration, observers=[recorder])
    except DivergenceError as exc:
        diverged = True
        error = exc
        logger.error("Divergence: %s %s", exc, exc.diagnostics)

    ticks = recorder.ticks.frame()
    steps = recorder.steps.frame()
    summary = summarize(ticks, steps, config, sim.params.H, diverged, error)
    if out:
        with open(os.path.join(out, 'summary.txt'), 'w') as handle:
            handle.write(format_summary(summary))
        print(f"Summary saved to {os.path.join(out, 'summary.txt')}")

    if diverged:
        code = EXIT_DIVERGED
    elif summary['success']:
        code = EXIT_OK
    else:
        code = EXIT_FAILED
    print(f"Steps: {summary['steps']}, velocity error x/y: {summary['velocity_max_err_x_mps']:.4f}/"
          f"{summary['velocity_max_err_y_mps']:.4f} m/s, height error: {summary['height_max_err_m']:.4f} m, "
          f"momentum ratio: {summary['momentum_ratio']:.3f}")
    return ScenarioResult(summary, code, ticks, steps)


def _sweep_job(path, output_dir):
    logging.basicConfig(level=logging.WARNING)
    config = load_scenario(path, output_dir)
    return path, run_scenario(config).summary


def run_sweep(paths, jobs, output_dir=None):
    """
    Independent scenarios in worker processes

    Each scenario writes to <output_dir>/<scenario file stem> when output_dir
    is given. Returns {path: summary}.
    """
    tasks = []
    for path in paths:
        out = None
        if output_dir:
            out = os.path.join(output_dir, os.path.splitext(os.path.basename(path))[0])
        tasks.append((path, out))
    results = {}
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for path, summary in pool.map(_sweep_job, *zip(*tasks)):
            results[path] = summary
    return results


def _sample_step(x, y, T, params, samples):
    rows = []
    for k in range(samples + 1):
        t = T * k / samples
        xs, ys = flow(x, t, params), flow(y, t, params)
        rows.append((k, t, xs.p_x, xs.L_cy, ys.p_y, ys.L_cx))
    return rows


def _rollout_rows(label, steps, spec, params, samples):
    rows = []
    for step in steps:
        for k, t, p_x, L_cy, p_y, L_cx in _sample_step(step.x_plus, step.y_plus, spec.T, params, samples):
            rows.append({'orbit': label, 'v_x_cmd': step.command[0], 'v_y_cmd': step.command[1],
                         'step': step.index, 'stance': step.stance.support_foot, 'sample': k,
                         't_step': t, 'p_x': p_x, 'L_cy': L_cy, 'p_y': p_y, 'L_cx': L_cx,
                         'contact_x': step.contact[0], 'contact_y': step.contact[1]})
    return rows


def run_plan(config, output_dir=None, samples=20):
    """
    Pure template rollouts for every plan command: the periodic orbit and,
    when a template seed is configured, the feedback convergence from it.
    Writes phase_portrait.csv and plan_summary.txt.

    Returns (DataFrame, summary dict).
    """
    out = output_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    mass = config.plan.template_mass_kg
    if mass is None:
        mass = load_robot_model(config.robot_model, config.arm_mass_scale).model.total_mass
    params = config.alip_params(mass)
    n = config.plan.steps
    rows = []
    summary = {'scenario': config.path, 'template_mass_kg': float(mass), 'steps': n}
    worst = {'deadbeat': 0.0, 'closure': 0.0, 'impact': 0.0, 'displacement': 0.0}
    seed = config.template_seed()
    converged_within = 0

    for v_x, v_y in config.plan.commands:
        spec = config.gait_spec(v_x, v_y)
        start = periodic_state(spec, params, Stance.LEFT_SUPPORT)
        orbit = template_rollout(start.x, start.y, Stance.LEFT_SUPPORT, spec, params, n)
        rows.extend(_rollout_rows('periodic', orbit, spec, params, samples))
        for key, value in orbit_metrics(orbit, spec, params).items():
            worst[key] = max(worst[key], value)

        if seed is not None:
            seeded = template_rollout(seed[0], seed[1], Stance.LEFT_SUPPORT, spec, params, n)
            rows.extend(_rollout_rows('seeded', seeded, spec, params, samples))
            converged = n
            for k, (a, b) in enumerate(zip(seeded, orbit)):
                err = max(abs(a.x_minus.p_x - b.x_minus.p_x), abs(a.y_minus.p_y - b.y_minus.p_y),
                          abs(a.x_minus.L_cy - b.x_minus.L_cy) / params.mH,
                          abs(a.y_minus.L_cx - b.y_minus.L_cx) / params.mH)
                if err <= 1e-8:
                    converged = k
                    break
            converged_within = max(converged_within, converged)

    frame = pd.DataFrame(rows, columns=PHASE_COLUMNS)
    frame.to_csv(os.path.join(out, 'phase_portrait.csv'), index=False, float_format=FLOAT_FORMAT)
    summary.update({f'max_{k}_error': v for k, v in worst.items()})
    if seed is not None:
        summary['seed_converged_step'] = converged_within
    summary['success'] = bool(worst['deadbeat'] <= 1e-8 and worst['closure'] <= 1e-8
                              and worst['impact'] <= 1e-8 and worst['displacement'] <= 1e-6)
    with open(os.path.join(out, 'plan_summary.txt'), 'w') as handle:
        handle.write(format_summary(summary))
    print(f"Phase portrait saved to {os.path.join(out, 'phase_portrait.csv')}")
    return frame, summary


def parse_common_args(description='Run ALIP walking scenario'):
    """Parse common command line arguments for the runners"""
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument('--config', type=str, nargs='+', default=['config/velocity_schedule_scenario.yaml'],
                        help='Scenario config file(s)')
    parser.add_argument('--out', type=str, default=None, help='Output directory (overrides output_dir)')
    parser.add_argument('--jobs', type=int, default=1, help='Scenarios to run concurrently')
    parser.add_argument('--log-level', type=str, default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Logging level')
    return parser


def setup_logging(level):
    logging.basicConfig(level=getattr(logging, level), format='%(levelname)s %(name)s: %(message)s')
