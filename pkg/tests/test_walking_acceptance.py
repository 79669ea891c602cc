"""Closed-loop acceptance runs over the bundled scenarios (slow)"""

import os

import pytest

from config_handler import load_scenario
from scenario_runner import EXIT_OK, run_scenario

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'config')
IN_PLACE = os.path.join(CONFIG_DIR, 'in_place_scenario.yaml')
SCHEDULE = os.path.join(CONFIG_DIR, 'velocity_schedule_scenario.yaml')

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def in_place():
    return run_scenario(load_scenario(IN_PLACE), write=False)


@pytest.fixture(scope='module')
def schedule():
    return run_scenario(load_scenario(SCHEDULE), write=False)


def test_in_place_walks_the_whole_duration(in_place):
    summary = in_place.summary
    assert not summary['failure_divergence']
    assert summary['duration_s'] == pytest.approx(4.0)
    assert summary['steps'] >= 9
    assert summary['check_height']
    assert summary['check_velocity_tracking']
    assert summary['max_contact_residual'] <= 1e-8
    # no-slip on every held sole
    assert summary['max_stance_drift_m'] <= 1e-4
    assert in_place.exit_code == EXIT_OK


def test_schedule_tracks_every_velocity_window(schedule):
    summary = schedule.summary
    assert not summary['failure_divergence']
    assert summary['check_velocity_tracking']
    assert summary['check_height']


def test_schedule_keeps_momentum_about_the_com_small(schedule):
    assert schedule.summary['check_momentum_ratio']
    assert schedule.summary['momentum_ratio'] <= 0.3


def test_schedule_end_of_step_prediction(schedule):
    assert schedule.summary['check_prediction']
    assert schedule.exit_code == EXIT_OK


def test_dropping_the_momentum_task_loses_height_regulation():
    result = run_scenario(load_scenario(IN_PLACE), write=False, use_momentum_task=False)
    summary = result.summary
    assert summary['failure_divergence'] or not summary['check_height']
    assert not summary['success']
    assert result.exit_code != EXIT_OK


def test_doubled_arm_mass_still_walks():
    result = run_scenario(load_scenario(SCHEDULE), write=False, arm_mass_scale=2.0)
    summary = result.summary
    assert not summary['failure_divergence']
    assert summary['check_velocity_tracking']
    assert summary['check_height']
    assert summary['success']


def test_repeated_runs_write_identical_logs(tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    for out in (first, second):
        run_scenario(load_scenario(IN_PLACE, str(out)), duration=1.0)
    for name in ('tick_log.csv', 'step_log.csv'):
        assert (first / name).read_bytes() == (second / name).read_bytes()
