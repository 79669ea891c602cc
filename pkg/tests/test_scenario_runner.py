import os
from dataclasses import replace

import pandas as pd
import pytest

import run_alip
from config_handler import load_scenario
from scenario_runner import (EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED, EXIT_OK, PHASE_COLUMNS, CSVWriter,
                             run_plan, run_scenario)


def test_csv_writer_keeps_column_order(tmp_path):
    path = str(tmp_path / 'log.csv')
    writer = CSVWriter(path, ['b', 'a'])
    writer.start()
    writer.next((1.0, 2.0))
    writer.next((3.0, 4.0))
    writer.stop()
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['b', 'a']
    assert frame['a'].tolist() == [2.0, 4.0]


def test_csv_writer_without_file_stays_in_memory():
    writer = CSVWriter(None, ['x'])
    writer.start()
    writer.next((1,))
    writer.stop()
    assert len(writer.frame()) == 1


def test_run_plan_writes_the_phase_portrait(schedule_path, tmp_path):
    config = load_scenario(schedule_path, str(tmp_path))
    frame, summary = run_plan(config, samples=4)
    assert summary['success']
    assert summary['max_deadbeat_error'] < 1e-8
    assert summary['seed_converged_step'] < config.plan.steps
    written = pd.read_csv(tmp_path / 'phase_portrait.csv')
    assert list(written.columns) == PHASE_COLUMNS
    assert set(written['orbit']) == {'periodic', 'seeded'}
    # samples + 1 rows per step, both orbits, every command
    assert len(written) == len(frame) == 2 * len(config.plan.commands) * config.plan.steps * 5
    assert (tmp_path / 'plan_summary.txt').exists()


def test_cli_plan(scenario_path, tmp_path):
    assert run_alip.main(['plan', '--config', scenario_path, '--out', str(tmp_path)]) == EXIT_OK
    assert os.path.exists(tmp_path / 'phase_portrait.csv')


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / 'bad.yaml'
    bad.write_text('gait: {step_duration_s: -1}\n')
    assert run_alip.main(['plan', '--config', str(bad)]) == EXIT_CONFIG
    assert run_alip.main(['simulate', '--config', str(tmp_path / 'missing.yaml')]) == EXIT_CONFIG


def test_cli_unknown_command():
    assert run_alip.main(['fly']) == 1
    assert run_alip.main([]) == 0


def test_cli_validate_quick():
    assert run_alip.main(['validate', '--only', 'alip_core', 'alip_planner', '--quick']) == EXIT_OK


def test_cli_validate_catches_the_mutation():
    assert run_alip.main(['validate', '--only', 'alip_core', '--mutate', 'frontal_sign']) == EXIT_FAILED


@pytest.mark.slow
def test_in_place_run_is_deterministic(scenario_path):
    config = load_scenario(scenario_path)
    first = run_scenario(config, duration=0.2, write=False)
    second = run_scenario(config, duration=0.2, write=False)
    assert first.exit_code != EXIT_DIVERGED
    pd.testing.assert_frame_equal(first.ticks, second.ticks)


@pytest.mark.slow
def test_in_place_run_writes_logs(scenario_path, tmp_path):
    config = load_scenario(scenario_path, str(tmp_path))
    result = run_scenario(config, duration=0.5)
    assert not result.summary['failure_divergence']
    assert not result.summary['failure_unilateral']
    for name in ('tick_log.csv', 'step_log.csv', 'summary.txt'):
        assert (tmp_path / name).exists()
    assert len(pd.read_csv(tmp_path / 'tick_log.csv')) == result.summary['ticks']


@pytest.mark.slow
def test_missed_check_exits_with_failure(scenario_path):
    config = load_scenario(scenario_path)
    # an unreachable height bound over the whole run
    tight = replace(config.tolerances, settle_time_s=0.0, height_m=1e-12)
    result = run_scenario(replace(config, tolerances=tight), duration=0.1, write=False)
    assert not result.summary['failure_divergence']
    assert not result.summary['check_height']
    assert not result.summary['success']
    assert result.exit_code == EXIT_FAILED
