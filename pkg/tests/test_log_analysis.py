import numpy as np
import pandas as pd
import pytest

from config_handler import load_scenario
from locomotion.hybrid_simulator import LogRecord, StepRecord
from log_analysis import (format_summary, height_error, longest_streak, momentum_ratio,
                          moving_average_velocity, prediction_errors, summarize, velocity_tracking)


def _ticks(n=4000, dt=1e-3, v_x=0.0, H=0.95):
    """Synthetic tick log with every column present"""
    t = np.arange(n) * dt
    frame = pd.DataFrame(0.0, index=range(n), columns=LogRecord._fields)
    frame['t'] = t
    frame['step'] = (t // 0.4).astype(int)
    frame['stance'] = 'left'
    frame['v_com_x'] = v_x
    frame['com_height'] = H
    frame['L_cx'] = 10.0
    frame['L_com_x'] = 1.0
    frame['f_z'] = 800.0
    frame['wrench_violation'] = -1.0
    return frame


def _steps(n=10):
    frame = pd.DataFrame(0.0, index=range(n), columns=StepRecord._fields)
    frame['step'] = range(n)
    frame['peak_L_c'] = 20.0
    frame['L_cx_end'] = 10.0
    frame['Lhat_cx_last'] = 10.2
    frame['Lhat_cx_mid'] = 11.0
    return frame


@pytest.fixture
def config(scenario_path):
    return load_scenario(scenario_path)


def test_longest_streak():
    assert longest_streak([False, True, True, False, True, True, True]) == 3
    assert longest_streak([]) == 0
    assert longest_streak([False, False]) == 0


def test_moving_average_is_centred_and_needs_a_full_window():
    ticks = pd.DataFrame({'v_com_x': np.arange(10.0), 'v_com_y': 0.0})
    avg = moving_average_velocity(ticks, 0.003, 1e-3)
    assert np.isnan(avg['v_com_x'].iloc[0])
    assert avg['v_com_x'].iloc[5] == pytest.approx(5.0)


def test_velocity_tracking_uses_relative_or_absolute_tolerance(config):
    ticks = _ticks(v_x=0.2)
    rows = velocity_tracking(ticks, [(1.0, 3.0, 0.225, 0.0)], config.tolerances, 1e-3)
    assert rows['err_x'].iloc[0] == pytest.approx(0.025)
    assert rows['ok'].iloc[0]
    rows = velocity_tracking(ticks, [(1.0, 3.0, 0.45, 0.0)], config.tolerances, 1e-3)
    assert not rows['ok'].iloc[0]


def test_height_and_momentum_ratio():
    ticks = _ticks(H=0.955)
    windows = [(1.0, 3.0, 0.0, 0.0)]
    assert height_error(ticks, 0.95, windows) == pytest.approx(0.005)
    assert momentum_ratio(ticks, windows) == pytest.approx(0.1)
    assert np.isnan(height_error(ticks, 0.95, [(10.0, 11.0, 0.0, 0.0)]))


def test_prediction_errors_are_relative_to_the_step_peak():
    errors = prediction_errors(_steps())
    assert errors['last'].iloc[0] == pytest.approx(0.01)
    assert errors['mid'].iloc[0] == pytest.approx(0.05)


def test_clean_run_summary(config):
    summary = summarize(_ticks(), _steps(), config, 0.95)
    assert summary['success']
    assert summary['check_velocity_tracking']
    assert summary['check_height']
    assert summary['check_prediction']
    assert summary['ticks'] == 4000
    assert not summary['failure_wrench_streak']


def test_failure_flags(config):
    ticks = _ticks()
    ticks.loc[100:130, 'wrench_violation'] = 1e-3
    ticks.loc[500, 'f_z'] = -5.0
    ticks.loc[ticks['step'].between(2, 4), 'clamped'] = 1
    summary = summarize(ticks, _steps(), config, 0.95, diverged=True, error='boom')
    assert summary['failure_divergence']
    assert summary['failure_wrench_streak']
    assert summary['failure_unilateral']
    assert summary['failure_reach_streak']
    assert summary['error'] == 'boom'
    assert not summary['success']


def test_double_support_ticks_do_not_count_as_violations(config):
    ticks = _ticks()
    ticks.loc[100:130, 'wrench_violation'] = 1e-3
    ticks.loc[100:130, 'double_support'] = 1
    assert not summarize(ticks, _steps(), config, 0.95)['failure_wrench_streak']


def test_missed_check_fails_the_run_without_a_failure_flag(config):
    # drifting forward at 0.3 m/s while commanded to stand in place
    summary = summarize(_ticks(v_x=0.3), _steps(), config, 0.95)
    assert not any(v for k, v in summary.items() if k.startswith('failure_'))
    assert not summary['check_velocity_tracking']
    assert not summary['success']


def test_height_miss_fails_the_run(config):
    summary = summarize(_ticks(H=0.97), _steps(), config, 0.95)
    assert not summary['check_height']
    assert not summary['success']


def test_wrench_fallback_ticks_count_toward_the_streak(config):
    ticks = _ticks()
    ticks.loc[100:160, 'double_support'] = 1
    ticks.loc[100:160, 'wrench_fallback'] = 1
    summary = summarize(ticks, _steps(), config, 0.95)
    assert summary['wrench_fallback_ticks'] == 61
    assert summary['wrench_violation_streak'] == 61
    assert summary['failure_wrench_streak']
    assert not summary['success']


def test_isolated_wrench_fallbacks_stay_below_the_streak(config):
    ticks = _ticks()
    ticks.loc[[100, 300, 500], 'wrench_fallback'] = 1
    summary = summarize(ticks, _steps(), config, 0.95)
    assert summary['wrench_fallback_ticks'] == 3
    assert not summary['failure_wrench_streak']
    assert summary['success']


def test_format_summary():
    text = format_summary({'a': True, 'b': 0.123456789, 'c': 3, 'd': 'x'})
    assert text == 'a=true\nb=0.123457\nc=3\nd=x\n'
