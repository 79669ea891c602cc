#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Summary metrics for a simulated walking run
Works on the per-tick and per-step logs as DataFrames (the same columns as
tick_log.csv and step_log.csv) and produces the key=value summary.
"""

import logging

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def longest_streak(flags):
    """Length of the longest run of True values in a boolean Series"""
    flags = pd.Series(flags, dtype=bool).reset_index(drop=True)
    if flags.empty or not flags.any():
        return 0
    groups = (flags != flags.shift()).cumsum()
    return int(flags.groupby(groups).sum().max())


def moving_average_velocity(ticks, window_s, dt):
    """Centered moving average of the horizontal CoM velocity"""
    window = max(1, int(round(window_s / dt)))
    return ticks[['v_com_x', 'v_com_y']].rolling(window, center=True, min_periods=window).mean()


def _window_mask(ticks, t0, t1):
    return (ticks['t'] >= t0) & (ticks['t'] < t1)


def velocity_tracking(ticks, windows, tolerances, dt):
    """
    Worst moving-average velocity error per steady window

    Parameters:
    - windows: list of (t_start, t_end, v_x, v_y) after settling
    """
    avg = moving_average_velocity(ticks, tolerances.velocity_window_s, dt)
    rows = []
    for t0, t1, v_x, v_y in windows:
        mask = _window_mask(ticks, t0, t1) & avg['v_com_x'].notna()
        if not mask.any():
            continue
        err_x = float((avg.loc[mask, 'v_com_x'] - v_x).abs().max())
        err_y = float((avg.loc[mask, 'v_com_y'] - v_y).abs().max())
        tol_x = max(tolerances.velocity_rel * abs(v_x), tolerances.velocity_abs_mps)
        tol_y = max(tolerances.velocity_rel * abs(v_y), tolerances.velocity_abs_mps)
        rows.append({'t_start': t0, 't_end': t1, 'v_x': v_x, 'v_y': v_y,
                     'err_x': err_x, 'err_y': err_y,
                     'ok': bool(err_x <= tol_x and err_y <= tol_y)})
    return pd.DataFrame(rows, columns=['t_start', 't_end', 'v_x', 'v_y', 'err_x', 'err_y', 'ok'])


def steady_mask(ticks, windows):
    mask = pd.Series(False, index=ticks.index)
    for t0, t1, _, _ in windows:
        mask |= _window_mask(ticks, t0, t1)
    return mask


def height_error(ticks, H, windows):
    mask = steady_mask(ticks, windows)
    if not mask.any():
        return float('nan')
    return float((ticks.loc[mask, 'com_height'] - H).abs().max())


def momentum_ratio(ticks, windows):
    """RMS |L_com,xy| over RMS |L_c,xy| in the steady windows"""
    mask = steady_mask(ticks, windows)
    if not mask.any():
        return float('nan')
    sel = ticks.loc[mask]
    rms_com = np.sqrt((sel['L_com_x'] ** 2 + sel['L_com_y'] ** 2).mean())
    rms_c = np.sqrt((sel['L_cx'] ** 2 + sel['L_cy'] ** 2).mean())
    return float(rms_com / rms_c) if rms_c > 0 else float('nan')


def prediction_errors(steps):
    """
    End-of-step prediction errors relative to each step's peak |L_c|.
    'last' uses the estimate one tick before the switch, 'mid' the mid-step one.
    """
    if steps.empty:
        return pd.DataFrame(columns=['step', 'mid', 'last'])
    peak = steps['peak_L_c'].where(steps['peak_L_c'] > 0)
    mid = np.hypot(steps['Lhat_cx_mid'] - steps['L_cx_end'], steps['Lhat_cy_mid'] - steps['L_cy_end'])
    last = np.hypot(steps['Lhat_cx_last'] - steps['L_cx_end'], steps['Lhat_cy_last'] - steps['L_cy_end'])
    return pd.DataFrame({'step': steps['step'], 'mid': mid / peak, 'last': last / peak})


def summarize(ticks, steps, config, H, diverged=False, error=None):
    """
    Build the summary mapping of a run

    Parameters:
    - ticks, steps: DataFrames of the tick and step logs
    - config: ScenarioConfig (schedule, tolerances, dt)
    - H: template CoM height
    - diverged, error: divergence outcome of the run

    Returns an ordered dict; keys starting with 'failure_' are failure flags,
    'check_' keys are acceptance checks. 'success' needs every check and no
    failure flag.
    """
    tol = config.tolerances
    dt = config.integration.dt
    windows = config.schedule.steady_windows(tol.settle_time_s)
    end = float(ticks['t'].max()) + dt if not ticks.empty else 0.0
    windows = [(t0, min(t1, end), vx, vy) for t0, t1, vx, vy in windows if t0 < end]

    summary = {'scenario': config.path, 'duration_s': end, 'ticks': int(len(ticks)),
               'steps': int(len(steps))}

    tracking = velocity_tracking(ticks, windows, tol, dt) if not ticks.empty else pd.DataFrame()
    summary['velocity_max_err_x_mps'] = float(tracking['err_x'].max()) if not tracking.empty else float('nan')
    summary['velocity_max_err_y_mps'] = float(tracking['err_y'].max()) if not tracking.empty else float('nan')
    summary['height_max_err_m'] = height_error(ticks, H, windows) if not ticks.empty else float('nan')
    summary['momentum_ratio'] = momentum_ratio(ticks, windows) if not ticks.empty else float('nan')

    pred = prediction_errors(steps)
    # the first step starts from the seed and has no full-step estimate history
    settled = pred.iloc[1:] if len(pred) > 1 else pred
    summary['prediction_max_rel_err'] = float(settled['last'].max()) if not settled.empty else float('nan')
    summary['prediction_mid_mean_rel_err'] = float(settled['mid'].mean()) if not settled.empty else float('nan')

    single = ticks[ticks['double_support'] == 0] if not ticks.empty else ticks
    summary['max_contact_residual'] = float(ticks['contact_residual'].max()) if not ticks.empty else 0.0
    summary['max_dynamics_residual'] = float(ticks['dynamics_residual'].max()) if not ticks.empty else 0.0
    summary['max_wrench_violation'] = float(single['wrench_violation'].max()) if not single.empty else 0.0
    summary['min_normal_force_n'] = float(single['f_z'].min()) if not single.empty else float('nan')
    summary['max_stance_drift_m'] = float(steps['stance_drift'].max()) if not steps.empty else 0.0
    summary['max_snap_distance_m'] = float(steps['snap_distance'].max()) if not steps.empty else 0.0
    summary['max_tau_nm'] = float(ticks['max_tau'].max()) if not ticks.empty else 0.0
    summary['torque_cap_ticks'] = int((ticks['torque_excess'] > 0).sum()) if not ticks.empty else 0
    summary['projected_ticks'] = int(ticks['projected'].sum()) if not ticks.empty else 0
    summary['saturated_ticks'] = int(ticks['saturated'].sum()) if not ticks.empty else 0

    if ticks.empty:
        wrench_streak = 0
        summary['wrench_fallback_ticks'] = 0
    else:
        # minimum-norm fallback splits count as violations
        fallback = ticks['wrench_fallback'] > 0 if 'wrench_fallback' in ticks else False
        violated = (ticks['double_support'] == 0) & (ticks['wrench_violation'] > tol.wrench_violation)
        wrench_streak = longest_streak(violated | fallback)
        summary['wrench_fallback_ticks'] = int(np.sum(fallback))
    per_step_clamp = ticks.groupby('step')['clamped'].max() if not ticks.empty else pd.Series(dtype=int)
    clamp_streak = longest_streak(per_step_clamp > 0)
    summary['wrench_violation_streak'] = wrench_streak
    summary['clamp_streak_steps'] = clamp_streak

    summary['check_velocity_tracking'] = bool(tracking['ok'].all()) if not tracking.empty else True
    summary['check_height'] = bool(summary['height_max_err_m'] <= tol.height_m) \
        if not np.isnan(summary['height_max_err_m']) else True
    summary['check_momentum_ratio'] = bool(summary['momentum_ratio'] <= tol.momentum_ratio) \
        if not np.isnan(summary['momentum_ratio']) else True
    summary['check_prediction'] = bool(summary['prediction_max_rel_err'] <= tol.prediction_rel) \
        if not np.isnan(summary['prediction_max_rel_err']) else True

    summary['failure_divergence'] = bool(diverged)
    summary['failure_wrench_streak'] = wrench_streak >= tol.wrench_streak_ticks
    summary['failure_unilateral'] = bool(summary['min_normal_force_n'] < 0) \
        if not np.isnan(summary['min_normal_force_n']) else False
    summary['failure_reach_streak'] = clamp_streak >= tol.clamp_streak_steps
    if error:
        summary['error'] = str(error)
    failed = any(v for k, v in summary.items() if k.startswith('failure_'))
    missed = not all(v for k, v in summary.items() if k.startswith('check_'))
    summary['success'] = not (failed or missed)
    return summary


def format_summary(summary):
    """key=value lines, floats with fixed precision"""
    lines = []
    for key, value in summary.items():
        if isinstance(value, bool):
            value = 'true' if value else 'false'
        elif isinstance(value, float):
            value = f'{value:.6g}'
        lines.append(f'{key}={value}')
    return '\n'.join(lines) + '\n'
