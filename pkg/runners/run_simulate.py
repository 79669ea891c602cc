#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Run closed-loop walking scenarios on the surrogate biped
"""

import logging
import os
import sys

from config_handler import ConfigError, load_scenario
from locomotion import LocomotionError
from scenario_runner import (EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED, EXIT_OK, parse_common_args,
                             run_scenario, run_sweep, setup_logging)

logger = logging.getLogger(__name__)


def main(argv=None):
    parser = parse_common_args('Simulate walking scenarios')
    parser.add_argument('--duration', type=float, default=None, help='Override duration_s (seconds)')
    parser.add_argument('--arm-mass-scale', type=float, default=None,
                        help='Scale arm masses and inertias (robustness runs)')
    parser.add_argument('--no-momentum-task', action='store_true',
                        help='Drop the centroidal momentum level (ablation)')
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    # validate every file before spending time on any of them
    try:
        configs = [load_scenario(path, args.out) for path in args.config]
    except ConfigError as exc:
        print(f"Error: {exc}")
        return EXIT_CONFIG

    if len(configs) > 1 and args.jobs > 1:
        summaries = run_sweep(args.config, args.jobs, args.out).values()
        codes = [EXIT_DIVERGED if s['failure_divergence'] else (EXIT_OK if s['success'] else EXIT_FAILED)
                 for s in summaries]
    else:
        codes = []
        for config in configs:
            out = config.output_dir
            if args.out and len(configs) > 1:
                out = os.path.join(args.out, os.path.splitext(os.path.basename(config.path))[0])
            try:
                result = run_scenario(config, output_dir=out, duration=args.duration,
                                      arm_mass_scale=args.arm_mass_scale,
                                      use_momentum_task=not args.no_momentum_task)
            except LocomotionError as exc:
                print(f"Error: {exc}")
                codes.append(EXIT_FAILED)
                continue
            codes.append(result.exit_code)

    if EXIT_DIVERGED in codes:
        print("Simulation diverged")
        return EXIT_DIVERGED
    if EXIT_FAILED in codes:
        print("Simulation finished with failure flags")
        return EXIT_FAILED
    print("Simulation completed successfully")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
