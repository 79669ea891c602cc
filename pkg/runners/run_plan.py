#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Run the pure template rollouts (phase portrait) for a scenario's plan commands
"""

import logging
import sys

from config_handler import ConfigError, load_scenario
from locomotion import LocomotionError
from scenario_runner import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, parse_common_args, run_plan, setup_logging

logger = logging.getLogger(__name__)


def main(argv=None):
    parser = parse_common_args('Roll out the ALIP template orbits for the plan commands')
    parser.add_argument('--samples', type=int, default=20, help='Samples per step in phase_portrait.csv')
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    code = EXIT_OK
    for path in args.config:
        try:
            config = load_scenario(path, args.out)
        except ConfigError as exc:
            print(f"Error: {exc}")
            return EXIT_CONFIG
        try:
            _, summary = run_plan(config, samples=args.samples)
        except LocomotionError as exc:
            print(f"Error: {exc}")
            return EXIT_FAILED
        print(f"Deadbeat error: {summary['max_deadbeat_error']:.3e}, "
              f"closure error: {summary['max_closure_error']:.3e}, "
              f"impact mismatch: {summary['max_impact_error']:.3e}")
        if 'seed_converged_step' in summary:
            print(f"Seed converged onto the orbit by step {summary['seed_converged_step']}")
        if not summary['success']:
            code = EXIT_FAILED
    print("Plan completed successfully" if code == EXIT_OK else "Plan finished with orbit errors")
    return code


if __name__ == '__main__':
    sys.exit(main())
