#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Run the oracle validation suites and print pass/fail with max errors
"""

import argparse
import logging
import sys

from scenario_runner import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, setup_logging
from validation_suites import MUTATIONS, SUITES, format_report, run_suites

logger = logging.getLogger(__name__)


def main(argv=None):
    parser = argparse.ArgumentParser(description='Validate the implementation against independent oracles')
    parser.add_argument('--only', type=str, nargs='+', choices=SUITES, default=None,
                        help='Restrict to these suites')
    parser.add_argument('--mutate', type=str, choices=MUTATIONS, default=None,
                        help='Inject a known fault into a suite fixture (the run must fail)')
    parser.add_argument('--seed', type=int, default=0, help='Random seed of the sampled states')
    parser.add_argument('--quick', action='store_true', help='Fewer samples, no free-flight integration')
    parser.add_argument('--log-level', type=str, default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Logging level')
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        results = run_suites(args.only, args.mutate, args.seed, args.quick)
    except (ValueError, OSError) as exc:
        print(f"Error: {exc}")
        return EXIT_CONFIG
    print(format_report(results))
    if all(r.passed for r in results):
        print("All suites passed")
        return EXIT_OK
    print("Validation failed")
    return EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
