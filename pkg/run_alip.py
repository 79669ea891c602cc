#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
ALIP walking toolkit:
1. plan     - template phase portraits for the commanded velocities
2. simulate - closed-loop walking of the surrogate biped
3. validate - oracle suites

Usage: python run_alip.py <plan|simulate|validate> [options]
"""

import sys

from runners import run_plan, run_simulate, run_validate

COMMANDS = {
    'plan': run_plan.main,
    'simulate': run_simulate.main,
    'validate': run_validate.main,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] not in COMMANDS:
        print(__doc__.strip())
        return 1 if argv and argv[0] not in ('-h', '--help') else 0
    return COMMANDS[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
