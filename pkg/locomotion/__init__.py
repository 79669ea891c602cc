"""
Locomotion package
ALIP template, foot placement planner, floating-base dynamics, hierarchical
momentum controller and the hybrid walking simulator
"""


class LocomotionError(Exception):
    """Base class for errors raised by the locomotion modules"""


class PlannerDomainError(LocomotionError, ValueError):
    """Template or planner outside its domain (non-positive constants, t < 0, t > T, T <= 0)"""


class SingularConstraintError(LocomotionError):
    """Contact Jacobian (or its inertia-weighted Gram matrix) lost rank"""


class DivergenceError(LocomotionError):
    """Simulation state became non-finite or left the plausible range"""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
