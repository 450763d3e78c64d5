"""Exception hierarchy shared by the solvers, simulator and CLI."""


class LQGameError(Exception):
    """Base class for all errors raised by :mod:`lqgame`."""

    exit_code = 1


class DataError(LQGameError):
    """Malformed input, shape mismatch, or non-finite values."""

    exit_code = 1


class ValidationError(DataError):
    """A problem specification failed :func:`lqgame.model.validate_spec`."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid problem specification:\n  " + "\n  ".join(self.violations))


class ConditionError(LQGameError):
    """A definiteness condition required by the requested law family fails."""

    exit_code = 2


class SingularMatrixError(ConditionError):
    """A matrix that must be inverted is numerically singular."""


class BlowUpError(LQGameError):
    """A Riccati solution escaped the blow-up bound (numerically unsolvable)."""

    exit_code = 3

    def __init__(self, message, node=None, time=None):
        self.node = node
        self.time = time
        super().__init__(message)


class SimulationError(LQGameError):
    """Non-finite values appeared while simulating paths."""

    exit_code = 1


class AcceptanceFailure(LQGameError):
    """A Monte Carlo or identity bound checked by the CLI was violated."""

    exit_code = 4
