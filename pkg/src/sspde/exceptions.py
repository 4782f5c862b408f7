"""Error taxonomy shared across the package.

Each error maps to a CLI exit code in ``sspde.cli`` (input errors -> 3,
infeasibility -> 2, numerical failures -> 4).
"""


class SspdeError(Exception):
    """Base class for all package errors."""


class InvalidModel(SspdeError):
    """Model violates a structural invariant; carries the violation list."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class PolicyModelMismatch(SspdeError):
    """Policy indices or shape do not fit the model."""


class ConfigInvalid(SspdeError):
    """Solver configuration failed validation."""


class Divergent(SspdeError):
    """Undiscounted policy evaluation hit positive-cost recurrent behavior."""

    def __init__(self, states):
        self.states = sorted(states)
        super().__init__(f"infinite expected cost from states {self.states}")


class Infeasible(SspdeError):
    """No policy meets the failure budget; carries the best achievable value."""

    def __init__(self, min_measure, epsilon):
        self.min_measure = float(min_measure)
        self.epsilon = float(epsilon)
        super().__init__(
            f"minimum discounted failure measure {self.min_measure:.9g} "
            f"exceeds budget {self.epsilon:.9g}"
        )


class BracketFailure(SspdeError):
    """Bisection could not bracket the target within the allowed range."""


class GridExplosion(SspdeError):
    """Cost-level enumeration exceeded the configured maximum."""


class NotMinprob(SspdeError):
    """Supplied fallback policy is not MINPROB-optimal."""


class NoStayAction(SspdeError):
    """An attention state has no action certified to stay in the attention set."""


class NoSuccessPath(SspdeError):
    """The start state cannot reach the goal under any policy."""


class MonotonicityViolation(SspdeError):
    """The feasibility predicate lost monotonicity across probes."""


class MaxItersExceeded(SspdeError):
    """An iterative solver hit its iteration cap before meeting tolerance."""
