"""Exceptions raised across the toolkit."""

from __future__ import annotations

from typing import Any


class HmpcError(Exception):
    """Base class for all toolkit errors."""


class IntegrationDiverged(HmpcError):
    """An integration step produced a non-finite state."""


class NotStabilizable(HmpcError):
    """No stabilizing gain could be found for (A, B)."""


class SingularR(HmpcError):
    """The input weight R is not invertible."""


class NotDetermined(HmpcError):
    """The invariant-set iteration did not terminate within max_iter."""


class UnstableClosedLoop(HmpcError):
    """Closed-loop matrix has spectral radius >= 1."""


class NotLinear(HmpcError):
    """A linear-only operation received a model without a linear part."""


class InfeasibleProblem(HmpcError):
    """An optimization problem has no feasible point."""


class UnboundedProblem(HmpcError):
    """A linear program is unbounded in the objective direction."""


class MaxIterationsReached(HmpcError):
    """An iterative solver hit its iteration cap."""


class NotNominallyStable(HmpcError):
    """The zero-disturbance closed loop failed to converge."""


class ConfigError(HmpcError):
    """An experiment configuration is invalid."""


class Diverged(HmpcError):
    """The closed-loop state left the divergence ball.

    The truncated trace is kept on the exception so callers can still
    export it.
    """

    def __init__(self, message: str, trace: Any = None):
        super().__init__(message)
        self.trace = trace
