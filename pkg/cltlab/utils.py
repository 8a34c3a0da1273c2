"""
Utility functions for validation, error handling, and common numeric operations.
"""

import math
from typing import Any, Optional, Sequence

import numpy as np


class CltlabError(Exception):
    """
    Base error. Every error names the invariant that failed and the offending value.

    Subclasses set `exit_status`, which the CLI returns to the shell.
    """

    exit_status = 1
    invariant = "unspecified"

    def __init__(self, message: str, value: Any = None, invariant: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.value = value
        if invariant is not None:
            self.invariant = invariant


# ==================== Validation errors (exit 2) ====================


class ValidationError(CltlabError):
    """Input does not satisfy a documented precondition."""

    exit_status = 2
    invariant = "validation"


class NegativeEntry(ValidationError):
    invariant = "kernel entries in [0,1]"

    def __init__(self, x: int, y: int, value: float):
        super().__init__(f"NegativeEntry({x},{y}): kernel entry {value!r} is outside [0,1]", value)
        self.x = x
        self.y = y


class RowSumDeviation(ValidationError):
    invariant = "kernel rows sum to 1"

    def __init__(self, x: int, deviation: float):
        super().__init__(
            f"RowSumDeviation({x}, {deviation:.17g}): row {x} sums to 1{deviation:+.17g}",
            deviation,
        )
        self.x = x
        self.deviation = deviation


class ShapeMismatch(ValidationError):
    invariant = "matching dimensions"


class EmptySupport(ValidationError):
    invariant = "stationary law has non-empty support"


class ObservableNotCentered(ValidationError):
    invariant = "observable is pi-centered"


class NotStationary(ValidationError):
    invariant = "pi P = pi"


class SingularPi(ValidationError):
    invariant = "pi strictly positive on support"


class BadWeights(ValidationError):
    invariant = "mixture weights positive and summing to 1"


class NotLattice(ValidationError):
    invariant = "observable values lie on a lattice"


class DegenerateChain(ValidationError):
    invariant = "two-state rates not both zero"


class MissingBridge(ValidationError):
    invariant = "endpoint centering requires a bridge table"


class BlockTooLong(ValidationError):
    invariant = "path length at least two blocks"


class UnreachablePair(ValidationError):
    invariant = "P^n(x,y) > 0"

    def __init__(self, x: int, y: int, n: int):
        super().__init__(f"UnreachablePair({x},{y},{n}): P^{n}({x},{y}) = 0", (x, y, n))
        self.x = x
        self.y = y
        self.n = n


class NonSummable(ValidationError):
    invariant = "autocovariances summable"


class UnknownGallery(ValidationError):
    invariant = "known gallery preset"


# ==================== Budget errors (exit 3) ====================


class BudgetExceeded(CltlabError):
    """A documented computational budget would be exceeded."""

    exit_status = 3
    invariant = "budget"


class ExactModeBudgetExceeded(BudgetExceeded):
    invariant = "exact-mode budget"


class NoConvergence(BudgetExceeded):
    invariant = "iteration budget"


class StateSpaceTooLarge(BudgetExceeded):
    invariant = "state space size"


# ==================== Invariant violations (exit 4) ====================


class InvariantViolation(CltlabError):
    """An identity that holds on correct code failed: upstream numerical corruption or a bug."""

    exit_status = 4
    invariant = "internal invariant"


class NegativeVariance(InvariantViolation):
    invariant = "||S_n - E(S_n|xi_0,xi_n)||^2 >= 0"


class InequalityViolated(InvariantViolation):
    invariant = "beta(B, A v C) <= beta(A,B) + beta(C,B) + beta(A,C)"

    def __init__(self, lhs: float, rhs: float):
        super().__init__(f"InequalityViolated(lhs={lhs:.17g}, rhs={rhs:.17g})", (lhs, rhs))
        self.lhs = lhs
        self.rhs = rhs


class IdentityViolated(InvariantViolation):
    invariant = "(1/u)||S_u(m)||^2 = centered_sigma(m) + (1/u)||R_u(m)||^2"


class ParameterValidator:
    """Validates scalar parameters shared by the services."""

    @staticmethod
    def validate_horizon(n: int, name: str = "n", minimum: int = 1) -> int:
        """
        Validate an integer horizon.

        Raises:
            ValidationError: If n is not an integer >= minimum
        """
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise ValidationError(f"{name} must be an integer, got {n!r}", n, f"{name} integer")
        if n < minimum:
            raise ValidationError(f"{name} must be >= {minimum}, got {n}", n, f"{name} >= {minimum}")
        return int(n)

    @staticmethod
    def validate_probability(p: float, name: str, low_open: bool = False) -> float:
        """Validate p in [0,1] (or (0,1] when low_open)."""
        if not math.isfinite(p) or p < 0.0 or p > 1.0 or (low_open and p == 0.0):
            interval = "(0,1]" if low_open else "[0,1]"
            raise ValidationError(f"{name} must lie in {interval}, got {p!r}", p, f"{name} in {interval}")
        return float(p)

    @staticmethod
    def validate_positive(value: float, name: str) -> float:
        if not math.isfinite(value) or value <= 0:
            raise ValidationError(f"{name} must be > 0, got {value!r}", value, f"{name} > 0")
        return float(value)

    @staticmethod
    def validate_state(x: int, size: int, name: str = "state") -> int:
        if isinstance(x, bool) or not isinstance(x, (int, np.integer)) or not 0 <= x < size:
            raise ValidationError(
                f"{name} must be an integer in [0,{size - 1}], got {x!r}", x, f"{name} in state space"
            )
        return int(x)

    @staticmethod
    def validate_weights(weights: Sequence[float], tol: float = 1e-12) -> np.ndarray:
        """
        Validate mixture weights: all positive, summing to 1.

        Raises:
            BadWeights: If any weight is non-positive or the sum deviates from 1
        """
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise BadWeights("BadWeights: at least one weight is required", list(w.ravel()))
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise BadWeights(f"BadWeights: weights must be positive, got {w.tolist()}", w.tolist())
        if abs(math.fsum(w.tolist()) - 1.0) > tol:
            raise BadWeights(f"BadWeights: weights sum to {math.fsum(w.tolist())!r}, not 1", w.tolist())
        return w


class ErrorResponse:
    """Structured error payload generator."""

    @staticmethod
    def from_error(error: CltlabError) -> dict:
        """Generate a payload for a library error."""
        return {
            "error": type(error).__name__,
            "message": error.message,
            "invariant": error.invariant,
            "value": _jsonable(error.value),
            "type": _error_type(error),
        }

    @staticmethod
    def validation_error(message: str, field: Optional[str] = None) -> dict:
        """Generate a validation error payload (config and document parsing)."""
        response = {
            "error": "Validation Error",
            "message": message,
            "type": "validation_error"
        }
        if field:
            response["field"] = field
        return response

    @staticmethod
    def internal_error(operation: str, error: Exception) -> dict:
        """Generate an internal error payload."""
        return {
            "error": "Internal Error",
            "message": f"Failed to {operation}",
            "details": str(error),
            "type": "internal_error"
        }


def _error_type(error: CltlabError) -> str:
    if isinstance(error, ValidationError):
        return "validation_error"
    if isinstance(error, BudgetExceeded):
        return "budget_exceeded"
    if isinstance(error, InvariantViolation):
        return "invariant_violation"
    return "error"


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def compensated_add(total: np.ndarray, compensation: np.ndarray, term: np.ndarray) -> None:
    """
    Neumaier-compensated in-place accumulation of `term` into `total`.

    `compensation` carries the lost low-order parts; the compensated value is
    total + compensation.
    """
    t = total + term
    big = np.abs(total) >= np.abs(term)
    compensation += np.where(big, (total - t) + term, (term - t) + total)
    total[...] = t
