"""
Bridge Service
Conditioning on both endpoints: Markov-bridge marginals, the centering table
B_n(x,y) = E(S_n | xi_0=x, xi_n=y) and the conditional L2 norms built from it.

All tables are assembled from the numerator
    T_n(x,y) = sum_{k=1}^{n} sum_z P^k(x,z) f(z) P^{n-k}(z,y) = P^n(x,y) B_n(x,y),
which satisfies T_n = T_{n-1} P + P^n diag(f).
"""

import math
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np
from scipy import linalg

from cltlab.config import settings
from cltlab.logging_config import get_logger
from cltlab.services.kernel_service import Kernel, reversed_kernel
from cltlab.services.moments_service import Model, partial_sum_variance
from cltlab.utils import (
    ExactModeBudgetExceeded,
    InvariantViolation,
    NegativeVariance,
    ParameterValidator,
    UnreachablePair,
    ValidationError,
    compensated_add,
)

logger = get_logger("cltlab.bridge_service")


@dataclass(frozen=True, eq=False)
class BridgeTable:
    """
    B_n(x,y) = E(S_n | xi_0=x, xi_n=y).

    Cells with P^n(x,y) = 0 are masked: `values` holds NaN there and `support_mask` is False.
    """

    n: int
    values: np.ndarray
    support_mask: np.ndarray
    transition: np.ndarray

    def lookup(self, x: int, y: int) -> float:
        """B_n(x,y) for a reachable pair."""
        if not self.support_mask[x, y]:
            raise UnreachablePair(x, y, self.n)
        return float(self.values[x, y])


@dataclass(frozen=True)
class BridgeStep:
    """One step of the incremental sweep: the numerator T_n and P^n."""

    n: int
    numerator: np.ndarray
    transition: np.ndarray


@dataclass(frozen=True)
class OneSidedMeans:
    """E(S_n | xi_0 = x) and E(S_n | xi_n = y), computed without the bridge table."""

    n: int
    given_start: np.ndarray
    given_end: np.ndarray


@dataclass(frozen=True)
class InteriorProjection:
    """
    Projection of the inner sum V = X_{v+1} + ... + X_{n-v} on sigma(xi_0, xi_n).

    `rho` is the maximal correlation between sigma(xi_0, xi_n) and sigma(xi_{v+1}, ..., xi_{n-v}).
    """

    n: int
    v: int
    projection_norm: float
    interior_norm: float
    rho: float

    @property
    def bound(self) -> float:
        return self.rho * self.interior_norm


def bridge_marginal(P: Kernel, n: int, k: int, x: int, y: int) -> np.ndarray:
    """
    Law of xi_k given xi_0 = x, xi_n = y:  z -> P^k(x,z) P^{n-k}(z,y) / P^n(x,y).

    Raises:
        UnreachablePair: If P^n(x,y) = 0
    """
    n = ParameterValidator.validate_horizon(n)
    k = ParameterValidator.validate_horizon(k, "k", minimum=0)
    if k > n:
        raise ValidationError(f"k must lie in [0,{n}], got {k}", k, "0 <= k <= n")
    x = ParameterValidator.validate_state(x, P.size, "x")
    y = ParameterValidator.validate_state(y, P.size, "y")

    total = P.power(n)[x, y]
    if total <= 0.0:
        raise UnreachablePair(x, y, n)
    return P.power(k)[x, :] * P.power(n - k)[:, y] / total


def bridge_profile(M: Model, N: int) -> Iterator[BridgeStep]:
    """
    Yield (n, T_n, P^n) for n = 1..N in one sweep.

    Above settings.COMPENSATED_SUM_THRESHOLD steps the accumulation carries a Neumaier
    compensation term.
    """
    N = ParameterValidator.validate_horizon(N, "N")
    P = M.kernel.rows
    weights = M.f[None, :]

    transition = np.array(P, dtype=float)
    numerator = transition * weights
    compensation = np.zeros_like(numerator)
    yield BridgeStep(1, numerator.copy(), transition.copy())

    for n in range(2, N + 1):
        transition = transition @ P
        if n > settings.COMPENSATED_SUM_THRESHOLD:
            numerator = numerator @ P
            compensation = compensation @ P
            compensated_add(numerator, compensation, transition * weights)
            yield BridgeStep(n, numerator + compensation, transition.copy())
        else:
            numerator = numerator @ P + transition * weights
            yield BridgeStep(n, numerator.copy(), transition.copy())


def bridge_numerator(M: Model, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return (T_n, P^n)."""
    n = ParameterValidator.validate_horizon(n)
    step = None
    for step in bridge_profile(M, n):
        pass
    return step.numerator, step.transition


def _table_from_numerator(n: int, numerator: np.ndarray, transition: np.ndarray) -> BridgeTable:
    mask = transition > 0.0
    values = np.full(transition.shape, np.nan)
    values[mask] = numerator[mask] / transition[mask]
    for array in (values, mask, transition):
        array.setflags(write=False)
    return BridgeTable(n=n, values=values, support_mask=mask, transition=transition)


def bridge_sum_table(M: Model, n: int) -> BridgeTable:
    """
    Centering table B_n(x,y) = E(S_n | xi_0=x, xi_n=y).

    Unreachable pairs are masked, never raised.
    """
    numerator, transition = bridge_numerator(M, n)
    table = _table_from_numerator(n, numerator, np.array(transition))
    logger.debug(f"Bridge table n={n}: {int(table.support_mask.sum())} reachable pairs")
    return table


def endpoint_second_moment(M: Model, numerator: np.ndarray, transition: np.ndarray) -> float:
    """||E(S_n | xi_0, xi_n)||^2 = sum pi(x) T_n(x,y)^2 / P^n(x,y) over reachable pairs."""
    mask = transition > 0.0
    weights = np.broadcast_to(M.pi.probs[:, None], transition.shape)
    terms = weights[mask] * numerator[mask] ** 2 / transition[mask]
    return math.fsum(terms.tolist())


def _clamp_variance(value: float, n: int) -> float:
    if value >= 0.0:
        return value
    if value < -settings.NEGATIVE_VARIANCE_TOL:
        raise NegativeVariance(
            f"NegativeVariance({value:.17g}): projection identity violated at n={n}", value
        )
    if value < -settings.CLAMP_WARN_TOL:
        logger.warning(f"Centered variance {value:.3e} at n={n} clamped to 0")
    return 0.0


def centered_sigma(M: Model, n: int) -> float:
    """
    (1/n) ||S_n - E(S_n | xi_0, xi_n)||^2, by the projection identity
    ||S_n||^2 - ||E(S_n | xi_0, xi_n)||^2.

    Raises:
        NegativeVariance: If the identity yields a value below -settings.NEGATIVE_VARIANCE_TOL
    """
    numerator, transition = bridge_numerator(M, n)
    total = partial_sum_variance(M, n)
    value = (total - endpoint_second_moment(M, numerator, transition)) / n
    return _clamp_variance(value, n)


def endpoint_projection_norm(M: Model, n: int) -> float:
    """(1/n) ||E(S_n | xi_0, xi_n)||^2."""
    numerator, transition = bridge_numerator(M, n)
    return endpoint_second_moment(M, numerator, transition) / n


def endpoint_projection_profile(M: Model, N: int) -> np.ndarray:
    """(1/n) ||E(S_n | xi_0, xi_n)||^2 for n = 1..N in one sweep."""
    out = np.empty(N)
    for step in bridge_profile(M, N):
        out[step.n - 1] = endpoint_second_moment(M, step.numerator, step.transition) / step.n
    return out


def x0_two_sided_norm(M: Model, n: int) -> float:
    """
    ||E(X_0 | xi_{-n}, xi_n)||^2 = sum pi(x) P^{2n}(x,y) g(x,y)^2 with
    g(x,y) = sum_z P^n(x,z) f(z) P^n(z,y) / P^{2n}(x,y).
    """
    n = ParameterValidator.validate_horizon(n)
    forward = M.kernel.power(n)
    numerator = (forward * M.f[None, :]) @ forward
    return endpoint_second_moment(M, numerator, M.kernel.power(2 * n))


def one_sided_conditional_means(M: Model, n: int) -> OneSidedMeans:
    """
    E(S_n | xi_0 = x) = sum_{k=1}^{n} (P^k f)(x) and
    E(S_n | xi_n = y) = sum_{j=0}^{n-1} (P*^j f)(y) with P* the time reversal.

    Off the pi-support the end-conditioned values are 0.
    """
    n = ParameterValidator.validate_horizon(n)
    reverse = reversed_kernel(M.kernel, M.pi).rows

    start = np.zeros(M.size)
    v = np.array(M.f, dtype=float)
    for _ in range(n):
        v = M.kernel.rows @ v
        start += v

    end = np.zeros(M.size)
    w = np.array(M.f, dtype=float)
    for _ in range(n):
        end += w
        w = reverse @ w
    end[M.pi.probs <= 0.0] = 0.0
    return OneSidedMeans(n=n, given_start=start, given_end=end)


def tower_check(M: Model, n: int) -> Tuple[float, float]:
    """
    Max deviations between the bridge table integrated over one endpoint and the
    one-sided conditional means: (start side, end side).
    """
    numerator, _ = bridge_numerator(M, n)
    means = one_sided_conditional_means(M, n)
    start = numerator.sum(axis=1)

    support = M.pi.probs > 0.0
    end = np.zeros(M.size)
    end[support] = (M.pi.probs @ numerator)[support] / M.pi.probs[support]
    return (
        float(np.max(np.abs(start - means.given_start))),
        float(np.max(np.abs(end[support] - means.given_end[support]))),
    )


def _maximal_correlation(joint: np.ndarray) -> float:
    rows = joint.sum(axis=1)
    cols = joint.sum(axis=0)
    keep_r = rows > 0.0
    keep_c = cols > 0.0
    scaled = joint[np.ix_(keep_r, keep_c)] / np.sqrt(np.outer(rows[keep_r], cols[keep_c]))
    if min(scaled.shape) < 2:
        return 0.0
    singular = linalg.svdvals(scaled)
    return float(min(max(singular[1], 0.0), 1.0))


def interior_projection(M: Model, n: int, v: int) -> InteriorProjection:
    """
    Compare ||E(V | xi_0, xi_n)|| with rho * ||V|| for V = X_{v+1} + ... + X_{n-v}.

    By the Markov property sigma(xi_{v+1}, xi_{n-v}) carries all the dependence between the
    endpoints and the inner block, so rho comes from the SVD of the law of
    ((xi_0, xi_n), (xi_{v+1}, xi_{n-v})).

    Raises:
        ExactModeBudgetExceeded: If S > settings.MAX_INTERLACED_STATES
        InvariantViolation: If the projection exceeds rho * ||V|| + 1e-9
    """
    n = ParameterValidator.validate_horizon(n)
    v = ParameterValidator.validate_horizon(v, "v", minimum=0)
    if n < 2 * v + 1:
        raise ValidationError(f"n must be >= 2v+1, got n={n}, v={v}", (n, v), "n >= 2v + 1")
    if M.size > settings.MAX_INTERLACED_STATES:
        raise ExactModeBudgetExceeded(
            f"ExactModeBudgetExceeded: interlaced correlation needs S <= "
            f"{settings.MAX_INTERLACED_STATES}, got {M.size}",
            M.size,
        )
    inner = n - 2 * v
    P = M.kernel

    inner_numerator, _ = bridge_numerator(M, inner)
    outer = P.power(v)
    numerator = outer @ inner_numerator @ outer
    projection = math.sqrt(endpoint_second_moment(M, numerator, P.power(n)))
    interior = math.sqrt(max(partial_sum_variance(M, inner), 0.0))

    joint = np.einsum("x,xa,ab,by->xyab", M.pi.probs, P.power(v + 1), P.power(inner - 1), outer)
    S = M.size
    rho = _maximal_correlation(joint.reshape(S * S, S * S))

    result = InteriorProjection(n=n, v=v, projection_norm=projection, interior_norm=interior, rho=rho)
    if projection > result.bound + 1e-9:
        raise InvariantViolation(
            f"||E(V|xi_0,xi_n)|| = {projection:.17g} exceeds rho*||V|| = {result.bound:.17g}",
            (projection, result.bound),
            "||E(V|xi_0,xi_n)|| <= rho ||V||",
        )
    return result
