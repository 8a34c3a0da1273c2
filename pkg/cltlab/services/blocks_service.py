"""
Blocks Service
Block martingale decomposition of the partial sums: block sums Y_k over blocks of length m,
martingale differences D_k = (Y_k - B_m(xi_{km}, xi_{(k+1)m}))/sqrt(m), endpoint remainders
Z_k = B_m(xi_{km}, xi_{(k+1)m})/sqrt(m), and the exact second-moment identity
    (1/u) ||S_u(m)||^2 = centered_sigma(m) + (1/u) ||R_u(m)||^2.
"""

import math
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Sequence

import numpy as np
from scipy import special

from cltlab.config import settings
from cltlab.logging_config import get_logger
from cltlab.services.bridge_service import (
    BridgeTable,
    bridge_numerator,
    bridge_sum_table,
    centered_sigma,
    endpoint_second_moment,
)
from cltlab.services.enumeration_service import check_enumeration_budget, enumerate_paths
from cltlab.services.moments_service import Model, partial_sum_variance
from cltlab.services.montecarlo_service import SeedSpec, simulate
from cltlab.utils import (
    BlockTooLong,
    ExactModeBudgetExceeded,
    IdentityViolated,
    ParameterValidator,
    ShapeMismatch,
    UnreachablePair,
)

logger = get_logger("cltlab.blocks_service")

IDENTITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class BlockDecomposition:
    """
    Blocks of one path: sqrt(m) (D_k + Z_k) = Y_k for k < u; the tail block is carried apart.
    """

    m: int
    u: int
    block_sums: np.ndarray
    martingale_differences: np.ndarray
    remainders: np.ndarray
    tail_sum: float
    tail_length: int

    @property
    def martingale(self) -> float:
        """M_u(m) = sum D_k."""
        return math.fsum(self.martingale_differences.tolist())

    @property
    def remainder(self) -> float:
        """R_u(m) = sum Z_k."""
        return math.fsum(self.remainders.tolist())

    def rows(self) -> Dict[str, np.ndarray]:
        return {
            "k": np.arange(self.u),
            "Y_k": self.block_sums,
            "D_k": self.martingale_differences,
            "Z_k": self.remainders,
        }


@dataclass(frozen=True)
class OrthogonalityResult:
    """E(M_u R_u): exact value, or sample mean with its confidence half-width."""

    value: float
    mode: str
    half_width: float = 0.0
    reps: int = 0

    @property
    def passed(self) -> bool:
        if self.mode == "exact":
            return abs(self.value) <= 1e-12
        return abs(self.value) <= self.half_width


@dataclass(frozen=True)
class ApproximationGap:
    """(1/u)||S_u(m) - E(S_u(m)|xi_0, xi_um) - M_u(m)||^2 and its centered_sigma cross-check."""

    value: float
    cross_check: float

    @property
    def residual(self) -> float:
        return abs(self.value - self.cross_check)


@dataclass(frozen=True)
class CenteredSigmaGrid:
    block_lengths: tuple
    values: tuple
    sup: float
    argsup: int


def _check_exact_budget(M: Model, m: int, u: int) -> None:
    if M.size > settings.EXACT_MAX_STATES or u * m > settings.EXACT_MAX_HORIZON:
        raise ExactModeBudgetExceeded(
            f"ExactModeBudgetExceeded: exact second moments need S <= {settings.EXACT_MAX_STATES} "
            f"and u*m <= {settings.EXACT_MAX_HORIZON}, got S={M.size}, u*m={u * m}; "
            f"use the Monte Carlo estimate instead",
            (M.size, u * m),
        )


def block_decompose(
    M: Model, path: Sequence[int], m: int, table: Optional[BridgeTable] = None
) -> BlockDecomposition:
    """
    Decompose the path xi_0..xi_n into u = n // m full blocks and a tail.

    Raises:
        BlockTooLong: If n < 2m
        UnreachablePair: If an observed block endpoint pair has P^m = 0
    """
    m = ParameterValidator.validate_horizon(m, "m")
    states = np.asarray(path, dtype=np.int64)
    if states.ndim != 1 or np.any(states < 0) or np.any(states >= M.size):
        raise ShapeMismatch(f"path must be a sequence of states in [0,{M.size - 1}]", states.tolist())
    n = states.size - 1
    if n < 2 * m:
        raise BlockTooLong(f"BlockTooLong: path of length {n} is shorter than two blocks of {m}", (n, m))
    table = table if table is not None else bridge_sum_table(M, m)

    u = n // m
    values = M.f[states[1:]]
    block_sums = values[: u * m].reshape(u, m).sum(axis=1)
    starts = states[0: u * m: m]
    ends = states[m: u * m + 1: m]
    reachable = table.support_mask[starts, ends]
    if not np.all(reachable):
        k = int(np.flatnonzero(~reachable)[0])
        raise UnreachablePair(int(starts[k]), int(ends[k]), m)

    centering = table.values[starts, ends]
    root = math.sqrt(m)
    return BlockDecomposition(
        m=m,
        u=u,
        block_sums=block_sums,
        martingale_differences=(block_sums - centering) / root,
        remainders=centering / root,
        tail_sum=float(values[u * m:].sum()),
        tail_length=n - u * m,
    )


def remainder_second_moment(M: Model, m: int, u: int) -> float:
    """
    E(R_u(m)^2) exactly.

    With T = T_m the bridge numerator, a = pi^T T and h = T 1,
        m E(R_u^2) = u sum pi(x) T(x,y)^2 / P^m(x,y) + 2 sum_{d=1}^{u-1} (u-d) a P^{(d-1)m} h.

    Raises:
        ExactModeBudgetExceeded: If S > settings.EXACT_MAX_STATES or u*m > settings.EXACT_MAX_HORIZON
    """
    m = ParameterValidator.validate_horizon(m, "m")
    u = ParameterValidator.validate_horizon(u, "u")
    _check_exact_budget(M, m, u)

    numerator, transition = bridge_numerator(M, m)
    diagonal = endpoint_second_moment(M, numerator, transition)
    left = M.pi.probs @ numerator
    carried = numerator.sum(axis=1)
    terms = [u * diagonal]
    for d in range(1, u):
        terms.append(2.0 * (u - d) * float(left @ carried))
        carried = transition @ carried
    return math.fsum(terms) / m


def identity_terms(M: Model, m: int, u: int) -> tuple:
    """(lhs, rhs) = (E(S_{um}^2)/(um), centered_sigma(m) + E(R_u^2)/u)."""
    m = ParameterValidator.validate_horizon(m, "m")
    u = ParameterValidator.validate_horizon(u, "u")
    _check_exact_budget(M, m, u)
    lhs = partial_sum_variance(M, u * m) / (u * m)
    rhs = centered_sigma(M, m) + remainder_second_moment(M, m, u) / u
    return lhs, rhs


def identity_check(M: Model, m: int, u: int, tol: float = IDENTITY_TOL) -> float:
    """
    |lhs - rhs| of the block identity.

    Raises:
        IdentityViolated: If the residual exceeds tol
    """
    lhs, rhs = identity_terms(M, m, u)
    residual = abs(lhs - rhs)
    if residual > tol:
        raise IdentityViolated(
            f"IdentityViolated({residual:.3e}): lhs={lhs:.17g}, rhs={rhs:.17g} at m={m}, u={u}", residual
        )
    logger.debug(f"Block identity m={m}, u={u}: residual {residual:.3e}")
    return residual


def _martingale_times_remainder(M: Model, table: BridgeTable, paths: np.ndarray, m: int, u: int) -> np.ndarray:
    values = M.f[paths[:, 1: u * m + 1]]
    block_sums = values.reshape(paths.shape[0], u, m).sum(axis=2)
    starts = paths[:, 0: u * m: m]
    ends = paths[:, m: u * m + 1: m]
    centering = table.values[starts, ends]
    root = math.sqrt(m)
    martingale = ((block_sums - centering) / root).sum(axis=1)
    remainder = (centering / root).sum(axis=1)
    return martingale * remainder


def orthogonality_check(
    M: Model,
    m: int,
    u: int,
    mode: Literal["exact", "mc"] = "exact",
    reps: int = 100_000,
    seed: Optional[SeedSpec] = None,
    workers: Optional[int] = None,
) -> OrthogonalityResult:
    """
    E(M_u(m) R_u(m)).

    Exact mode enumerates every path of length u*m (S <= 4, u*m <= 10). Monte Carlo mode returns
    the sample mean with a normal-approximation half-width at settings.CONFIDENCE.
    """
    m = ParameterValidator.validate_horizon(m, "m")
    u = ParameterValidator.validate_horizon(u, "u")
    table = bridge_sum_table(M, m)

    if mode == "exact":
        check_enumeration_budget(M.size, u * m)
        ensemble = enumerate_paths(M, u * m)
        products = _martingale_times_remainder(M, table, ensemble.paths, m, u)
        value = ensemble.expect(products)
        logger.info(f"Exact E(M_u R_u) for m={m}, u={u}: {value:.3e}")
        return OrthogonalityResult(value=value, mode="exact")

    seed = seed or SeedSpec(settings.SEED)
    products = simulate(
        M, u * m, reps, seed, lambda paths: _martingale_times_remainder(M, table, paths, m, u), workers
    )
    ordered = np.sort(products)
    mean = math.fsum(ordered.tolist()) / ordered.size
    spread = math.sqrt(math.fsum(((ordered - mean) ** 2).tolist()) / (ordered.size - 1))
    half_width = float(special.ndtri(0.5 + settings.CONFIDENCE / 2.0)) * spread / math.sqrt(ordered.size)
    result = OrthogonalityResult(value=mean, mode="mc", half_width=half_width, reps=ordered.size)
    if not result.passed:
        logger.warning(f"Sampled E(M_u R_u) = {mean:.3e} excludes 0 (half-width {half_width:.3e})")
    return result


def martingale_difference_check(M: Model, m: int, u: int) -> float:
    """
    max over k and prefixes xi_0..xi_{km} of |E(D_k | prefix)|, by enumeration.
    """
    m = ParameterValidator.validate_horizon(m, "m")
    u = ParameterValidator.validate_horizon(u, "u")
    check_enumeration_budget(M.size, u * m)
    table = bridge_sum_table(M, m)
    ensemble = enumerate_paths(M, u * m)
    paths, probs = ensemble.paths, ensemble.probs

    worst = 0.0
    for k in range(u):
        block = M.f[paths[:, k * m + 1: (k + 1) * m + 1]].sum(axis=1)
        difference = (block - table.values[paths[:, k * m], paths[:, (k + 1) * m]]) / math.sqrt(m)
        _, prefix = np.unique(paths[:, : k * m + 1], axis=0, return_inverse=True)
        prefix = prefix.ravel()
        mass = np.bincount(prefix, weights=probs)
        weighted = np.bincount(prefix, weights=probs * difference)
        worst = max(worst, float(np.max(np.abs(weighted / mass))))
    return worst


def approximation_gap(M: Model, m: int, u: int) -> ApproximationGap:
    """
    (1/u) ||R_u(m)||^2 - (1/(um)) ||E(S_{um} | xi_0, xi_{um})||^2, cross-checked against
    centered_sigma(um) - centered_sigma(m).
    """
    m = ParameterValidator.validate_horizon(m, "m")
    u = ParameterValidator.validate_horizon(u, "u")
    _check_exact_budget(M, m, u)
    numerator, transition = bridge_numerator(M, u * m)
    projected = endpoint_second_moment(M, numerator, transition) / (u * m)
    value = remainder_second_moment(M, m, u) / u - projected
    cross_check = centered_sigma(M, u * m) - centered_sigma(M, m)
    return ApproximationGap(value=value, cross_check=cross_check)


def centered_sigma_grid(M: Model, block_lengths: Sequence[int]) -> CenteredSigmaGrid:
    """centered_sigma(m) over a grid of block lengths with the observed sup."""
    ms = tuple(ParameterValidator.validate_horizon(m, "m") for m in block_lengths)
    if not ms:
        raise ShapeMismatch("at least one block length is required", ms)
    values = tuple(centered_sigma(M, m) for m in ms)
    index = int(np.argmax(values))
    return CenteredSigmaGrid(block_lengths=ms, values=values, sup=values[index], argsup=ms[index])
