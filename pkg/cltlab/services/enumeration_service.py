"""
Enumeration Service
Exhaustive path enumeration for small chains: every path xi_0..xi_n with its exact
probability. Serves as the independent oracle for moments, bridge tables, mixing
coefficients and block orthogonality.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cltlab.config import settings
from cltlab.logging_config import get_logger
from cltlab.services.moments_service import Model
from cltlab.utils import ExactModeBudgetExceeded, ParameterValidator

logger = get_logger("cltlab.enumeration_service")


@dataclass(frozen=True)
class PathEnsemble:
    """All positive-probability paths of length n+1 (rows) and their probabilities."""

    paths: np.ndarray
    probs: np.ndarray

    @property
    def horizon(self) -> int:
        return self.paths.shape[1] - 1

    def expect(self, values: np.ndarray) -> float:
        """E(values) over the ensemble."""
        return math.fsum((self.probs * values).tolist())


def check_enumeration_budget(size: int, n: int, max_states: Optional[int] = None, max_horizon: Optional[int] = None) -> None:
    """
    Raises:
        ExactModeBudgetExceeded: If S or n is above the enumeration limits
    """
    max_states = settings.ENUMERATION_MAX_STATES if max_states is None else max_states
    max_horizon = settings.ENUMERATION_MAX_HORIZON if max_horizon is None else max_horizon
    if size > max_states or n > max_horizon:
        raise ExactModeBudgetExceeded(
            f"ExactModeBudgetExceeded: path enumeration needs S <= {max_states} and "
            f"n <= {max_horizon}, got S={size}, n={n}; use Monte Carlo mode instead",
            (size, n),
        )


def enumerate_paths(M: Model, n: int, max_horizon: Optional[int] = None) -> PathEnsemble:
    """
    Enumerate the positive-probability paths of the stationary chain in lexicographic order.

    Paths grow one step at a time and zero-probability prefixes are pruned before they are
    extended, so a sparse kernel never materializes all S^(n+1) sequences.

    Raises:
        ExactModeBudgetExceeded: If the enumeration budget is exceeded
    """
    n = ParameterValidator.validate_horizon(n, minimum=0)
    check_enumeration_budget(M.size, n, max_horizon=max_horizon)

    S = M.size
    states = np.arange(S, dtype=np.min_scalar_type(S - 1))
    charged = M.pi.probs > 0.0
    paths = states[charged][:, None]
    probs = M.pi.probs[charged]
    for _ in range(n):
        count = paths.shape[0]
        following = np.tile(states, count)
        extended = M.kernel.rows[np.repeat(paths[:, -1], S), following]
        probs = np.repeat(probs, S) * extended
        keep = probs > 0.0
        paths = np.column_stack([np.repeat(paths, S, axis=0)[keep], following[keep]])
        probs = probs[keep]

    logger.debug(f"Enumerated {paths.shape[0]} of {S ** (n + 1)} paths (S={S}, n={n})")
    return PathEnsemble(paths=paths, probs=probs)


def path_sums(M: Model, ensemble: PathEnsemble, start: int = 1, stop: Optional[int] = None) -> np.ndarray:
    """sum_{i=start}^{stop} f(xi_i) per path; stop defaults to the horizon."""
    stop = ensemble.horizon if stop is None else stop
    return M.f[ensemble.paths[:, start:stop + 1]].sum(axis=1)


def oracle_second_moment(M: Model, n: int) -> float:
    """E(S_n^2) by enumeration."""
    ensemble = enumerate_paths(M, n)
    return ensemble.expect(path_sums(M, ensemble) ** 2)


def oracle_bridge_table(M: Model, n: int) -> np.ndarray:
    """E(S_n | xi_0=x, xi_n=y) by enumeration; NaN where the pair has zero probability."""
    ensemble = enumerate_paths(M, n)
    sums = path_sums(M, ensemble)
    S = M.size
    mass = np.zeros((S, S))
    weighted = np.zeros((S, S))
    starts, ends = ensemble.paths[:, 0], ensemble.paths[:, -1]
    np.add.at(mass, (starts, ends), ensemble.probs)
    np.add.at(weighted, (starts, ends), ensemble.probs * sums)

    table = np.full((S, S), np.nan)
    charged = mass > 0.0
    table[charged] = weighted[charged] / mass[charged]
    return table


def oracle_conditional_second_moment(M: Model, n: int) -> float:
    """||E(S_n | xi_0, xi_n)||^2 by enumeration."""
    ensemble = enumerate_paths(M, n)
    table = oracle_bridge_table(M, n)
    centering = table[ensemble.paths[:, 0], ensemble.paths[:, -1]]
    return ensemble.expect(centering ** 2)


def oracle_x0_two_sided_norm(M: Model, n: int) -> float:
    """||E(X_0 | xi_{-n}, xi_n)||^2 from paths of length 2n with the middle state as xi_0."""
    ensemble = enumerate_paths(M, 2 * n)
    S = M.size
    starts, ends = ensemble.paths[:, 0], ensemble.paths[:, -1]
    middle = M.f[ensemble.paths[:, n]]
    mass = np.zeros((S, S))
    weighted = np.zeros((S, S))
    np.add.at(mass, (starts, ends), ensemble.probs)
    np.add.at(weighted, (starts, ends), ensemble.probs * middle)
    charged = mass > 0.0
    return math.fsum((weighted[charged] ** 2 / mass[charged]).tolist())


def oracle_beta(M: Model, n: int) -> float:
    """Half L1 distance between the law of (xi_0, xi_n) and pi x pi."""
    ensemble = enumerate_paths(M, n)
    S = M.size
    joint = np.zeros((S, S))
    np.add.at(joint, (ensemble.paths[:, 0], ensemble.paths[:, -1]), ensemble.probs)
    product = np.outer(M.pi.probs, M.pi.probs)
    return 0.5 * math.fsum(np.abs(joint - product).ravel().tolist())


def oracle_beta_two_sided(M: Model, n: int) -> float:
    """Half L1 distance between the law of (xi_{-n}, xi_0, xi_n) and law(xi_0) x law(xi_{-n}, xi_n)."""
    ensemble = enumerate_paths(M, 2 * n)
    S = M.size
    joint = np.zeros((S, S, S))
    paths = ensemble.paths
    np.add.at(joint, (paths[:, 0], paths[:, n], paths[:, -1]), ensemble.probs)
    outer = joint.sum(axis=1)
    product = M.pi.probs[None, :, None] * outer[:, None, :]
    return 0.5 * math.fsum(np.abs(joint - product).ravel().tolist())


def oracle_remainder_second_moment(M: Model, m: int, u: int) -> float:
    """E(R_u(m)^2) with R_u(m) = sum_k E(Y_k | xi_{km}, xi_{(k+1)m}) / sqrt(m), by enumeration."""
    ensemble = enumerate_paths(M, u * m)
    table = oracle_bridge_table(M, m)
    paths = ensemble.paths
    remainder = table[paths[:, 0: u * m: m], paths[:, m: u * m + 1: m]].sum(axis=1) / math.sqrt(m)
    return ensemble.expect(remainder ** 2)
