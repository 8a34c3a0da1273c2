"""
Kernel Service
Finite-state Markov kernels: validation, powers, stationary law, time reversal and
classification of ergodicity / total ergodicity / periodicity.
"""

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import List, Optional, Sequence

import networkx as nx
import numpy as np

from cltlab.config import settings
from cltlab.logging_config import get_logger
from cltlab.services.cache_service import PowerCache
from cltlab.utils import (
    EmptySupport,
    NegativeEntry,
    NoConvergence,
    NotStationary,
    ParameterValidator,
    RowSumDeviation,
    ShapeMismatch,
    ValidationError,
)

logger = get_logger("cltlab.kernel_service")


@dataclass(frozen=True, eq=False)
class Kernel:
    """
    Row-stochastic transition matrix over the states 0..size-1.

    Row x is the law of xi_1 given xi_0 = x. Construct through `validate_kernel`.
    """

    size: int
    rows: np.ndarray
    _cache: PowerCache = field(repr=False, compare=False)

    def power(self, k: int) -> np.ndarray:
        """Return P^k (read-only, cached)."""
        return self._cache.power(k)

    def cache_stats(self) -> dict:
        return self._cache.get_stats()


@dataclass(frozen=True, eq=False)
class StationaryLaw:
    """
    Invariant law pi of a kernel.

    `unique` is False when the kernel has several recurrent classes; `classes` lists them and
    `method` names the solver that produced `probs`.
    """

    probs: np.ndarray
    residual: float = 0.0
    unique: bool = True
    classes: tuple = ()
    method: str = "given"

    @property
    def size(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class ErgodicityReport:
    """Support-graph classification of a stationary chain."""

    support: frozenset
    irreducible: bool
    period: int
    totally_ergodic: bool
    classes: tuple = ()


def validate_kernel(rows: Sequence[Sequence[float]], tol: Optional[float] = None) -> Kernel:
    """
    Validate a square matrix of transition probabilities.

    Rows are never renormalized: near-stochastic input is rejected.

    Args:
        rows: S x S matrix
        tol: Row-sum tolerance (defaults to settings.ROW_SUM_TOL)

    Returns:
        Kernel

    Raises:
        ShapeMismatch: If the matrix is not square or empty
        NegativeEntry: If an entry is negative or not finite
        RowSumDeviation: If |sum_y rows[x][y] - 1| > tol
    """
    tol = settings.ROW_SUM_TOL if tol is None else tol
    try:
        matrix = np.array(rows, dtype=float)
    except (TypeError, ValueError) as e:
        raise ShapeMismatch(f"kernel rows do not form a numeric matrix: {e}", None) from e

    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
        raise ShapeMismatch(f"kernel must be a non-empty square matrix, got shape {matrix.shape}", matrix.shape)

    bad = np.argwhere(~np.isfinite(matrix) | (matrix < 0.0))
    if bad.size:
        x, y = (int(i) for i in bad[0])
        raise NegativeEntry(x, y, float(matrix[x, y]))

    for x in range(matrix.shape[0]):
        deviation = math.fsum(matrix[x].tolist()) - 1.0
        if abs(deviation) > tol:
            raise RowSumDeviation(x, deviation)

    matrix.setflags(write=False)
    size = matrix.shape[0]
    logger.debug(f"Validated kernel with {size} states")
    return Kernel(size=size, rows=matrix, _cache=PowerCache(matrix))


def kernel_power(P: Kernel, k: int) -> np.ndarray:
    """
    Exact matrix power P^k by iterative squaring; P^0 is the identity.

    Results are cached per (kernel, k).
    """
    k = ParameterValidator.validate_horizon(k, "k", minimum=0)
    return P.power(k)


def transition_graph(P: Kernel, states: Optional[Sequence[int]] = None) -> nx.DiGraph:
    """Directed graph {(x,y): P(x,y) > 0}, optionally restricted to `states`."""
    graph = nx.DiGraph()
    nodes = range(P.size) if states is None else sorted(states)
    graph.add_nodes_from(nodes)
    keep = set(nodes)
    for x, y in np.argwhere(P.rows > 0.0):
        if int(x) in keep and int(y) in keep:
            graph.add_edge(int(x), int(y))
    return graph


def recurrent_classes(P: Kernel) -> List[List[int]]:
    """
    Closed communicating classes of the kernel, each sorted, ordered by smallest state.
    """
    graph = transition_graph(P)
    classes = [sorted(c) for c in nx.attracting_components(graph)]
    return sorted(classes, key=lambda c: c[0])


def gth_solve(matrix: np.ndarray) -> np.ndarray:
    """
    Stationary distribution of an irreducible stochastic matrix by the
    Grassmann-Taksar-Heyman elimination (subtraction-free Gaussian elimination).
    """
    A = np.array(matrix, dtype=float)
    n = A.shape[0]
    x = np.zeros(n)

    for i in range(n - 1):
        scale = np.sum(A[i, i + 1:n])
        if scale <= 0:
            # A recurrent class sits inside {0..i}
            n = i + 1
            break
        A[i + 1:n, i] /= scale
        A[i + 1:n, i + 1:n] += np.outer(A[i + 1:n, i], A[i, i + 1:n])

    x[n - 1] = 1.0
    for i in range(n - 2, -1, -1):
        x[i] = np.dot(x[i + 1:n], A[i + 1:n, i])

    return x / np.sum(x)


def _l1_residual(P: Kernel, probs: np.ndarray) -> float:
    return float(np.sum(np.abs(probs @ P.rows - probs)))


def _power_iteration(P: Kernel, tol: float, start: np.ndarray, budget: int) -> np.ndarray:
    # Lazy chain (I+P)/2 has the same invariant laws and no periodicity
    probs = start.copy()
    for iteration in range(1, budget + 1):
        updated = 0.5 * (probs + probs @ P.rows)
        updated /= updated.sum()
        if float(np.sum(np.abs(updated - probs))) <= tol / 4 and _l1_residual(P, updated) <= tol:
            logger.debug(f"Power iteration converged after {iteration} iterations")
            return updated
        probs = updated
    raise NoConvergence(
        f"NoConvergence({budget}): power iteration did not reach tolerance {tol:g}", budget
    )


def stationary_law(P: Kernel, tol: Optional[float] = None) -> StationaryLaw:
    """
    Compute an invariant law pi with ||pi P - pi||_1 <= tol.

    Solver: GTH elimination on each recurrent class for S <= DIRECT_SOLVER_MAX_STATES, power
    iteration on the lazy chain above. When several recurrent classes exist the direct solver
    gives each class equal weight and the result is flagged non-unique.

    Raises:
        NoConvergence: If the iterative solver exceeds its budget
    """
    tol = settings.STATIONARY_TOL if tol is None else ParameterValidator.validate_positive(tol, "tol")
    classes = recurrent_classes(P)
    unique = len(classes) == 1

    if P.size <= settings.DIRECT_SOLVER_MAX_STATES:
        probs = np.zeros(P.size)
        weight = 1.0 / len(classes)
        for states in classes:
            block = P.rows[np.ix_(states, states)]
            probs[states] = weight * gth_solve(block)
        method = "gth"
        if _l1_residual(P, probs) > tol:
            logger.warning("Direct solve residual above tolerance; refining by power iteration")
            probs = _power_iteration(P, tol, probs, settings.POWER_ITERATION_BUDGET)
            method = "gth+power"
    else:
        start = np.full(P.size, 1.0 / P.size)
        probs = _power_iteration(P, tol, start, settings.POWER_ITERATION_BUDGET)
        method = "power"

    if not unique:
        logger.warning(f"Invariant law is not unique: {len(classes)} recurrent classes")

    probs.setflags(write=False)
    residual = _l1_residual(P, probs)
    logger.info(f"Stationary law ({method}) for {P.size} states, residual {residual:.3e}")
    return StationaryLaw(
        probs=probs,
        residual=residual,
        unique=unique,
        classes=tuple(tuple(c) for c in classes),
        method=method,
    )


def as_stationary_law(P: Kernel, probs: Sequence[float], tol: Optional[float] = None) -> StationaryLaw:
    """
    Wrap a given probability vector as a StationaryLaw after checking invariance.

    Raises:
        ShapeMismatch, ValidationError: If the vector is not a probability vector of matching size
        NotStationary: If ||pi P - pi||_1 exceeds the tolerance
    """
    tol = settings.STATIONARY_TOL if tol is None else tol
    vector = np.array(probs, dtype=float)
    if vector.shape != (P.size,):
        raise ShapeMismatch(f"pi has shape {vector.shape}, kernel has {P.size} states", vector.shape)
    if np.any(~np.isfinite(vector)) or np.any(vector < 0):
        raise ValidationError(f"pi entries must be >= 0, got {vector.tolist()}", vector, "pi >= 0")
    if abs(math.fsum(vector.tolist()) - 1.0) > settings.ROW_SUM_TOL:
        raise ValidationError(f"pi sums to {math.fsum(vector.tolist())!r}", vector, "sum pi = 1")
    residual = _l1_residual(P, vector)
    if residual > max(tol, 1e-10):
        raise NotStationary(f"||pi P - pi||_1 = {residual:.3e} exceeds tolerance", residual)
    vector.setflags(write=False)
    classes = recurrent_classes(P)
    charged = [c for c in classes if vector[c].sum() > 0]
    return StationaryLaw(
        probs=vector,
        residual=residual,
        unique=len(classes) == 1,
        classes=tuple(tuple(c) for c in charged),
        method="given",
    )


def _class_period(graph: nx.DiGraph, states: Sequence[int]) -> int:
    root = states[0]
    levels = nx.single_source_shortest_path_length(graph, root)
    period = 0
    for u, v in graph.subgraph(states).edges():
        period = math.gcd(period, levels[u] + 1 - levels[v])
    return abs(period) if period else 1


def ergodicity_report(P: Kernel, pi: StationaryLaw) -> ErgodicityReport:
    """
    Classify the stationary chain on the pi-support.

    Irreducible when the support graph is strongly connected; the period is the gcd of cycle
    lengths over the support; totally ergodic when irreducible and aperiodic.

    Raises:
        EmptySupport: If pi puts no mass anywhere
    """
    if pi.size != P.size:
        raise ShapeMismatch(f"pi has {pi.size} entries, kernel has {P.size} states", pi.size)
    support = [int(x) for x in np.flatnonzero(pi.probs > 0.0)]
    if not support:
        raise EmptySupport("EmptySupport: stationary law has no positive entry", pi.probs.tolist())

    graph = transition_graph(P, support)
    components = sorted((sorted(c) for c in nx.strongly_connected_components(graph)), key=lambda c: c[0])
    irreducible = len(components) == 1
    period = reduce(math.gcd, (_class_period(graph, c) for c in components))

    report = ErgodicityReport(
        support=frozenset(support),
        irreducible=irreducible,
        period=period,
        totally_ergodic=irreducible and period == 1,
        classes=tuple(tuple(c) for c in components),
    )
    logger.info(
        f"Ergodicity: irreducible={report.irreducible}, period={report.period}, "
        f"totally_ergodic={report.totally_ergodic}"
    )
    return report


def reversed_kernel(P: Kernel, pi: StationaryLaw) -> Kernel:
    """
    Time reversal P*(y,x) = pi(x) P(x,y) / pi(y) on the pi-support; off-support rows are identity.
    """
    probs = pi.probs
    rows = np.eye(P.size)
    support = probs > 0.0
    joint = probs[:, None] * P.rows
    rows[support] = (joint.T[support]) / probs[support, None]
    # Rows are stochastic up to rounding; renormalize the rounding only
    rows[support] /= rows[support].sum(axis=1, keepdims=True)
    return validate_kernel(rows, tol=1e-9)
