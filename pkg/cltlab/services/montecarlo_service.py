"""
Monte Carlo Service
Seeded simulation of the stationary chain and distributional checks of the random-centering
CLT: endpoint-centered and uncentered statistics, the E|S_n| variance functional and the
variance-mixture limit of reducible chains.

Seeding contract: replication r draws its uniforms from a Philox generator keyed by the first
16 bytes of SHA-256(master as LE uint64 || r as LE uint64). Replications are batched for
vectorized stepping, but every replication consumes only its own stream, so results do not
depend on batch size or worker count.
"""

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from cltlab.config import settings
from cltlab.logging_config import get_logger
from cltlab.schemas import ExperimentReport
from cltlab.services.bridge_service import BridgeTable, centered_sigma
from cltlab.services.kernel_service import as_stationary_law, validate_kernel
from cltlab.services.moments_service import (
    Model,
    build_model,
    center_observable,
    model_checksum,
    partial_sum_variance,
    sigma_series,
)
from cltlab.utils import (
    ExactModeBudgetExceeded,
    MissingBridge,
    NonSummable,
    NotLattice,
    ParameterValidator,
    UnreachablePair,
    ValidationError,
)

logger = get_logger("cltlab.montecarlo_service")

Centering = Literal["endpoint", "none"]

_DEGENERATE_SIGMA2 = 1e-12

# Finer steps are treated as rounding artifacts of incommensurable values
_MAX_LATTICE_POINTS = 1_000_000


@dataclass(frozen=True)
class SeedSpec:
    """Master seed and the per-replication stream derivation."""

    master: int

    def __post_init__(self):
        if isinstance(self.master, bool) or not isinstance(self.master, (int, np.integer)):
            raise ValidationError(f"seed must be an integer, got {self.master!r}", self.master, "seed integer")
        if not 0 <= int(self.master) < 2**64:
            raise ValidationError(f"seed must fit in 64 bits, got {self.master}", self.master, "0 <= seed < 2^64")

    def stream_key(self, replication: int) -> bytes:
        payload = int(self.master).to_bytes(8, "little") + int(replication).to_bytes(8, "little")
        return hashlib.sha256(payload).digest()[:16]

    def generator(self, replication: int) -> np.random.Generator:
        key = np.frombuffer(self.stream_key(replication), dtype="<u8").astype(np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


class ChainSampler:
    """
    Inverse-CDF sampler over the fixed state order 0..S-1.

    Cumulative rows are clipped to exactly 1.0 from the last positive-probability state on, so
    a uniform in [0,1) never selects a zero-probability state.
    """

    def __init__(self, M: Model):
        self.size = M.size
        self._initial = self._clipped_cumsum(M.pi.probs[None, :])[0]
        cumulative = self._clipped_cumsum(M.kernel.rows)
        self.last = np.array([np.flatnonzero(row > 0.0)[-1] for row in M.kernel.rows], dtype=np.int64)
        # Row x lives in [2x, 2x+1], so one sorted array serves every current state
        self._offset = 2.0 * np.arange(self.size)
        self._flat = (cumulative + self._offset[:, None]).ravel()

    @staticmethod
    def _clipped_cumsum(rows: np.ndarray) -> np.ndarray:
        cumulative = np.cumsum(rows, axis=1)
        for x in range(rows.shape[0]):
            positive = np.flatnonzero(rows[x] > 0.0)
            if positive.size:
                cumulative[x, positive[-1]:] = 1.0
        return cumulative

    def initial(self, u: np.ndarray) -> np.ndarray:
        return np.searchsorted(self._initial, u, side="right")

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        position = np.searchsorted(self._flat, u + self._offset[states], side="right")
        # u + 2x can round onto 2x + 1, one past the end of row x
        return np.minimum(position - states * self.size, self.last[states])

    def paths(self, uniforms: np.ndarray, start: Optional[int] = None) -> np.ndarray:
        """Paths of length n+1 from a (batch, n+1) array of uniforms."""
        batch, length = uniforms.shape
        out = np.empty((batch, length), dtype=np.int64)
        out[:, 0] = self.initial(uniforms[:, 0]) if start is None else start
        for i in range(1, length):
            out[:, i] = self.step(out[:, i - 1], uniforms[:, i])
        return out


@dataclass(frozen=True)
class MixtureCDF:
    """t -> sum_i w_i Phi(t / sigma_i); a zero-variance component is a unit step at 0."""

    weights: Tuple[float, ...]
    variances: Tuple[float, ...]
    provenance: str = "mixture"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for weight, variance in zip(self.weights, self.variances):
            if variance <= _DEGENERATE_SIGMA2:
                total = total + weight * (t >= 0.0)
            else:
                total = total + weight * special.ndtr(t / math.sqrt(variance))
        return total

    @property
    def degenerate(self) -> bool:
        return all(v <= _DEGENERATE_SIGMA2 for v in self.variances)

    @property
    def variance(self) -> float:
        return math.fsum(w * v for w, v in zip(self.weights, self.variances))

    @property
    def label(self) -> str:
        return "+".join(f"{w:.6g}*N(0,{v:.6g})" for w, v in zip(self.weights, self.variances))


@dataclass(frozen=True)
class AbsMeanEstimate:
    """pi (E|S_n|)^2 / (2n), exact or with a Monte Carlo half-width."""

    value: float
    mode: str
    half_width: float = 0.0
    abs_mean: float = 0.0

    def __float__(self) -> float:
        return self.value


def mixture_reference(components: Sequence[Tuple[float, float]]) -> MixtureCDF:
    """
    Variance mixture of centered normals.

    Raises:
        BadWeights: If weights are not positive or do not sum to 1
        ValidationError: If a variance is negative
    """
    weights = ParameterValidator.validate_weights([w for w, _ in components], tol=1e-9)
    variances = [float(v) for _, v in components]
    for v in variances:
        if not math.isfinite(v) or v < 0.0:
            raise ValidationError(f"component variance must be >= 0, got {v!r}", v, "sigma_i^2 >= 0")
    return MixtureCDF(weights=tuple(float(w) for w in weights), variances=tuple(variances))


def class_mixture_reference(M: Model, n: int) -> MixtureCDF:
    """
    Mixture reference for a reducible chain: one component per charged recurrent class, weight
    pi(class), variance centered_sigma(n) of the class restriction with f re-centered in the class.
    """
    components = []
    for states in M.pi.classes:
        states = list(states)
        mass = math.fsum(M.pi.probs[states].tolist())
        if mass <= 0.0:
            continue
        kernel = validate_kernel(M.kernel.rows[np.ix_(states, states)], tol=1e-9)
        law = as_stationary_law(kernel, M.pi.probs[states] / mass, tol=1e-9)
        sub = build_model(kernel, center_observable(M.f[states], law), pi=law)
        components.append((mass, centered_sigma(sub, n)))
    total = math.fsum(w for w, _ in components)
    mixture = mixture_reference([(w / total, v) for w, v in components])
    logger.info(f"Class mixture reference: {mixture.label}")
    return MixtureCDF(mixture.weights, mixture.variances, provenance="class_mixture")


# ==================== Simulation engine ====================


def _chunks(reps: int, batch: int) -> List[Tuple[int, int]]:
    return [(start, min(start + batch, reps)) for start in range(0, reps, batch)]


def simulate(
    M: Model,
    n: int,
    reps: int,
    seed: SeedSpec,
    reducer: Callable[[np.ndarray], np.ndarray],
    workers: Optional[int] = None,
) -> np.ndarray:
    """
    Run `reps` replications of paths xi_0..xi_n and reduce each batch of paths to one value per
    replication. Output is ordered by replication index.
    """
    n = ParameterValidator.validate_horizon(n)
    reps = ParameterValidator.validate_horizon(reps, "reps")
    workers = workers or settings.WORKERS
    sampler = ChainSampler(M)

    def run_chunk(bounds: Tuple[int, int]) -> np.ndarray:
        first, last = bounds
        uniforms = np.stack([seed.generator(r).random(n + 1) for r in range(first, last)])
        return np.asarray(reducer(sampler.paths(uniforms)), dtype=float)

    chunks = _chunks(reps, settings.MC_BATCH_SIZE)
    logger.debug(f"Simulating {reps} paths of length {n} in {len(chunks)} batches, {workers} workers")
    if workers == 1:
        results = [run_chunk(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run_chunk, chunks))
    return np.concatenate(results)


def sample_path(M: Model, n: int, seed: SeedSpec, replication: int = 0, start: Optional[int] = None) -> np.ndarray:
    """
    Path xi_0..xi_n of stationary replication `replication`; `start` forces xi_0.
    """
    n = ParameterValidator.validate_horizon(n)
    if start is not None:
        start = ParameterValidator.validate_state(start, M.size, "start")
    uniforms = seed.generator(replication).random(n + 1)[None, :]
    return ChainSampler(M).paths(uniforms, start=start)[0]


# ==================== CLT experiments ====================


def _quantile_z(confidence: float) -> float:
    return float(special.ndtri(0.5 + confidence / 2.0))


def _endpoint_centering(table: BridgeTable, paths: np.ndarray) -> np.ndarray:
    starts, ends = paths[:, 0], paths[:, -1]
    reachable = table.support_mask[starts, ends]
    if not np.all(reachable):
        index = int(np.flatnonzero(~reachable)[0])
        raise UnreachablePair(int(starts[index]), int(ends[index]), table.n)
    return table.values[starts, ends]


def clt_statistics(
    M: Model,
    n: int,
    reps: int,
    seed: SeedSpec,
    centering: Centering = "endpoint",
    table: Optional[BridgeTable] = None,
    workers: Optional[int] = None,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Per-replication statistic T_r = (S_n - B_n(xi_0, xi_n))/sqrt(n), or S_n/sqrt(n) without
    centering, together with the sampled centering values B_n(xi_0, xi_n).

    Raises:
        MissingBridge: If centering is "endpoint" and no table for horizon n is given
    """
    if centering == "endpoint" and (table is None or table.n != n):
        raise MissingBridge(
            f"MissingBridge: endpoint centering at n={n} requires a bridge table for horizon {n}",
            None if table is None else table.n,
        )
    root = math.sqrt(n)

    def reducer(paths: np.ndarray) -> np.ndarray:
        sums = M.f[paths[:, 1:]].sum(axis=1)
        if centering == "none":
            return np.stack([sums / root, np.zeros_like(sums)], axis=1)
        shift = _endpoint_centering(table, paths)
        return np.stack([(sums - shift) / root, shift], axis=1)

    pairs = simulate(M, n, reps, seed, reducer, workers).reshape(-1, 2)
    if centering == "none":
        return pairs[:, 0], None
    return pairs[:, 0], pairs[:, 1]


def _mean_and_half_width(values: np.ndarray, z: float) -> Tuple[float, float, float]:
    ordered = np.sort(values)
    count = ordered.size
    mean = math.fsum(ordered.tolist()) / count
    variance = math.fsum(((ordered - mean) ** 2).tolist()) / (count - 1)
    return mean, variance, z * math.sqrt(variance / count)


def reference_law(M: Model, n: int, centering: Centering) -> Tuple[MixtureCDF, str]:
    """
    Reference law for the statistic: centered_sigma(n) (class mixture on reducible chains) under
    endpoint centering; sigma_series without centering, falling back to E(S_n^2)/n.
    """
    if centering == "endpoint":
        if len(M.pi.classes) > 1:
            mixture = class_mixture_reference(M, n)
            return mixture, mixture.provenance
        return MixtureCDF((1.0,), (centered_sigma(M, n),)), "centered_sigma"
    try:
        return MixtureCDF((1.0,), (sigma_series(M).value,)), "sigma_series"
    except NonSummable:
        logger.warning("sigma^2 series unavailable; using E(S_n^2)/n as reference variance")
        return MixtureCDF((1.0,), (max(partial_sum_variance(M, n) / n, 0.0),)), "partial_sum_variance"


def summarize_experiment(
    M: Model,
    n: int,
    seed: SeedSpec,
    centering: Centering,
    statistics: np.ndarray,
    shifts: Optional[np.ndarray],
    reference: MixtureCDF,
    provenance: str,
) -> ExperimentReport:
    """Build the ExperimentReport from sampled statistics and a reference law."""
    z = _quantile_z(settings.CONFIDENCE)
    reps = statistics.size
    ordered = np.sort(statistics)
    mean, variance, mean_half_width = _mean_and_half_width(ordered, z)
    fourth = math.fsum(((ordered - mean) ** 4).tolist()) / reps
    variance_half_width = z * math.sqrt(max(fourth - variance * variance, 0.0) / reps)

    if reference.degenerate:
        max_abs = float(np.max(np.abs(ordered)))
        ks_distance = None
        within = max_abs <= 1e-8
    else:
        max_abs = None
        ks_distance = float(stats.kstest(ordered, reference).statistic)
        within = ks_distance <= settings.KS_THRESHOLD

    centering_mean = centering_half_width = None
    if shifts is not None:
        centering_mean, _, centering_half_width = _mean_and_half_width(shifts, z)

    report = ExperimentReport(
        model_checksum=model_checksum(M),
        n=n,
        reps=reps,
        centering=centering,
        master_seed=int(seed.master),
        mean=mean,
        mean_half_width=mean_half_width,
        variance=variance,
        variance_half_width=variance_half_width,
        degenerate=reference.degenerate,
        ks_distance=ks_distance,
        max_abs_statistic=max_abs,
        ks_threshold=settings.KS_THRESHOLD,
        within_threshold=bool(within),
        reference_sigma2=reference.variance,
        reference_provenance=provenance,
        reference_label=reference.label,
        centering_mean=centering_mean,
        centering_half_width=centering_half_width,
        confidence=settings.CONFIDENCE,
    )
    if within:
        logger.info(f"CLT experiment n={n}, reps={reps}: within threshold")
    else:
        logger.warning(
            f"CLT experiment n={n}, reps={reps}: outside threshold "
            f"(ks={ks_distance}, max|T|={max_abs})"
        )
    return report


def clt_experiment(
    M: Model,
    n: int,
    reps: int,
    seed: SeedSpec,
    centering: Centering = "endpoint",
    table: Optional[BridgeTable] = None,
    reference: Optional[MixtureCDF] = None,
    workers: Optional[int] = None,
) -> ExperimentReport:
    """
    Simulate the endpoint-centered (or uncentered) statistic and compare it with its reference
    law by the Kolmogorov-Smirnov distance; a degenerate reference reports max|T| instead.

    Raises:
        MissingBridge: If centering is "endpoint" without a bridge table for horizon n
    """
    reps = ParameterValidator.validate_horizon(reps, "reps", minimum=100)
    statistics, shifts = clt_statistics(M, n, reps, seed, centering, table, workers)
    if reference is None:
        reference, provenance = reference_law(M, n, centering)
    else:
        provenance = reference.provenance
    return summarize_experiment(M, n, seed, centering, statistics, shifts, reference, provenance)


# ==================== E|S_n| functional ====================


def _float_gcd(a: float, b: float, tol: float) -> float:
    while b > tol:
        remainder = math.fmod(a, b)
        if b - remainder <= tol:
            remainder = 0.0
        a, b = b, remainder
    return a


def lattice_decomposition(f: np.ndarray) -> Tuple[float, float, np.ndarray]:
    """
    Write f = c + h k with k non-negative integers.

    Raises:
        NotLattice: If no common step explains every value within rounding
    """
    values = np.asarray(f, dtype=float)
    base = float(values.min())
    offsets = values - base
    span = float(offsets.max())
    if span == 0.0:
        return base, 1.0, np.zeros(values.size, dtype=np.int64)

    tol = 1e-9 * max(1.0, span)
    step = 0.0
    for d in np.unique(offsets[offsets > tol]):
        step = float(d) if step == 0.0 else _float_gcd(max(step, float(d)), min(step, float(d)), tol)
    if step <= tol or span / step > _MAX_LATTICE_POINTS:
        raise NotLattice(f"NotLattice: values {values.tolist()} share no common step", values.tolist())

    k = np.rint(offsets / step).astype(np.int64)
    if np.max(np.abs(base + step * k - values)) > tol:
        raise NotLattice(f"NotLattice: values {values.tolist()} are not on a lattice", values.tolist())
    return base, step, k


def abs_mean_sigma(
    M: Model,
    n: int,
    mode: Literal["exact", "mc"] = "exact",
    reps: Optional[int] = None,
    seed: Optional[SeedSpec] = None,
    workers: Optional[int] = None,
) -> AbsMeanEstimate:
    """
    pi (E|S_n|)^2 / (2n).

    Exact mode runs a dynamic program over (state, lattice index of S_n); Monte Carlo mode
    returns the plug-in estimate with a delta-method half-width.

    Raises:
        NotLattice: Exact mode with a non-lattice observable
        ExactModeBudgetExceeded: If n * S^2 * (lattice width) > settings.LATTICE_DP_BUDGET
    """
    n = ParameterValidator.validate_horizon(n)
    if mode == "mc":
        reps = ParameterValidator.validate_horizon(reps or 10_000, "reps")
        seed = seed or SeedSpec(settings.SEED)
        sums = simulate(M, n, reps, seed, lambda paths: M.f[paths[:, 1:]].sum(axis=1), workers)
        z = _quantile_z(settings.CONFIDENCE)
        mean, variance, half = _mean_and_half_width(np.abs(sums), z)
        value = math.pi * mean * mean / (2 * n)
        return AbsMeanEstimate(value=value, mode="mc", half_width=math.pi * mean / n * half, abs_mean=mean)

    base, step, k = lattice_decomposition(M.f)
    width = n * int(k.max()) + 1
    cost = n * M.size * M.size * width
    if cost > settings.LATTICE_DP_BUDGET:
        raise ExactModeBudgetExceeded(
            f"ExactModeBudgetExceeded: lattice DP cost {cost} exceeds {settings.LATTICE_DP_BUDGET}; "
            f"use mode=mc",
            cost,
        )

    transposed = M.kernel.rows.T
    law = np.zeros((M.size, width))
    law[:, 0] = M.pi.probs
    active = 1
    top = int(k.max())
    for _ in range(n):
        moved = transposed @ law[:, :active]
        law[:, : active + top] = 0.0
        for y in range(M.size):
            law[y, k[y]: k[y] + active] = moved[y]
        active += top

    index_mass = law.sum(axis=0)
    sums = n * base + step * np.arange(width)
    abs_mean = math.fsum((index_mass * np.abs(sums)).tolist())
    value = math.pi * abs_mean * abs_mean / (2 * n)
    logger.info(f"Exact E|S_n| at n={n}: {abs_mean:.12g}, functional {value:.12g}")
    return AbsMeanEstimate(value=value, mode="exact", abs_mean=abs_mean)
