"""
Moments Service
Exact second-moment theory of the additive functional S_n = X_1 + ... + X_n, X_i = f(xi_i):
autocovariances, E(S_n^2) profiles, the sup_n E(S_n^2)/n check and the series variance sigma^2.

Also owns the Model type and its JSON documents.
"""

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from cltlab.config import settings
from cltlab.logging_config import get_logger
from cltlab.schemas import KernelDocument, ModelDocument
from cltlab.services.kernel_service import (
    Kernel,
    StationaryLaw,
    as_stationary_law,
    ergodicity_report,
    stationary_law,
    validate_kernel,
)
from cltlab.utils import (
    NonSummable,
    ObservableNotCentered,
    ParameterValidator,
    ShapeMismatch,
)

logger = get_logger("cltlab.moments_service")

# Window used to measure the geometric decay ratio of autocovariances
_RATIO_WINDOW = 16


@dataclass(frozen=True, eq=False)
class Model:
    """A stationary chain (kernel, pi) together with a pi-centered observable f."""

    kernel: Kernel
    pi: StationaryLaw
    f: np.ndarray

    @property
    def size(self) -> int:
        return self.kernel.size


@dataclass(frozen=True)
class VarianceProfile:
    """v_n = E(S_n^2)/n for n = 1..N."""

    values: np.ndarray
    sup: float
    argsup: int
    tail_converged: bool
    converged_estimate: Optional[float] = None

    @property
    def horizon(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class SeriesEstimate:
    """Truncated sigma^2 series with its truncation index and measured decay ratio."""

    value: float
    truncation_index: int
    ratio: float
    tail_bound: float

    def __float__(self) -> float:
        return self.value


def center_observable(raw_f: Sequence[float], pi: StationaryLaw) -> np.ndarray:
    """Return raw_f - sum_x pi(x) raw_f(x)."""
    values = np.asarray(raw_f, dtype=float)
    if values.shape != (pi.size,):
        raise ShapeMismatch(f"f has shape {values.shape}, pi has {pi.size} entries", values.shape)
    mean = math.fsum((pi.probs * values).tolist())
    return values - mean


def build_model(
    kernel: Kernel,
    f: Sequence[float],
    pi: Optional[Union[StationaryLaw, Sequence[float]]] = None,
    center: bool = False,
    tol: Optional[float] = None,
) -> Model:
    """
    Assemble a Model, computing pi when it is not given.

    Args:
        kernel: Validated kernel
        f: Observable values, one per state
        pi: Stationary law or probability vector (recomputed when None)
        center: Subtract the pi-mean of f instead of rejecting uncentered input
        tol: Centering tolerance (defaults to settings.CENTERING_TOL)

    Raises:
        ShapeMismatch: If f does not have one value per state
        NotStationary: If a given pi is not invariant
        ObservableNotCentered: If |sum pi f| > tol and center is False
    """
    tol = settings.CENTERING_TOL if tol is None else tol
    if pi is None:
        law = stationary_law(kernel)
    elif isinstance(pi, StationaryLaw):
        law = pi
    else:
        law = as_stationary_law(kernel, pi)

    values = np.asarray(f, dtype=float)
    if values.shape != (kernel.size,) or not np.all(np.isfinite(values)):
        raise ShapeMismatch(f"f must hold {kernel.size} finite values, got shape {values.shape}", values.shape)

    if center:
        values = center_observable(values, law)
    else:
        mean = math.fsum((law.probs * values).tolist())
        if abs(mean) > tol:
            raise ObservableNotCentered(
                f"ObservableNotCentered: sum pi f = {mean:.17g} exceeds {tol:g}", mean
            )
    values.setflags(write=False)
    return Model(kernel=kernel, pi=law, f=values)


# ==================== JSON documents ====================


def load_kernel(document: Union[KernelDocument, Dict[str, Any]]) -> Kernel:
    """Build a Kernel from {"size": S, "rows": [...]}."""
    if not isinstance(document, KernelDocument):
        document = KernelDocument.model_validate(document)
    return validate_kernel(document.rows)


def load_model(document: Union[ModelDocument, Dict[str, Any]], center: bool = False) -> Model:
    """Build a Model from {"kernel": ..., "pi": [...], "f": [...]}; pi is optional."""
    if not isinstance(document, ModelDocument):
        document = ModelDocument.model_validate(document)
    kernel = load_kernel(document.kernel)
    return build_model(kernel, document.f, pi=document.pi, center=center)


def dump_model(M: Model) -> Dict[str, Any]:
    """Model document with floats kept at full binary64 precision."""
    return {
        "kernel": {"size": M.size, "rows": M.kernel.rows.tolist()},
        "pi": M.pi.probs.tolist(),
        "f": M.f.tolist(),
    }


def model_checksum(M: Model) -> str:
    """SHA-256 of the canonical model JSON."""
    canonical = json.dumps(dump_model(M), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ==================== Second moments ====================


def autocovariance(M: Model, k: int) -> float:
    """E(X_0 X_k) = sum_x pi(x) f(x) (P^k f)(x)."""
    k = ParameterValidator.validate_horizon(k, "k", minimum=0)
    forward = M.kernel.power(k) @ M.f
    return math.fsum((M.pi.probs * M.f * forward).tolist())


def autocovariances(M: Model, K: int) -> np.ndarray:
    """c_0..c_{K-1} by repeated application of P (one matrix-vector product per lag)."""
    K = ParameterValidator.validate_horizon(K, "K")
    weighted = M.pi.probs * M.f
    out = np.empty(K)
    v = np.array(M.f, dtype=float)
    for k in range(K):
        out[k] = float(weighted @ v)
        v = M.kernel.rows @ v
    return out


def partial_sum_variance(M: Model, n: int) -> float:
    """
    E(S_n^2) = n E(X_0^2) + 2 sum_{k=1}^{n-1} (n-k) E(X_0 X_k).
    """
    n = ParameterValidator.validate_horizon(n)
    c = autocovariances(M, n)
    terms = [n * c[0]] + [2.0 * (n - k) * c[k] for k in range(1, n)]
    return math.fsum(terms)


def second_moment_profile(M: Model, N: int) -> np.ndarray:
    """
    E(S_n^2) for n = 1..N in one sweep (index n-1 holds E(S_n^2)).
    """
    N = ParameterValidator.validate_horizon(N, "N")
    c = autocovariances(M, N)
    n = np.arange(1, N + 1, dtype=float)
    profile = n * c[0]
    if N > 1:
        lags = np.arange(1, N, dtype=float)
        running = np.cumsum(c[1:])
        weighted = np.cumsum(lags * c[1:])
        # n = 2..N uses lags 1..n-1
        profile[1:] += 2.0 * (n[1:] * running - weighted)
    return profile


def varsup_profile(M: Model, N: int, tail_tol: Optional[float] = None) -> VarianceProfile:
    """
    Profile of E(S_n^2)/n over n = 1..N with its supremum.

    The tail flag is set when |v_N - v_{N/2}| < tail_tol; it is reported, never used to gate.
    """
    tail_tol = settings.PROFILE_TAIL_TOL if tail_tol is None else tail_tol
    profile = second_moment_profile(M, N)
    values = profile / np.arange(1, N + 1, dtype=float)
    # Rounding can leave tiny negatives for degenerate observables
    values = np.where(np.abs(values) < 1e-13, np.abs(values), values)
    values.setflags(write=False)

    argsup = int(np.argmax(values))
    half = max(N // 2, 1)
    tail_converged = N >= 2 and abs(values[N - 1] - values[half - 1]) < tail_tol
    logger.debug(f"Variance profile to N={N}: sup={values[argsup]:.6g} at n={argsup + 1}")
    return VarianceProfile(
        values=values,
        sup=float(values[argsup]),
        argsup=argsup + 1,
        tail_converged=bool(tail_converged),
        converged_estimate=float(values[N - 1]) if tail_converged else None,
    )


def sigma_series(M: Model, tol: Optional[float] = None, budget: Optional[int] = None) -> SeriesEstimate:
    """
    sigma^2 = E(X_0^2) + 2 sum_{k>=1} E(X_0 X_k), truncated once the geometric bound on the
    remaining terms drops below tol.

    The decay ratio r is measured over two consecutive windows of lags; the tail after lag k is
    bounded by 2 * max|c| (last window) * r / (1 - r).

    Raises:
        NonSummable: If the chain is not totally ergodic, or the bound never falls below tol
    """
    tol = settings.SIGMA_SERIES_TOL if tol is None else ParameterValidator.validate_positive(tol, "tol")
    budget = settings.SERIES_BUDGET if budget is None else budget

    report = ergodicity_report(M.kernel, M.pi)
    if not report.totally_ergodic:
        raise NonSummable(
            f"NonSummable: chain is not totally ergodic (irreducible={report.irreducible}, "
            f"period={report.period})",
            report.period,
        )

    weighted = M.pi.probs * M.f
    v = np.array(M.f, dtype=float)
    c0 = float(weighted @ v)
    terms = [c0]
    magnitudes = []
    ratio = 0.0
    for k in range(1, budget + 1):
        v = M.kernel.rows @ v
        c = float(weighted @ v)
        terms.append(2.0 * c)
        magnitudes.append(abs(c))
        if k < 2 * _RATIO_WINDOW:
            continue

        recent = max(magnitudes[-_RATIO_WINDOW:])
        if recent == 0.0:
            return _series_result(terms, k, 0.0, 0.0)
        earlier = max(magnitudes[-2 * _RATIO_WINDOW:-_RATIO_WINDOW])
        if earlier == 0.0 or recent >= earlier:
            # Negligible terms are rounding noise; accept when the whole window is below tol
            if recent * _RATIO_WINDOW < tol * 1e-3:
                return _series_result(terms, k, 1.0, recent * _RATIO_WINDOW)
            continue
        ratio = (recent / earlier) ** (1.0 / _RATIO_WINDOW)
        bound = 2.0 * recent * ratio / (1.0 - ratio)
        if bound < tol:
            return _series_result(terms, k, ratio, bound)

    raise NonSummable(
        f"NonSummable: autocovariances did not decay below {tol:g} within {budget} lags", budget
    )


def _series_result(terms: list, k: int, ratio: float, bound: float) -> SeriesEstimate:
    value = math.fsum(terms)
    logger.info(f"sigma^2 series = {value:.12g} (truncated at k={k}, ratio {ratio:.4g})")
    return SeriesEstimate(value=value, truncation_index=k, ratio=ratio, tail_bound=bound)
