"""
Mixing Service
Exact dependence coefficients of a finite stationary chain (absolute regularity beta_n, the
two-sided coefficient between xi_0 and (xi_{-n}, xi_n), two-point maximal correlation rho_n),
quantile integrals of |X_0|, and the CLT condition table with PASS / INCONCLUSIVE / FAILED
verdicts.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from cltlab.config import settings
from cltlab.logging_config import get_logger
from cltlab.services.bridge_service import endpoint_projection_profile, x0_two_sided_norm
from cltlab.services.kernel_service import Kernel, StationaryLaw
from cltlab.services.moments_service import Model, VarianceProfile, autocovariance, varsup_profile
from cltlab.utils import (
    InequalityViolated,
    ParameterValidator,
    ShapeMismatch,
    SingularPi,
)

logger = get_logger("cltlab.mixing_service")

PASS = "PASS"
FAILED = "FAILED"
INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class QuantileFunction:
    """
    Upper-tail quantile of |X_0| under pi: Q(u) = inf{t : P(|X_0| > t) <= u}.

    `values` are the distinct atoms in descending order, `cumulative[i]` the mass of the
    atoms values[0..i].
    """

    values: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_model(cls, M: Model) -> "QuantileFunction":
        return cls.from_atoms(np.abs(M.f), M.pi.probs)

    @classmethod
    def from_atoms(cls, values: np.ndarray, masses: np.ndarray) -> "QuantileFunction":
        values = np.asarray(values, dtype=float)
        masses = np.asarray(masses, dtype=float)
        charged = masses > 0.0
        distinct, inverse = np.unique(values[charged], return_inverse=True)
        grouped = np.bincount(inverse, weights=masses[charged], minlength=distinct.size)
        order = np.argsort(-distinct, kind="stable")
        return cls(values=distinct[order], cumulative=np.cumsum(grouped[order]))

    def __call__(self, u: float) -> float:
        index = int(np.searchsorted(self.cumulative, u, side="right"))
        return float(self.values[index]) if index < self.values.size else 0.0

    def integral(self, beta: float) -> float:
        """Exact integral of Q(u)^2 over [0, beta]."""
        beta = ParameterValidator.validate_probability(beta, "beta")
        lower = 0.0
        terms = []
        for value, upper in zip(self.values, self.cumulative):
            overlap = min(upper, beta) - lower
            if overlap <= 0.0:
                break
            terms.append(value * value * overlap)
            lower = upper
        return math.fsum(terms)


@dataclass(frozen=True)
class ConditionVerdict:
    name: str
    status: str
    description: str
    value: Optional[float] = None

    @property
    def line(self) -> str:
        return f"({self.name}): {self.status} ({self.description})"


@dataclass(frozen=True, eq=False)
class MixingProfile:
    """Coefficient sequences and condition columns for n = 1..N."""

    horizon: int
    beta: np.ndarray
    beta_two_sided: np.ndarray
    rho: np.ndarray
    n_qint: np.ndarray
    qint_sum: np.ndarray
    x0norm: np.ndarray
    n_x0norm: np.ndarray
    x0norm_sum: np.ndarray
    rio_ok: np.ndarray
    endpoint_norm: np.ndarray
    variance: VarianceProfile
    lemma_rhs: np.ndarray = field(repr=False, default=None)

    def columns(self) -> Dict[str, np.ndarray]:
        """Export columns in table order."""
        return {
            "n": np.arange(1, self.horizon + 1),
            "beta": self.beta,
            "beta2s": self.beta_two_sided,
            "rho": self.rho,
            "n_qint": self.n_qint,
            "qint_sum": self.qint_sum,
            "x0norm": self.x0norm,
            "n_x0norm": self.n_x0norm,
            "x0norm_sum": self.x0norm_sum,
            "rio_ok": self.rio_ok,
        }

    def verdicts(self, tol: Optional[float] = None) -> List[ConditionVerdict]:
        """
        Verdicts for the variance and mixing conditions.

        A vanishing sequence a_n passes when a_N <= tol or a_N <= 0.75 a_{N/2} and fails when
        a_N >= a_{N/2} with a_N > tol. A series passes when its increment over (N/2, N] is
        <= tol or <= 0.75 times the increment over (N/4, N/2], and fails when the later
        increment is at least the earlier one.
        """
        tol = settings.VERDICT_TOL if tol is None else tol
        variance_status = PASS if self.variance.tail_converged else INCONCLUSIVE
        return [
            ConditionVerdict("varsup1", variance_status, "sup E(S_n²)/n < ∞", self.variance.sup),
            vanishing_verdict("bad", self.endpoint_norm, "(1/n)‖E(S_n|ξ₀,ξ_n)‖² → 0", tol),
            vanishing_verdict("badn", self.n_x0norm, "n‖E(X₀|ξ₋ₙ,ξₙ)‖² → 0", tol),
            summability_verdict("mixingale", self.x0norm_sum, "Σ‖E(X₀|ξ₋ₖ,ξₖ)‖² < ∞", tol),
            vanishing_verdict("cond beta", self.n_qint, "n·∫Q² → 0", tol),
            summability_verdict("condstrongCLT", self.qint_sum, "Σ∫₀^{β_n}Q² < ∞", tol),
        ]


def _compare(name: str, later: float, earlier: float, description: str, tol: float, value: float) -> ConditionVerdict:
    if later <= tol or later <= 0.75 * earlier:
        status = PASS
    elif later >= earlier:
        status = FAILED
    else:
        status = INCONCLUSIVE
    return ConditionVerdict(name, status, description, value)


def vanishing_verdict(name: str, sequence: np.ndarray, description: str, tol: float) -> ConditionVerdict:
    """Judge a_n -> 0 from a_1..a_N by comparing a_N with a_{N/2}."""
    last = float(sequence[-1])
    if last <= tol:
        return ConditionVerdict(name, PASS, description, last)
    if sequence.size < 2:
        return ConditionVerdict(name, INCONCLUSIVE, description, last)
    return _compare(name, last, float(sequence[sequence.size // 2 - 1]), description, tol, last)


def summability_verdict(name: str, partial_sums: np.ndarray, description: str, tol: float) -> ConditionVerdict:
    """
    Judge sum t_k < inf from the running sums s_1..s_N: the increment s_N - s_{N/2} is compared
    with s_{N/2} - s_{N/4}. The reported value is s_N.
    """
    total = float(partial_sums[-1])
    size = partial_sums.size
    if size < 4:
        return ConditionVerdict(name, INCONCLUSIVE, description, total)
    half = float(partial_sums[size // 2 - 1])
    quarter = float(partial_sums[size // 4 - 1])
    return _compare(name, total - half, half - quarter, description, tol, total)


def _check_law(P: Kernel, pi: StationaryLaw) -> None:
    if pi.size != P.size:
        raise ShapeMismatch(f"pi has {pi.size} entries, kernel has {P.size} states", pi.size)


def beta_coefficient(P: Kernel, pi: StationaryLaw, n: int) -> float:
    """beta_n = sum_x pi(x) (1/2) sum_y |P^n(x,y) - pi(y)|."""
    n = ParameterValidator.validate_horizon(n)
    _check_law(P, pi)
    distance = 0.5 * np.abs(P.power(n) - pi.probs[None, :]).sum(axis=1)
    return math.fsum((pi.probs * distance).tolist())


def beta_two_sided(P: Kernel, pi: StationaryLaw, n: int) -> float:
    """
    beta between sigma(xi_0) and sigma(xi_{-n}, xi_n): half the L1 distance between the law
    pi(x) P^n(x,z) P^n(z,y) of (xi_{-n}, xi_0, xi_n) and pi(z) * pi(x) P^{2n}(x,y).
    """
    n = ParameterValidator.validate_horizon(n)
    _check_law(P, pi)
    forward = P.power(n)
    pair = pi.probs[:, None] * P.power(2 * n)
    terms = []
    for z in range(P.size):
        joint = (pi.probs * forward[:, z])[:, None] * forward[z, :][None, :]
        terms.append(float(np.abs(joint - pi.probs[z] * pair).sum()))
    return 0.5 * math.fsum(terms)


def lemma_strong_gap(P: Kernel, pi: StationaryLaw, n: int) -> Tuple[float, float]:
    """
    (lhs, rhs) = (beta_two_sided(n), beta_n + beta_n + beta_{2n}).

    Raises:
        InequalityViolated: If lhs > rhs + 1e-9
    """
    lhs = beta_two_sided(P, pi, n)
    beta_n = beta_coefficient(P, pi, n)
    rhs = beta_n + beta_n + beta_coefficient(P, pi, 2 * n)
    if lhs > rhs + 1e-9:
        raise InequalityViolated(lhs, rhs)
    return lhs, rhs


def rho_coefficient(P: Kernel, pi: StationaryLaw, n: int) -> float:
    """
    Maximal correlation between xi_0 and xi_n: second singular value of
    sqrt(pi(x)) P^n(x,y) / sqrt(pi(y)) restricted to the pi-support.

    Raises:
        SingularPi: If pi has negative or non-finite entries or no support
    """
    n = ParameterValidator.validate_horizon(n)
    _check_law(P, pi)
    probs = pi.probs
    if np.any(~np.isfinite(probs)) or np.any(probs < 0.0):
        raise SingularPi(f"SingularPi: pi must be non-negative, got {probs.tolist()}", probs.tolist())
    support = np.flatnonzero(probs > 0.0)
    if support.size == 0:
        raise SingularPi("SingularPi: pi has empty support", probs.tolist())
    if support.size == 1:
        return 0.0

    root = np.sqrt(probs[support])
    scaled = root[:, None] * P.power(n)[np.ix_(support, support)] / root[None, :]
    singular = linalg.svdvals(scaled)
    return float(min(max(singular[1], 0.0), 1.0))


def quantile_integral(M: Model, beta: float) -> float:
    """Integral of Q^2 over [0, beta], Q the upper-tail quantile of |X_0|."""
    return QuantileFunction.from_model(M).integral(beta)


def rho_bound_check(M: Model, n: int) -> Tuple[float, float]:
    """(|E(X_0 X_n)|, rho_n E(X_0^2)); the first never exceeds the second."""
    lhs = abs(autocovariance(M, n))
    rhs = rho_coefficient(M.kernel, M.pi, n) * autocovariance(M, 0)
    return lhs, rhs


def clt_condition_report(M: Model, N: int) -> MixingProfile:
    """
    Assemble every mixing and conditional-norm column for n = 1..N and check, pointwise,
    x0_two_sided_norm(n) <= 2 qint(beta2s_n) <= 2 qint(min(1, 3 beta_n)).
    """
    N = ParameterValidator.validate_horizon(N, "N")
    P, pi = M.kernel, M.pi
    quantile = QuantileFunction.from_model(M)

    beta = np.array([beta_coefficient(P, pi, n) for n in range(1, N + 1)])
    beta_2n = np.array([beta_coefficient(P, pi, 2 * n) for n in range(1, N + 1)])
    beta2s = np.array([beta_two_sided(P, pi, n) for n in range(1, N + 1)])
    rho = np.array([rho_coefficient(P, pi, n) for n in range(1, N + 1)])
    x0norm = np.array([x0_two_sided_norm(M, n) for n in range(1, N + 1)])

    qint = np.array([quantile.integral(float(min(1.0, b))) for b in beta])
    qint_two_sided = np.array([quantile.integral(float(min(1.0, b))) for b in beta2s])
    qint_tripled = np.array([quantile.integral(float(min(1.0, 3.0 * b))) for b in beta])

    n = np.arange(1, N + 1, dtype=float)
    rio_ok = (x0norm <= 2.0 * qint_two_sided + 1e-9) & (qint_two_sided <= qint_tripled + 1e-9)
    if not np.all(rio_ok):
        bad = int(np.flatnonzero(~rio_ok)[0]) + 1
        logger.warning(f"Quantile bound on ||E(X_0|xi_-n,xi_n)||^2 fails first at n={bad}")

    lemma_rhs = 2.0 * beta + beta_2n
    if np.any(beta2s > lemma_rhs + 1e-9):
        index = int(np.flatnonzero(beta2s > lemma_rhs + 1e-9)[0])
        raise InequalityViolated(float(beta2s[index]), float(lemma_rhs[index]))

    profile = MixingProfile(
        horizon=N,
        beta=beta,
        beta_two_sided=beta2s,
        rho=rho,
        n_qint=n * qint,
        qint_sum=np.cumsum(qint),
        x0norm=x0norm,
        n_x0norm=n * x0norm,
        x0norm_sum=np.cumsum(x0norm),
        rio_ok=rio_ok,
        endpoint_norm=endpoint_projection_profile(M, N),
        variance=varsup_profile(M, N),
        lemma_rhs=lemma_rhs,
    )
    for verdict in profile.verdicts():
        logger.info(verdict.line)
    return profile
