"""
Gallery Service
Named constructors for the chains used throughout the toolkit: two-state chains, i.i.d.
chains, the periodic flip-flop, truncated renewal chains with polynomial-logarithmic jump
tails, product chains and non-ergodic block-diagonal composites.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import TypeAdapter
from scipy import linalg

from cltlab.config import settings
from cltlab.logging_config import get_logger
from cltlab.schemas import (
    BlockDiagonalPreset,
    FlipFlopPreset,
    GalleryPreset,
    IidPreset,
    ProductChainPreset,
    TruncatedRenewalPreset,
    TwoStatePreset,
)
from cltlab.services.kernel_service import as_stationary_law, stationary_law, validate_kernel
from cltlab.services.moments_service import Model, build_model, center_observable
from cltlab.utils import (
    DegenerateChain,
    ParameterValidator,
    StateSpaceTooLarge,
    UnknownGallery,
    ValidationError,
)

logger = get_logger("cltlab.gallery_service")

GALLERY_NAMES = ("two_state", "iid", "flip_flop", "truncated_renewal", "product_chain", "block_diagonal")

# Terms of the untruncated jump series summed for the tail-mass report
_RENEWAL_SERIES_TERMS = 1_000_000

_preset_adapter = TypeAdapter(GalleryPreset)


@dataclass(frozen=True, eq=False)
class GallerySpec:
    """A constructed gallery model with its parameters and truncation report."""

    name: str
    model: Model
    parameters: Dict[str, Any] = field(default_factory=dict)
    truncation: Optional[int] = None
    tail_mass: Optional[float] = None


def two_state(a: float, b: float, f0: float = -1.0, f1: float = 1.0) -> Model:
    """
    Kernel [[1-a, a], [b, 1-b]] with pi = (b, a)/(a+b); (f0, f1) is centered under pi.

    Raises:
        DegenerateChain: If a = b = 0
    """
    a = ParameterValidator.validate_probability(a, "a")
    b = ParameterValidator.validate_probability(b, "b")
    if a == 0.0 and b == 0.0:
        raise DegenerateChain("DegenerateChain: a = b = 0 leaves the invariant law undetermined", (a, b))
    kernel = validate_kernel([[1.0 - a, a], [b, 1.0 - b]])
    pi = as_stationary_law(kernel, [b / (a + b), a / (a + b)])
    return build_model(kernel, [f0, f1], pi=pi, center=True)


def flip_flop(f0: float = -1.0, f1: float = 1.0) -> Model:
    """The deterministic 2-cycle, two_state(1, 1, f0, f1)."""
    return two_state(1.0, 1.0, f0, f1)


def iid(pi: Sequence[float], f: Sequence[float]) -> Model:
    """Chain whose rows all equal pi; f is centered under pi."""
    probs = np.asarray(pi, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValidationError("pi must be a non-empty vector", probs.tolist(), "pi non-empty")
    kernel = validate_kernel(np.tile(probs, (probs.size, 1)))
    return build_model(kernel, f, pi=as_stationary_law(kernel, probs), center=True)


def _renewal_weights(count: int, log_exponent: int) -> np.ndarray:
    i = np.arange(1, count + 1, dtype=float)
    return 1.0 / (2.0 * i**3 * np.log(i + 1.0) ** log_exponent)


@lru_cache(maxsize=4)
def _renewal_series_total(log_exponent: int) -> float:
    return math.fsum(_renewal_weights(_RENEWAL_SERIES_TERMS, log_exponent).tolist())


def renewal_tail_mass(N: int, log_exponent: int = 2) -> float:
    """Jump mass beyond N of the untruncated chain, whose jump law is normalized to total 1/2."""
    total = _renewal_series_total(log_exponent)
    kept = math.fsum(_renewal_weights(N, log_exponent).tolist())
    return 0.5 * max(total - kept, 0.0) / total


def truncated_renewal(N: int, log_exponent: int = 2) -> Model:
    """
    Renewal chain on {0..N}: P(0,0) = 1/2, P(0,i) proportional to (2 i^3 log(i+1)^e)^-1 with total
    1/2, and P(i, i-1) = 1 for i >= 1. The observable is f(i) = 1{i=0} - pi(0).
    """
    N = ParameterValidator.validate_horizon(N, "N", minimum=2)
    if log_exponent not in (1, 2):
        raise ValidationError(f"log_exponent must be 1 or 2, got {log_exponent!r}", log_exponent, "e in {1,2}")

    weights = _renewal_weights(N, log_exponent)
    rows = np.zeros((N + 1, N + 1))
    rows[0, 0] = 0.5
    rows[0, 1:] = 0.5 * weights / weights.sum()
    rows[np.arange(1, N + 1), np.arange(0, N)] = 1.0

    kernel = validate_kernel(rows)
    pi = stationary_law(kernel)
    indicator = np.zeros(N + 1)
    indicator[0] = 1.0
    return build_model(kernel, indicator, pi=pi, center=True)


def product_chain(MY: Model, MZ: Model) -> Model:
    """
    Independent components evolving jointly; state (y, z) is numbered y * S_Z + z and
    f(y, z) = f_Y(y) f_Z(z).

    Raises:
        StateSpaceTooLarge: If S_Y * S_Z > settings.MAX_PRODUCT_STATES
    """
    size = MY.size * MZ.size
    if size > settings.MAX_PRODUCT_STATES:
        raise StateSpaceTooLarge(
            f"StateSpaceTooLarge: product has {size} states, limit {settings.MAX_PRODUCT_STATES}", size
        )
    kernel = validate_kernel(np.kron(MY.kernel.rows, MZ.kernel.rows), tol=1e-10)
    pi = as_stationary_law(kernel, np.kron(MY.pi.probs, MZ.pi.probs), tol=1e-10)
    return build_model(kernel, np.kron(MY.f, MZ.f), pi=pi, center=True)


def block_diagonal(components: Sequence[Tuple[float, Model]]) -> Model:
    """
    Disjoint union of component chains: block-diagonal kernel, pi the weighted concatenation of
    the component laws, f concatenated and re-centered.

    Raises:
        BadWeights: If weights are not positive or do not sum to 1
    """
    weights = ParameterValidator.validate_weights([w for w, _ in components])
    models = [model for _, model in components]
    kernel = validate_kernel(linalg.block_diag(*[model.kernel.rows for model in models]))
    probs = np.concatenate([w * model.pi.probs for w, model in zip(weights, models)])
    pi = as_stationary_law(kernel, probs / probs.sum(), tol=1e-10)
    f = center_observable(np.concatenate([model.f for model in models]), pi)
    return build_model(kernel, f, pi=pi)


# ==================== Presets ====================


def parse_preset(data: Dict[str, Any]) -> GalleryPreset:
    """
    Validate a preset document such as {"gallery": "truncated_renewal", "N": 64}.

    Raises:
        UnknownGallery: If the name is not a gallery constructor
    """
    name = data.get("gallery") if isinstance(data, dict) else None
    if name not in GALLERY_NAMES:
        raise UnknownGallery(
            f"UnknownGallery: {name!r} is not one of {', '.join(GALLERY_NAMES)}", name
        )
    return _preset_adapter.validate_python(data)


def build_preset(preset: GalleryPreset) -> GallerySpec:
    """Construct the Model described by a preset, recursing into nested presets."""
    parameters = preset.model_dump()
    name = parameters.pop("gallery")
    truncation = tail_mass = None

    if isinstance(preset, TwoStatePreset):
        model = two_state(preset.a, preset.b, *preset.f)
    elif isinstance(preset, FlipFlopPreset):
        model = flip_flop(*preset.f)
    elif isinstance(preset, IidPreset):
        model = iid(preset.pi, preset.f)
    elif isinstance(preset, TruncatedRenewalPreset):
        model = truncated_renewal(preset.N, preset.log_exponent)
        truncation = preset.N
        tail_mass = renewal_tail_mass(preset.N, preset.log_exponent)
        logger.info(f"Truncated renewal N={preset.N}: untruncated tail mass {tail_mass:.3e}")
    elif isinstance(preset, ProductChainPreset):
        model = product_chain(build_preset(preset.left).model, build_preset(preset.right).model)
    elif isinstance(preset, BlockDiagonalPreset):
        parts: List[Tuple[float, Model]] = [
            (component.weight, build_preset(component.model).model) for component in preset.components
        ]
        model = block_diagonal(parts)
    else:
        raise UnknownGallery(f"UnknownGallery: unsupported preset {type(preset).__name__}", name)

    logger.info(f"Built gallery model '{name}' with {model.size} states")
    return GallerySpec(name=name, model=model, parameters=parameters, truncation=truncation, tail_mass=tail_mass)
