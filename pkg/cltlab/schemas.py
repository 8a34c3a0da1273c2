"""
Pydantic documents for everything that crosses the process boundary: kernel and model JSON,
gallery presets, run configurations and Monte Carlo reports.

All documents reject unknown keys so that typos in scientific runs fail loudly.
"""

from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class StrictModel(BaseModel):
    """Base document: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


# ==================== Kernel / Model documents ====================


class KernelDocument(StrictModel):
    """{"size": S, "rows": [[...], ...]}"""

    size: int = Field(ge=1)
    rows: List[List[float]]

    @model_validator(mode="after")
    def _check_size(self) -> "KernelDocument":
        if len(self.rows) != self.size or any(len(row) != self.size for row in self.rows):
            raise ValueError(f"rows must form a {self.size}x{self.size} matrix")
        return self


class ModelDocument(StrictModel):
    """{"kernel": ..., "pi": [...], "f": [...]}; pi may be omitted and recomputed."""

    kernel: KernelDocument
    pi: Optional[List[float]] = None
    f: List[float]


# ==================== Gallery presets ====================


class TwoStatePreset(StrictModel):
    gallery: Literal["two_state"]
    a: float
    b: float
    f: List[float] = Field(default_factory=lambda: [-1.0, 1.0], min_length=2, max_length=2)


class FlipFlopPreset(StrictModel):
    gallery: Literal["flip_flop"]
    f: List[float] = Field(default_factory=lambda: [-1.0, 1.0], min_length=2, max_length=2)


class IidPreset(StrictModel):
    gallery: Literal["iid"]
    pi: List[float] = Field(min_length=1)
    f: List[float] = Field(min_length=1)


class TruncatedRenewalPreset(StrictModel):
    gallery: Literal["truncated_renewal"]
    N: int = Field(ge=2)
    log_exponent: Literal[1, 2] = 2


class ProductChainPreset(StrictModel):
    gallery: Literal["product_chain"]
    left: "GalleryPreset"
    right: "GalleryPreset"


class BlockComponent(StrictModel):
    weight: float
    model: "GalleryPreset"


class BlockDiagonalPreset(StrictModel):
    gallery: Literal["block_diagonal"]
    components: List[BlockComponent] = Field(min_length=1)


GalleryPreset = Annotated[
    Union[
        TwoStatePreset,
        FlipFlopPreset,
        IidPreset,
        TruncatedRenewalPreset,
        ProductChainPreset,
        BlockDiagonalPreset,
    ],
    Field(discriminator="gallery"),
]

ProductChainPreset.model_rebuild()
BlockComponent.model_rebuild()
BlockDiagonalPreset.model_rebuild()


# ==================== Run configuration ====================

Command = Literal[
    "validate",
    "stationary",
    "ergodicity",
    "moments",
    "bridge",
    "conditions",
    "blocks",
    "simulate",
    "report",
]


class RunParams(StrictModel):
    """Command parameters; unset values fall back to per-command defaults."""

    n: Optional[int] = Field(default=None, ge=1)
    max_n: Optional[int] = Field(default=None, ge=1)
    m: Optional[int] = Field(default=None, ge=1)
    u: Optional[int] = Field(default=None, ge=1)
    v: Optional[int] = Field(default=None, ge=0)
    reps: Optional[int] = Field(default=None, ge=1)
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    centering: Literal["endpoint", "none"] = "endpoint"
    experiment: Literal["clt", "abs-mean", "mixture"] = "clt"
    mode: Literal["exact", "mc"] = "exact"
    tol: Optional[float] = Field(default=None, gt=0)
    workers: Optional[int] = Field(default=None, ge=1)


class RunConfig(StrictModel):
    """One CLI run: exactly one model source, a command, its parameters and the output sink."""

    command: Command
    model: Optional[ModelDocument] = None
    gallery: Optional[GalleryPreset] = None
    center_observable: bool = False
    params: RunParams = Field(default_factory=RunParams)
    format: Literal["csv", "json"] = "csv"
    output: Optional[str] = None
    dump_statistics: Optional[str] = None

    @model_validator(mode="after")
    def _one_model_source(self) -> "RunConfig":
        if (self.model is None) == (self.gallery is None):
            raise ValueError("exactly one model source is required: 'model' or 'gallery'")
        return self


# ==================== Reports ====================


class ExperimentReport(BaseModel):
    """Monte Carlo summary; a pure function of (model, parameters, master seed)."""

    model_config = ConfigDict(frozen=True)

    model_checksum: str
    n: int
    reps: int = Field(ge=100)
    centering: Literal["endpoint", "none"]
    master_seed: int
    mean: float
    mean_half_width: float
    variance: float
    variance_half_width: float
    degenerate: bool
    ks_distance: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    max_abs_statistic: Optional[float] = None
    ks_threshold: float
    within_threshold: bool
    reference_sigma2: float
    reference_provenance: str
    reference_label: str
    centering_mean: Optional[float] = None
    centering_half_width: Optional[float] = None
    confidence: float
