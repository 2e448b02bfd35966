"""Request/response schemas.  The config body mirrors the TOML layout 1:1,
so a parsed config file can be posted as-is."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field


class FadingSection(BaseModel):
    kind: Literal["unit", "awgn", "constant", "finite_iid", "finite_markov",
                  "markov", "continuous_iid"]
    gain: Optional[float] = None
    gains: Optional[list[float]] = None
    pmf: Optional[list[float]] = None
    transition: Optional[list[list[float]]] = None
    family: Optional[str] = None
    params: Optional[dict[str, float]] = None


class CsiSection(BaseModel):
    delay: Optional[int] = None


class CodeSection(BaseModel):
    power: float
    epsilon: float = 0.2
    horizons: Optional[list[int]] = None
    horizon: Optional[int] = None


class RunSection(BaseModel):
    scheme: str
    trials: int = 1000
    seed: int = 0
    workers: int = 1
    unbiased: bool = False
    metrics: Optional[list[str]] = None


class ConfigBody(BaseModel):
    fading: FadingSection
    csi: CsiSection = Field(default_factory=CsiSection)
    code: CodeSection
    run: RunSection


class ValidateRequest(BaseModel):
    config: ConfigBody


class HorizonSummary(BaseModel):
    capacity_bits_per_use: float
    counts: list[int]
    width_bits: int
    rate_bits_per_use: float


class ValidateResponse(BaseModel):
    ok: bool
    problems: list[str]
    summary: dict[str, HorizonSummary]


class CapacityRequest(BaseModel):
    config: ConfigBody


class CapacityResponse(BaseModel):
    bits_per_use: float
    total_growth: float
    log2_rate_share: list[float]
    rate_share_growth: list[float]
    per_visit_stretch: list[float]
    powers: list[float]
    budget: float
    delay: int
    block_bits: dict[str, float]
    n_samples: int = 0
    stderr: float = 0.0


class AllocRequest(BaseModel):
    config: ConfigBody


class AllocResponse(BaseModel):
    powers: list[float]
    dual: float
    objective_bits: float
    kkt_residual: float
    spent: float
    method: str


class SimulateRequest(BaseModel):
    config: ConfigBody


class TableResponse(BaseModel):
    meta: dict[str, Union[str, int, float]]
    columns: list[str]
    rows: list[list[Union[int, float, str]]]


class PeCurveRequest(BaseModel):
    config: ConfigBody
    n_paths: int = 200
    mode: Literal["uniform", "worst"] = "uniform"
    unbiased: bool = False


class PePoint(BaseModel):
    horizon: int
    rate_bits_per_use: float
    pe_exact_mean: float
    pe_exact_stderr: float
    pe_bound_mean: float
    n_paths: int


class PeCurveResponse(BaseModel):
    mode: str
    unbiased: bool
    points: list[PePoint]


class GrowthRequest(BaseModel):
    config: ConfigBody
    horizon: int = 100_000
    seeds: int = 20


class GrowthResponse(BaseModel):
    horizon: int
    per_seed: list[float]
    mean: float
    target: Optional[float]
    abs_error: Optional[float]


class MssRequest(BaseModel):
    config: ConfigBody
    factors: list[float]
    horizon: int = 400
    n_paths: int = 64


class MssRow(BaseModel):
    factor: float
    stable: bool
    spectral_radius: float
    worst_case_contracting: Optional[bool]
    max_abs_closed_loop: Optional[float]
    ergodic_rate_bits: Optional[float]
    mean_decay: float
    m2_tail_ratio: float
    diverged: bool


class MssResponse(BaseModel):
    window_lo: Optional[float]
    window_hi: Optional[float]
    rows: list[MssRow]


class CheapControlRequest(BaseModel):
    config: ConfigBody
    factors: list[float] = Field(default_factory=lambda: [1.0])
    horizon: int = 200
    n_paths: int = 256


class CheapControlRow(BaseModel):
    factor: float
    stable: bool
    value: Optional[float]   # None for unstable factors
    stderr: Optional[float]


class CheapControlResponse(BaseModel):
    budget: float
    best_factor: Optional[float]
    rows: list[CheapControlRow]


class ReproduceRequest(BaseModel):
    trials: Optional[int] = None
    workers: int = 1


class TargetCheck(BaseModel):
    name: str
    computed: float
    target: float
    tolerance: float
    within: bool


class ReproduceResponse(BaseModel):
    table: TableResponse
    capacity_bits_per_use: float
    counts: list[int]
    checks: list[TargetCheck]
