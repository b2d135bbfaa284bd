"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class GridBody(BaseModel):
    lo: float = 0.0
    hi: float = 1.0
    size: int = 1000


class KernelBody(BaseModel):
    sigma: float
    length_scale: float
    family: str = "squared-exponential"


class FilterBody(BaseModel):
    id: str
    lo: float
    hi: float


class TemplatesBody(BaseModel):
    builtin: Optional[str] = None
    csv_text: Optional[str] = None
    csv: Optional[str] = None


class ModelConfigBody(BaseModel):
    version: int = 1
    grid: GridBody = GridBody()
    kernel: KernelBody
    filters: list[FilterBody]
    templates: TemplatesBody


class DesignBody(BaseModel):
    n_particles: int = 1000
    alpha_prior: Optional[list[float]] = None
    ess_threshold: Optional[float] = None
    ig_threshold: float = 1e-4
    mh_step: float = 100.0
    range_alpha: float = 0.05
    polna_mode: str = "safak"
    resampling: str = "multinomial"
    mc_samples: int = 2000


class SessionCreateBody(BaseModel):
    model: ModelConfigBody
    design: DesignBody = DesignBody()
    strategy: str = "smcs"
    seed: Optional[int] = None
    t_max: Optional[int] = None


class ObservationBody(BaseModel):
    filter_id: str
    count: int = Field(ge=0)


class PosteriorBody(BaseModel):
    level: float
    mean: list[float]
    lo: list[float]
    hi: list[float]


class RecommendationBody(BaseModel):
    filter_id: str
    eig_scores: Optional[dict[str, float]] = None
    posterior: PosteriorBody


class SessionSummaryBody(BaseModel):
    id: str
    status: str
    created_at: str
    updated_at: str
    strategy: str
    t: int
    t_max: Optional[int]
    n_particles: int
    filter_ids: list[str]
    template_names: list[str]


class StepBody(BaseModel):
    t: int
    filter_id: str
    count: int
    strategy: str
    override: bool
    eig_scores: Optional[dict[str, float]] = None
    ig_realized: float
    ess: float
    resampled: bool
    posterior: PosteriorBody
    timestamp: str


class ObservationResultBody(BaseModel):
    step: StepBody
    stopped: bool
    status: str
    posterior: PosteriorBody


class HistoryBody(BaseModel):
    id: str
    status: str
    ig_threshold: float
    template_names: list[str]
    prior_posterior: PosteriorBody
    steps: list[StepBody]


class HealthBody(BaseModel):
    status: str
    name: str
    version: str
    rng: str


class ErrorBody(BaseModel):
    code: str
    message: str
    details: Optional[Any] = None
