"""Request and response models of the experiment service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

from ..config import ExperimentConfig


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ReferenceRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    out_dir: str


class ReferenceResponse(BaseModel):
    out_dir: str
    n_steps: int
    state_dim: int
    n_observed: int


class RunRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    out_dir: str
    reference_dir: Optional[str] = None
    vtk: bool = False


class SweepRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    out_dir: str
    fractions: list[float]
    filters: Optional[list[Literal["ensf", "letkf", "none"]]] = None
    processes: int = Field(default=1, ge=1)


class MetricsRequest(BaseModel):
    paths: list[str]
    burn_in: int = Field(default=0, ge=0)


class MetricsRow(BaseModel):
    path: str
    burn_in: int
    rmse_s: float
    rmse_p: float
    rmse_u: float


class RunSummary(BaseModel):
    out_dir: str
    wall_time: float
    time_averaged_rmse_s: float
    time_averaged_rmse_p: float
    time_averaged_rmse_u: float


class SweepRow(BaseModel):
    fraction: float
    filter: str
    rmse_s: float
    rmse_p: float
    rmse_u: float


class SweepSummary(BaseModel):
    out_dir: str
    rows: list[SweepRow]


class JobInfo(BaseModel):
    job_id: str
    kind: Literal["run", "sweep"]
    status: Literal["queued", "running", "done", "failed"]
    error: Optional[str] = None
    run: Optional[RunSummary] = None
    sweep: Optional[SweepSummary] = None
