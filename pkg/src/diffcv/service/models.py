"""Request/response schemas of the simulation service."""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, Field


class SweepRequest(BaseModel):
    config: str = Field(description="flat key = value configuration document")
    workers: Optional[int] = Field(default=None, ge=1)


class SweepResponse(BaseModel):
    csv: str
    manifest: dict


class TraceRequest(BaseModel):
    config: str
    eps: float = Field(gt=0)


class TraceResponse(BaseModel):
    csv: str


class ControlMeanRequest(BaseModel):
    config: str


class ControlMeanResponse(BaseModel):
    value: float
    method: str
    error_estimate: float


class ValidateRequest(BaseModel):
    level: str = "quick"
    seed: Optional[int] = None


class CriterionRow(BaseModel):
    criterion: str
    description: str
    measured: str
    threshold: str
    passed: bool
    skipped: bool = False
    note: str = ""


class ValidateResponse(BaseModel):
    level: str
    passed: bool
    wall_clock_seconds: float
    results: List[CriterionRow]


class HealthResponse(BaseModel):
    status: str
    version: str
