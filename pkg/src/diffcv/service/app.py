"""FastAPI service wrapping the simulation engine.

Endpoints mirror the CLI subcommands: sweep, single-path trace, control-mean
solve, and the verification suite.  Configuration errors come back as HTTP
400 with the complete violation list.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .._version import __version__
from ..config import parse_config
from ..errors import ConfigError, DiffcvError
from ..harness import control_mean_report, run_sweep, trace_csv
from ..validation import run_validation_suite
from .models import (ControlMeanRequest, ControlMeanResponse, CriterionRow,
                     HealthResponse, SweepRequest, SweepResponse, TraceRequest,
                     TraceResponse, ValidateRequest, ValidateResponse)


def _parse_or_400(text: str):
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise HTTPException(status_code=400,
                            detail={"violations": exc.violations})


def create_app() -> FastAPI:
    app = FastAPI(title="diffcv", version=__version__,
                  description="coupled control-variate Monte Carlo service")

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        config = _parse_or_400(req.config)
        try:
            csv_text, manifest = run_sweep(config, workers=req.workers)
        except DiffcvError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SweepResponse(csv=csv_text, manifest=manifest.__dict__)

    @app.post("/simulate", response_model=TraceResponse)
    def simulate(req: TraceRequest):
        config = _parse_or_400(req.config)
        try:
            return TraceResponse(csv=trace_csv(config, req.eps))
        except DiffcvError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/pde", response_model=ControlMeanResponse)
    def pde(req: ControlMeanRequest):
        config = _parse_or_400(req.config)
        try:
            cm = control_mean_report(config)
        except DiffcvError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return ControlMeanResponse(value=cm.value, method=cm.method,
                                   error_estimate=cm.error_estimate)

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest):
        if req.level not in ("quick", "full"):
            raise HTTPException(status_code=400,
                                detail={"violations": ["level must be quick or full"]})
        kwargs = {} if req.seed is None else {"seed": req.seed}
        report = run_validation_suite(level=req.level, **kwargs)
        return ValidateResponse(
            level=report.level, passed=report.passed,
            wall_clock_seconds=report.wall_clock_seconds,
            results=[CriterionRow(**r.__dict__) for r in report.results],
        )

    return app


app = create_app()
