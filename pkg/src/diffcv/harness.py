"""Experiment orchestration: sweeps, the CSV contract, trace dumps, manifests.

The CSV layout is frozen: header ``eps,nvar_over_eps,nvar_over_eps2,i_hat,
j_hat,efu``, one row per eps in grid order, shortest round-trip scientific
notation.  Rows run in the cautioned regime (dt/eps^2 past the stability
threshold) carry a ``#`` comment line above them and a manifest warning.
(config, seed) -> CSV is a pure function, independent of the worker count.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ._version import __version__
from .config import RunConfig
from .control_mean import ControlMean, compute_control_mean
from .coupling import simulate_coupled
from .estimators import ROW_SEED_STRIDE, SweepRow, epsilon_sweep
from .noise import solve_lyapunov

__all__ = ["RunManifest", "run_sweep", "trace_csv", "control_mean_report",
           "CSV_HEADER", "fmt_float"]

CSV_HEADER = "eps,nvar_over_eps,nvar_over_eps2,i_hat,j_hat,efu"
#: stream-root offset reserved for the control-mean Monte Carlo
CONTROL_SEED_STRIDE = 3 * 2**64


def fmt_float(x: float) -> str:
    """Shortest representation in scientific notation that round-trips."""
    return np.format_float_scientific(float(x), unique=True)


@dataclass
class RunManifest:
    """Everything needed to reproduce the CSV byte-for-byte."""

    config: dict
    version: str
    row_stream_roots: list
    control: dict
    warnings: list = field(default_factory=list)
    workers: int = 1
    wall_clock_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def control_mean_report(config: RunConfig) -> ControlMean:
    """The control expectation E[F(U)] for the configured model."""
    system = config.build_system()
    model = config.build_noise()
    cfg = config.stepper()
    return compute_control_mean(
        system, model, cfg, method=config.control_method,
        n_ref=config.control_n_ref, seed=config.seed + CONTROL_SEED_STRIDE,
        mc_dt=config.control_dt,
    )


def run_sweep(config: RunConfig, workers: Optional[int] = None) -> Tuple[str, RunManifest]:
    """Run the eps sweep and emit the frozen-format CSV plus its manifest."""
    t_start = time.monotonic()
    system = config.build_system()
    model = config.build_noise()
    cfg = config.stepper()
    nworkers = config.workers if workers is None else workers
    control = control_mean_report(config)
    rows = epsilon_sweep(system, model, cfg, config.eps_grid, config.n_samples,
                         config.seed, control_mean=control.value, workers=nworkers)
    lines = [CSV_HEADER]
    warnings = []
    for row in rows:
        if row.cautioned:
            note = (f"dt/eps^2 = {cfg.dt / row.eps**2:.6g} at eps = {row.eps:g}; "
                    f"row is to be considered with caution")
            lines.append(f"# warning: {note}")
            warnings.append(note)
        lines.append(",".join(fmt_float(v) for v in (
            row.eps, row.nvar_over_eps, row.nvar_over_eps2,
            row.i_hat, row.j_hat, row.efu)))
    csv_text = "\n".join(lines) + "\n"
    manifest = RunManifest(
        config=config.snapshot(),
        version=__version__,
        row_stream_roots=[config.seed + i * ROW_SEED_STRIDE for i in range(len(rows))],
        control=dict(value=control.value, method=control.method,
                     error_estimate=control.error_estimate,
                     stream_root=config.seed + CONTROL_SEED_STRIDE),
        warnings=warnings,
        workers=nworkers,
        wall_clock_seconds=time.monotonic() - t_start,
    )
    return csv_text, manifest


def trace_csv(config: RunConfig, eps: float) -> str:
    """Simulate one coupled path at the given eps and dump it as CSV."""
    system = config.build_system()
    model = config.build_noise()
    cfg = config.stepper()
    law = solve_lyapunov(model.a, model.k)
    path = simulate_coupled(system, model, law, eps, cfg, config.seed)
    n, m, d = system.n, system.m, model.d
    cols = ["t_x"]
    if system.kind == "impact":
        cols.append("t_u")
    cols += [f"eta_{i}" for i in range(d)]
    cols += [f"x_{i}" for i in range(n)]
    cols += [f"z_{i}" for i in range(m)]
    cols += [f"u_{i}" for i in range(n + m)]
    lines = [
        f"# model = {system.kind}, eps = {eps:g}, dt = {cfg.dt:g}, seed = {config.seed}",
        f"# f_x = {fmt_float(path.f_x)}, f_u = {fmt_float(path.f_u)}",
        ",".join(cols),
    ]
    for i in range(len(path.times)):
        vals = [path.times[i]]
        if system.kind == "impact":
            vals.append(path.times_u[i])
        vals.extend(path.eta[i])
        vals.extend(path.x_eps[i])
        if m:
            vals.extend(path.z_eps[i])
        vals.extend(path.u[i])
        lines.append(",".join(fmt_float(v) for v in vals))
    return "\n".join(lines) + "\n"
