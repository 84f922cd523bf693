"""Monte Carlo estimators and the eps-sweep experiment.

Two estimators of E[F(X^eps_T)] are provided: the plain sample mean over
colored-noise paths, and the coupled control-variate estimator that adds the
known limit-process mean to the sample mean of F(X^eps) - F(U) computed on
shared increments.  The normalized variance reported for either one is N
times the estimator variance, i.e. the per-sample variance of the summand,
which is the quantity whose eps-scaling the sweep measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .accumulators import Welford, from_block
from .coupling import StepperConfig, iter_sample_blocks
from .errors import DegenerateFitError, InsufficientSamplesError
from .noise import NoiseModel, solve_lyapunov
from .systems import SystemSpec

__all__ = [
    "EstimateReport",
    "SweepRow",
    "brute_force_estimate",
    "control_variate_estimate",
    "epsilon_sweep",
    "fit_scaling_exponent",
    "ROW_SEED_STRIDE",
]

#: stream-root stride between consecutive eps rows of a sweep
ROW_SEED_STRIDE = 2**32


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with the variance statistics of its summand."""

    estimator: str  # "brute_force" | "control_variate"
    mean: float
    sample_variance: float
    n: int
    normalized_variance: float
    ci_half_width: float
    control_mean: float = 0.0
    mean_shift: float = 0.0  # average of f_x - f_u (control variate only)

    @staticmethod
    def from_accumulator(estimator: str, acc: Welford, control_mean: float = 0.0) -> "EstimateReport":
        if acc.count < 2:
            raise InsufficientSamplesError("need at least two samples")
        var = acc.variance
        return EstimateReport(
            estimator=estimator,
            mean=control_mean + acc.mean,
            sample_variance=var,
            n=acc.count,
            normalized_variance=var,
            ci_half_width=1.96 * math.sqrt(var / acc.count),
            control_mean=control_mean,
            mean_shift=acc.mean,
        )


def brute_force_estimate(samples: Iterable[float]) -> EstimateReport:
    """Plain Monte Carlo: mean and unbiased sample variance of F(X^eps_T)."""
    acc = Welford()
    acc.add_many(samples)
    return EstimateReport.from_accumulator("brute_force", acc)


def control_variate_estimate(samples: Iterable[Tuple[float, float]],
                             control_mean: float) -> EstimateReport:
    """Coupled control variate: control_mean + average of f_x - f_u.

    The normalized variance is the sample variance of the differences, the
    quantity bounded by the coupling rate.
    """
    acc = Welford()
    for f_x, f_u in samples:
        acc.add(float(f_x) - float(f_u))
    return EstimateReport.from_accumulator("control_variate", acc, control_mean)


@dataclass(frozen=True)
class SweepRow:
    """One eps value of a sweep, matching the figure data-file layout."""

    eps: float
    nvar_over_eps: float
    nvar_over_eps2: float
    i_hat: float
    j_hat: float
    efu: float
    n: int = 0
    ci_i: float = 0.0
    ci_j: float = 0.0
    nvar_j: float = 0.0
    cautioned: bool = False

    @property
    def nvar(self) -> float:
        return self.nvar_over_eps * self.eps


def _merge_blocks(blocks) -> Tuple[Welford, Welford, Welford, dict]:
    fx, fu, diff = Welford(), Welford(), Welford()
    diag: dict = {}
    for b in blocks:
        fx.merge(from_block(*b.fx))
        fu.merge(from_block(*b.fu))
        diff.merge(from_block(*b.diff))
        for key, val in b.diag.items():
            if key.startswith(("min_",)):
                diag[key] = min(diag.get(key, math.inf), val)
            elif key.startswith("collisions"):
                diag[key] = diag.get(key, 0.0) + val
            else:
                diag[key] = max(diag.get(key, 0.0), val)
    return fx, fu, diff, diag


def estimate_pair(system: SystemSpec, model: NoiseModel, eps: float,
                  cfg: StepperConfig, n_samples: int, stream_root: int,
                  control_mean: float, workers: int = 1,
                  decouple: bool = False):
    """Both estimators from one coupled batch; returns (i_report, j_report, diag)."""
    blocks = iter_sample_blocks(system, model, eps, cfg, n_samples, stream_root,
                                workers=workers, decouple=decouple)
    fx, fu, diff, diag = _merge_blocks(blocks)
    j_rep = EstimateReport.from_accumulator("brute_force", fx)
    i_rep = EstimateReport.from_accumulator("control_variate", diff, control_mean)
    return i_rep, j_rep, diag


def epsilon_sweep(system: SystemSpec, model: NoiseModel, cfg: StepperConfig,
                  eps_grid: Sequence[float], n_samples: int, seed: int,
                  control_mean: Optional[float] = None, workers: int = 1,
                  control_fn=None) -> List[SweepRow]:
    """One SweepRow per eps; row i uses stream root seed + i * 2**32.

    The control expectation E[F(U)] is eps-independent and computed once,
    either passed in directly or through ``control_fn(system, model, cfg)``
    (the limit_expectation dispatch in normal use).
    """
    eps_grid = [float(e) for e in eps_grid]
    if any(e <= 0 for e in eps_grid):
        raise ValueError("eps values must be positive")
    if len(eps_grid) > 1 and not all(a > b for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps grid must be strictly decreasing")
    if control_mean is None:
        if control_fn is None:
            raise ValueError("either control_mean or control_fn is required")
        control_mean = float(control_fn(system, model, cfg))
    law = solve_lyapunov(model.a, model.k)
    rows: List[SweepRow] = []
    for i, eps in enumerate(eps_grid):
        root = seed + i * ROW_SEED_STRIDE
        cautioned = cfg.dt * model.norm_a() / eps**2 > 0.5
        try:
            i_rep, j_rep, _ = estimate_pair(system, model, eps, cfg, n_samples,
                                            root, control_mean, workers=workers)
        except Exception as exc:
            raise type(exc)(f"eps={eps:g}: {exc}") from exc
        nvar = i_rep.normalized_variance
        rows.append(SweepRow(
            eps=eps,
            nvar_over_eps=nvar / eps,
            nvar_over_eps2=(nvar / eps) / eps,
            i_hat=i_rep.mean,
            j_hat=j_rep.mean,
            efu=control_mean,
            n=n_samples,
            ci_i=i_rep.ci_half_width,
            ci_j=j_rep.ci_half_width,
            nvar_j=j_rep.normalized_variance,
            cautioned=cautioned,
        ))
    return rows


def fit_scaling_exponent(rows: Sequence[SweepRow]) -> float:
    """Ordinary least-squares slope of log N-var against log eps."""
    if len(rows) < 3:
        raise DegenerateFitError("need at least three sweep rows")
    nvars = [r.nvar for r in rows]
    if any(v <= 0 for v in nvars):
        raise DegenerateFitError("normalized variance must be positive to fit")
    x = np.log([r.eps for r in rows])
    y = np.log(nvars)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
