"""Public API of the coupling engine: single traced paths, batch streams,
and the obstacle sub-step helpers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from . import engine
from .engine import BlockResult, StepperConfig, sample_stream  # re-exported
from .errors import NoCrossingError
from .noise import InvariantLaw, NoiseModel, solve_lyapunov
from .systems import SystemSpec

__all__ = [
    "StepperConfig",
    "CoupledPath",
    "simulate_coupled",
    "impact_substep",
    "apply_restitution",
    "batch_simulate",
    "iter_sample_blocks",
    "sample_stream",
]


@dataclass
class CoupledPath:
    """Time-discretized trajectories of (X^eps, eta) and U on one increment
    stream.  ``times`` is the colored-noise process' clock; the limit process
    keeps its own clock only for the obstacle system (identical otherwise)."""

    times: np.ndarray
    times_u: np.ndarray
    eta: np.ndarray
    x_eps: np.ndarray
    z_eps: Optional[np.ndarray]
    u: np.ndarray
    f_x: float
    f_u: float


def simulate_coupled(system: SystemSpec, model: NoiseModel, law: Optional[InvariantLaw],
                     eps: float, cfg: StepperConfig, stream_root: int,
                     initial_eta=None) -> CoupledPath:
    """Simulate one coupled path on the stream (stream_root, sample 0).

    ``initial_eta`` overrides the stationary draw (useful for reproducing
    hand-computed steps); the stream layout is unchanged either way.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    law = law or solve_lyapunov(model.a, model.k)
    engine.check_stability(model, eps, cfg)
    tr = engine.simulate_trace(system, model, law, eps, cfg, stream_root,
                               initial_eta=initial_eta)
    return CoupledPath(times=tr.t_x, times_u=tr.t_u, eta=tr.eta, x_eps=tr.x,
                       z_eps=tr.z, u=tr.u, f_x=tr.f_x, f_u=tr.f_u)


def impact_substep(x1_prev: float, x1_next: float, p_o: float) -> float:
    """Fraction of the step at which the trajectory meets the active barrier.

    Requires |x1_prev| <= p_o < |x1_next|; a start exactly on the barrier is
    an immediate collision (theta = 0).
    """
    if p_o <= 0:
        raise ValueError("obstacle position must be positive")
    if abs(x1_prev) > p_o or abs(x1_next) <= p_o:
        raise NoCrossingError(
            f"no barrier crossing: |{x1_prev}| <= {p_o} < |{x1_next}| required"
        )
    bar = p_o if x1_next > p_o else -p_o
    return (bar - x1_prev) / (x1_next - x1_prev)


def apply_restitution(v_minus: float, e: float) -> float:
    """Post-collision velocity: sign flipped, magnitude scaled by e."""
    if not 0.0 <= e <= 1.0:
        raise ValueError("restitution must lie in [0, 1]")
    return -e * v_minus


def iter_sample_blocks(system: SystemSpec, model: NoiseModel, eps: float,
                       cfg: StepperConfig, n_samples: int, seed: int,
                       workers: int = 1, law: Optional[InvariantLaw] = None,
                       track_gap: bool = False, decouple: bool = False,
                       collect_values: bool = False) -> Iterator[BlockResult]:
    """Block-aggregated batch simulation; blocks arrive in index order for any
    worker count."""
    return engine.run_coupled_blocks(
        system, model, eps, cfg, n_samples, seed, workers=workers, law=law,
        track_gap=track_gap, decouple=decouple, collect_values=collect_values,
    )


def batch_simulate(system: SystemSpec, model: NoiseModel, eps: float,
                   cfg: StepperConfig, n_samples: int, seed: int,
                   workers: int = 1) -> Iterator[Tuple[float, float]]:
    """Stream of (f_x, f_u) pairs; sample k uses the stream (seed, k), so the
    output multiset is identical for any worker count."""
    for block in iter_sample_blocks(system, model, eps, cfg, n_samples, seed,
                                    workers=workers, collect_values=True):
        f_x, f_u = block.values
        for a, b in zip(f_x, f_u):
            yield float(a), float(b)
