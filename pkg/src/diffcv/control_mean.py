"""Exact or independently-estimated control expectations E[F(U)] per model.

The limit process of the linear time-dependent oscillator is Gaussian, so its
functionals come from the first/second moment ODEs; the relaxation oscillator
uses a planar backward Kolmogorov solve; dry friction uses the symmetry-
reduced half-line solve; the reflected model has a closed form; the plastic
and obstacle models fall back to a massive Monte Carlo of the light limit
process, which also serves as the cross-check oracle for every other method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .accumulators import Welford, from_block
from .engine import StepperConfig, run_u_blocks
from .errors import DiffcvError
from .noise import NoiseModel, solve_lyapunov
from .pde import GridSpec, halfline_backward_value, rectangle_backward_value
from .systems import SystemSpec, limit_coefficients

__all__ = [
    "GridSpec",
    "ControlMean",
    "moment_ode_mean",
    "kolmogorov_fd_mean",
    "friction_fd_mean",
    "reflected_mean",
    "massive_mc_mean",
    "compute_control_mean",
]


@dataclass(frozen=True)
class ControlMean:
    """A control expectation, how it was obtained, and an error estimate."""

    value: float
    method: str  # moment_ode | kolmogorov_fd | friction_fd | closed_form | massive_mc
    error_estimate: float

    def __post_init__(self):
        if self.error_estimate < 0:
            raise ValueError("error estimate must be non-negative")


def _phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _moment_rhs(t, y, p_fn, q_fn, c2):
    m1, m2, m11, m22, m12 = y
    p, q = p_fn(t), q_fn(t)
    return np.array([
        m2,
        -p * m1 - q * m2,
        2.0 * m12,
        -2.0 * p * m12 - 2.0 * q * m22 + c2,
        m22 - p * m11 - q * m12,
    ])


def _rk4_moments(p_fn, q_fn, c_eff, x0, horizon, step):
    y = np.array([x0[0], x0[1], x0[0] ** 2, x0[1] ** 2, x0[0] * x0[1]], dtype=float)
    n = max(1, round(horizon / step))
    h = horizon / n
    c2 = c_eff * c_eff
    t = 0.0
    for _ in range(n):
        k1 = _moment_rhs(t, y, p_fn, q_fn, c2)
        k2 = _moment_rhs(t + h / 2, y + h / 2 * k1, p_fn, q_fn, c2)
        k3 = _moment_rhs(t + h / 2, y + h / 2 * k2, p_fn, q_fn, c2)
        k4 = _moment_rhs(t + h, y + h * k3, p_fn, q_fn, c2)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def moment_ode_mean(p_fn: Callable, q_fn: Callable, c_eff: float, x0,
                    horizon: float, step: float = 1e-4,
                    functional: str = "terminal_square_norm",
                    band: float = 1.0) -> ControlMean:
    """Gaussian limit of the linear oscillator via its moment ODEs.

    ``terminal_square_norm`` returns M11 + M22 at the horizon; the indicator
    band uses the normal law of the position coordinate.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (2,):
        raise ValueError("the linear oscillator state is two-dimensional")

    def value_at(h):
        m1, m2, m11, m22, m12 = _rk4_moments(p_fn, q_fn, c_eff, x0, horizon, h)
        if functional == "terminal_square_norm":
            return m11 + m22
        if functional == "terminal_indicator_band":
            var = max(m11 - m1 * m1, 0.0)
            if var == 0.0:
                return float(abs(m1) <= band)
            sd = math.sqrt(var)
            return _phi((band - m1) / sd) - _phi((-band - m1) / sd)
        raise ValueError(f"moment ODEs do not cover functional {functional!r}")

    v = value_at(step)
    v_coarse = value_at(2 * step)
    return ControlMean(value=v, method="moment_ode",
                       error_estimate=abs(v - v_coarse) / 15.0)


def _terminal_rect(functional: str, band: float):
    if functional == "terminal_square_norm":
        return lambda X1, X2: X1 * X1 + X2 * X2
    if functional == "terminal_indicator_band":
        return lambda X1, X2: (np.abs(X1) <= band).astype(float)
    raise ValueError(f"planar solver does not cover functional {functional!r}")


def default_vdp_grid() -> GridSpec:
    return GridSpec(bounds=((-4.0, 4.0), (-4.0, 4.0)), nodes=(401, 401))


def kolmogorov_fd_mean(system: SystemSpec, c_eff: float,
                       grid: Optional[GridSpec] = None,
                       terminal: Optional[str] = None,
                       accel: Optional[Callable] = None,
                       band: float = 1.0) -> ControlMean:
    """Backward planar solve for the relaxation oscillator's limit process.

    ``accel`` can replace the system's restoring force (used by oracle tests);
    the error estimate is the Richardson difference against a half-resolution
    solve.
    """
    grid = grid or default_vdp_grid()
    horizon = system.functional.horizon
    grid.check_margin(system.x0, c_eff * math.sqrt(horizon))
    if terminal is None:
        terminal, band = system.functional.kind, system.functional.band
    accel = accel or (lambda X1, X2: system.accel(X1, X2, 0.0))
    term = _terminal_rect(terminal, band)
    v = rectangle_backward_value(accel, c_eff, grid, term, horizon, system.x0)
    v_coarse = rectangle_backward_value(accel, c_eff, grid.coarsened(), term,
                                        horizon, system.x0)
    # the plain Richardson difference estimates the fine-grid error of a
    # first-order scheme with factor ~1; report twice that for safety
    return ControlMean(value=v, method="kolmogorov_fd",
                       error_estimate=2.0 * abs(v - v_coarse))


def default_friction_grid(c_eff: float, horizon: float) -> GridSpec:
    length = 6.0 * c_eff * math.sqrt(horizon)
    return GridSpec(bounds=((0.0, length),), nodes=(1201,), dt_solve=5e-4)


def friction_fd_mean(c_f: float, c_eff: float, grid: Optional[GridSpec] = None,
                     horizon: float = 1.0) -> ControlMean:
    """Half-line backward solve for the friction limit's second moment."""
    grid = grid or default_friction_grid(c_eff, horizon)
    v = halfline_backward_value(c_f, c_eff, grid, horizon)
    v_coarse = halfline_backward_value(c_f, c_eff, grid.coarsened(), horizon)
    return ControlMean(value=v, method="friction_fd",
                       error_estimate=2.0 * abs(v - v_coarse))


def reflected_mean(c_eff: float, horizon: float, x0: float = 0.0) -> ControlMean:
    """Closed form for the reflected driftless limit started at the boundary."""
    if x0 != 0.0:
        raise ValueError("closed form requires the process to start at 0")
    return ControlMean(value=c_eff * math.sqrt(2.0 * horizon / math.pi),
                       method="closed_form", error_estimate=0.0)


def massive_mc_mean(system: SystemSpec, model: NoiseModel, cfg: StepperConfig,
                    n_ref: int, seed: int) -> ControlMean:
    """Monte Carlo over the limit process only (light, eps-independent step).

    The universal cross-check oracle, and the control mean for the models
    whose dedicated solver is out of scope.
    """
    if n_ref < 10_000:
        raise ValueError("massive MC needs at least 1e4 reference samples")
    acc = Welford()
    for block in run_u_blocks(system, model, cfg, n_ref, seed):
        acc.merge(from_block(*block.fu))
    return ControlMean(value=acc.mean, method="massive_mc",
                       error_estimate=1.96 * acc.std_error)


_AUTO_METHOD = {
    "linear_timedep": "moment_ode",
    "van_der_pol": "kolmogorov_fd",
    "friction": "friction_fd",
    "elasto_plastic": "massive_mc",
    "impact": "massive_mc",
    "reflected_integral": "closed_form",
}


def compute_control_mean(system: SystemSpec, model: NoiseModel, cfg: StepperConfig,
                         method: str = "auto", n_ref: int = 1_000_000,
                         seed: int = 0, grid: Optional[GridSpec] = None,
                         ode_step: float = 1e-4,
                         mc_dt: Optional[float] = None) -> ControlMean:
    """Per-model dispatch for E[F(U)], honouring an explicit method override."""
    if method == "auto":
        method = _AUTO_METHOD[system.kind]
        if system.kind == "friction" and system.functional.kind != "terminal_square_norm":
            method = "massive_mc"
        if system.kind == "reflected_integral" and (
            system.functional.kind != "terminal_value" or system.x0[0] != 0.0
        ):
            method = "massive_mc"
    law = solve_lyapunov(model.a, model.k)
    c_eff = limit_coefficients(system, model, law).c_eff
    horizon = system.functional.horizon
    if method == "moment_ode":
        if system.kind != "linear_timedep":
            raise DiffcvError("moment ODEs cover the linear oscillator only")
        return moment_ode_mean(system.p, system.q, c_eff, system.x0, horizon,
                               step=ode_step, functional=system.functional.kind,
                               band=system.functional.band)
    if method == "kolmogorov_fd":
        if system.kind != "van_der_pol":
            raise DiffcvError("the planar solver covers the relaxation oscillator only")
        return kolmogorov_fd_mean(system, c_eff, grid=grid)
    if method == "friction_fd":
        if system.kind != "friction" or system.functional.kind != "terminal_square_norm":
            raise DiffcvError("the half-line solver covers the friction second moment only")
        return friction_fd_mean(system.c_f, c_eff, grid=grid, horizon=horizon)
    if method == "closed_form":
        return reflected_mean(c_eff, horizon, x0=float(system.x0[0]))
    if method == "massive_mc":
        mc_cfg = cfg if mc_dt is None else StepperConfig(
            dt=mc_dt, horizon=cfg.horizon, stability_policy=cfg.stability_policy)
        return massive_mc_mean(system, model, mc_cfg, n_ref, seed)
    raise ValueError(f"unknown control-mean method {method!r}")
