"""The six model systems, their functionals, and the limit-diffusion coefficients.

Each system couples a state x in R^n (plus, for the plastic model, a
constraint variable z in R^m) to a scalar colored forcing.  The smooth models
are second-order oscillators

    dx1 = x2 dt,   dx2 = -h(x1, x2, t) dt + forcing,

with h linear-time-dependent or of relaxation type; the non-smooth models put
a convex-potential subdifferential in the drift (dry friction c_f|x|, plastic
saturation chi_[-c,c], reflection chi_[0,inf)) or an obstacle with restitution.
The limit process replaces the colored forcing by white noise with matrix
Gamma = sigma A^{-1} K; for constant sigma the drift correction vanishes and
the limit drift equals the original drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .noise import InvariantLaw, NoiseModel

__all__ = [
    "FunctionalSpec",
    "ConvexPotential",
    "SystemSpec",
    "LimitCoefficients",
    "SYSTEM_KINDS",
    "FUNCTIONAL_KINDS",
    "make_system",
    "limit_coefficients",
    "project_interval",
    "yosida_gradient",
    "penalized_step",
]

SYSTEM_KINDS = (
    "linear_timedep",
    "van_der_pol",
    "friction",
    "elasto_plastic",
    "impact",
    "reflected_integral",
)

FUNCTIONAL_KINDS = (
    "terminal_square_norm",
    "terminal_indicator_band",
    "boundary_indicator",
    "terminal_velocity_square",
    "terminal_value",
)


@dataclass(frozen=True)
class FunctionalSpec:
    """Terminal-time functional F evaluated on a completed path.

    ``band`` is the half-width of the indicator band, ``threshold`` the exact
    boundary level used by the constraint indicator.
    """

    kind: str
    horizon: float = 1.0
    band: float = 1.0
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    def evaluate(self, x: np.ndarray, z: Optional[np.ndarray] = None) -> np.ndarray:
        """Evaluate on terminal states; x has shape (..., n), z (..., m)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "terminal_square_norm":
            out = np.sum(x * x, axis=-1)
            if z is not None and z.size:
                out = out + np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)
            return out
        if self.kind == "terminal_indicator_band":
            return (np.abs(x[..., 0]) <= self.band).astype(float)
        if self.kind == "boundary_indicator":
            if z is None:
                raise ValueError("boundary indicator needs a constraint state")
            return (np.abs(np.asarray(z, dtype=float)[..., 0]) == self.threshold).astype(float)
        if self.kind == "terminal_velocity_square":
            return x[..., 1] ** 2
        return x[..., 0]


@dataclass(frozen=True)
class ConvexPotential:
    """One of the built-in convex potentials: zero, c|x|, chi_[-c,c], chi_[0,inf)."""

    kind: str  # "zero" | "abs" | "interval" | "halfline"
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "abs", "interval", "halfline"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind in ("abs", "interval") and self.c <= 0:
            raise ValueError("coefficient must be positive")

    def project(self, x):
        """Metric projection onto the domain (identity for finite potentials)."""
        if self.kind == "interval":
            return np.clip(x, -self.c, self.c)
        if self.kind == "halfline":
            return np.maximum(x, 0.0)
        return x

    def yosida_grad(self, p: float, x):
        """Gradient of the regularized potential, p (x - prox) in closed form."""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "abs":
            return np.where(np.abs(x) <= self.c / p, p * x, self.c * np.sign(x))
        return p * (x - self.project(x))


@dataclass(frozen=True)
class SystemSpec:
    """One model system: dimensions, drift, forcing layout, constraints, F."""

    kind: str
    n: int
    m: int
    x0: np.ndarray
    z0: np.ndarray
    functional: FunctionalSpec
    forced_row: int
    potential_x: ConvexPotential = ConvexPotential("zero")
    potential_z: ConvexPotential = ConvexPotential("zero")
    # linear oscillator coefficients p(t) = p_base + p_amp cos(p_omega t),
    # q(t) = q_base + q_amp sin(q_omega t)
    p_base: float = 1.0
    p_amp: float = 1.0
    p_omega: float = 1.0
    q_base: float = 1.0
    q_amp: float = 1.0
    q_omega: float = 1.0
    nu: float = 1.0
    c_f: float = 0.25
    c_ep: float = 0.25
    p_o: float = 0.25
    restitution: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        object.__setattr__(self, "z0", np.asarray(self.z0, dtype=float).reshape(self.m))
        if self.kind not in SYSTEM_KINDS:
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.x0.shape != (self.n,):
            raise ValueError(f"x0 must have length {self.n}")
        if self.c_f <= 0 or self.c_ep <= 0 or self.p_o <= 0:
            raise ValueError("c_f, c_ep and the obstacle position must be positive")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")

    def p(self, t):
        return self.p_base + self.p_amp * np.cos(self.p_omega * t)

    def q(self, t):
        return self.q_base + self.q_amp * np.sin(self.q_omega * t)

    def accel(self, x1, x2, t):
        """Restoring term h(x1, x2, t) of the second-order models."""
        if self.kind == "linear_timedep":
            return self.p(t) * x1 + self.q(t) * x2
        if self.kind == "van_der_pol":
            return x1 - self.nu * (1.0 - x1 * x1) * x2
        if self.kind == "impact":
            return x1
        raise ValueError(f"{self.kind} is not a second-order system")

    def drift(self, state: np.ndarray, t: float) -> np.ndarray:
        """Smooth drift b (and b^Z) excluding forcing and subdifferential terms."""
        state = np.asarray(state, dtype=float)
        if self.kind in ("linear_timedep", "van_der_pol", "impact"):
            return np.array([state[1], -self.accel(state[0], state[1], t)])
        if self.kind == "elasto_plastic":
            return np.array([-state[1], state[0]])
        return np.zeros(self.n + self.m)

    @property
    def sigma_rows(self) -> np.ndarray:
        """Constant loading vector: which x-row receives the scalar forcing."""
        s = np.zeros(self.n)
        s[self.forced_row] = 1.0
        return s


@dataclass(frozen=True)
class LimitCoefficients:
    """Limit drift (identical to the drift for constant sigma) and diffusion."""

    drift_tilde: Callable[[np.ndarray, float], np.ndarray]
    gamma: np.ndarray
    gamma_row: np.ndarray
    c_eff: float


_DEFAULT_FUNCTIONAL = {
    "linear_timedep": "terminal_square_norm",
    "van_der_pol": "terminal_square_norm",
    "friction": "terminal_square_norm",
    "elasto_plastic": "terminal_square_norm",
    "impact": "terminal_velocity_square",
    "reflected_integral": "terminal_value",
}


def make_system(kind: str, functional: Optional[str] = None, horizon: float = 1.0,
                band: float = 1.0, x0=None, z0=None, **params) -> SystemSpec:
    """Build one of the six systems with its conventional defaults."""
    if kind not in SYSTEM_KINDS:
        raise ValueError(f"unknown system kind {kind!r}")
    fkind = functional or _DEFAULT_FUNCTIONAL[kind]
    n, m = (2, 0) if kind in ("linear_timedep", "van_der_pol", "impact") else (1, 0)
    if kind == "elasto_plastic":
        n, m = 1, 1
    threshold = 0.0
    if fkind == "boundary_indicator":
        threshold = float(params.get("c_ep", 0.25))
    func = FunctionalSpec(kind=fkind, horizon=horizon, band=band, threshold=threshold)
    pot_x = ConvexPotential("zero")
    pot_z = ConvexPotential("zero")
    if kind == "friction":
        pot_x = ConvexPotential("abs", float(params.get("c_f", 0.25)))
    elif kind == "elasto_plastic":
        pot_z = ConvexPotential("interval", float(params.get("c_ep", 0.25)))
    elif kind == "reflected_integral":
        pot_x = ConvexPotential("halfline")
    if x0 is None:
        x0 = np.zeros(n)
    if z0 is None:
        z0 = np.zeros(m)
    forced_row = n - 1  # the velocity row for second-order systems, row 0 in 1-D
    return SystemSpec(
        kind=kind, n=n, m=m, x0=x0, z0=z0, functional=func, forced_row=forced_row,
        potential_x=pot_x, potential_z=pot_z, **params,
    )


def limit_coefficients(system: SystemSpec, model: NoiseModel, law: InvariantLaw) -> LimitCoefficients:
    """Diffusion matrix Gamma = sigma A^{-1} K of the limit process.

    All built-in systems have constant sigma, so the drift correction is
    identically zero and the limit drift is the system drift itself.  The
    scalar forcing channel collapses Gamma to the row vector
    ``weights . A^{-1} K`` placed on the forced state row; ``c_eff`` is its
    Euclidean norm (the effective diffusion constant for d' = 1).
    """
    if law.c.shape[0] != model.d:
        raise ValueError("invariant law does not match the noise model")
    gamma_row = np.zeros(model.d_prime)
    for j in range(model.d_prime):
        s = 0.0
        for i in range(model.d):
            s += model.weights[i] * law.a_inv_k[i, j]
        gamma_row[j] = s
    gamma = np.outer(system.sigma_rows, gamma_row)
    c_eff = math.sqrt(float(np.dot(gamma_row, gamma_row)))
    return LimitCoefficients(
        drift_tilde=system.drift, gamma=gamma, gamma_row=gamma_row, c_eff=c_eff
    )


def project_interval(x, c: float):
    """Clamp to [-c, c]."""
    if c <= 0:
        raise ValueError("interval half-width must be positive")
    return np.clip(x, -c, c)


def yosida_gradient(potential: ConvexPotential, p: float, x):
    """Gradient of the Moreau-Yosida regularization at penalization level p."""
    if p < 1:
        raise ValueError("penalization parameter must be >= 1")
    return potential.yosida_grad(p, x)


def penalized_step(system: SystemSpec, p: float, state: np.ndarray, forcing: float,
                   dt: float) -> np.ndarray:
    """Explicit Euler step of the penalized dynamics.

    The subdifferential is replaced by the Yosida gradient; ``forcing`` is the
    instantaneous scalar forcing (already carrying its 1/eps or white-noise
    scaling) applied to the forced row.
    """
    if system.kind not in ("friction", "elasto_plastic", "reflected_integral"):
        raise ValueError(f"penalized scheme is not defined for {system.kind}")
    if p < 1:
        raise ValueError("penalization parameter must be >= 1")
    state = np.atleast_1d(np.asarray(state, dtype=float))
    b = system.drift(state, 0.0)
    out = state.copy()
    if system.kind == "elasto_plastic":
        x, z = state[0], state[1]
        out[0] = x + dt * (b[0] + forcing)
        out[1] = z + dt * (b[1] - float(system.potential_z.yosida_grad(p, z)))
    else:
        x = state[0]
        out[0] = x + dt * (b[0] + forcing - float(system.potential_x.yosida_grad(p, x)))
    return out


def with_functional(system: SystemSpec, kind: str, band: float = 1.0) -> SystemSpec:
    """Same system with a different terminal functional."""
    threshold = system.c_ep if kind == "boundary_indicator" else 0.0
    func = FunctionalSpec(kind=kind, horizon=system.functional.horizon,
                          band=band, threshold=threshold)
    return replace(system, functional=func)
