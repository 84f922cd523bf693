"""Backward Kolmogorov finite-difference solvers.

Both solvers march the backward equation in remaining time tau = T - t as a
forward parabolic problem: first-order upwind differences for the transport
terms (explicit), centered second differences for the diffusion (implicit,
one tridiagonal solve per step).  Far boundaries use zero-second-derivative
extrapolation, which reduces the implicit boundary rows to identities and
preserves constants exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded

from .errors import UnstableConfigurationError

__all__ = ["GridSpec", "rectangle_backward_value", "halfline_backward_value"]

CFL_TARGET = 0.9


@dataclass(frozen=True)
class GridSpec:
    """Spatial truncation, node counts, and the backward-solve time step.

    ``dt_solve=None`` picks the largest step with transport CFL <= 0.9.
    """

    bounds: Tuple[Tuple[float, float], ...]
    nodes: Tuple[int, ...]
    dt_solve: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(tuple(map(float, b)) for b in self.bounds))
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        if len(self.bounds) != len(self.nodes):
            raise ValueError("bounds and nodes must have matching dimensions")
        for (lo, hi), n in zip(self.bounds, self.nodes):
            if hi <= lo:
                raise ValueError(f"empty grid interval ({lo}, {hi})")
            if n < 5:
                raise ValueError("need at least 5 nodes per dimension")
        if self.dt_solve is not None and self.dt_solve <= 0:
            raise ValueError("dt_solve must be positive")

    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.nodes)]

    def check_margin(self, x0, sigma: float) -> None:
        """Bounds must contain x0 with at least four diffusion widths of margin."""
        x0 = np.atleast_1d(x0)
        for xi, (lo, hi) in zip(x0, self.bounds):
            if xi - lo < 4 * sigma or hi - xi < 4 * sigma:
                raise ValueError(
                    f"grid bounds ({lo}, {hi}) leave less than four diffusion "
                    f"widths ({4 * sigma:g}) of margin around {xi:g}"
                )

    def coarsened(self) -> "GridSpec":
        """Half resolution in every dimension (for Richardson differences)."""
        nodes = tuple(max(5, (n - 1) // 2 + 1) for n in self.nodes)
        dt = None if self.dt_solve is None else 2 * self.dt_solve
        return GridSpec(bounds=self.bounds, nodes=nodes, dt_solve=dt)


def _upwind(c: np.ndarray, a: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Monotone upwind discretization of a * d(c)/dx along ``axis``.

    Values are pulled from the side the characteristics come from; outside the
    grid the edge value is replicated (zero-gradient far field).
    """
    pad = [(0, 0)] * c.ndim
    pad[axis] = (1, 1)
    cp = np.pad(c, pad, mode="edge")
    sl = [slice(None)] * c.ndim

    def shifted(offset):
        s = sl.copy()
        s[axis] = slice(1 + offset, cp.shape[axis] - 1 + offset)
        return cp[tuple(s)]

    fwd = (shifted(1) - shifted(0)) / h
    bwd = (shifted(0) - shifted(-1)) / h
    return np.where(a > 0, a * fwd, a * bwd)


def _diffusion_factor(n: int, r: float, neumann_left: bool = False):
    """Banded matrix of (I - r D2) with zero-curvature far rows.

    With ``neumann_left`` the first row encodes a reflecting boundary through
    the symmetric ghost node; otherwise both edge rows are identities.
    """
    ab = np.zeros((3, n))
    ab[0, 2:] = -r
    ab[1, 1:-1] = 1.0 + 2.0 * r
    ab[1, [0, -1]] = 1.0
    ab[2, :-2] = -r
    if neumann_left:
        ab[1, 0] = 1.0 + 2.0 * r
        ab[0, 1] = -2.0 * r
    return ab


def _n_steps(horizon: float, dt_request: Optional[float], cfl_dt: float) -> Tuple[int, float]:
    if dt_request is not None:
        if dt_request > cfl_dt / CFL_TARGET:
            raise UnstableConfigurationError(
                f"transport CFL {dt_request / cfl_dt * CFL_TARGET:.3g} exceeds 1 "
                f"(dt_solve={dt_request:g}, limit {cfl_dt / CFL_TARGET:g})"
            )
        target = dt_request
    else:
        target = cfl_dt
    n = max(1, int(np.ceil(horizon / target)))
    return n, horizon / n


def rectangle_backward_value(accel: Callable, c_eff: float, grid: GridSpec,
                             terminal: Callable, horizon: float, x0) -> float:
    """Solve the planar backward equation and return the value at x0, t=0.

    The generator is x2 d/dx1 - accel(x1, x2) d/dx2 + (c_eff^2/2) d2/dx2^2;
    ``terminal`` maps meshgrid arrays (X1, X2) to the terminal condition.
    """
    (x1, x2) = grid.axes()
    dx1 = x1[1] - x1[0]
    dx2 = x2[1] - x2[0]
    xx1, xx2 = np.meshgrid(x1, x2, indexing="ij")
    a1 = np.broadcast_to(xx2, xx1.shape)  # coefficient of d/dx1
    a2 = -accel(xx1, xx2)                 # coefficient of d/dx2
    amax1 = float(np.max(np.abs(a1)))
    amax2 = float(np.max(np.abs(a2)))
    cfl_dt = CFL_TARGET / max(amax1 / dx1 + amax2 / dx2, 1e-300)
    n_t, dtau = _n_steps(horizon, grid.dt_solve, cfl_dt)

    c = terminal(xx1, xx2).astype(float)
    r = dtau * 0.5 * c_eff**2 / dx2**2
    ab = _diffusion_factor(len(x2), r)
    for _ in range(n_t):
        c_star = c + dtau * (_upwind(c, a1, dx1, axis=0) + _upwind(c, a2, dx2, axis=1))
        if r > 0:
            rhs = c_star.T.copy()
            rhs[0] = c_star.T[0]
            rhs[-1] = c_star.T[-1]
            c = solve_banded((1, 1), ab, rhs).T
        else:
            c = c_star
    return _bilinear(x1, x2, c, x0)


def _bilinear(x1, x2, c, pt) -> float:
    p1, p2 = float(pt[0]), float(pt[1])
    i = int(np.clip(np.searchsorted(x1, p1) - 1, 0, len(x1) - 2))
    j = int(np.clip(np.searchsorted(x2, p2) - 1, 0, len(x2) - 2))
    t1 = (p1 - x1[i]) / (x1[i + 1] - x1[i])
    t2 = (p2 - x2[j]) / (x2[j + 1] - x2[j])
    return float(
        c[i, j] * (1 - t1) * (1 - t2)
        + c[i + 1, j] * t1 * (1 - t2)
        + c[i, j + 1] * (1 - t1) * t2
        + c[i + 1, j + 1] * t1 * t2
    )


def halfline_backward_value(c_f: float, c_eff: float, grid: GridSpec,
                            horizon: float, terminal: Optional[Callable] = None,
                            x0: float = 0.0) -> float:
    """Symmetry-reduced solve on (0, L): drift -c_f, reflecting boundary at 0.

    Returns the value at x0 (the default 0 is the reflection point); the even
    extension recovers the solution on the whole line.
    """
    (x,) = grid.axes()
    if x[0] != 0.0:
        raise ValueError("half-line grid must start at 0")
    dx = x[1] - x[0]
    if terminal is None:
        terminal = lambda xx: xx * xx
    c = terminal(x).astype(float)
    cfl_dt = CFL_TARGET * dx / max(c_f, 1e-300)
    n_t, dtau = _n_steps(horizon, grid.dt_solve, cfl_dt)
    r = dtau * 0.5 * c_eff**2 / dx**2
    ab = _diffusion_factor(len(x), r, neumann_left=True)
    a = np.full_like(x, -c_f)
    for _ in range(n_t):
        # backward difference everywhere (a < 0); the symmetric ghost value
        # at the reflecting boundary makes the transport term vanish at x=0
        cp = np.empty(len(x) + 1)
        cp[1:] = c
        cp[0] = c[1]
        c_star = c + dtau * a * (cp[1:] - cp[:-1]) / dx
        if r > 0:
            c = solve_banded((1, 1), ab, c_star)
        else:
            c = c_star
    if x0 == 0.0:
        return float(c[0])
    i = int(np.clip(np.searchsorted(x, x0) - 1, 0, len(x) - 2))
    t = (x0 - x[i]) / dx
    return float(c[i] * (1 - t) + c[i + 1] * t)
