"""Vectorized coupled-path engine.

Both processes (the colored-noise path and its white-noise limit) are stepped
through the same Gaussian increment stream, block-vectorized across samples
with numba-compiled inner loops over time-major increment slabs.

Stream layout (reproducibility contract):
  * sample k of a run with stream root r draws from
    ``Generator(PCG64(SeedSequence(r)).jumped(k))``;
  * per sample, the first d standard normals initialize the driver from its
    stationary law, all subsequent draws are the shared increments in time
    order (d' values per step);
  * a deliberately decoupled limit process (mutation testing) draws its own
    increments from ``jumped(k + 2**48)``;
  * the limit-only (massive MC) driver uses per-block streams
    ``jumped(2**52 + block_index)`` with a fixed block size.

Block partitioning is fixed, so aggregates merged in block order are
bit-identical for any worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from numpy.random import PCG64, Generator, SeedSequence

from .errors import UnstableConfigurationError
from .noise import NoiseModel, InvariantLaw, StabilityWarning, solve_lyapunov
from .systems import SystemSpec, limit_coefficients

BLOCK_SIZE = 8192
TIME_CHUNK = 2048
U_TIME_CHUNK = 256
EXTENSION_CHUNK = 512
DECOUPLE_OFFSET = 2**48
UBLOCK_OFFSET = 2**52
_T_TOL = 1e-12


@dataclass(frozen=True)
class StepperConfig:
    """Time grid and stability policy of the coupled discretization."""

    dt: float = 1e-4
    horizon: float = 1.0
    stability_policy: str = "warn"  # "warn" | "reject"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.stability_policy not in ("warn", "reject"):
            raise ValueError("stability_policy must be 'warn' or 'reject'")
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(self.horizon, 1.0):
            raise ValueError(
                f"horizon {self.horizon} is not a positive integer multiple of dt {self.dt}"
            )

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)


@dataclass
class BlockResult:
    """Aggregates of one fixed-size sample block."""

    index: int
    count: int
    fx: tuple  # (count, mean, m2)
    fu: tuple
    diff: tuple
    gap: Optional[tuple] = None
    diag: dict = field(default_factory=dict)
    values: Optional[tuple] = None  # (f_x, f_u) arrays when requested


@dataclass
class TraceArrays:
    """Full per-iteration record of a single coupled path."""

    t_x: np.ndarray
    t_u: np.ndarray
    eta: np.ndarray
    x: np.ndarray
    z: Optional[np.ndarray]
    u: np.ndarray
    f_x: float
    f_u: float


def sample_stream(root: int, k: int) -> Generator:
    """The per-sample random stream derived from (stream root, sample index)."""
    return Generator(PCG64(SeedSequence(root)).jumped(k))


def check_stability(model: NoiseModel, eps: float, cfg: StepperConfig) -> bool:
    """Warn or reject when dt*||A||/eps^2 is past the explicit-Euler comfort zone.

    Returns True when the run is in the cautioned regime.
    """
    ratio = cfg.dt * model.norm_a() / eps**2
    if ratio > 0.5:
        msg = (f"dt*||A||/eps^2 = {ratio:.3g} > 0.5 at eps = {eps:g}; "
               f"noise discretization is to be considered with caution")
        if cfg.stability_policy == "reject":
            raise UnstableConfigurationError(msg)
        warnings.warn(msg, StabilityWarning, stacklevel=3)
        return True
    return False


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _transpose_slab(src, dst, csize):
    """(B, C, d') sample-major draws -> (C, B, d') time-major slab, tiled."""
    b_n = src.shape[0]
    dp = src.shape[2]
    tile = 128
    for b0 in range(0, b_n, tile):
        b1 = min(b0 + tile, b_n)
        for c0 in range(0, csize, tile):
            c1 = min(c0 + tile, csize)
            for k in range(b0, b1):
                for c in range(c0, c1):
                    for j in range(dp):
                        dst[c, k, j] = src[k, c, j]


@njit(cache=True)
def batch_matvec(m, z, out):
    """out[k, i] = sum_j m[i, j] z[k, j] with fixed summation order."""
    b_n = z.shape[0]
    nr, nc = m.shape
    for k in range(b_n):
        for i in range(nr):
            s = 0.0
            for j in range(nc):
                s += m[i, j] * z[k, j]
            out[k, i] = s


@njit(cache=True, inline="always")
def _eta_step(eta, scratch, k, a, kmat, zs, n, dte2, inv_eps, sqdt):
    """One driver step for sample k: eta - dt/eps^2 A eta + 1/eps K (sqdt z)."""
    d = a.shape[0]
    dp = kmat.shape[1]
    for i in range(d):
        s = 0.0
        for j in range(d):
            s += a[i, j] * eta[k, j]
        kick = 0.0
        for j in range(dp):
            kick += kmat[i, j] * (sqdt * zs[n, k, j])
        scratch[i] = eta[k, i] - dte2 * s + inv_eps * kick
    for i in range(d):
        eta[k, i] = scratch[i]


@njit(cache=True, inline="always")
def _forcing(eta, k, w):
    """Scalar colored forcing weights . eta for sample k."""
    s = 0.0
    for j in range(w.shape[0]):
        s += w[j] * eta[k, j]
    return s


@njit(cache=True, inline="always")
def _u_kick(zs, n, k, grow, sq):
    """Limit-process diffusion increment Gamma_row . (sq * z_n)."""
    s = 0.0
    for j in range(grow.shape[0]):
        s += grow[j] * (sq * zs[n, k, j])
    return s


@njit(cache=True)
def cp_oscillator(x1, x2, u1, u2, eta, zs, csize, n0, dt, sqdt, dtie, dte2,
                  inv_eps, a, kmat, w, grow, vdp, nu,
                  p_base, p_amp, p_om, q_base, q_amp, q_om,
                  store, st_x, st_u, st_eta):
    """Coupled step of the smooth second-order systems (linear or relaxation)."""
    b_n = x1.shape[0]
    d = a.shape[0]
    scratch = np.empty(d)
    for n in range(csize):
        t = (n0 + n) * dt
        p = p_base + p_amp * math.cos(p_om * t)
        q = q_base + q_amp * math.sin(q_om * t)
        for k in range(b_n):
            fx = _forcing(eta, k, w)
            gu = _u_kick(zs, n, k, grow, sqdt)
            if vdp:
                hx = x1[k] - nu * (1.0 - x1[k] * x1[k]) * x2[k]
                hu = u1[k] - nu * (1.0 - u1[k] * u1[k]) * u2[k]
            else:
                hx = p * x1[k] + q * x2[k]
                hu = p * u1[k] + q * u2[k]
            nx1 = x1[k] + dt * x2[k]
            nx2 = x2[k] - dt * hx + dtie * fx
            nu1 = u1[k] + dt * u2[k]
            nu2 = u2[k] - dt * hu + gu
            x1[k] = nx1
            x2[k] = nx2
            u1[k] = nu1
            u2[k] = nu2
            _eta_step(eta, scratch, k, a, kmat, zs, n, dte2, inv_eps, sqdt)
            if store:
                st_x[n0 + n + 1, 0] = x1[k]
                st_x[n0 + n + 1, 1] = x2[k]
                st_u[n0 + n + 1, 0] = u1[k]
                st_u[n0 + n + 1, 1] = u2[k]
                for i in range(d):
                    st_eta[n0 + n + 1, i] = eta[k, i]


@njit(cache=True)
def cp_friction(x, u, eta, zs, csize, n0, dt, sqdt, dtie, dte2, inv_eps,
                a, kmat, w, grow, c_f, store, st_x, st_u, st_eta):
    """Coupled projection step of the dry-friction system."""
    b_n = x.shape[0]
    d = a.shape[0]
    scratch = np.empty(d)
    for n in range(csize):
        for k in range(b_n):
            fx = _forcing(eta, k, w)
            gu = _u_kick(zs, n, k, grow, sqdt)
            argx = x[k] / dt + inv_eps * fx
            prx = min(max(argx, -c_f), c_f)
            x[k] = x[k] + dtie * fx - dt * prx
            argu = u[k] / dt + gu / dt
            pru = min(max(argu, -c_f), c_f)
            u[k] = u[k] + gu - dt * pru
            _eta_step(eta, scratch, k, a, kmat, zs, n, dte2, inv_eps, sqdt)
            if store:
                st_x[n0 + n + 1, 0] = x[k]
                st_u[n0 + n + 1, 0] = u[k]
                for i in range(d):
                    st_eta[n0 + n + 1, i] = eta[k, i]


@njit(cache=True)
def cp_elasto_plastic(x, z, ux, uz, eta, zs, csize, n0, dt, sqdt, dtie, dte2,
                      inv_eps, a, kmat, w, grow, c_ep, diag,
                      store, st_x, st_z, st_u, st_eta):
    """Coupled projection step of the elasto-plastic system.

    diag[0] accumulates max |z| over the block (x-process),
    diag[1] the same for the limit process.
    """
    b_n = x.shape[0]
    d = a.shape[0]
    scratch = np.empty(d)
    for n in range(csize):
        for k in range(b_n):
            fx = _forcing(eta, k, w)
            gu = _u_kick(zs, n, k, grow, sqdt)
            nz = min(max(z[k] + dt * x[k], -c_ep), c_ep)
            nx = x[k] - dt * z[k] + dtie * fx
            nuz = min(max(uz[k] + dt * ux[k], -c_ep), c_ep)
            nux = ux[k] - dt * uz[k] + gu
            z[k] = nz
            x[k] = nx
            uz[k] = nuz
            ux[k] = nux
            if abs(nz) > diag[0]:
                diag[0] = abs(nz)
            if abs(nuz) > diag[1]:
                diag[1] = abs(nuz)
            _eta_step(eta, scratch, k, a, kmat, zs, n, dte2, inv_eps, sqdt)
            if store:
                st_x[n0 + n + 1, 0] = x[k]
                st_z[n0 + n + 1, 0] = z[k]
                st_u[n0 + n + 1, 0] = ux[k]
                st_u[n0 + n + 1, 1] = uz[k]
                for i in range(d):
                    st_eta[n0 + n + 1, i] = eta[k, i]


@njit(cache=True)
def cp_reflected(x, u, eta, zs, csize, n0, dt, sqdt, dtie, dte2, inv_eps,
                 a, kmat, w, grow, diag, store, st_x, st_u, st_eta):
    """Coupled projection step of the reflected integrated-noise system.

    diag[0] tracks min x, diag[1] min u (both must stay >= 0).
    """
    b_n = x.shape[0]
    d = a.shape[0]
    scratch = np.empty(d)
    for n in range(csize):
        for k in range(b_n):
            fx = _forcing(eta, k, w)
            gu = _u_kick(zs, n, k, grow, sqdt)
            x[k] = max(x[k] + dtie * fx, 0.0)
            u[k] = max(u[k] + gu, 0.0)
            if x[k] < diag[0]:
                diag[0] = x[k]
            if u[k] < diag[1]:
                diag[1] = u[k]
            _eta_step(eta, scratch, k, a, kmat, zs, n, dte2, inv_eps, sqdt)
            if store:
                st_x[n0 + n + 1, 0] = x[k]
                st_u[n0 + n + 1, 0] = u[k]
                for i in range(d):
                    st_eta[n0 + n + 1, i] = eta[k, i]


@njit(cache=True)
def _u_reflected_proj(u, zs, csize, sqdt, grow):
    b_n = u.shape[0]
    for n in range(csize):
        for k in range(b_n):
            gu = _u_kick(zs, n, k, grow, sqdt)
            u[k] = max(u[k] + gu, 0.0)


@njit(cache=True)
def cp_impact(x1, x2, u1, u2, eta, tx, tu, zs, csize, n0, dt, horizon,
              inv_eps, inv_eps2, a, kmat, w, grow, p_o, rest, diag,
              store, st_x, st_u, st_eta, st_tx, st_tu):
    """Coupled step of the obstacle system with per-process event clocks.

    Each process detects its own barrier crossings; a crossing shortens that
    process' step to theta*h, rescales its own forcing over theta*h with the
    same shared draw, and flips the velocity with the restitution factor.  A
    process whose clock has reached the horizon ignores further increments.

    diag: [0] collision count (x), [1] max | |x1|-P_O | at x events,
          [2] collision count (u), [3] same deviation for u events.
    Returns the number of samples still short of the horizon.
    """
    b_n = x1.shape[0]
    d = a.shape[0]
    scratch = np.empty(d)
    active = 0
    for n in range(csize):
        for k in range(b_n):
            rem = horizon - tx[k]
            if rem > _T_TOL:
                h = dt if rem > dt else rem
                sqh = math.sqrt(h)
                fx = _forcing(eta, k, w)
                c1 = x1[k] + h * x2[k]
                c2 = x2[k] - h * x1[k] + (h * inv_eps) * fx
                if abs(c1) > p_o:
                    bar = p_o if c1 > p_o else -p_o
                    theta = (bar - x1[k]) / (c1 - x1[k])
                    if theta <= 0.0:
                        # starting on the barrier moving outward: flip, full step
                        v = -rest * x2[k]
                        x1v = x1[k]
                        x1[k] = x1v + h * v
                        x2[k] = v - h * x1v + (h * inv_eps) * fx
                        _eta_step(eta, scratch, k, a, kmat, zs, n,
                                  h * inv_eps2, inv_eps, sqh)
                        tx[k] = tx[k] + h
                        diag[0] += 1.0
                    else:
                        th = theta * h
                        sqth = math.sqrt(th)
                        x2[k] = -rest * (x2[k] - th * x1[k] + (th * inv_eps) * fx)
                        x1[k] = bar
                        dev = abs(abs(x1[k]) - p_o)
                        if dev > diag[1]:
                            diag[1] = dev
                        _eta_step(eta, scratch, k, a, kmat, zs, n,
                                  th * inv_eps2, inv_eps, sqth)
                        tx[k] = tx[k] + th
                        diag[0] += 1.0
                else:
                    x1[k] = c1
                    x2[k] = c2
                    _eta_step(eta, scratch, k, a, kmat, zs, n,
                              h * inv_eps2, inv_eps, sqh)
                    tx[k] = tx[k] + h
            rem = horizon - tu[k]
            if rem > _T_TOL:
                h = dt if rem > dt else rem
                sqh = math.sqrt(h)
                gu = _u_kick(zs, n, k, grow, sqh)
                c1 = u1[k] + h * u2[k]
                c2 = u2[k] - h * u1[k] + gu
                if abs(c1) > p_o:
                    bar = p_o if c1 > p_o else -p_o
                    theta = (bar - u1[k]) / (c1 - u1[k])
                    if theta <= 0.0:
                        v = -rest * u2[k]
                        u1v = u1[k]
                        u1[k] = u1v + h * v
                        u2[k] = v - h * u1v + gu
                        tu[k] = tu[k] + h
                        diag[2] += 1.0
                    else:
                        th = theta * h
                        gu = _u_kick(zs, n, k, grow, math.sqrt(th))
                        u2[k] = -rest * (u2[k] - th * u1[k] + gu)
                        u1[k] = bar
                        dev = abs(abs(u1[k]) - p_o)
                        if dev > diag[3]:
                            diag[3] = dev
                        tu[k] = tu[k] + th
                        diag[2] += 1.0
                else:
                    u1[k] = c1
                    u2[k] = c2
                    tu[k] = tu[k] + h
            if store:
                st_x[n0 + n + 1, 0] = x1[k]
                st_x[n0 + n + 1, 1] = x2[k]
                st_u[n0 + n + 1, 0] = u1[k]
                st_u[n0 + n + 1, 1] = u2[k]
                st_tx[n0 + n + 1] = tx[k]
                st_tu[n0 + n + 1] = tu[k]
                for i in range(d):
                    st_eta[n0 + n + 1, i] = eta[k, i]
    for k in range(b_n):
        if horizon - tx[k] > _T_TOL or horizon - tu[k] > _T_TOL:
            active += 1
    return active


@njit(cache=True)
def pen_friction(xproj, xpen, sup2, eta, zs, csize, dt, dtie, dte2, inv_eps,
                 a, kmat, w, c_f, p_values):
    """Penalized trajectories against the projection trajectory, shared noise.

    xpen has shape (P, B); sup2[p, k] accumulates sup_t |X^p - X|^2.
    """
    b_n = xproj.shape[0]
    d = a.shape[0]
    n_p = p_values.shape[0]
    scratch = np.empty(d)
    sqdt = math.sqrt(dt)
    for n in range(csize):
        for k in range(b_n):
            fx = _forcing(eta, k, w)
            arg = xproj[k] / dt + inv_eps * fx
            pr = min(max(arg, -c_f), c_f)
            xproj[k] = xproj[k] + dtie * fx - dt * pr
            for ip in range(n_p):
                p = p_values[ip]
                xv = xpen[ip, k]
                g = p * xv
                if g > c_f:
                    g = c_f
                elif g < -c_f:
                    g = -c_f
                xv = xv + dt * (inv_eps * fx - g)
                xpen[ip, k] = xv
                dev = (xv - xproj[k]) ** 2
                if dev > sup2[ip, k]:
                    sup2[ip, k] = dev
            _eta_step(eta, scratch, k, a, kmat, zs, n, dte2, inv_eps, sqdt)


@njit(cache=True)
def u_oscillator(u1, u2, zs, csize, n0, dt, sqdt, grow, vdp, nu,
                 p_base, p_amp, p_om, q_base, q_amp, q_om):
    b_n = u1.shape[0]
    for n in range(csize):
        t = (n0 + n) * dt
        p = p_base + p_amp * math.cos(p_om * t)
        q = q_base + q_amp * math.sin(q_om * t)
        for k in range(b_n):
            gu = _u_kick(zs, n, k, grow, sqdt)
            if vdp:
                hu = u1[k] - nu * (1.0 - u1[k] * u1[k]) * u2[k]
            else:
                hu = p * u1[k] + q * u2[k]
            nu1 = u1[k] + dt * u2[k]
            nu2 = u2[k] - dt * hu + gu
            u1[k] = nu1
            u2[k] = nu2


@njit(cache=True)
def u_friction(u, zs, csize, dt, sqdt, grow, c_f):
    b_n = u.shape[0]
    for n in range(csize):
        for k in range(b_n):
            gu = _u_kick(zs, n, k, grow, sqdt)
            arg = u[k] / dt + gu / dt
            pr = min(max(arg, -c_f), c_f)
            u[k] = u[k] + gu - dt * pr


@njit(cache=True)
def u_elasto_plastic(ux, uz, zs, csize, dt, sqdt, grow, c_ep):
    b_n = ux.shape[0]
    for n in range(csize):
        for k in range(b_n):
            gu = _u_kick(zs, n, k, grow, sqdt)
            nuz = min(max(uz[k] + dt * ux[k], -c_ep), c_ep)
            nux = ux[k] - dt * uz[k] + gu
            uz[k] = nuz
            ux[k] = nux


@njit(cache=True)
def u_reflected_exact(u, zs, csize, sqdt, grow):
    """Reflected driftless limit process via the exact transition |x + inc|."""
    b_n = u.shape[0]
    for n in range(csize):
        for k in range(b_n):
            gu = _u_kick(zs, n, k, grow, sqdt)
            u[k] = abs(u[k] + gu)


@njit(cache=True)
def u_impact(u1, u2, tu, zs, csize, dt, horizon, grow, p_o, rest):
    b_n = u1.shape[0]
    active = 0
    for n in range(csize):
        for k in range(b_n):
            rem = horizon - tu[k]
            if rem > _T_TOL:
                h = dt if rem > dt else rem
                sqh = math.sqrt(h)
                gu = _u_kick(zs, n, k, grow, sqh)
                c1 = u1[k] + h * u2[k]
                c2 = u2[k] - h * u1[k] + gu
                if abs(c1) > p_o:
                    bar = p_o if c1 > p_o else -p_o
                    theta = (bar - u1[k]) / (c1 - u1[k])
                    if theta <= 0.0:
                        v = -rest * u2[k]
                        u1v = u1[k]
                        u1[k] = u1v + h * v
                        u2[k] = v - h * u1v + gu
                        tu[k] = tu[k] + h
                    else:
                        th = theta * h
                        gu = _u_kick(zs, n, k, grow, math.sqrt(th))
                        u2[k] = -rest * (u2[k] - th * u1[k] + gu)
                        u1[k] = bar
                        tu[k] = tu[k] + th
                else:
                    u1[k] = c1
                    u2[k] = c2
                    tu[k] = tu[k] + h
    for k in range(b_n):
        if horizon - tu[k] > _T_TOL:
            active += 1
    return active


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _aggregate(values: np.ndarray) -> tuple:
    mean = float(np.mean(values))
    m2 = float(np.sum((values - mean) ** 2))
    return (int(values.size), mean, m2)


class _CoupledRun:
    """State and dispatch for one block of coupled paths."""

    def __init__(self, system: SystemSpec, model: NoiseModel, law: InvariantLaw,
                 eps: float, cfg: StepperConfig, stream_root: int, start: int,
                 size: int, decouple: bool = False,
                 initial_eta: Optional[np.ndarray] = None, store: bool = False):
        self.system, self.model, self.law = system, model, law
        self.eps, self.cfg, self.size = eps, cfg, size
        self.decouple = decouple
        self.store = store
        d, dp = model.d, model.d_prime
        self.gamma_row = limit_coefficients(system, model, law).gamma_row
        base = PCG64(SeedSequence(stream_root))
        self.gens = [Generator(base.jumped(start + k)) for k in range(size)]
        self.ugens = ([Generator(base.jumped(start + k + DECOUPLE_OFFSET))
                       for k in range(size)] if decouple else None)

        self.eta = np.empty((size, d))
        z0 = np.empty((size, d))
        for k, g in enumerate(self.gens):
            z0[k] = g.standard_normal(d)
        if initial_eta is not None:
            self.eta[:] = np.asarray(initial_eta, dtype=float)
        else:
            batch_matvec(law.sqrt_c, z0, self.eta)

        dt, eps_ = cfg.dt, eps
        self.sc = dict(dt=dt, sqdt=math.sqrt(dt), dtie=dt / eps_,
                       dte2=dt / eps_**2, inv_eps=1.0 / eps_,
                       inv_eps2=1.0 / eps_**2)
        self.x = np.tile(system.x0, (size, 1))
        self.u = np.tile(np.concatenate([system.x0, system.z0]), (size, 1))
        self.z = np.tile(system.z0, (size, 1)) if system.m else None
        self.tx = np.zeros(size)
        self.tu = np.zeros(size)
        self.diag = np.zeros(4)
        if system.kind == "reflected_integral":
            self.diag[:2] = np.inf
        self.row_buf = np.empty((size, TIME_CHUNK * dp))
        self.slab = np.empty((TIME_CHUNK, size, dp))
        if decouple:
            self.urow_buf = np.empty((size, TIME_CHUNK * dp))
            self.uslab = np.empty((TIME_CHUNK, size, dp))
        self._dummy2 = np.zeros((1, 2))
        self._dummy1 = np.zeros(1)
        if store:
            if size != 1:
                raise ValueError("trace storage requires a single path")
            cap = cfg.n_steps + (16 * cfg.n_steps + 1024 if system.kind == "impact" else 0)
            self.st_eta = np.zeros((cap + 1, d))
            self.st_x = np.zeros((cap + 1, max(system.n, 2)))
            self.st_z = np.zeros((cap + 1, max(system.m, 1)))
            self.st_u = np.zeros((cap + 1, max(system.n + system.m, 2)))
            self.st_tx = np.zeros(cap + 1)
            self.st_tu = np.zeros(cap + 1)
            self.st_eta[0] = self.eta[0]
            self.st_x[0, : system.n] = system.x0
            if system.m:
                self.st_z[0, 0] = system.z0[0]
            self.st_u[0, : system.n + system.m] = np.concatenate([system.x0, system.z0])
        else:
            self.st_eta = self.st_x = self.st_z = self.st_u = self._dummy2
            self.st_tx = self.st_tu = self._dummy1

    def _draw(self, gens, row_buf, slab, csize):
        dp = self.model.d_prime
        for k, g in enumerate(gens):
            g.standard_normal(csize * dp, out=row_buf[k, : csize * dp])
        _transpose_slab(row_buf.reshape(self.size, TIME_CHUNK, dp), slab, csize)

    def run_chunk(self, n0: int, csize: int) -> int:
        self._draw(self.gens, self.row_buf, self.slab, csize)
        zx = self.slab
        if self.decouple:
            self._draw(self.ugens, self.urow_buf, self.uslab, csize)
            zu = self.uslab
        else:
            zu = self.slab
        s, m, sc = self.system, self.model, self.sc
        kind = s.kind
        if self.decouple and kind != "impact":
            # step the x-process with a discarded limit companion, the real
            # limit process with its own (independent) increments
            junk1 = np.zeros(self.size)
            junk2 = np.zeros(self.size)
        if kind in ("linear_timedep", "van_der_pol"):
            vdp = kind == "van_der_pol"
            if not self.decouple:
                cp_oscillator(self.x[:, 0], self.x[:, 1], self.u[:, 0], self.u[:, 1],
                              self.eta, zx, csize, n0, sc["dt"], sc["sqdt"],
                              sc["dtie"], sc["dte2"], sc["inv_eps"], m.a, m.k,
                              m.weights, self.gamma_row, vdp, s.nu,
                              s.p_base, s.p_amp, s.p_omega, s.q_base, s.q_amp,
                              s.q_omega, self.store, self.st_x, self.st_u,
                              self.st_eta)
            else:
                cp_oscillator(self.x[:, 0], self.x[:, 1], junk1, junk2,
                              self.eta, zx, csize, n0, sc["dt"], sc["sqdt"],
                              sc["dtie"], sc["dte2"], sc["inv_eps"], m.a, m.k,
                              m.weights, self.gamma_row, vdp, s.nu,
                              s.p_base, s.p_amp, s.p_omega, s.q_base, s.q_amp,
                              s.q_omega, False, self._dummy2, self._dummy2,
                              self._dummy2)
                u_oscillator(self.u[:, 0], self.u[:, 1], zu, csize, n0, sc["dt"],
                             sc["sqdt"], self.gamma_row, vdp, s.nu,
                             s.p_base, s.p_amp, s.p_omega, s.q_base, s.q_amp,
                             s.q_omega)
            return 0
        if kind == "friction":
            if not self.decouple:
                cp_friction(self.x[:, 0], self.u[:, 0], self.eta, zx, csize, n0,
                            sc["dt"], sc["sqdt"], sc["dtie"], sc["dte2"],
                            sc["inv_eps"], m.a, m.k, m.weights, self.gamma_row,
                            s.c_f, self.store, self.st_x, self.st_u, self.st_eta)
            else:
                cp_friction(self.x[:, 0], junk1, self.eta, zx, csize, n0,
                            sc["dt"], sc["sqdt"], sc["dtie"], sc["dte2"],
                            sc["inv_eps"], m.a, m.k, m.weights, self.gamma_row,
                            s.c_f, False, self._dummy2, self._dummy2, self._dummy2)
                u_friction(self.u[:, 0], zu, csize, sc["dt"], sc["sqdt"],
                           self.gamma_row, s.c_f)
            return 0
        if kind == "elasto_plastic":
            if not self.decouple:
                cp_elasto_plastic(self.x[:, 0], self.z[:, 0], self.u[:, 0],
                                  self.u[:, 1], self.eta, zx, csize, n0, sc["dt"],
                                  sc["sqdt"], sc["dtie"], sc["dte2"], sc["inv_eps"],
                                  m.a, m.k, m.weights, self.gamma_row, s.c_ep,
                                  self.diag, self.store, self.st_x, self.st_z,
                                  self.st_u, self.st_eta)
            else:
                cp_elasto_plastic(self.x[:, 0], self.z[:, 0], junk1, junk2,
                                  self.eta, zx, csize, n0, sc["dt"], sc["sqdt"],
                                  sc["dtie"], sc["dte2"], sc["inv_eps"], m.a, m.k,
                                  m.weights, self.gamma_row, s.c_ep, self.diag,
                                  False, self._dummy2, self._dummy2, self._dummy2,
                                  self._dummy2)
                u_elasto_plastic(self.u[:, 0], self.u[:, 1], zu, csize, sc["dt"],
                                 sc["sqdt"], self.gamma_row, s.c_ep)
            return 0
        if kind == "reflected_integral":
            if not self.decouple:
                cp_reflected(self.x[:, 0], self.u[:, 0], self.eta, zx, csize, n0,
                             sc["dt"], sc["sqdt"], sc["dtie"], sc["dte2"],
                             sc["inv_eps"], m.a, m.k, m.weights, self.gamma_row,
                             self.diag, self.store, self.st_x, self.st_u,
                             self.st_eta)
            else:
                cp_reflected(self.x[:, 0], junk1, self.eta, zx, csize, n0,
                             sc["dt"], sc["sqdt"], sc["dtie"], sc["dte2"],
                             sc["inv_eps"], m.a, m.k, m.weights, self.gamma_row,
                             self.diag, False, self._dummy2, self._dummy2,
                             self._dummy2)
                _u_reflected_proj(self.u[:, 0], zu, csize, sc["sqdt"],
                                  self.gamma_row)
            return 0
        if kind == "impact":
            if not self.decouple:
                return cp_impact(self.x[:, 0], self.x[:, 1], self.u[:, 0],
                                 self.u[:, 1], self.eta, self.tx, self.tu, zx,
                                 csize, n0, sc["dt"], self.cfg.horizon,
                                 sc["inv_eps"], sc["inv_eps2"], m.a, m.k,
                                 m.weights, self.gamma_row, s.p_o, s.restitution,
                                 self.diag, self.store, self.st_x, self.st_u,
                                 self.st_eta, self.st_tx, self.st_tu)
            ax = cp_impact(self.x[:, 0], self.x[:, 1], np.zeros(self.size),
                           np.zeros(self.size), self.eta, self.tx,
                           np.full(self.size, self.cfg.horizon), zx, csize, n0,
                           sc["dt"], self.cfg.horizon, sc["inv_eps"],
                           sc["inv_eps2"], m.a, m.k, m.weights, self.gamma_row,
                           s.p_o, s.restitution, self.diag, False, self._dummy2,
                           self._dummy2, self._dummy2, self._dummy1, self._dummy1)
            au = u_impact(self.u[:, 0], self.u[:, 1], self.tu, zu, csize,
                          sc["dt"], self.cfg.horizon, self.gamma_row, s.p_o,
                          s.restitution)
            return max(ax, au)
        raise ValueError(f"unknown system kind {kind!r}")

    def run(self) -> int:
        """Run all chunks; returns the total number of iterations stepped."""
        n_steps = self.cfg.n_steps
        n0 = 0
        active = 0
        while n0 < n_steps:
            csize = min(TIME_CHUNK, n_steps - n0)
            active = self.run_chunk(n0, csize)
            n0 += csize
        if self.system.kind == "impact":
            budget = 16 * n_steps + 1024
            while active > 0:
                active = self.run_chunk(n0, EXTENSION_CHUNK)
                n0 += EXTENSION_CHUNK
                if n0 > budget:  # pragma: no cover - defensive
                    raise RuntimeError("impact sub-stepping failed to reach the horizon")
        return n0

    def functionals(self):
        f = self.system.functional
        f_x = f.evaluate(self.x, self.z)
        if self.system.m:
            f_u = f.evaluate(self.u[:, : self.system.n], self.u[:, self.system.n:])
        else:
            f_u = f.evaluate(self.u, None)
        return np.atleast_1d(f_x), np.atleast_1d(f_u)

    def diag_dict(self) -> dict:
        kind = self.system.kind
        if kind == "elasto_plastic":
            return {"max_abs_z_x": self.diag[0], "max_abs_z_u": self.diag[1]}
        if kind == "reflected_integral":
            return {"min_x": self.diag[0], "min_u": self.diag[1]}
        if kind == "impact":
            return {"collisions_x": self.diag[0], "barrier_dev_x": self.diag[1],
                    "collisions_u": self.diag[2], "barrier_dev_u": self.diag[3]}
        return {}


def run_coupled_block(system: SystemSpec, model: NoiseModel, law: InvariantLaw,
                      eps: float, cfg: StepperConfig, stream_root: int,
                      start: int, size: int, index: int = 0,
                      track_gap: bool = False, decouple: bool = False,
                      collect_values: bool = False,
                      initial_eta: Optional[np.ndarray] = None) -> BlockResult:
    """Simulate one block of coupled sample paths and aggregate the functionals."""
    run = _CoupledRun(system, model, law, eps, cfg, stream_root, start, size,
                      decouple=decouple, initial_eta=initial_eta)
    run.run()
    f_x, f_u = run.functionals()
    diff = f_x - f_u
    gap = None
    if track_gap:
        full_x = np.hstack([run.x, run.z]) if system.m else run.x
        gap = _aggregate(np.sum((full_x - run.u) ** 2, axis=1))
    return BlockResult(
        index=index, count=size,
        fx=_aggregate(f_x), fu=_aggregate(f_u), diff=_aggregate(diff),
        gap=gap, diag=run.diag_dict(),
        values=(f_x, f_u) if collect_values else None,
    )


def simulate_trace(system: SystemSpec, model: NoiseModel, law: InvariantLaw,
                   eps: float, cfg: StepperConfig, stream_root: int,
                   initial_eta: Optional[np.ndarray] = None) -> TraceArrays:
    """Simulate a single coupled path, recording every iteration."""
    run = _CoupledRun(system, model, law, eps, cfg, stream_root, 0, 1,
                      initial_eta=initial_eta, store=True)
    iters = run.run()
    f_x, f_u = run.functionals()
    n, m = system.n, system.m
    if system.kind == "impact":
        t_x = run.st_tx[: iters + 1].copy()
        t_u = run.st_tu[: iters + 1].copy()
        # trim trailing no-op iterations (both clocks already at the horizon)
        last = iters
        while last > 0 and t_x[last] == t_x[last - 1] and t_u[last] == t_u[last - 1]:
            last -= 1
        sl = slice(0, last + 1)
        t_x, t_u = t_x[sl], t_u[sl]
    else:
        grid = cfg.dt * np.arange(iters + 1)
        grid[-1] = cfg.horizon
        t_x = t_u = grid
        sl = slice(0, iters + 1)
    return TraceArrays(
        t_x=t_x, t_u=t_u,
        eta=run.st_eta[sl].copy(),
        x=run.st_x[sl, :n].copy(),
        z=run.st_z[sl, :m].copy() if m else None,
        u=run.st_u[sl, : n + m].copy(),
        f_x=float(f_x[0]), f_u=float(f_u[0]),
    )


def _block_task(args):
    (system, model, law, eps, cfg, root, start, size, index, track_gap,
     decouple, collect_values) = args
    return run_coupled_block(system, model, law, eps, cfg, root, start, size,
                             index=index, track_gap=track_gap, decouple=decouple,
                             collect_values=collect_values)


def run_coupled_blocks(system: SystemSpec, model: NoiseModel, eps: float,
                       cfg: StepperConfig, n_samples: int, stream_root: int,
                       workers: int = 1, law: Optional[InvariantLaw] = None,
                       track_gap: bool = False, decouple: bool = False,
                       collect_values: bool = False):
    """Simulate n_samples coupled paths in fixed-size blocks; yields BlockResult
    in block order regardless of the worker count."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    law = law or solve_lyapunov(model.a, model.k)
    check_stability(model, eps, cfg)
    tasks = []
    start = 0
    index = 0
    while start < n_samples:
        size = min(BLOCK_SIZE, n_samples - start)
        tasks.append((system, model, law, eps, cfg, stream_root, start, size,
                      index, track_gap, decouple, collect_values))
        start += size
        index += 1
    if workers <= 1 or len(tasks) == 1:
        for t in tasks:
            yield _block_task(t)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_block_task, tasks, chunksize=1)


def run_u_blocks(system: SystemSpec, model: NoiseModel, cfg: StepperConfig,
                 n_samples: int, stream_root: int,
                 law: Optional[InvariantLaw] = None, block_size: int = 65536):
    """Limit-process-only simulation (massive MC); per-block streams.

    The reflected model uses the exact reflected transition kernel |x + inc|,
    which is free of the projection scheme's discrete-reflection bias; the
    other models use the same limit discretizations as the coupled engine.
    """
    law = law or solve_lyapunov(model.a, model.k)
    gamma_row = limit_coefficients(system, model, law).gamma_row
    dt, horizon, n_steps = cfg.dt, cfg.horizon, cfg.n_steps
    dp = model.d_prime
    base = PCG64(SeedSequence(stream_root))
    kind = system.kind
    sqdt = math.sqrt(dt)
    uchunk = max(1, min(U_TIME_CHUNK, n_steps))
    flat = np.empty(uchunk * block_size * dp)
    start = 0
    index = 0
    while start < n_samples:
        size = min(block_size, n_samples - start)
        g = Generator(base.jumped(UBLOCK_OFFSET + index))
        u = np.tile(np.concatenate([system.x0, system.z0]), (size, 1))
        tu = np.zeros(size)
        n0 = 0
        active = 1
        while n0 < n_steps:
            csize = min(uchunk, n_steps - n0)
            buf = flat[: csize * size * dp]
            g.standard_normal(out=buf)
            zs = buf.reshape(csize, size, dp)
            if kind in ("linear_timedep", "van_der_pol"):
                u_oscillator(u[:, 0], u[:, 1], zs, csize, n0, dt, sqdt, gamma_row,
                             kind == "van_der_pol", system.nu,
                             system.p_base, system.p_amp, system.p_omega,
                             system.q_base, system.q_amp, system.q_omega)
            elif kind == "friction":
                u_friction(u[:, 0], zs, csize, dt, sqdt, gamma_row, system.c_f)
            elif kind == "elasto_plastic":
                u_elasto_plastic(u[:, 0], u[:, 1], zs, csize, dt, sqdt, gamma_row,
                                 system.c_ep)
            elif kind == "reflected_integral":
                u_reflected_exact(u[:, 0], zs, csize, sqdt, gamma_row)
            elif kind == "impact":
                active = u_impact(u[:, 0], u[:, 1], tu, zs, csize, dt, horizon,
                                  gamma_row, system.p_o, system.restitution)
            else:
                raise ValueError(f"unknown system kind {kind!r}")
            n0 += csize
        if kind == "impact":
            ext = min(EXTENSION_CHUNK, uchunk)
            while active > 0:
                buf = flat[: ext * size * dp]
                g.standard_normal(out=buf)
                active = u_impact(u[:, 0], u[:, 1], tu, buf.reshape(ext, size, dp),
                                  ext, dt, horizon, gamma_row, system.p_o,
                                  system.restitution)
        f = system.functional
        if system.m:
            f_u = f.evaluate(u[:, : system.n], u[:, system.n:])
        else:
            f_u = f.evaluate(u, None)
        f_u = np.atleast_1d(f_u)
        yield BlockResult(index=index, count=size, fx=_aggregate(f_u),
                          fu=_aggregate(f_u), diff=(size, 0.0, 0.0))
        start += size
        index += 1


def run_penalization_gap(system: SystemSpec, model: NoiseModel, eps: float,
                         cfg: StepperConfig, p_values, n_samples: int,
                         stream_root: int, law: Optional[InvariantLaw] = None):
    """Mean-square sup-distance between penalized and projection trajectories.

    Returns one value per penalization level, estimated over n_samples
    shared-noise paths of the friction system.
    """
    if system.kind != "friction":
        raise ValueError("penalization gap runner is defined for the friction system")
    law = law or solve_lyapunov(model.a, model.k)
    p_values = np.asarray(sorted(p_values), dtype=float)
    if np.any(p_values < 1):
        raise ValueError("penalization parameters must be >= 1")
    d, dp = model.d, model.d_prime
    dt, n_steps = cfg.dt, cfg.n_steps
    base = PCG64(SeedSequence(stream_root))
    totals = np.zeros(len(p_values))
    count = 0
    start = 0
    while start < n_samples:
        size = min(BLOCK_SIZE, n_samples - start)
        gens = [Generator(base.jumped(start + k)) for k in range(size)]
        z0 = np.empty((size, d))
        for k, g in enumerate(gens):
            z0[k] = g.standard_normal(d)
        eta = np.empty((size, d))
        batch_matvec(law.sqrt_c, z0, eta)
        xproj = np.full(size, system.x0[0])
        xpen = np.full((len(p_values), size), system.x0[0])
        sup2 = np.zeros((len(p_values), size))
        row_buf = np.empty((size, TIME_CHUNK * dp))
        slab = np.empty((TIME_CHUNK, size, dp))
        n0 = 0
        while n0 < n_steps:
            csize = min(TIME_CHUNK, n_steps - n0)
            for k, g in enumerate(gens):
                g.standard_normal(csize * dp, out=row_buf[k, : csize * dp])
            _transpose_slab(row_buf.reshape(size, TIME_CHUNK, dp), slab, csize)
            pen_friction(xproj, xpen, sup2, eta, slab, csize, dt, dt / eps,
                         dt / eps**2, 1.0 / eps, model.a, model.k, model.weights,
                         system.c_f, p_values)
            n0 += csize
        totals += sup2.sum(axis=1)
        count += size
        start += size
    return totals / count
