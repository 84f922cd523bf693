"""Fast mean-reverting Gaussian drivers and their invariant statistics.

The driver is a d-dimensional linear diffusion with mean-reversion matrix A
(time scale eps^2) and loading matrix K (d x d'):

    d(eta) = -(A / eps^2) eta dt + (K / eps) dW,

and the scalar forcing fed to a dynamical system is ``weights . eta``.  The
stationary covariance C solves the Lyapunov equation A C + C A^T = K K^T, and
the limit diffusion constant of the driven system is built from A^{-1} K.

Two named constructions are provided (a scalar mean-reverting driver and a
stiffness/damping second-order filter), plus a factory that assembles the
block-diagonal driver matching a rational power spectral density given as a
sum of Lorentzian lines (centered lines give 1x1 blocks, shifted lines give
2x2 rotation blocks).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import FactorizationError, UnstableNoiseError

__all__ = [
    "StabilityWarning",
    "NoiseModel",
    "NoiseState",
    "InvariantLaw",
    "ou_model",
    "langevin_model",
    "psd_to_noise_model",
    "solve_lyapunov",
    "stationary_sample",
    "step_noise",
]

#: relative Frobenius residual allowed for the Lyapunov solve
LYAPUNOV_RTOL = 1e-10
#: eigenvalues of C below this (relative) are clamped to zero before sqrt
SQRT_CLAMP_RTOL = 1e-12
#: dt * ||A|| / eps^2 above this triggers a stability warning
STABILITY_THRESHOLD = 0.5


class StabilityWarning(UserWarning):
    """Explicit-Euler noise step is close to (or past) its stability limit."""


def _readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product with a fixed left-to-right summation order.

    Used instead of ``m @ v`` wherever bitwise reproducibility against the
    compiled steppers matters (BLAS may reorder sums).
    """
    nr, nc = m.shape
    out = np.zeros(nr)
    for i in range(nr):
        s = 0.0
        for j in range(nc):
            s += m[i, j] * v[j]
        out[i] = s
    return out


@dataclass(frozen=True)
class NoiseModel:
    """Matrices (A, K) and output weights defining a mean-reverting driver."""

    a: np.ndarray
    k: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _readonly(np.atleast_2d(self.a)))
        object.__setattr__(self, "k", _readonly(np.atleast_2d(self.k)))
        object.__setattr__(self, "weights", _readonly(np.atleast_1d(self.weights)))
        d = self.a.shape[0]
        if self.a.shape != (d, d):
            raise ValueError(f"A must be square, got {self.a.shape}")
        if self.k.shape[0] != d:
            raise ValueError(f"K must have {d} rows, got {self.k.shape}")
        if self.weights.shape != (d,):
            raise ValueError(f"weights must have length {d}")
        eig = np.linalg.eigvals(self.a)
        if np.any(eig.real <= 0):
            raise UnstableNoiseError(
                f"mean-reversion matrix has eigenvalue(s) with non-positive "
                f"real part: {eig}"
            )

    @property
    def d(self) -> int:
        return self.a.shape[0]

    @property
    def d_prime(self) -> int:
        return self.k.shape[1]

    def norm_a(self) -> float:
        return float(np.linalg.norm(self.a, 2))


@dataclass
class NoiseState:
    """Current driver value together with the scale-separation parameter."""

    eta: np.ndarray
    epsilon: float

    def __post_init__(self):
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class InvariantLaw:
    """Stationary covariance C and the A^{-1}K factor of the limit diffusion."""

    c: np.ndarray
    a_inv_k: np.ndarray
    sqrt_c: np.ndarray = field(repr=False)


def ou_model(a: float = 1.0, k: float = 1.0) -> NoiseModel:
    """Scalar mean-reverting driver (d = d' = 1)."""
    return NoiseModel(a=[[float(a)]], k=[[float(k)]], weights=[1.0])


def langevin_model(mu: float = 1.0, gamma: float = 1.0, k: float = 1.0) -> NoiseModel:
    """Second-order filter with stiffness mu and damping gamma; the forcing
    fed downstream is the position channel (d = 2, d' = 1)."""
    a = [[0.0, -1.0], [float(mu), float(gamma)]]
    kk = [[0.0], [float(k)]]
    return NoiseModel(a=a, k=kk, weights=[1.0, 0.0])


def psd_to_noise_model(components) -> NoiseModel:
    """Assemble the block-diagonal driver for a sum of Lorentzian PSD lines.

    ``components`` is a sequence of (sigma, d_omega, omega) triples.  A line
    centered at zero (omega == 0) contributes a 1x1 block with A = K = d_omega
    and weight sigma; a shifted line contributes the 2x2 block
    [[d_omega, -omega], [omega, d_omega]] for A, diag(d_omega, d_omega) for K,
    with weight sigma on the first channel of the block.
    """
    components = list(components)
    if not components:
        raise ValueError("component list must not be empty")
    blocks_a, blocks_k, weights = [], [], []
    for sigma, d_omega, omega in components:
        if d_omega <= 0:
            raise ValueError(f"line width must be positive, got {d_omega}")
        if sigma < 0:
            raise ValueError(f"line amplitude must be non-negative, got {sigma}")
        if omega == 0:
            blocks_a.append(np.array([[d_omega]], dtype=float))
            blocks_k.append(np.array([[d_omega]], dtype=float))
            weights.append(float(sigma))
        else:
            blocks_a.append(np.array([[d_omega, -omega], [omega, d_omega]], dtype=float))
            blocks_k.append(np.diag([d_omega, d_omega]).astype(float))
            weights.extend([float(sigma), 0.0])
    d = sum(b.shape[0] for b in blocks_a)
    dp = sum(b.shape[1] for b in blocks_k)
    a = np.zeros((d, d))
    k = np.zeros((d, dp))
    i = j = 0
    for ba, bk in zip(blocks_a, blocks_k):
        s = ba.shape[0]
        a[i : i + s, i : i + s] = ba
        k[i : i + s, j : j + bk.shape[1]] = bk
        i += s
        j += bk.shape[1]
    return NoiseModel(a=a, k=k, weights=weights)


def solve_lyapunov(a, k) -> InvariantLaw:
    """Stationary covariance of the driver: solve A C + C A^T = K K^T.

    Raises UnstableNoiseError when A has an eigenvalue with non-positive real
    part or when the solve leaves a residual above ``LYAPUNOV_RTOL``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    k = np.atleast_2d(np.asarray(k, dtype=float))
    eig = np.linalg.eigvals(a)
    if np.any(eig.real <= 0):
        raise UnstableNoiseError(
            f"cannot solve Lyapunov equation: eigenvalue(s) {eig} not in the "
            f"open right half-plane"
        )
    q = k @ k.T
    c = solve_continuous_lyapunov(a, q)
    c = 0.5 * (c + c.T)
    qn = np.linalg.norm(q)
    resid = np.linalg.norm(a @ c + c @ a.T - q)
    if qn > 0 and resid > LYAPUNOV_RTOL * qn:
        raise UnstableNoiseError(
            f"Lyapunov residual {resid / qn:.3e} exceeds {LYAPUNOV_RTOL:.0e}"
        )
    try:
        a_inv_k = np.linalg.solve(a, k)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by eig check
        raise UnstableNoiseError(f"rank-deficient mean-reversion matrix: {exc}")
    return InvariantLaw(c=_readonly(c), a_inv_k=_readonly(a_inv_k), sqrt_c=_readonly(_sym_sqrt(c)))


def _sym_sqrt(c: np.ndarray) -> np.ndarray:
    """Symmetric square root by spectral decomposition, clamping small
    negative eigenvalues (C may be numerically semidefinite for degenerate K)."""
    vals, vecs = np.linalg.eigh(c)
    scale = max(vals.max(initial=0.0), 0.0)
    floor = -SQRT_CLAMP_RTOL * max(scale, 1.0)
    if np.any(vals < floor):
        raise FactorizationError(
            f"covariance is indefinite: eigenvalues {vals} below tolerance"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def stationary_sample(model: NoiseModel, law: InvariantLaw, rng: np.random.Generator) -> np.ndarray:
    """Draw eta ~ N(0, C) through the symmetric square root of C."""
    if law.c.shape[0] != model.d:
        raise ValueError("invariant law does not match the model dimension")
    z = rng.standard_normal(model.d)
    return matvec(law.sqrt_c, z)


def step_noise(model: NoiseModel, state: NoiseState, dt: float, dw: np.ndarray) -> np.ndarray:
    """One explicit Euler step of the driver.

    ``dw`` is the Gaussian increment vector already scaled by sqrt(dt).  The
    caller must feed the same increment to the limit process (coupling
    contract).  Returns the new eta; emits StabilityWarning when
    dt * ||A|| / eps^2 exceeds the threshold.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    eps = state.epsilon
    if dt * model.norm_a() / eps**2 > STABILITY_THRESHOLD:
        warnings.warn(
            f"noise step ratio dt*||A||/eps^2 = {dt * model.norm_a() / eps**2:.3g} "
            f"exceeds {STABILITY_THRESHOLD}; results may be inaccurate",
            StabilityWarning,
            stacklevel=2,
        )
    dw = np.atleast_1d(np.asarray(dw, dtype=float))
    drift = matvec(model.a, state.eta)
    kick = matvec(model.k, dw)
    out = np.empty(model.d)
    for i in range(model.d):
        out[i] = state.eta[i] - (dt / eps**2) * drift[i] + (1.0 / eps) * kick[i]
    return out
