"""Coupled control-variate Monte Carlo for colored-noise-driven systems."""

from ._version import __version__
from .accumulators import Welford
from .config import RunConfig, parse_config
from .control_mean import (ControlMean, GridSpec, compute_control_mean,
                           friction_fd_mean, kolmogorov_fd_mean, massive_mc_mean,
                           moment_ode_mean, reflected_mean)
from .coupling import (CoupledPath, StepperConfig, apply_restitution,
                       batch_simulate, impact_substep, iter_sample_blocks,
                       simulate_coupled)
from .errors import ConfigError, DiffcvError
from .estimators import (EstimateReport, SweepRow, brute_force_estimate,
                         control_variate_estimate, epsilon_sweep,
                         fit_scaling_exponent)
from .harness import RunManifest, control_mean_report, run_sweep, trace_csv
from .noise import (InvariantLaw, NoiseModel, NoiseState, StabilityWarning,
                    langevin_model, ou_model, psd_to_noise_model, solve_lyapunov,
                    stationary_sample, step_noise)
from .systems import (ConvexPotential, FunctionalSpec, LimitCoefficients,
                      SystemSpec, limit_coefficients, make_system,
                      penalized_step, project_interval, yosida_gradient)

__all__ = [
    "__version__",
    "Welford",
    "RunConfig", "parse_config",
    "ControlMean", "GridSpec", "compute_control_mean", "friction_fd_mean",
    "kolmogorov_fd_mean", "massive_mc_mean", "moment_ode_mean", "reflected_mean",
    "CoupledPath", "StepperConfig", "apply_restitution", "batch_simulate",
    "impact_substep", "iter_sample_blocks", "simulate_coupled",
    "ConfigError", "DiffcvError",
    "EstimateReport", "SweepRow", "brute_force_estimate",
    "control_variate_estimate", "epsilon_sweep", "fit_scaling_exponent",
    "RunManifest", "control_mean_report", "run_sweep", "trace_csv",
    "InvariantLaw", "NoiseModel", "NoiseState", "StabilityWarning",
    "langevin_model", "ou_model", "psd_to_noise_model", "solve_lyapunov",
    "stationary_sample", "step_noise",
    "ConvexPotential", "FunctionalSpec", "LimitCoefficients", "SystemSpec",
    "limit_coefficients", "make_system", "penalized_step", "project_interval",
    "yosida_gradient",
]
