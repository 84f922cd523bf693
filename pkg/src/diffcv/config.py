"""Run configuration: flat ``key = value`` documents with dotted tables.

The format is deliberately small: one assignment per line, ``#`` comments,
values parsed as numbers, booleans, bare or quoted strings, comma-separated
lists, and ``sigma:width:omega`` triples for spectral components.  Parsing
validates everything up front and reports every violation, not just the
first, so no simulation cycles are spent on a bad run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Tuple

from .engine import StepperConfig
from .errors import ConfigError
from .noise import NoiseModel, langevin_model, ou_model, psd_to_noise_model
from .systems import FUNCTIONAL_KINDS, SYSTEM_KINDS, SystemSpec, make_system

__all__ = ["RunConfig", "parse_config", "DEFAULT_EPS_GRID"]

DEFAULT_EPS_GRID = (1.0, 0.75, 0.5, 0.25, 0.1, 0.05, 0.025, 0.01)

_FUNCTIONAL_BY_MODEL = {
    "linear_timedep": ("terminal_square_norm", "terminal_indicator_band"),
    "van_der_pol": ("terminal_square_norm", "terminal_indicator_band"),
    "friction": ("terminal_square_norm",),
    "elasto_plastic": ("terminal_square_norm", "boundary_indicator"),
    "impact": ("terminal_velocity_square",),
    "reflected_integral": ("terminal_value",),
}

_CONTROL_METHODS = ("auto", "moment_ode", "kolmogorov_fd", "friction_fd",
                    "closed_form", "massive_mc")


@dataclass(frozen=True)
class RunConfig:
    """Fully validated description of one experiment."""

    model_kind: str = "linear_timedep"
    functional: Optional[str] = None  # None = model default
    band: float = 1.0
    x0: Optional[Tuple[float, ...]] = None
    z0: float = 0.0
    nu: float = 1.0
    c_f: float = 0.25
    c_ep: float = 0.25
    p_o: float = 0.25
    restitution: float = 1.0
    p_base: float = 1.0
    p_amp: float = 1.0
    p_omega: float = 1.0
    q_base: float = 1.0
    q_amp: float = 1.0
    q_omega: float = 1.0
    noise_kind: str = "ou"
    noise_a: float = 1.0
    noise_k: float = 1.0
    noise_mu: float = 1.0
    noise_gamma: float = 1.0
    components: Tuple[Tuple[float, float, float], ...] = ()
    dt: float = 1e-4
    horizon: float = 1.0
    n_samples: int = 100_000
    eps_grid: Tuple[float, ...] = DEFAULT_EPS_GRID
    seed: int = 0
    workers: int = 1
    stability_policy: str = "warn"
    control_method: str = "auto"
    control_n_ref: int = 1_000_000
    control_dt: Optional[float] = None
    output: Optional[str] = None

    def build_system(self) -> SystemSpec:
        params = {}
        if self.model_kind == "van_der_pol":
            params["nu"] = self.nu
        elif self.model_kind == "friction":
            params["c_f"] = self.c_f
        elif self.model_kind == "elasto_plastic":
            params["c_ep"] = self.c_ep
        elif self.model_kind == "impact":
            params["p_o"] = self.p_o
            params["restitution"] = self.restitution
        elif self.model_kind == "linear_timedep":
            params.update(p_base=self.p_base, p_amp=self.p_amp, p_omega=self.p_omega,
                          q_base=self.q_base, q_amp=self.q_amp, q_omega=self.q_omega)
        return make_system(self.model_kind, functional=self.functional,
                           horizon=self.horizon, band=self.band, x0=self.x0,
                           z0=[self.z0] if self.model_kind == "elasto_plastic" else None,
                           **params)

    def build_noise(self) -> NoiseModel:
        if self.noise_kind == "ou":
            return ou_model(self.noise_a, self.noise_k)
        if self.noise_kind == "langevin":
            return langevin_model(self.noise_mu, self.noise_gamma, self.noise_k)
        return psd_to_noise_model(self.components)

    def stepper(self) -> StepperConfig:
        return StepperConfig(dt=self.dt, horizon=self.horizon,
                             stability_policy=self.stability_policy)

    def snapshot(self) -> dict:
        return asdict(self)


def _parse_scalar(raw: str):
    text = raw.strip()
    if (text.startswith('"') and text.endswith('"')) or (
            text.startswith("'") and text.endswith("'")):
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_value(raw: str):
    text = raw.strip()
    if text.startswith("[") and text.endswith("]"):
        text = text[1:-1]
        return [_parse_scalar(p) for p in text.split(",") if p.strip()]
    if "," in text:
        return [_parse_scalar(p) for p in text.split(",") if p.strip()]
    return _parse_scalar(text)


def _as_float(value, key, violations):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    violations.append(f"{key}: expected a number, got {value!r}")
    return None


def _as_int(value, key, violations):
    if isinstance(value, bool) or not isinstance(value, int):
        violations.append(f"{key}: expected an integer, got {value!r}")
        return None
    return value


def _as_str(value, key, violations, choices=None):
    if not isinstance(value, str):
        violations.append(f"{key}: expected a string, got {value!r}")
        return None
    if choices and value not in choices:
        violations.append(f"{key}: {value!r} is not one of {sorted(choices)}")
        return None
    return value


def _float_list(value, key, violations):
    items = value if isinstance(value, list) else [value]
    out = []
    for item in items:
        v = _as_float(item, key, violations)
        if v is None:
            return None
        out.append(v)
    return tuple(out)


def _components(value, key, violations):
    items = value if isinstance(value, list) else [value]
    out = []
    for item in items:
        parts = str(item).split(":")
        if len(parts) != 3:
            violations.append(f"{key}: component {item!r} is not sigma:width:omega")
            return None
        try:
            out.append(tuple(float(p) for p in parts))
        except ValueError:
            violations.append(f"{key}: component {item!r} has non-numeric fields")
            return None
    return tuple(out)


_FLOAT_KEYS = {
    "model.band": "band", "model.z0": "z0", "model.nu": "nu",
    "model.c_f": "c_f", "model.c_ep": "c_ep", "model.p_o": "p_o",
    "model.restitution": "restitution",
    "model.p_base": "p_base", "model.p_amp": "p_amp", "model.p_omega": "p_omega",
    "model.q_base": "q_base", "model.q_amp": "q_amp", "model.q_omega": "q_omega",
    "noise.A": "noise_a", "noise.K": "noise_k",
    "noise.mu": "noise_mu", "noise.gamma": "noise_gamma",
    "dt": "dt", "T": "horizon", "control.dt": "control_dt",
}

_INT_KEYS = {"n_samples": "n_samples", "seed": "seed", "workers": "workers",
             "control.n_ref": "control_n_ref"}

_STR_KEYS = {
    "model.kind": ("model_kind", SYSTEM_KINDS),
    "model.functional": ("functional", FUNCTIONAL_KINDS),
    "noise.kind": ("noise_kind", ("ou", "langevin", "psd")),
    "stability_policy": ("stability_policy", ("warn", "reject")),
    "control.method": ("control_method", _CONTROL_METHODS),
    "output": ("output", None),
}


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration document.

    Raises ConfigError carrying the complete list of violations.
    """
    violations: list[str] = []
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            violations.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, _, value = stripped.partition("=")
        raw[key.strip()] = _parse_value(value)

    fields: dict[str, object] = {}
    for key, value in raw.items():
        if key in _FLOAT_KEYS:
            v = _as_float(value, key, violations)
            if v is not None:
                fields[_FLOAT_KEYS[key]] = v
        elif key in _INT_KEYS:
            v = _as_int(value, key, violations)
            if v is not None:
                fields[_INT_KEYS[key]] = v
        elif key in _STR_KEYS:
            name, choices = _STR_KEYS[key]
            v = _as_str(value, key, violations, choices)
            if v is not None:
                fields[name] = v
        elif key == "model.x0":
            v = _float_list(value, key, violations)
            if v is not None:
                fields["x0"] = v
        elif key == "eps_grid":
            v = _float_list(value, key, violations)
            if v is not None:
                fields["eps_grid"] = v
        elif key == "noise.components":
            v = _components(value, key, violations)
            if v is not None:
                fields["components"] = v
        else:
            violations.append(f"unknown key {key!r}")

    cfg = None
    if not violations:
        cfg = RunConfig(**fields)
        violations.extend(_validate(cfg))
    if violations:
        raise ConfigError(violations)
    return cfg


def _validate(cfg: RunConfig) -> list:
    v = []
    if cfg.dt <= 0:
        v.append("dt: must be positive")
    if cfg.horizon <= 0:
        v.append("T: must be positive")
    if cfg.dt > 0 and cfg.horizon > 0:
        n = round(cfg.horizon / cfg.dt)
        if n < 1 or abs(n * cfg.dt - cfg.horizon) > 1e-9 * max(cfg.horizon, 1.0):
            v.append("T: must be a positive integer multiple of dt")
    if cfg.n_samples < 2:
        v.append("n_samples: must be at least 2")
    if cfg.seed < 0:
        v.append("seed: must be non-negative")
    if cfg.workers < 1:
        v.append("workers: must be at least 1")
    if not cfg.eps_grid:
        v.append("eps_grid: must not be empty")
    elif any(e <= 0 for e in cfg.eps_grid):
        v.append("eps_grid: all values must be positive")
    elif len(cfg.eps_grid) > 1 and not all(
            a > b for a, b in zip(cfg.eps_grid, cfg.eps_grid[1:])):
        v.append("eps_grid: values must be strictly decreasing")
    functional = cfg.functional
    allowed = _FUNCTIONAL_BY_MODEL[cfg.model_kind]
    if functional is not None and functional not in allowed:
        v.append(f"model.functional: {functional!r} is not available for "
                 f"{cfg.model_kind} (choose from {list(allowed)})")
    if cfg.x0 is not None:
        n = 2 if cfg.model_kind in ("linear_timedep", "van_der_pol", "impact") else 1
        if len(cfg.x0) != n:
            v.append(f"model.x0: {cfg.model_kind} needs {n} component(s)")
    if cfg.c_f <= 0:
        v.append("model.c_f: must be positive")
    if cfg.c_ep <= 0:
        v.append("model.c_ep: must be positive")
    if cfg.p_o <= 0:
        v.append("model.p_o: must be positive")
    if not 0.0 <= cfg.restitution <= 1.0:
        v.append("model.restitution: must lie in [0, 1]")
    if cfg.noise_kind == "ou" and cfg.noise_a <= 0:
        v.append("noise.A: must be positive")
    if cfg.noise_kind == "langevin" and (cfg.noise_mu <= 0 or cfg.noise_gamma <= 0):
        v.append("noise.mu, noise.gamma: must be positive")
    if cfg.noise_k < 0:
        v.append("noise.K: must be non-negative")
    if cfg.noise_kind == "psd":
        if not cfg.components:
            v.append("noise.components: must not be empty for psd noise")
        for sigma, width, _ in cfg.components:
            if width <= 0:
                v.append("noise.components: line widths must be positive")
                break
            if sigma < 0:
                v.append("noise.components: amplitudes must be non-negative")
                break
    if cfg.control_n_ref < 10_000:
        v.append("control.n_ref: must be at least 1e4")
    if cfg.control_dt is not None and cfg.control_dt <= 0:
        v.append("control.dt: must be positive")
    return v
