"""Built-in verification suite.

Each criterion runs at its stated tolerance and reports a verdict; failures
are verdicts, not errors.  The quick level caps sample counts at 1e4 so a
laptop-class machine finishes in minutes; the full level uses each
criterion's stated sample counts.
"""

from __future__ import annotations

import math
import os
import time
import timeit
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from .control_mean import (GridSpec, compute_control_mean, friction_fd_mean,
                           kolmogorov_fd_mean, massive_mc_mean, moment_ode_mean,
                           reflected_mean)
from .coupling import StepperConfig
from .config import RunConfig
from .engine import run_penalization_gap
from .estimators import (SweepRow, epsilon_sweep, estimate_pair,
                         fit_scaling_exponent)
from .harness import run_sweep
from .noise import langevin_model, ou_model, solve_lyapunov
from .systems import make_system

__all__ = ["CriterionResult", "ValidationReport", "ValidationContext",
           "run_validation_suite"]

RATE_GRID = (0.4, 0.2, 0.1, 0.05)
TARGET_REFLECTED = 0.797884


@dataclass
class CriterionResult:
    criterion: str
    description: str
    measured: str
    threshold: str
    passed: bool
    skipped: bool = False
    note: str = ""

    def line(self) -> str:
        verdict = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        out = (f"[{verdict}] criterion {self.criterion}: {self.description} "
               f"(measured {self.measured}, threshold {self.threshold})")
        if self.note:
            out += f" -- {self.note}"
        return out


@dataclass
class ValidationReport:
    level: str
    results: List[CriterionResult]
    wall_clock_seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed or r.skipped for r in self.results)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "passed": self.passed,
            "wall_clock_seconds": self.wall_clock_seconds,
            "results": [asdict(r) for r in self.results],
        }

    def lines(self) -> List[str]:
        return [r.line() for r in self.results]


class ValidationContext:
    """Shared artifacts (sweeps, estimator pairs) across criteria."""

    def __init__(self, level: str = "full", seed: int = 20_240_901):
        if level not in ("quick", "full"):
            raise ValueError("level must be 'quick' or 'full'")
        self.level = level
        self.seed = seed
        self.noise = ou_model(1.0, 1.0)
        self._sweeps: Dict[str, Tuple[list, float]] = {}
        self._pairs: Dict[str, tuple] = {}
        self._cms: Dict[str, object] = {}

    def n(self, stated: int) -> int:
        return min(stated, 10_000) if self.level == "quick" else stated

    @property
    def n_ref(self) -> int:
        return 100_000 if self.level == "quick" else 1_000_000

    def cfg(self, dt: float = 1e-4) -> StepperConfig:
        return StepperConfig(dt=dt, horizon=1.0)

    def control_mean(self, key: str, system, dt: float, **kwargs):
        if key not in self._cms:
            self._cms[key] = compute_control_mean(
                system, self.noise, self.cfg(dt), n_ref=self.n_ref,
                seed=self.seed + 3 * 2**64, **kwargs)
        return self._cms[key]

    def sweep(self, key: str, system, n: int, dt: float = 1e-4,
              control_mean: float = 0.0,
              grid=RATE_GRID) -> Tuple[List[SweepRow], float]:
        # rate criteria fit the variance of the coupled differences, which
        # does not involve the control mean; 0.0 skips a needless solve
        if key not in self._sweeps:
            t0 = time.monotonic()
            rows = epsilon_sweep(system, self.noise, self.cfg(dt), grid, n,
                                 self.seed, control_mean=control_mean)
            self._sweeps[key] = (rows, time.monotonic() - t0)
        return self._sweeps[key]

    def pair(self, key: str, system, eps: float, n: int, dt: float,
             control_mean: float):
        if key not in self._pairs:
            self._pairs[key] = estimate_pair(system, self.noise, eps,
                                             self.cfg(dt), n, self.seed,
                                             control_mean)
        return self._pairs[key]


def _c1(ctx: ValidationContext) -> List[CriterionResult]:
    model = langevin_model(1.0, 1.0, 1.0)
    law = solve_lyapunov(model.a, model.k)
    dev = float(np.max(np.abs(law.c - 0.5 * np.eye(2))))
    elapsed = min(timeit.repeat(lambda: solve_lyapunov(model.a, model.k),
                                number=5, repeat=5)) / 5
    ok = dev <= 1e-10 and elapsed < 1e-3
    return [CriterionResult(
        "1", "Lyapunov oracle reproduces the hand-derived stationary covariance",
        f"max deviation {dev:.2e}, runtime {elapsed * 1e3:.3f} ms",
        "deviation <= 1e-10 and runtime < 1 ms", ok)]


def _c2(ctx: ValidationContext) -> List[CriterionResult]:
    system = make_system("linear_timedep")
    n = ctx.n(10_000)
    rows, elapsed = ctx.sweep("lin_sq", system, n)
    expo = fit_scaling_exponent(rows)
    out = [CriterionResult(
        "2", "smooth-system variance rate (linear oscillator, square norm)",
        f"fitted exponent {expo:.3f} over eps {list(RATE_GRID)}, N={n}",
        ">= 1.7", expo >= 1.7)]
    out.append(CriterionResult(
        "2", "single-threaded sweep runtime",
        f"{elapsed:.1f} s", "<= 900 s", elapsed <= 900.0))
    cores = os.cpu_count() or 1
    if cores < 8:
        out.append(CriterionResult(
            "2", "8-worker sweep runtime", "not run", "<= 180 s", True,
            skipped=True,
            note=f"host exposes {cores} core(s); 8-worker budget cannot be exercised"))
    else:  # pragma: no cover - multi-core hosts only
        t0 = time.monotonic()
        epsilon_sweep(system, ctx.noise, ctx.cfg(), RATE_GRID, n, ctx.seed,
                      control_mean=rows[0].efu, workers=8)
        t8 = time.monotonic() - t0
        out.append(CriterionResult("2", "8-worker sweep runtime",
                                   f"{t8:.1f} s", "<= 180 s", t8 <= 180.0))
    return out


def _c3(ctx: ValidationContext) -> List[CriterionResult]:
    system = make_system("linear_timedep", functional="terminal_indicator_band")
    n = ctx.n(10_000)
    rows, _ = ctx.sweep("lin_ind", system, n)
    expo = fit_scaling_exponent(rows)
    return [CriterionResult(
        "3", "non-smooth functional variance rate (indicator band)",
        f"fitted exponent {expo:.3f}, N={n}", "in [0.7, 1.5]",
        0.7 <= expo <= 1.5)]


def _c4(ctx: ValidationContext) -> List[CriterionResult]:
    system = make_system("linear_timedep")
    rows, _ = ctx.sweep("lin_sq", system, ctx.n(10_000))
    row = next(r for r in rows if abs(r.eps - 0.1) < 1e-12)
    ratio = row.nvar / row.nvar_j
    return [CriterionResult(
        "4", "variance-reduction magnitude at eps = 0.1",
        f"N Var(I)/N Var(J) = {ratio:.5f}", "<= 0.05", ratio <= 0.05)]


def _c5_specs(ctx: ValidationContext):
    # model name -> (system, dt, control-mean kwargs); the massive-MC control
    # means use a coarser (eps-independent) step where the limit scheme's
    # time-step bias is measured to be inside the statistical tolerance
    refl_dt = 1e-5 if ctx.level == "full" else 2.5e-5
    return {
        "linear_timedep": (make_system("linear_timedep"), 1e-4, {}),
        "van_der_pol": (make_system("van_der_pol"), 1e-4,
                        {"grid": None if ctx.level == "full" else
                         GridSpec(bounds=((-4, 4), (-4, 4)), nodes=(201, 201))}),
        "friction": (make_system("friction"), 1e-4, {}),
        "elasto_plastic": (make_system("elasto_plastic"), 1e-4, {"mc_dt": 5e-4}),
        "impact": (make_system("impact"), 1e-4, {"mc_dt": 2e-4}),
        "reflected_integral": (make_system("reflected_integral"), refl_dt, {}),
    }


def _c5(ctx: ValidationContext) -> List[CriterionResult]:
    out = []
    n = ctx.n(100_000)
    for kind, (system, dt, cm_kwargs) in _c5_specs(ctx).items():
        cm = ctx.control_mean(f"cm_{kind}", system, dt, **cm_kwargs)
        i_rep, j_rep, _ = ctx.pair(f"c5_{kind}", system, 0.25, n, dt, cm.value)
        gap = abs(i_rep.mean - j_rep.mean)
        budget = i_rep.ci_half_width + j_rep.ci_half_width
        out.append(CriterionResult(
            "5", f"unbiasedness CI overlap ({kind}, eps=0.25, N={n})",
            f"|I-J| = {gap:.3e}", f"<= {budget:.3e}", gap <= budget,
            note=f"I = {i_rep.mean:.5f}, J = {j_rep.mean:.5f}, efu({cm.method}) = {cm.value:.5f}"))
    return out


def _c6(ctx: ValidationContext) -> List[CriterionResult]:
    out = []
    n_ref = ctx.n_ref
    seed = ctx.seed + 5 * 2**64

    def against_mc(tag, system, method_cm, mc_dt):
        mc = massive_mc_mean(system, ctx.noise, ctx.cfg(mc_dt), n_ref, seed)
        se = mc.error_estimate / 1.96
        tol = max(3 * se, method_cm.error_estimate)
        gap = abs(method_cm.value - mc.value)
        out.append(CriterionResult(
            "6", f"control-mean oracle coherence ({tag})",
            f"|{method_cm.method} - massive_mc| = {gap:.3e}",
            f"<= max(3 SE, err) = {tol:.3e}", gap <= tol,
            note=f"{method_cm.method} = {method_cm.value:.6f} "
                 f"(err {method_cm.error_estimate:.2e}), "
                 f"massive_mc = {mc.value:.6f} (n_ref={n_ref}, dt={mc_dt:g})"))

    lin = make_system("linear_timedep")
    against_mc("linear oscillator", lin,
               moment_ode_mean(lin.p, lin.q, 1.0, lin.x0, 1.0), 2e-4)
    vdp = make_system("van_der_pol")
    grid = None if ctx.level == "full" else GridSpec(((-4, 4), (-4, 4)), (201, 201))
    against_mc("relaxation oscillator", vdp,
               kolmogorov_fd_mean(vdp, 1.0, grid=grid), 2e-4)
    against_mc("friction", make_system("friction"),
               friction_fd_mean(0.25, 1.0), 1e-4)

    free = moment_ode_mean(lambda t: 0.0, lambda t: 0.0, 1.0, [0.0, 0.0], 1.0)
    gap = abs(free.value - 4.0 / 3.0)
    out.append(CriterionResult(
        "6", "free-motion closed form at T=1",
        f"|value - 4/3| = {gap:.2e}", "<= 1e-4", gap <= 1e-4))
    return out


def _c7(ctx: ValidationContext) -> List[CriterionResult]:
    out = []
    cm = reflected_mean(1.0, 1.0)
    gap = abs(cm.value - TARGET_REFLECTED)
    out.append(CriterionResult(
        "7", "reflected control mean equals sqrt(2/pi) to six digits",
        f"|efu - {TARGET_REFLECTED}| = {gap:.2e}", "<= 1e-6", gap <= 1e-6))

    system = make_system("reflected_integral")
    n = ctx.n(100_000)
    i_rep, _, _ = ctx.pair("c7_cover", system, 0.1, n, 1e-4, cm.value)
    dev = abs(i_rep.mean - TARGET_REFLECTED)
    out.append(CriterionResult(
        "7", f"control-variate estimate at eps=0.1 covers sqrt(2/pi) (N={n})",
        f"|I - {TARGET_REFLECTED}| = {dev:.4f}",
        f"<= CI half-width {i_rep.ci_half_width:.2e}",
        dev <= i_rep.ci_half_width,
        note="the estimator targets E[f(X^eps_T)], which carries an O(eps) "
             "smoothing bias relative to E[f(U_T)]; see the design notes"))

    rows, _ = ctx.sweep("refl_rate", system, ctx.n(10_000), control_mean=cm.value)
    expo = fit_scaling_exponent(rows)
    out.append(CriterionResult(
        "7", "reflected-model variance exponent",
        f"fitted exponent {expo:.3f}", ">= 1.6", expo >= 1.6))
    return out


def _c8(ctx: ValidationContext) -> List[CriterionResult]:
    out = []
    n = ctx.n(10_000)
    fric = make_system("friction")
    rows, _ = ctx.sweep("fric_rate", fric, n)
    expo = fit_scaling_exponent(rows)
    out.append(CriterionResult(
        "8", "friction variance rate", f"fitted exponent {expo:.3f}, N={n}",
        ">= 1.7", expo >= 1.7))
    ep = make_system("elasto_plastic")
    rows, _ = ctx.sweep("ep_rate", ep, n)
    expo = fit_scaling_exponent(rows)
    out.append(CriterionResult(
        "8", "elasto-plastic variance rate", f"fitted exponent {expo:.3f}, N={n}",
        ">= 0.8", expo >= 0.8))
    return out


def _c9(ctx: ValidationContext) -> List[CriterionResult]:
    system = make_system("friction")
    p_values = [10.0, 100.0, 1000.0]
    msd = run_penalization_gap(system, ctx.noise, 0.5, ctx.cfg(1e-4), p_values,
                               ctx.n(1000), ctx.seed + 7)
    x = np.log(p_values)
    y = np.log(msd)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    decay = -slope
    return [CriterionResult(
        "9", "penalization convergence rate (friction, eps=0.5)",
        f"log-log decay slope {decay:.3f} (msd {np.array2string(msd, precision=2)})",
        "in [0.7, 1.3]", 0.7 <= decay <= 1.3)]


def _c10(ctx: ValidationContext) -> List[CriterionResult]:
    out = []
    n = ctx.n(100_000)
    specs = _c5_specs(ctx)
    for kind in ("elasto_plastic", "reflected_integral", "impact"):
        system, dt, cm_kwargs = specs[kind]
        cm = ctx.control_mean(f"cm_{kind}", system, dt, **cm_kwargs)
        _, _, diag = ctx.pair(f"c5_{kind}", system, 0.25, n, dt, cm.value)
        if kind == "elasto_plastic":
            ok = diag["max_abs_z_x"] <= system.c_ep and diag["max_abs_z_u"] <= system.c_ep
            out.append(CriterionResult(
                "10", f"plastic constraint |z| <= c_ep over {n} paths",
                f"max |z| = {float(diag['max_abs_z_x'])} (colored), "
                f"{float(diag['max_abs_z_u'])} (limit)",
                f"<= {system.c_ep}", ok))
        elif kind == "reflected_integral":
            ok = diag["min_x"] >= 0.0 and diag["min_u"] >= 0.0
            out.append(CriterionResult(
                "10", f"reflected state stays non-negative over {n} paths",
                f"min x = {float(diag['min_x'])}, min u = {float(diag['min_u'])}",
                ">= 0", ok))
        else:
            ok = (diag["barrier_dev_x"] == 0.0 and diag["barrier_dev_u"] == 0.0
                  and diag["collisions_x"] > 0)
            out.append(CriterionResult(
                "10", f"impact events sit exactly on the barrier over {n} paths",
                f"max | |x1|-P_O | = {float(diag['barrier_dev_x'])} at "
                f"{int(diag['collisions_x'])} events",
                "= 0 with at least one event", ok))
    return out


def _c11(ctx: ValidationContext) -> List[CriterionResult]:
    config = RunConfig(model_kind="linear_timedep", dt=1e-3, horizon=1.0,
                       n_samples=400, eps_grid=(0.5, 0.25), seed=ctx.seed,
                       control_method="moment_ode")
    csv1, _ = run_sweep(config, workers=1)
    csv2, _ = run_sweep(config, workers=2)
    csv3, _ = run_sweep(config, workers=3)
    ok = csv1 == csv2 == csv3
    return [CriterionResult(
        "11", "byte-identical CSV across worker counts (1, 2, 3)",
        "identical" if ok else "mismatch", "byte equality", ok)]


_CRITERIA = [_c1, _c2, _c3, _c4, _c5, _c6, _c7, _c8, _c9, _c10, _c11]


def run_validation_suite(level: str = "quick", seed: int = 20_240_901,
                         echo=None) -> ValidationReport:
    """Run every acceptance criterion; failures are verdicts, not errors."""
    ctx = ValidationContext(level=level, seed=seed)
    results: List[CriterionResult] = []
    t0 = time.monotonic()
    for fn in _CRITERIA:
        for res in fn(ctx):
            results.append(res)
            if echo is not None:
                echo(res.line())
    return ValidationReport(level=level, results=results,
                            wall_clock_seconds=time.monotonic() - t0)
