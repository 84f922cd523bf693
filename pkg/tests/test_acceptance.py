"""Acceptance gate: every criterion at its stated tolerance.

Runs the same criterion implementations as ``diffcv validate`` at the full
level (stated sample counts) and prints one verdict line per sub-check.
Shared artifacts (sweeps, estimator pairs, control means) are cached on a
session-scoped context, so the expensive runs happen once.
"""

import warnings

import pytest

from diffcv.noise import StabilityWarning
from diffcv.validation import (ValidationContext, _c1, _c2, _c3, _c4, _c5,
                               _c6, _c7, _c8, _c9, _c10, _c11)

warnings.simplefilter("ignore", StabilityWarning)


@pytest.fixture(scope="module")
def ctx():
    return ValidationContext(level="full")


def _check(results):
    failed = []
    for res in results:
        print(res.line(), flush=True)
        if not (res.passed or res.skipped):
            failed.append(res)
    assert not failed, "; ".join(
        f"criterion {r.criterion}: {r.description} measured {r.measured}, "
        f"needed {r.threshold}" + (f" ({r.note})" if r.note else "")
        for r in failed)


def test_criterion_01_lyapunov_oracle(ctx):
    _check(_c1(ctx))


def test_criterion_02_smooth_rate_and_runtime(ctx):
    _check(_c2(ctx))


def test_criterion_03_nonsmooth_rate(ctx):
    _check(_c3(ctx))


def test_criterion_04_variance_reduction_magnitude(ctx):
    _check(_c4(ctx))


def test_criterion_05_unbiasedness_overlap(ctx):
    _check(_c5(ctx))


def test_criterion_06_control_mean_oracles(ctx):
    _check(_c6(ctx))


def test_criterion_07_reflected_model(ctx):
    # The coverage clause asserts that the coupled estimator at eps = 0.1
    # reproduces the eps -> 0 limit value sqrt(2/pi) to within ~1e-3.  The
    # estimator is unbiased for E[f(X^eps_T)], and the reflected model's
    # eps-level smoothing bias is measured at about -0.8 * eps (-0.09 at
    # eps = 0.1, confirmed at two time steps), roughly 190 CI half-widths.
    # The clause contradicts the model's own finite-eps physics, so it is
    # expected to fail; the remaining clauses of this criterion pass.
    _check(_c7(ctx))


def test_criterion_08_multivalued_rates(ctx):
    _check(_c8(ctx))


def test_criterion_09_penalization_rate(ctx):
    # The stated window [0.7, 1.3] assumes the Cauchy-sequence bound C/p on
    # the mean-square sup-distance is sharp.  For the friction potential the
    # projection scheme sticks at exactly zero while the penalized state
    # equilibrates at forcing/p (capped at c_f/p and attained at every
    # stick-slip transition), so the pathwise gap scales like 1/p and its
    # mean square like 1/p^2.  Measured decay slope is ~1.70: convergence is
    # faster than the bound, which satisfies the lemma but not the window.
    # Expected to fail; kept at the stated tolerance.
    _check(_c9(ctx))


def test_criterion_10_constraint_invariants(ctx):
    _check(_c10(ctx))


def test_criterion_11_worker_determinism(ctx):
    _check(_c11(ctx))
