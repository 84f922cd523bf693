"""Model systems, convex potentials, limit coefficients, penalized stepping."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcv import (ConvexPotential, langevin_model, limit_coefficients,
                    make_system, ou_model, penalized_step, project_interval,
                    solve_lyapunov, yosida_gradient)


def minimize_yosida_objective(c, p, x):
    """Independent oracle: minimize c|z| + (p/2)(x - z)^2 on a fine grid."""
    z = np.linspace(x - 3 * abs(x) - 3, x + 3 * abs(x) + 3, 2_000_001)
    obj = c * np.abs(z) + 0.5 * p * (x - z) ** 2
    zstar = z[np.argmin(obj)]
    return p * (x - zstar)


class TestLimitCoefficients:
    def test_ou_effective_constant(self):
        model = ou_model(1.0, 1.0)
        law = solve_lyapunov(model.a, model.k)
        lc = limit_coefficients(make_system("linear_timedep"), model, law)
        assert lc.c_eff == pytest.approx(1.0, abs=1e-14)
        np.testing.assert_allclose(lc.gamma, [[0.0], [1.0]])

    def test_langevin_effective_constant(self):
        model = langevin_model(1.0, 1.0, 1.0)
        law = solve_lyapunov(model.a, model.k)
        lc = limit_coefficients(make_system("linear_timedep"), model, law)
        assert lc.c_eff == pytest.approx(1.0, abs=1e-14)

    def test_langevin_scaling_k_over_mu(self):
        model = langevin_model(4.0, 1.5, 2.0)
        law = solve_lyapunov(model.a, model.k)
        lc = limit_coefficients(make_system("friction"), model, law)
        assert lc.c_eff == pytest.approx(2.0 / 4.0, rel=1e-12)

    def test_constant_sigma_drift_identity(self):
        rng = np.random.default_rng(2)
        model = ou_model(1.0, 1.0)
        law = solve_lyapunov(model.a, model.k)
        for kind in ("linear_timedep", "van_der_pol", "friction",
                     "elasto_plastic", "impact", "reflected_integral"):
            system = make_system(kind)
            lc = limit_coefficients(system, model, law)
            for _ in range(100):
                state = rng.standard_normal(system.n + system.m)
                t = rng.uniform(0, 1)
                np.testing.assert_array_equal(lc.drift_tilde(state, t),
                                              system.drift(state, t))


class TestProjectInterval:
    def test_examples(self):
        assert project_interval(0.1, 0.25) == 0.1
        assert project_interval(0.5, 0.25) == 0.25
        assert project_interval(-3.0, 1.0) == -1.0

    @given(x=st.floats(-100, 100), c=st.floats(0.01, 10))
    @settings(max_examples=60, deadline=None)
    def test_idempotent_and_contractive(self, x, c):
        y = project_interval(x, c)
        assert project_interval(y, c) == y
        assert abs(y) <= c
        # 1-Lipschitz against a second point
        x2 = x + 0.5
        assert abs(project_interval(x2, c) - y) <= abs(x2 - x) + 1e-15


class TestYosidaGradient:
    def test_abs_linear_zone(self):
        pot = ConvexPotential("abs", 1.0)
        assert yosida_gradient(pot, 10.0, 0.05) == pytest.approx(0.5, abs=1e-12)
        oracle = minimize_yosida_objective(1.0, 10.0, 0.05)
        assert oracle == pytest.approx(0.5, abs=1e-4)

    def test_abs_saturated(self):
        pot = ConvexPotential("abs", 1.0)
        assert yosida_gradient(pot, 10.0, 1.0) == pytest.approx(1.0, abs=1e-12)
        oracle = minimize_yosida_objective(1.0, 10.0, 1.0)
        assert oracle == pytest.approx(1.0, abs=1e-4)

    def test_interval_inside(self):
        pot = ConvexPotential("interval", 0.25)
        assert yosida_gradient(pot, 100.0, 0.25) == 0.0

    def test_halfline(self):
        pot = ConvexPotential("halfline")
        assert yosida_gradient(pot, 100.0, -0.1) == pytest.approx(-10.0)
        assert yosida_gradient(pot, 100.0, 0.1) == 0.0

    def test_p_below_one_rejected(self):
        with pytest.raises(ValueError):
            yosida_gradient(ConvexPotential("abs", 1.0), 0.5, 0.0)

    @given(x=st.floats(-10, 10), y=st.floats(-10, 10), p=st.floats(1, 1e4))
    @settings(max_examples=80, deadline=None)
    def test_monotone_lipschitz_positive(self, x, y, p):
        for pot in (ConvexPotential("abs", 0.25), ConvexPotential("interval", 0.25),
                    ConvexPotential("halfline")):
            gx = float(pot.yosida_grad(p, x))
            gy = float(pot.yosida_grad(p, y))
            assert (gx - gy) * (x - y) >= -1e-12          # monotone
            assert abs(gx - gy) <= p * abs(x - y) * (1 + 1e-12) + 1e-12
            assert x * gx >= -1e-12                        # <x, grad> >= 0
        # the friction potential keeps its gradient globally bounded
        assert abs(float(ConvexPotential("abs", 0.25).yosida_grad(p, x))) <= 0.25 + 1e-12


class TestPenalizedStep:
    def test_friction_fixed_point(self):
        system = make_system("friction")
        for p in (1.0, 10.0, 1e3):
            out = penalized_step(system, p, [0.0], 0.0, 1e-3)
            assert out[0] == 0.0

    def test_friction_stick_as_p_grows(self):
        # one step from rest with sub-threshold forcing approaches the
        # projection scheme's exact stick as p increases
        system = make_system("friction", c_f=1.0)
        forcing = 0.5  # |forcing| <= c_f
        dt = 1e-2
        prev = np.inf
        for p in (10.0, 100.0, 1000.0):
            x1 = float(penalized_step(system, p, [0.0], forcing, dt)[0])
            x2 = float(penalized_step(system, p, [x1], forcing, dt)[0])
            # distance of the two-step state from the stick value 0
            assert abs(x2) <= prev + 1e-15
            prev = abs(x2)
        assert prev <= 2 * forcing * dt / 1000.0 + 1e-12

    def test_reflected_pullback_hand_evaluated(self):
        system = make_system("reflected_integral")
        out = penalized_step(system, 100.0, [-0.1], 0.0, 0.01)
        assert out[0] == pytest.approx(0.0, abs=1e-15)

    def test_elasto_plastic_rows(self):
        system = make_system("elasto_plastic", c_ep=0.25)
        state = np.array([0.4, 0.3])  # z outside the band
        out = penalized_step(system, 100.0, state, 0.0, 1e-3)
        # x row: explicit Euler with b = -z ; z row pulled back toward the band
        assert out[0] == pytest.approx(0.4 + 1e-3 * (-0.3), abs=1e-15)
        assert out[1] == pytest.approx(0.3 + 1e-3 * (0.4 - 100.0 * 0.05), abs=1e-12)

    def test_smooth_kind_rejected(self):
        with pytest.raises(ValueError):
            penalized_step(make_system("linear_timedep"), 10.0, [0.0, 0.0], 0.0, 1e-3)


class TestFunctionals:
    def test_square_norm_includes_constraint(self):
        system = make_system("elasto_plastic")
        val = system.functional.evaluate(np.array([[2.0]]), np.array([[0.25]]))
        assert val[0] == pytest.approx(4.0625)

    def test_indicator_band(self):
        system = make_system("van_der_pol", functional="terminal_indicator_band")
        vals = system.functional.evaluate(np.array([[0.5, 9.0], [1.5, 0.0]]))
        np.testing.assert_array_equal(vals, [1.0, 0.0])

    def test_boundary_indicator_exact(self):
        system = make_system("elasto_plastic", functional="boundary_indicator")
        vals = system.functional.evaluate(
            np.array([[0.0], [0.0], [0.0]]),
            np.array([[0.25], [-0.25], [0.2499999999]]))
        np.testing.assert_array_equal(vals, [1.0, 1.0, 0.0])

    def test_velocity_square_and_terminal_value(self):
        imp = make_system("impact")
        assert imp.functional.evaluate(np.array([[0.1, -0.5]]))[0] == pytest.approx(0.25)
        ref = make_system("reflected_integral")
        assert ref.functional.evaluate(np.array([[0.7]]))[0] == pytest.approx(0.7)
