"""Coupled simulation: determinism, hand-checked steps, coupling rates,
obstacle sub-stepping, constraint preservation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcv import (NoiseModel, NoiseState, StepperConfig, apply_restitution,
                    batch_simulate, impact_substep, iter_sample_blocks,
                    make_system, ou_model, simulate_coupled, solve_lyapunov,
                    step_noise)
from diffcv.accumulators import Welford, from_block
from diffcv.coupling import sample_stream
from diffcv.errors import NoCrossingError, UnstableConfigurationError

OU = ou_model(1.0, 1.0)
LAW = solve_lyapunov(OU.a, OU.k)
FAST = StepperConfig(dt=1e-3, horizon=1.0)


class TestSimulateCoupled:
    def test_zero_noise_null_dynamics(self):
        model = NoiseModel(a=[[1.0]], k=[[0.0]], weights=[1.0])
        law = solve_lyapunov(model.a, model.k)
        path = simulate_coupled(make_system("linear_timedep"), model, law, 0.5,
                                FAST, 0)
        assert np.all(path.x_eps == 0.0)
        assert np.all(path.u == 0.0)
        assert path.f_x == path.f_u == 0.0

    def test_friction_one_step_stick(self):
        # frozen driver with |eta| <= c_f: X_1 = dt*eta - dt*proj(eta) = 0
        system = make_system("friction", c_f=0.25)
        cfg = StepperConfig(dt=0.5, horizon=1.0)
        path = simulate_coupled(system, OU, LAW, 1.0, cfg, 0,
                                initial_eta=[0.2])
        assert path.x_eps[1, 0] == 0.0

    def test_friction_slip_when_forcing_exceeds(self):
        system = make_system("friction", c_f=0.25)
        cfg = StepperConfig(dt=0.5, horizon=1.0)
        path = simulate_coupled(system, OU, LAW, 1.0, cfg, 0,
                                initial_eta=[0.4])
        assert path.x_eps[1, 0] == pytest.approx(0.5 * (0.4 - 0.25), abs=1e-15)

    def test_noise_path_matches_step_noise_bitwise(self):
        # the compiled driver must reproduce the scalar public op exactly
        system = make_system("linear_timedep")
        cfg = StepperConfig(dt=1e-2, horizon=0.1)
        eps = 0.5
        path = simulate_coupled(system, OU, LAW, eps, cfg, 123)
        g = sample_stream(123, 0)
        z0 = g.standard_normal(OU.d)
        eta = LAW.sqrt_c @ z0
        assert eta[0] == path.eta[0, 0]
        for n in range(cfg.n_steps):
            z = g.standard_normal(1)
            dw = math.sqrt(cfg.dt) * z
            eta = step_noise(OU, NoiseState(eta=eta, epsilon=eps), cfg.dt, dw)
            assert eta[0] == path.eta[n + 1, 0]

    def test_rejects_unstable_when_policy_reject(self):
        cfg = StepperConfig(dt=1e-2, horizon=1.0, stability_policy="reject")
        with pytest.raises(UnstableConfigurationError):
            simulate_coupled(make_system("linear_timedep"), OU, LAW, 0.05, cfg, 0)

    def test_bad_horizon_rejected(self):
        with pytest.raises(ValueError):
            StepperConfig(dt=3e-4, horizon=1.0)


class TestCouplingRate:
    def test_mean_square_gap_quarters_when_eps_halves(self):
        system = make_system("linear_timedep")
        gaps = {}
        for i, eps in enumerate([0.2, 0.1]):
            acc = Welford()
            for b in iter_sample_blocks(system, OU, eps, FAST, 10_000,
                                        7 + i * 2**32, track_gap=True):
                acc.merge(from_block(*b.gap))
            gaps[eps] = acc.mean
        ratio = gaps[0.2] / gaps[0.1]
        assert 2.5 <= ratio <= 6.0

    def test_log_log_slope_near_two(self):
        system = make_system("linear_timedep")
        eps_grid = [0.4, 0.2, 0.1]
        means = []
        for i, eps in enumerate(eps_grid):
            acc = Welford()
            for b in iter_sample_blocks(system, OU, eps, FAST, 10_000,
                                        11 + i * 2**32, track_gap=True):
                acc.merge(from_block(*b.gap))
            means.append(acc.mean)
        x = np.log(eps_grid)
        y = np.log(means)
        xc = x - x.mean()
        slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
        assert 1.7 <= slope <= 2.3


class TestImpactSubstep:
    def test_linear_interpolation(self):
        assert impact_substep(0.2, 0.3, 0.25) == pytest.approx(0.5)

    def test_boundary_start(self):
        assert impact_substep(0.25, 0.35, 0.25) == 0.0

    def test_negative_barrier(self):
        assert impact_substep(-0.2, -0.4, 0.25) == pytest.approx(0.25)

    def test_no_crossing_rejected(self):
        with pytest.raises(NoCrossingError):
            impact_substep(0.1, 0.2, 0.25)
        with pytest.raises(NoCrossingError):
            impact_substep(0.3, 0.4, 0.25)

    @given(x0=st.floats(-0.24, 0.24), x1=st.floats(0.26, 2.0))
    @settings(max_examples=50, deadline=None)
    def test_theta_lands_on_barrier(self, x0, x1):
        theta = impact_substep(x0, x1, 0.25)
        assert 0.0 <= theta <= 1.0
        assert x0 + theta * (x1 - x0) == pytest.approx(0.25, abs=1e-12)


class TestApplyRestitution:
    def test_examples(self):
        assert apply_restitution(1.0, 1.0) == -1.0
        assert apply_restitution(1.0, 0.5) == -0.5
        assert apply_restitution(0.0, 0.7) == 0.0

    def test_range_check(self):
        with pytest.raises(ValueError):
            apply_restitution(1.0, 1.5)


class TestImpactDynamics:
    def test_events_sit_on_barrier(self):
        system = make_system("impact")
        path = simulate_coupled(system, OU, LAW, 0.3, FAST, 3)
        x1 = path.x_eps[:, 0]
        assert np.max(np.abs(x1)) <= system.p_o + 1e-15
        # at least one event in a noisy run at this eps
        hits = np.sum(np.abs(x1) == system.p_o)
        assert hits >= 1

    def test_elastic_energy_conserved_without_noise(self):
        # deterministic oscillator bouncing on the obstacle: the flip is
        # energy-exact, Euler drift grows energy only at O(dt)
        model = NoiseModel(a=[[1.0]], k=[[0.0]], weights=[1.0])
        law = solve_lyapunov(model.a, model.k)
        system = make_system("impact", x0=[0.1, 0.6], restitution=1.0)
        cfg = StepperConfig(dt=1e-4, horizon=1.0)
        path = simulate_coupled(system, model, law, 1.0, cfg, 0)
        x1, x2 = path.x_eps[:, 0], path.x_eps[:, 1]
        assert np.max(np.abs(x1)) <= system.p_o + 1e-15
        assert np.sum(np.abs(x1) == system.p_o) >= 1
        energy = 0.5 * (x1**2 + x2**2)
        assert abs(energy[-1] - energy[0]) <= 20 * cfg.dt * energy[0]

    def test_inelastic_loses_speed(self):
        model = NoiseModel(a=[[1.0]], k=[[0.0]], weights=[1.0])
        law = solve_lyapunov(model.a, model.k)
        system = make_system("impact", x0=[0.1, 0.6], restitution=0.5)
        cfg = StepperConfig(dt=1e-4, horizon=1.0)
        path = simulate_coupled(system, model, law, 1.0, cfg, 0)
        energy = 0.5 * (path.x_eps[:, 0] ** 2 + path.x_eps[:, 1] ** 2)
        assert energy[-1] < 0.5 * energy[0]


class TestBatchSimulate:
    def test_n1_equals_single_path(self):
        system = make_system("linear_timedep")
        pair = next(iter(batch_simulate(system, OU, 0.5, FAST, 1, 42)))
        path = simulate_coupled(system, OU, LAW, 0.5, FAST, 42)
        assert pair == (path.f_x, path.f_u)

    def test_worker_counts_agree(self):
        system = make_system("friction")
        cfg = StepperConfig(dt=1e-2, horizon=1.0)
        one = sorted(batch_simulate(system, OU, 0.5, cfg, 300, 9, workers=1))
        eight = sorted(batch_simulate(system, OU, 0.5, cfg, 300, 9, workers=8))
        assert one == eight

    def test_disjoint_seeds_uncorrelated(self):
        system = make_system("linear_timedep")
        cfg = StepperConfig(dt=1e-2, horizon=1.0)
        a = np.array([fx for fx, _ in batch_simulate(system, OU, 0.5, cfg,
                                                     10_000, 1)])
        b = np.array([fx for fx, _ in batch_simulate(system, OU, 0.5, cfg,
                                                     10_000, 2)])
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 0.05

    def test_constraints_exact_in_batch(self):
        ep = make_system("elasto_plastic")
        blocks = list(iter_sample_blocks(ep, OU, 0.25, FAST, 2000, 5))
        assert all(b.diag["max_abs_z_x"] <= ep.c_ep for b in blocks)
        assert all(b.diag["max_abs_z_u"] <= ep.c_ep for b in blocks)
        refl = make_system("reflected_integral")
        blocks = list(iter_sample_blocks(refl, OU, 0.25, FAST, 2000, 5))
        assert all(b.diag["min_x"] >= 0.0 for b in blocks)
        assert all(b.diag["min_u"] >= 0.0 for b in blocks)

    def test_elasto_plastic_paths_stay_in_band(self):
        ep = make_system("elasto_plastic")
        path = simulate_coupled(ep, OU, LAW, 0.25, FAST, 21)
        assert np.max(np.abs(path.z_eps)) <= ep.c_ep
        assert np.max(np.abs(path.u[:, 1])) <= ep.c_ep

    def test_reflected_paths_stay_nonnegative(self):
        refl = make_system("reflected_integral")
        path = simulate_coupled(refl, OU, LAW, 0.25, FAST, 22)
        assert np.min(path.x_eps) >= 0.0
        assert np.min(path.u) >= 0.0

    def test_decoupled_mutation_inflates_variance(self):
        # fresh increments for U destroy the coupling: Var(f_x - f_u) is O(1)
        system = make_system("linear_timedep")
        eps = 0.1
        coupled = list(iter_sample_blocks(system, OU, eps, FAST, 4000, 31))
        broken = list(iter_sample_blocks(system, OU, eps, FAST, 4000, 31,
                                         decouple=True))
        var_c = sum(b.diff[2] for b in coupled) / 3999
        var_b = sum(b.diff[2] for b in broken) / 3999
        assert var_b > 20 * var_c
