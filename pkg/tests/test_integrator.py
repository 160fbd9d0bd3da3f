import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
import scipy.stats as ss

from .context import errors, integrator, measure, model, observability, oracles


def linear_model(slope=0.5):
    """b₁ = slope·x with no fast or law dependence, unit slow noise, OU fast component."""

    def b1(x, mu, y, nu):
        return slope * x

    derivs = model.ModelDerivatives(
        dx_b1=lambda x, mu, y, nu: np.full((1, 1, 1), slope),
        dy_b1=lambda x, mu, y, nu: np.zeros((1, 1, 1)),
        dmu_b1=lambda x, mu, y, nu, xt: np.zeros((1, xt.shape[0], 1, 1)),
        dx_sigma1=lambda x, mu: np.zeros((1, 1, 1, 1)),
        dmu_sigma1=lambda x, mu, xt: np.zeros((1, xt.shape[0], 1, 1, 1)),
    )
    return model.ModelSpec(
        dims=model.Dims(n=1, m=1, d1=1, d2=1),
        b1=b1,
        sigma1=lambda x, mu: np.ones((1, 1, 1)),
        b2=lambda y, nu: -y,
        sigma2=lambda y, nu: np.ones((1, 1, 1)),
        derivs=derivs,
        name="linear",
    )


class TestGridSpec:
    def test_layout(self):
        grid = integrator.GridSpec(h=0.05, rho_fast=4.0, record_frames=5)

        dt, n_steps, stride = grid.layout(0.5, 0.25)
        assert dt == pytest.approx(0.05)
        assert n_steps == 10
        assert stride == 2

    def test_fast_step_is_resolved(self):
        grid = integrator.GridSpec(h=0.05, rho_fast=20.0)
        assert grid.step(2.0**-6) == pytest.approx(2.0**-6 / 20.0)

    def test_horizon_must_be_a_multiple_of_the_step(self):
        grid = integrator.GridSpec(h=0.03, rho_fast=1.5, record_frames=0)
        with pytest.raises(errors.ConfigurationError):
            grid.layout(0.5, 1.0)

    def test_frames_must_divide_the_steps(self):
        grid = integrator.GridSpec(h=0.05, rho_fast=4.0, record_frames=4)
        with pytest.raises(errors.ConfigurationError):
            grid.layout(0.5, 0.25)

    def test_under_resolved_fast_scale_warns(self):
        grid = integrator.GridSpec(h=1.0, rho_fast=1.0, record_frames=0)
        with pytest.warns(errors.UnderResolvedWarning):
            grid.layout(1.0, 0.5)

    def test_under_resolved_fast_scale_is_fatal_in_strict_mode(self):
        grid = integrator.GridSpec(h=1.0, rho_fast=1.0, record_frames=0)
        with warnings.catch_warnings():
            warnings.simplefilter("error", errors.UnderResolvedWarning)
            with pytest.raises(errors.ConfigurationError):
                grid.layout(1.0, 0.5)

    def test_substeps(self):
        assert integrator.GridSpec().substeps(0.05) == 1
        assert integrator.GridSpec(noise_step=1.0 / 640.0).substeps(0.05) == 32
        with pytest.raises(errors.ConfigurationError):
            integrator.GridSpec(noise_step=0.03).substeps(0.05)

    def test_common_noise_step(self):
        assert integrator.common_noise_step([0.05, 0.05, 0.03125, 0.015625, 0.0078125]) == pytest.approx(1.0 / 640.0)
        assert integrator.common_noise_step([0.05, 0.0375]) == pytest.approx(0.0125)
        assert integrator.common_noise_step([1.0, 1e-3 * math.pi]) == 0.0


class TestParticleMap:
    def test_chunks_match_a_single_call(self):
        data = np.arange(40, dtype=float).reshape(20, 2)

        def update(rows):
            return (rows * 2.0 + 1.0,)

        (expected,) = integrator.ParticleMap(1)(update, data)
        (actual,) = integrator.ParticleMap(4)(update, data)
        assert np.array_equal(actual, expected)

    def test_lions_average(self):
        state = np.array([[1.0], [2.0], [3.0], [4.0]])
        shared = np.ones((1, 4, 1, 1))
        per_row = np.stack([np.ones((4, 1, 1)), 2.0 * np.ones((4, 1, 1))])

        assert integrator.lions_average(shared, state) == pytest.approx(np.array([[2.5]]))
        assert integrator.lions_average(per_row, state) == pytest.approx(np.array([[2.5], [5.0]]))


class TestCoupledSystem:
    def test_bundle_layout(self, example, small_grid, small_scale):
        bundle = integrator.simulate_coupled(example, small_scale, small_grid, 16, 0)

        assert bundle.labels == (integrator.X_EPS, integrator.Y_EPS_XI, integrator.Y_EPS_Y0)
        assert bundle[integrator.X_EPS].shape == (16, 6, 1)
        assert bundle.times == pytest.approx(np.arange(6) * 0.05)
        assert np.all(bundle[integrator.Y_EPS_Y0][:, 0, :] == 0.0)
        assert bundle.describe()["seed_ledger"]["master_seed"] == 0

    def test_fast_copies_agree_when_y0_is_the_xi_draw(self, example, small_grid, small_scale):
        first = integrator.simulate_coupled(example, small_scale, small_grid, 16, 6)
        start = tuple(first[integrator.Y_EPS_XI][0, 0, :])
        second = integrator.simulate_coupled(example, replace(small_scale, y0=start), small_grid, 16, 6)

        assert np.array_equal(second[integrator.Y_EPS_Y0][0], second[integrator.Y_EPS_XI][0])
        assert np.array_equal(second[integrator.Y_EPS_XI], first[integrator.Y_EPS_XI])
        assert not np.array_equal(second[integrator.Y_EPS_Y0][1], second[integrator.Y_EPS_XI][1])

    def test_replay_is_bit_exact(self, example, small_grid, small_scale):
        first = integrator.simulate_coupled(example, small_scale, small_grid, 32, 4)
        second = integrator.simulate_coupled(example, small_scale, small_grid, 32, 4)

        for label in first.labels:
            assert np.array_equal(first[label], second[label])

    def test_thread_count_does_not_change_the_paths(self, example, small_grid, small_scale):
        serial = integrator.simulate_coupled(example, small_scale, small_grid, 64, 1, threads=1)
        threaded = integrator.simulate_coupled(example, small_scale, small_grid, 64, 1, threads=4)

        for label in serial.labels:
            assert np.array_equal(serial[label], threaded[label])

    def test_replicas_use_fresh_noise(self, example, small_grid, small_scale):
        first = integrator.simulate_coupled(example, small_scale, small_grid, 16, 1, replica=0)
        second = integrator.simulate_coupled(example, small_scale, small_grid, 16, 1, replica=1)

        assert not np.array_equal(first.terminal(integrator.X_EPS), second.terminal(integrator.X_EPS))

    def test_needs_two_particles(self, example, small_grid, small_scale):
        with pytest.raises(errors.ConfigurationError):
            integrator.simulate_coupled(example, small_scale, small_grid, 1, 0)

    def test_blow_up(self, example, small_grid, small_scale):
        explosive = replace(example, b2=lambda y, nu: 1e200 * (1.0 + y**2))

        with np.errstate(all="ignore"), pytest.raises(errors.BlowUpError) as info:
            integrator.simulate_coupled(explosive, small_scale, small_grid, 8, 0)
        assert info.value.details["process"] in (integrator.Y_EPS_XI, integrator.Y_EPS_Y0)
        assert info.value.details["step"] >= 1

    def test_metrics_are_recorded(self, example, small_grid, small_scale):
        metrics = observability.MetricsRecorder()
        integrator.simulate_coupled(example, small_scale, small_grid, 8, 0, metrics=metrics)

        snapshot = metrics.snapshot()
        assert snapshot["simulations"]["coupled"]["count"] == 1
        assert snapshot["particle_steps"] == 5 * 8


class TestFrozenSystem:
    def test_mean_and_variance_follow_the_ou_law(self, example, params):
        grid = integrator.GridSpec(h=0.0125, rho_fast=20.0, record_frames=40)
        law = measure.GaussianLaw(1.0, 1.0)
        bundle = integrator.simulate_frozen(example, law, [0.0], 2.0, grid, 4000, 0)

        mean = bundle.terminal(integrator.Y_EPS_XI)[:, 0].mean()
        variance = bundle.terminal(integrator.Y_EPS_Y0)[:, 0].var(ddof=1)
        assert mean == pytest.approx(oracles.frozen_mean(params, 2.0, 1.0), abs=0.06)
        assert variance == pytest.approx(oracles.frozen_variance(params, 2.0), abs=0.05)

    def test_frozen_laws_share_noise(self, example):
        grid = integrator.GridSpec(h=0.05, rho_fast=20.0, record_frames=0)
        bundle = integrator.simulate_frozen_laws(example, measure.GaussianLaw(), [1.0], 1.0, grid, 64, 0)

        gap = bundle[integrator.Y_ZETA2] - bundle[integrator.Y_ZETA1]
        assert gap[:, 0, 0] == pytest.approx(np.ones(64))
        # the gap is deterministic: noise cancels and only the drift acts on it
        assert np.ptp(gap[:, -1, 0]) == pytest.approx(0.0, abs=1e-12)
        assert 0.0 < gap[0, -1, 0] < 1.0

    def test_invariant_measure(self, example, params):
        grid = integrator.GridSpec(h=0.0125, rho_fast=20.0, record_frames=40)
        eta = integrator.estimate_invariant_measure(example, 4.0, 4.0, grid, 4000, 0)

        assert eta.size == 4000 * 21
        assert eta.mean[0] == pytest.approx(0.0, abs=0.05)
        assert eta.covariance[0, 0] == pytest.approx(params.stationary_variance, abs=0.05)


class TestAveragedDrift:
    def test_matches_quadrature(self, example, params, eta):
        bbar1 = integrator.AveragedDrift(example, eta, max_atoms=None)
        mu = measure.EmpiricalMeasure.point_mass(0.1)
        expected = oracles.averaged_drift(params, 0.3, 0.1)

        actual = bbar1(np.array([[0.3]]), mu)
        assert actual.shape == (1, 1)
        assert actual[0, 0] == pytest.approx(expected, abs=1e-3)

    def test_thinned_atoms(self, example, params, eta):
        bbar1 = integrator.build_averaged_drift(example, eta, max_atoms=256)
        mu = measure.EmpiricalMeasure.point_mass(0.0)

        assert bbar1.eta.size == 256
        assert bbar1.eta_full.size == eta.size
        assert bbar1(np.zeros((3, 1)), mu)[:, 0] == pytest.approx(np.full(3, oracles.averaged_drift(params, 0.0, 0.0)), abs=5e-3)

    def test_point_estimate_has_an_error_bar(self, example, params, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        value, stderr = bbar1.point_estimate(np.zeros((1, 1)), measure.EmpiricalMeasure.point_mass(0.0))

        assert stderr[0] > 0.0
        assert abs(value[0] - oracles.averaged_drift(params, 0.0, 0.0)) <= 3.0 * stderr[0]

    def test_derivatives(self, example, params, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        x = np.array([[0.0], [1.0]])
        mu = measure.EmpiricalMeasure.point_mass(0.0)

        dx = bbar1.dx(x, mu)
        assert dx[:, 0, 0] == pytest.approx([params.a, params.a * math.cos(params.a)])
        dmu = bbar1.dmu(x, mu, np.zeros((3, 1)))
        assert dmu.shape == (1, 3, 1, 1)
        assert np.all(dmu == 1.0)


class TestAveragedAndLimit:
    @pytest.fixture
    def coupled_pair(self, example, eta, small_grid, small_scale):
        bbar1 = integrator.AveragedDrift(example, eta)
        coupled = integrator.simulate_coupled(example, small_scale, small_grid, 32, 2)
        averaged = integrator.simulate_averaged(example, bbar1, small_scale, small_grid, 32, 2, coupled_to=coupled)
        return bbar1, coupled, averaged

    def test_shares_initial_draw(self, coupled_pair):
        _, coupled, averaged = coupled_pair

        assert np.array_equal(averaged[integrator.X_BAR][:, 0], coupled[integrator.X_EPS][:, 0])
        assert averaged.ledger == coupled.ledger

    def test_grid_mismatch(self, example, coupled_pair, small_scale, small_grid):
        bbar1, coupled, _ = coupled_pair
        with pytest.raises(errors.ConfigurationError):
            integrator.simulate_averaged(example, bbar1, small_scale, small_grid, 16, 2, coupled_to=coupled)

    def test_fluctuation(self, coupled_pair, small_scale):
        _, coupled, averaged = coupled_pair
        bundle = integrator.attach_fluctuation(coupled, averaged)

        expected = (coupled[integrator.X_EPS] - averaged[integrator.X_BAR]) / math.sqrt(small_scale.eps)
        assert np.all(bundle[integrator.U_EPS][:, 0, :] == 0.0)
        assert bundle[integrator.U_EPS] == pytest.approx(expected)

    def test_limit_replays_the_averaged_path(self, example, coupled_pair):
        bbar1, _, averaged = coupled_pair

        def upsilon(x, mu):
            return np.full((1, 1, 1), 0.5)

        limit = integrator.simulate_limit(example, bbar1, upsilon, averaged, 9)
        assert np.array_equal(limit[integrator.X_BAR], averaged[integrator.X_BAR])
        assert np.all(limit[integrator.U_LIMIT][:, 0, :] == 0.0)
        assert np.isfinite(limit[integrator.U_LIMIT]).all()
        assert limit[integrator.U_LIMIT][:, -1, 0].std() > 0.0

    def test_limit_needs_derivatives(self, example, coupled_pair):
        bbar1, _, averaged = coupled_pair
        bare = replace(example, derivs=replace(example.derivs, dmu_sigma1=None))

        with pytest.raises(errors.CapabilityError):
            integrator.simulate_limit(bare, bbar1, lambda x, mu: np.zeros((1, 1, 1)), averaged, 0)

    def test_auxiliary_replays_both_bundles(self, example, coupled_pair):
        bbar1, coupled, averaged = coupled_pair
        auxiliary = integrator.simulate_auxiliary(example, bbar1, coupled, averaged, 0)

        assert np.array_equal(auxiliary[integrator.X_EPS], coupled[integrator.X_EPS])
        assert np.array_equal(auxiliary[integrator.X_BAR], averaged[integrator.X_BAR])
        assert np.all(auxiliary[integrator.THETA_EPS][:, 0, :] == 0.0)
        assert np.isfinite(auxiliary[integrator.THETA_EPS]).all()

    def test_auxiliary_rejects_an_averaged_bundle_it_cannot_replay(self, example, eta, coupled_pair, small_scale, small_grid):
        bbar1, coupled, _ = coupled_pair
        coarse = integrator.AveragedDrift(example, eta, max_atoms=16)
        averaged = integrator.simulate_averaged(example, coarse, small_scale, small_grid, 32, 2, coupled_to=coupled)

        with pytest.raises(errors.ConfigurationError):
            integrator.simulate_auxiliary(example, bbar1, coupled, averaged, 0)

    def test_noise_grid_must_match_the_coupled_bundle(self, example, coupled_pair, small_scale, small_grid):
        bbar1, coupled, _ = coupled_pair
        shared = replace(small_grid, noise_step=0.025)

        with pytest.raises(errors.ConfigurationError) as info:
            integrator.simulate_averaged(example, bbar1, small_scale, shared, 32, 2, coupled_to=coupled)
        assert "noise_step" in info.value.details["mismatch"]


class TestLinearSlowDrift:
    def test_averaged_path_equals_the_coupled_path(self, eta):
        linear = linear_model()
        bbar1 = integrator.AveragedDrift(linear, eta, max_atoms=8)
        grid = integrator.GridSpec(h=0.05, rho_fast=4.0, record_frames=0)
        scale = integrator.ScaleParams(eps=0.25, T=0.15)
        coupled = integrator.simulate_coupled(linear, scale, grid, 32, 1)
        averaged = integrator.simulate_averaged(linear, bbar1, scale, grid, 32, 1, coupled_to=coupled)

        assert coupled.meta["n_steps"] == 3
        assert np.max(np.abs(coupled[integrator.X_EPS] - averaged[integrator.X_BAR])) == 0.0

    def test_auxiliary_without_a_source_stays_at_zero(self, eta):
        linear = linear_model()
        bbar1 = integrator.AveragedDrift(linear, eta, max_atoms=8)
        grid = integrator.GridSpec(h=0.05, rho_fast=4.0, record_frames=0)
        scale = integrator.ScaleParams(eps=0.25, T=0.25)
        coupled = integrator.simulate_coupled(linear, scale, grid, 32, 5)
        averaged = integrator.simulate_averaged(linear, bbar1, scale, grid, 32, 5, coupled_to=coupled)
        auxiliary = integrator.simulate_auxiliary(linear, bbar1, coupled, averaged, 0)

        assert np.all(auxiliary[integrator.THETA_EPS] == 0.0)
        assert np.array_equal(auxiliary[integrator.X_BAR], averaged[integrator.X_BAR])

    def test_limit_variance_and_shape(self, eta):
        slope = 0.5
        linear = linear_model(slope)
        bbar1 = integrator.AveragedDrift(linear, eta, max_atoms=8)
        grid = integrator.GridSpec(h=0.05, rho_fast=20.0, record_frames=0)
        averaged = integrator.simulate_averaged(linear, bbar1, integrator.ScaleParams(eps=1.0, T=1.0), grid, 8000, 2)

        def upsilon(x, mu):
            return np.ones((1, 1, 1))

        limit = integrator.simulate_limit(linear, bbar1, upsilon, averaged, 11)
        terminal = limit.terminal(integrator.U_LIMIT)[:, 0]
        # dU = slope·U dt + dV from U = 0: Var U_T = (e^{2·slope·T} − 1) / (2·slope)
        assert np.var(terminal, ddof=1) == pytest.approx(math.expm1(2.0 * slope) / (2.0 * slope), rel=0.1)
        assert abs(ss.kurtosis(terminal)) < 0.2
        assert abs(terminal.mean()) < 0.1
