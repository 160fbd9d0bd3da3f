import math
from dataclasses import replace

import numpy as np
import pytest

from .context import errors, experiments, integrator, measure, model, oracles, poisson

GRID = integrator.GridSpec(h=0.05, rho_fast=20.0)


class TestTailFit:
    def test_bound(self):
        assert poisson.TailFit(rate=math.inf, amplitude=0.0).bound(8.0) == 0.0
        assert poisson.TailFit(rate=-0.1, amplitude=1.0).bound(8.0) == math.inf
        assert poisson.TailFit(rate=2.0, amplitude=4.0).bound(1.0) == pytest.approx(2.0 * math.exp(-2.0))

    def test_zero_integrand_has_nothing_to_truncate(self):
        times = np.linspace(0.0, 8.0, 17)
        fit = poisson.fit_tail(times, np.zeros_like(times), np.zeros_like(times))

        assert math.isinf(fit.rate)
        assert fit.bound(8.0) == 0.0

    def test_recovers_an_exponential(self):
        times = np.linspace(0.0, 8.0, 33)
        fit = poisson.fit_tail(times, 3.0 * np.exp(-0.5 * times), np.zeros_like(times))

        assert fit.rate == pytest.approx(0.5, rel=1e-9)
        assert fit.amplitude == pytest.approx(3.0, rel=1e-9)


class TestPsdSqrt:
    def test_diagonal(self):
        root, fraction, eigenvalues = poisson.psd_sqrt(np.diag([4.0, 9.0]))

        assert root == pytest.approx(np.diag([2.0, 3.0]))
        assert fraction == 0.0
        assert eigenvalues == pytest.approx([4.0, 9.0])

    def test_clips_negative_eigenvalues(self):
        root, fraction, _ = poisson.psd_sqrt(np.diag([1.0, -0.01]))

        assert root == pytest.approx(np.diag([1.0, 0.0]))
        assert fraction == pytest.approx(0.01 / 1.01)


class TestPsiEstimate:
    def test_matches_quadrature(self, example, params, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        mu = measure.EmpiricalMeasure.point_mass(0.0)
        expected = oracles.psi(params, 1.0)

        cell = poisson.psi_estimate(example, bbar1, [0.0], mu, [1.0], eta, 8.0, 2048, GRID, 0)
        assert cell.T_trunc == pytest.approx(8.0)
        assert cell.mc_paths == 2048
        assert abs(float(cell.psi_hat[0]) - expected) <= 5.0 * float(cell.psi_stderr[0]) + 0.03
        assert cell.to_dict()["query"]["y"] == [1.0]

    def test_vanishes_without_fast_dependence(self, example, eta):
        slow_only = experiments.without_fast_dependence(example)
        bbar1 = integrator.AveragedDrift(slow_only, eta)

        mu = measure.EmpiricalMeasure.point_mass(0.5)
        cell = poisson.psi_estimate(slow_only, bbar1, [0.5], mu, [1.0], eta, 2.0, 64, GRID, 0)
        assert np.all(cell.psi_hat == 0.0)
        assert cell.tail_bound == 0.0

        query = poisson.make_psi_query(slow_only, bbar1, [0.5], mu, 2.0, 64, GRID, 0)
        values, _ = query(np.array([[-1.0], [0.0], [2.0]]), eta)
        assert np.all(values == 0.0)

    def test_common_random_numbers(self, example, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        mu = measure.EmpiricalMeasure.point_mass(0.0)
        query = poisson.make_psi_query(example, bbar1, [0.0], mu, 1.0, 64, GRID, 3)

        first, _ = query(np.array([[1.0]]), eta)
        second, _ = query(np.array([[1.0]]), eta)
        assert np.array_equal(first, second)

    def test_needs_enough_paths(self, example, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        with pytest.raises(errors.ConfigurationError):
            poisson.psi_estimate(example, bbar1, [0.0], measure.EmpiricalMeasure.point_mass(0.0), [1.0], eta, 1.0, 2, GRID, 0)

    def test_query_point_dimension(self, example, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        with pytest.raises(errors.ConfigurationError):
            poisson.psi_estimate(example, bbar1, [0.0, 1.0], measure.EmpiricalMeasure.point_mass(0.0), [1.0], eta, 1.0, 64, GRID, 0)


class TestDerivativeEstimate:
    def test_matches_quadrature(self, example, params, eta):
        mu = measure.EmpiricalMeasure.point_mass(0.0)
        expected = oracles.dy_psi(params, 1.0)

        cell = poisson.dy_psi_sigma2_estimate(example, [0.0], mu, [1.0], eta, 8.0, 1024, GRID, 0)
        estimate = float(cell.dy_psi_sigma2_hat[0, 0])
        assert cell.dy_psi_sigma2_hat.shape == (1, 1)
        assert abs(estimate - expected) <= 0.1 * abs(expected) + 5.0 * float(cell.dy_psi_sigma2_stderr[0, 0])

    def test_needs_fast_derivatives(self, example, eta):
        bare = replace(example, derivs=model.ModelDerivatives())
        with pytest.raises(errors.CapabilityError):
            poisson.dy_psi_sigma2_estimate(bare, [0.0], measure.EmpiricalMeasure.point_mass(0.0), [1.0], eta, 1.0, 64, GRID, 0)


class TestUpsilon:
    def test_square_root_and_value(self, example, params, eta):
        mu = measure.EmpiricalMeasure.point_mass(0.0)
        estimate = poisson.upsilon_estimate(example, eta, [0.0], mu, 16, 0, mc_paths=512, T_trunc=8.0, grid=GRID)

        assert estimate.matrix.shape == (1, 1)
        assert estimate.residual() <= estimate.tolerance + 1e-12
        assert estimate.diagnostics["cells"] == 16
        assert estimate.diagnostics["clipped_fraction"] == 0.0
        assert estimate.matrix[0, 0] ** 2 == pytest.approx(oracles.upsilon_squared(params), rel=0.25)

    def test_squared_value_on_a_fine_grid(self, example, params, eta):
        mu = measure.EmpiricalMeasure.point_mass(0.0)
        fine = integrator.GridSpec(h=0.05, rho_fast=100.0)
        estimate = poisson.upsilon_estimate(example, eta, [0.0], mu, 128, 0, mc_paths=512, T_trunc=6.0, grid=fine)

        assert estimate.diagnostics["cells"] == 128
        assert estimate.diagnostics["noise_bias"][0] >= 0.0
        assert estimate.matrix[0, 0] ** 2 == pytest.approx(oracles.upsilon_squared(params), rel=0.05)
        uncorrected = estimate.diagnostics["uncorrected_second_moment"][0][0]
        assert uncorrected - estimate.raw_second_moment[0, 0] == pytest.approx(estimate.diagnostics["noise_bias"][0])

    def test_vanishes_without_fast_dependence(self, example, eta):
        slow_only = experiments.without_fast_dependence(example)
        mu = measure.EmpiricalMeasure.point_mass(0.5)
        estimate = poisson.upsilon_estimate(slow_only, eta, [0.5], mu, 8, 0, mc_paths=64, T_trunc=2.0, grid=GRID)

        assert np.all(estimate.matrix == 0.0)
        assert estimate.diagnostics["clipped_fraction"] == 0.0

    def test_rejects_empty_budget(self, example, eta):
        with pytest.raises(errors.ConfigurationError):
            poisson.upsilon_estimate(example, eta, [0.0], measure.EmpiricalMeasure.point_mass(0.0), 0, 0)


class TestDynkinResidual:
    def test_zero_horizon(self, example, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        mu = measure.EmpiricalMeasure.point_mass(0.0)
        query = poisson.make_psi_query(example, bbar1, [0.0], mu, 1.0, 64, GRID, 0)

        residual = poisson.dynkin_residual(example, bbar1, query, [0.0], mu, [1.0], eta, 0.0)
        assert float(residual) == 0.0
        assert residual.within()

    def test_negative_horizon(self, example, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        mu = measure.EmpiricalMeasure.point_mass(0.0)
        query = poisson.make_psi_query(example, bbar1, [0.0], mu, 1.0, 64, GRID, 0)

        with pytest.raises(errors.ConfigurationError):
            poisson.dynkin_residual(example, bbar1, query, [0.0], mu, [1.0], eta, -0.5)

    def test_short_horizon(self, example, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        mu = measure.EmpiricalMeasure.point_mass(0.0)
        query = poisson.make_psi_query(example, bbar1, [0.0], mu, 8.0, 256, GRID, 1)

        residual = poisson.dynkin_residual(example, bbar1, query, [0.0], mu, [1.0], eta, 0.5, 256, 0, grid=GRID, query_points=8)
        assert residual.t_short == 0.5
        assert len(residual.lhs) == 1
        assert residual.stderr > 0.0
        assert math.isfinite(residual.residual)
