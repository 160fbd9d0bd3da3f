import inspect
import math
import re
from dataclasses import replace

import numpy as np
import pytest

from .context import errors, experiments, fitting, integrator, measure, model

RATE_GRID = (2.0**-1, 2.0**-2, 2.0**-3, 2.0**-4)
ANCHOR_KINDS = ("theorem", "lemma", "proposition", "assumption", "definition")


class TestKsNonincreasing:
    def test_monotone(self):
        ci = [fitting.Interval(0.0, 1.0)] * 3
        assert experiments.ks_nonincreasing([0.3, 0.2, 0.1], ci) == (True, 0)

    def test_one_increase_inside_the_interval(self):
        ci = [fitting.Interval(0.25, 0.35), fitting.Interval(0.2, 0.4), fitting.Interval(0.0, 0.2)]
        assert experiments.ks_nonincreasing([0.3, 0.32, 0.1], ci) == (True, 1)

    def test_increase_outside_the_interval(self):
        ci = [fitting.Interval(0.25, 0.35), fitting.Interval(0.3, 0.5), fitting.Interval(0.0, 0.2)]
        assert experiments.ks_nonincreasing([0.3, 0.4, 0.1], ci) == (False, 1)

    def test_two_increases(self):
        ci = [fitting.Interval(0.0, 1.0)] * 4
        assert experiments.ks_nonincreasing([0.3, 0.31, 0.2, 0.21], ci) == (False, 2)


class TestReports:
    def test_passed_needs_checks(self):
        report = experiments.PropertyReport()
        assert not report.passed

        report.add(experiments.CheckResult("a", "definition:particle-scheme", True, 1.0))
        assert report.passed
        report.add(experiments.CheckResult("b", "definition:particle-scheme", False, 0.0))
        assert not report.passed
        assert report.check("b").value == 0.0
        with pytest.raises(KeyError):
            report.check("c")

    def test_rate_rows(self):
        report = experiments.RateReport(
            eps_grid=(0.5, 0.25),
            errors=(0.2, 0.1),
            error_ci=(fitting.Interval(0.1, 0.3), fitting.Interval(0.05, 0.15)),
        )

        assert list(report.rows()) == [(0.5, 0.2, 0.1, 0.3), (0.25, 0.1, 0.05, 0.15)]
        assert math.isnan(report.slope)
        assert report.to_dict()["flag"] is None

    def test_every_anchor_names_its_result_kind(self, example):
        anchors = re.findall(r'anchor="([^"]+)"', inspect.getsource(experiments))
        anchors += list(model.audit_assumptions(example, 2.0, 4, 1.0, 0).to_dict()["anchors"].values())

        assert anchors
        for anchor in anchors:
            kind, _, slug = anchor.partition(":")
            assert kind in ANCHOR_KINDS
            assert re.fullmatch(r"[a-z0-9]+(-[a-z0-9]+)*", slug)


class TestWithoutFastDependence:
    def test_drift_ignores_the_fast_arguments(self, example):
        slow_only = experiments.without_fast_dependence(example)
        x = np.array([[0.3], [0.3], [-1.0]])
        mu = measure.EmpiricalMeasure([0.0, 1.0])

        first = slow_only.drift_slow(x, mu, np.array([[0.0], [5.0], [2.0]]), measure.EmpiricalMeasure([1.0]))
        second = slow_only.drift_slow(x[:1], mu, np.array([[9.0]]), measure.EmpiricalMeasure([-3.0, 3.0]))
        assert first[0, 0] == first[1, 0]
        assert first[0, 0] == second[0, 0]
        assert first[0, 0] == pytest.approx(math.sin(0.3) + 0.5 + 2.0)
        assert np.all(slow_only.derivative("dy_b1")(x, mu, x, mu) == 0.0)
        assert slow_only.name == "example-slow-only"


class TestAveragingRate:
    def test_grid_validation(self, example, eta, small_grid):
        scale = integrator.ScaleParams(T=0.25)
        with pytest.raises(errors.ConfigurationError):
            experiments.run_averaging_rate(example, scale, RATE_GRID[:3], 8, 1, 0, grid=small_grid, eta=eta)
        with pytest.raises(errors.ConfigurationError):
            experiments.run_averaging_rate(example, scale, RATE_GRID[::-1], 8, 1, 0, grid=small_grid, eta=eta)
        with pytest.raises(errors.ConfigurationError):
            experiments.run_averaging_rate(example, replace(scale, p=3.0), RATE_GRID, 8, 1, 0, grid=small_grid, eta=eta)

    def test_small_sweep(self, example, eta, small_grid):
        scale = integrator.ScaleParams(T=0.25)
        report = experiments.run_averaging_rate(
            example, scale, RATE_GRID, 16, 2, 0, grid=small_grid, bootstrap=20, eta=eta
        )

        assert len(report.errors) == 4
        assert all(error > 0.0 for error in report.errors)
        assert all(interval.low <= interval.high for interval in report.error_ci)
        columns, rows = report.tables["avg_rate"]
        assert columns == experiments.RATE_COLUMNS
        assert len(rows) == 4
        assert [check.name for check in report.checks] == ["averaging_rate_slope", "averaging_rate_r_squared"]
        assert report.step_halving["rho_fast"] == [4.0, 8.0]
        # steps 1/20, 1/20, 1/32, 1/64 and 1/128 for the halved run
        assert report.noise_step == pytest.approx(1.0 / 640.0)
        assert report.to_dict()["diagnostics"]["noise_step"] == report.noise_step
        assert len(report.ledgers) == 2
        assert "rate_loglog" in report.series

    def test_degenerate_without_fast_dependence(self, example, eta, small_grid):
        slow_only = experiments.without_fast_dependence(example)
        scale = integrator.ScaleParams(T=0.25)
        report = experiments.run_averaging_rate(
            slow_only, scale, RATE_GRID, 8, 1, 0, grid=small_grid, bootstrap=10, step_halving=False, eta=eta
        )

        assert report.degenerate
        assert not report.passed
        assert report.errors == (0.0, 0.0, 0.0, 0.0)
        assert report.check("averaging_rate_slope").details["flag"] == "degenerate: no fast dependence"
        assert report.to_dict()["flag"] == "degenerate: no fast dependence"

    def test_sweep_shares_the_slow_brownian_path(self):
        still = model.ModelSpec(
            dims=model.Dims(n=1, m=1, d1=1, d2=1),
            b1=lambda x, mu, y, nu: np.zeros_like(x),
            sigma1=lambda x, mu: np.ones((1, 1, 1)),
            b2=lambda y, nu: -y,
            sigma2=lambda y, nu: np.ones((1, 1, 1)),
        )
        grid = integrator.GridSpec(h=1.0, rho_fast=4.0, record_frames=0, noise_step=0.03125)

        def bbar1(x, mu):
            return np.zeros_like(x)

        terminals = []
        for eps in (0.25, 0.125):
            scale = integrator.ScaleParams(eps=eps, T=0.25)
            coupled = integrator.simulate_coupled(still, scale, grid, 16, 3)
            averaged = integrator.simulate_averaged(still, bbar1, scale, grid, 16, 3, coupled_to=coupled)
            assert np.allclose(coupled.terminal(integrator.X_EPS), averaged.terminal(integrator.X_BAR), rtol=0.0, atol=1e-12)
            terminals.append(averaged.terminal(integrator.X_BAR))
        assert np.allclose(terminals[0], terminals[1], rtol=0.0, atol=1e-12)


class TestClt:
    def test_needs_a_scalar_slow_component(self, example):
        wide = replace(example, dims=model.Dims(n=2, m=1, d1=1, d2=1))
        with pytest.raises(errors.UnsupportedDimensionError):
            experiments.run_clt(wide, integrator.ScaleParams(), (0.5,), 8, 0)

    def test_needs_derivatives(self, example):
        bare = replace(example, derivs=model.ModelDerivatives())
        with pytest.raises(errors.CapabilityError):
            experiments.run_clt(bare, integrator.ScaleParams(), (0.5,), 8, 0)

    def test_small_comparison(self, example, eta, small_grid):
        scale = integrator.ScaleParams(T=0.25)
        report = experiments.run_clt(
            example, scale, (2.0**-2, 2.0**-3), 64, 0, grid=small_grid, mc_paths=64, cell_budget=4, bootstrap=10, eta=eta
        )

        assert report.eps_grid == (0.25, 0.125)
        assert all(0.0 <= ks <= 1.0 for ks in report.ks_per_eps)
        assert all(ratio > 0.0 for ratio in report.var_ratio_per_eps)
        columns, rows = report.tables["clt"]
        assert columns == experiments.CLT_COLUMNS
        assert len(rows) == 2
        assert [check.name for check in report.checks] == ["clt_ks", "clt_variance_ratio", "clt_ks_nonincreasing"]
        assert report.upsilon["cells"] == 4
        assert report.upsilon["frozen"] is True

    def test_rejects_a_slow_dependent_fast_gradient(self, example, eta, small_grid):
        def dy_b1(x, mu, y, nu):
            return (-np.sin(y) * (1.0 + x**2)).reshape(-1, 1, 1)

        tilted = replace(example, derivs=replace(example.derivs, dy_b1=dy_b1))
        scale = integrator.ScaleParams(T=0.25)
        with pytest.raises(errors.CapabilityError) as info:
            experiments.run_clt(tilted, scale, (2.0**-2,), 16, 0, grid=small_grid, mc_paths=16, cell_budget=2, bootstrap=4, eta=eta)
        assert info.value.details["callback"] == "dy_b1"


class TestPropertySuites:
    def test_audit(self):
        params = model.ExampleParams.small_coupling()
        report = experiments.run_audit(model.build_example_model(params), 2.0, 64, 4.0, 0)

        assert report.passed
        assert report.check("dissipativity_margin").anchor == "assumption:fast-dissipativity"
        assert report.diagnostics["sample_count"] == 64

    def test_invariant_measure(self, example, params, eta):
        report = experiments.check_invariant_measure(example, eta, params)

        assert report.passed
        assert report.check("invariant_variance").value == pytest.approx(0.5, abs=0.01)
        assert "invariant_density" in report.series

    def test_invariant_measure_without_oracle(self, example, eta):
        report = experiments.check_invariant_measure(example, eta)
        assert [check.name for check in report.checks] == ["invariant_moments_finite"]

    def test_averaged_drift(self, example, params, eta):
        bbar1 = integrator.AveragedDrift(example, eta)
        report = experiments.check_averaged_drift(example, bbar1, params)

        assert report.passed
        assert report.check("averaged_drift_structure").value == pytest.approx(math.sin(0.7) + 0.3, abs=1e-9)

    def test_estimate_eta_uses_its_own_replica(self, example, small_grid):
        scale = integrator.ScaleParams()
        eta = experiments.estimate_eta(example, scale, small_grid, 16, 0, 1.0, 1.0)
        again = experiments.estimate_eta(example, scale, small_grid, 16, 0, 1.0, 1.0)
        plain = integrator.estimate_invariant_measure(example, 1.0, 1.0, small_grid, 16, 0)

        assert np.array_equal(eta.samples, again.samples)
        assert not np.array_equal(eta.samples, plain.samples)

    def test_simulation(self, example, eta, small_grid, small_scale):
        report = experiments.run_simulation(example, small_scale, 32, 0, grid=small_grid, eta=eta)

        assert report.passed
        columns, rows = report.tables["simulate"]
        assert columns == experiments.SIMULATION_COLUMNS
        assert len(rows) == 6
        assert rows[0][-1] == 0.0

    def test_failure_keeps_the_partial_report(self, example, eta, small_grid, small_scale):
        explosive = replace(example, b2=lambda y, nu: 1e200 * (1.0 + y**2))

        with np.errstate(all="ignore"), pytest.raises(errors.BlowUpError) as info:
            experiments.run_simulation(explosive, small_scale, 8, 0, grid=small_grid, eta=eta)
        assert info.value.details["partial"]["title"] == "simulate"
        assert info.value.to_dict()["kind"] == "blow_up"

    def test_poisson_checks(self, example, eta):
        grid = integrator.GridSpec(h=0.05, rho_fast=20.0)
        bbar1 = integrator.AveragedDrift(example, eta)
        report = experiments.run_poisson_checks(
            example,
            eta,
            bbar1,
            0,
            x=(0.0,),
            y=(1.0,),
            T_trunc=2.0,
            mc_paths=64,
            t_short=0.2,
            query_points=4,
            cell_budget=4,
            grid=grid,
        )

        names = [check.name for check in report.checks]
        assert names == [
            "psi_truncation_stable",
            "dynkin_residual",
            "psi_growth",
            "psi_zero_without_fast_dependence",
            "upsilon_square_root",
        ]
        assert report.check("psi_zero_without_fast_dependence").passed
        assert report.check("upsilon_square_root").passed
        assert "psi_profile" in report.series

    def test_lemma_checks(self, example, params, small_grid):
        scale = integrator.ScaleParams(T=0.25)
        report = experiments.run_lemma_checks(
            example,
            scale,
            0,
            params=params,
            grid=small_grid,
            n_particles=64,
            eps_grid=(2.0**-1, 2.0**-2),
            frozen_T=1.0,
            aux_eps=(2.0**-1, 2.0**-3),
            timechange_eps=2.0**-1,
            burn_in=1.0,
            collect=1.0,
        )

        assert [check.name for check in report.checks] == [
            "fast_moments_uniform_in_eps",
            "frozen_moment_plateau",
            "frozen_contraction_rate",
            "frozen_mean_decay",
            "drift_mixing_decay",
            "auxiliary_shrinkage",
            "time_change_moments",
        ]
        assert report.check("frozen_contraction_rate").value == pytest.approx(2.0 * (params.k - params.m), rel=0.1)
        assert set(report.series) == {"frozen_contraction", "drift_mixing"}
