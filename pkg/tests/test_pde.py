import numpy as np
import pytest

from conftest import cosine_target, random_density
from swarmctrl.control import TargetDensity, stabilizing_velocity
from swarmctrl.errors import CoefficientError, FitError, InputError, TargetError
from swarmctrl.grid import FaceField, ScalarField, build_grid, mass
from swarmctrl.pde import (
    StepperConfig,
    bernoulli,
    evolve_stabilizing,
    evolve_weighted_heat,
    fit_decay_rate,
    step_advection_diffusion,
    weighted_heat_operator,
)


def test_stepper_config_validation():
    from swarmctrl.errors import ConfigurationError

    with pytest.raises(ConfigurationError):
        StepperConfig(dt=-1.0)
    with pytest.raises(ConfigurationError):
        StepperConfig(scheme="leapfrog")
    with pytest.raises(ConfigurationError):
        StepperConfig(advection_flux="quick")


def test_spectral_gap_sparse_branch():
    # beyond the dense cap the shifted Lanczos path takes over
    d = build_grid(2, [1.0, 1.0], [72, 72])
    gap = weighted_heat_operator(ScalarField.constant(d, 1.0)).spectral_gap()
    assert gap == pytest.approx(np.pi**2, rel=0.01)


def test_bernoulli_limits():
    assert bernoulli(np.array([0.0]))[0] == 1.0
    x = np.array([1e-9, -1e-9, 2.0, -2.0])
    vals = bernoulli(x)
    assert vals[0] == pytest.approx(1.0, abs=1e-8)
    assert vals[2] == pytest.approx(2.0 / (np.e**2 - 1.0))
    # B(-x) - B(x) = x
    assert vals[3] - vals[2] == pytest.approx(2.0, abs=1e-12)


class TestStepAdvectionDiffusion:
    def test_uniform_heat_fixed_point(self, unit_grid_128):
        y = ScalarField.constant(unit_grid_128, 1.0)
        y1 = step_advection_diffusion(y, None, 1.0, StepperConfig(dt=1e-2))
        assert np.max(np.abs(y1.values - 1.0)) <= 1e-14

    def test_gibbs_profile_is_exact_equilibrium(self, unit_grid_128):
        f = cosine_target(unit_grid_128)
        target = TargetDensity.create(f)
        v = stabilizing_velocity(target, 1.0)
        y1 = step_advection_diffusion(f, v, 1.0, StepperConfig(dt=1e-3))
        assert np.max(np.abs(y1.values - f.values)) <= 1e-12

    def test_mass_conserved_for_any_velocity(self, unit_grid_128):
        rng = np.random.default_rng(0)
        y = random_density(unit_grid_128, rng)
        cfg = StepperConfig(dt=1e-3)
        for _ in range(20):
            v = FaceField(unit_grid_128, (rng.uniform(-5, 5, 127),))
            y = step_advection_diffusion(y, v, 1.0, cfg)
            assert abs(mass(y) - 1.0) <= 1e-12

    def test_positivity_under_implicit_euler(self, unit_grid_64):
        rng = np.random.default_rng(1)
        values = np.zeros(64)
        values[10] = 1.0
        y = ScalarField(unit_grid_64, values).normalized()
        v = FaceField(unit_grid_64, (rng.uniform(-10, 10, 63),))
        y1 = step_advection_diffusion(y, v, 1.0, StepperConfig(dt=0.5))
        assert np.min(y1.values) >= 0.0

    def test_one_heat_step_strictly_positive_everywhere(self, unit_grid_128):
        # indicator initial state spreads to every cell in a single
        # implicit step (inverse of an irreducible M-matrix is positive)
        values = np.zeros(128)
        values[0] = 1.0
        y = ScalarField(unit_grid_128, values)
        h2 = unit_grid_128.spacing[0] ** 2
        y1 = step_advection_diffusion(y, None, 1.0, StepperConfig(dt=h2))
        assert np.min(y1.values) > 0.0

    def test_negative_state_rejected(self, unit_grid_64):
        y = ScalarField(unit_grid_64, np.linspace(-0.5, 1.0, 64))
        with pytest.raises(InputError):
            step_advection_diffusion(y, None, 1.0)

    def test_crank_nicolson_runs(self, unit_grid_64):
        y = cosine_target(unit_grid_64)
        cfg = StepperConfig(dt=1e-3, scheme="crank_nicolson")
        y1 = step_advection_diffusion(y, None, 1.0, cfg)
        assert abs(mass(y1) - 1.0) <= 1e-12

    def test_2d_mass_and_positivity(self):
        rng = np.random.default_rng(7)
        d = build_grid(2, [1.0, 1.5], [12, 18])
        y = ScalarField(d, rng.random(d.shape)).normalized()
        v = FaceField(
            d,
            (rng.uniform(-3, 3, d.face_shape(0)), rng.uniform(-3, 3, d.face_shape(1))),
        )
        cfg = StepperConfig(dt=5e-3)
        for _ in range(10):
            y = step_advection_diffusion(y, v, 1.0, cfg)
            assert abs(mass(y) - 1.0) <= 1e-12
            assert np.min(y.values) >= -1e-14

    def test_2d_gibbs_equilibrium(self):
        d = build_grid(2, [1.0, 1.0], [16, 16])
        gx, gy = d.center_grids()
        f = ScalarField(d, 1.0 + 0.2 * np.cos(np.pi * gx) * np.cos(np.pi * gy)).normalized()
        target = TargetDensity.create(f)
        v = stabilizing_velocity(target, 1.0)
        y1 = step_advection_diffusion(f, v, 1.0, StepperConfig(dt=1e-2))
        assert np.max(np.abs(y1.values - f.values)) <= 1e-12

    def test_problem_bundle_resolves_velocity_and_source(self, unit_grid_64):
        from swarmctrl.pde import AdvectionDiffusionProblem

        f = cosine_target(unit_grid_64)
        target = TargetDensity.create(f)
        law = stabilizing_velocity(target, 1.0)
        problem = AdvectionDiffusionProblem(
            domain=unit_grid_64,
            diffusion=1.0,
            velocity=lambda t, y: law,
            source=ScalarField.constant(unit_grid_64, -0.5),
        )
        v = problem.velocity_at(0.0, f)
        assert v is law
        # uniform linear sink drains mass at the configured rate
        dt = 1e-3
        y1 = step_advection_diffusion(f, v, problem.diffusion, StepperConfig(dt=dt),
                                      source=problem.source)
        assert mass(y1) == pytest.approx(1.0 / (1.0 + 0.5 * dt), rel=1e-10)


class TestWeightedHeat:
    def test_zero_gain_is_identity(self, unit_grid_64):
        rng = np.random.default_rng(2)
        y = random_density(unit_grid_64, rng)
        y1 = evolve_weighted_heat(y, ScalarField.constant(unit_grid_64, 2.0), 0.0, 1.0)
        np.testing.assert_array_equal(y1.values, y.values)

    def test_reciprocal_weight_is_stationary(self, unit_grid_64):
        # the kernel is spanned by 1/a, so any multiple stays put
        rng = np.random.default_rng(3)
        a = ScalarField(unit_grid_64, 0.5 + rng.random(64))
        y = ScalarField(unit_grid_64, 1.0 / a.values).normalized()
        y1 = evolve_weighted_heat(y, a, 1.0, 0.2, StepperConfig(dt=1e-3))
        assert np.max(np.abs(y1.values - y.values)) <= 1e-12

    def test_cosine_decays_at_spectral_gap(self):
        d = build_grid(1, [1.0], [256])
        x = d.axis_centers(0)
        a = ScalarField.constant(d, 1.0)
        gap = weighted_heat_operator(a).spectral_gap()
        assert gap == pytest.approx(np.pi**2, rel=1e-4)
        y = ScalarField(d, 1.0 + np.cos(np.pi * x))
        times, errors = [], []
        t = 0.0
        cfg = StepperConfig(dt=1e-3)
        for _ in range(8):
            y = evolve_weighted_heat(y, a, 1.0, 0.02, cfg)
            t += 0.02
            times.append(t)
            errors.append(np.max(np.abs(y.values - 1.0)))
        report = fit_decay_rate(times, errors)
        assert report.rate == pytest.approx(gap, rel=0.02)

    def test_weighted_sup_bound_invariant(self, unit_grid_64):
        rng = np.random.default_rng(4)
        a = ScalarField(unit_grid_64, 0.5 + rng.random(64))
        y = ScalarField(unit_grid_64, rng.random(64) / a.values)
        scale = np.max(a.values * y.values)
        y = ScalarField(unit_grid_64, y.values / scale)  # max(a*y) = 1
        cfg = StepperConfig(dt=5e-3)
        for _ in range(50):
            y = evolve_weighted_heat(y, a, 1.5, 5e-3, cfg)
            assert np.max(a.values * y.values) <= 1.0 + 1e-10

    def test_nonpositive_weight_rejected(self, unit_grid_64):
        y = ScalarField.constant(unit_grid_64, 1.0)
        bad = ScalarField(unit_grid_64, np.linspace(0.0, 1.0, 64))
        with pytest.raises(CoefficientError):
            evolve_weighted_heat(y, bad, 1.0, 0.1)


class TestStabilizingFlow:
    def test_target_is_fixed_point(self, unit_grid_128):
        f = cosine_target(unit_grid_128)
        y1 = evolve_stabilizing(f, f, 1.0, 0.3, StepperConfig(dt=1e-3))
        assert np.max(np.abs(y1.values - f.values)) <= 1e-12

    def test_lower_bound_preserved(self, unit_grid_64):
        # state >= floor * reciprocal-weight decomposition survives the flow
        rng = np.random.default_rng(5)
        for trial in range(3):
            a_vals = 0.6 + rng.random(64)
            f = ScalarField(unit_grid_64, 1.0 / a_vals)
            c2 = 0.4 / np.max(a_vals)
            bump = rng.random(64)
            budget = mass(f) - c2 * 1.0
            y_vals = c2 + bump * (budget / mass(ScalarField(unit_grid_64, bump)))
            y = ScalarField(unit_grid_64, y_vals)
            c1 = np.min(a_vals)
            bound = c1 * np.min(y.values) / np.max(a_vals)
            cfg = StepperConfig(dt=2e-3)
            state = y
            for _ in range(10):
                state = evolve_stabilizing(state, f, 1.0, 0.05, cfg)
                assert np.min(state.values) >= bound - 1e-10

    def test_exponential_convergence_to_target(self, unit_grid_64):
        rng = np.random.default_rng(6)
        f = cosine_target(unit_grid_64)
        y = random_density(unit_grid_64, rng)
        times, errors = [], []
        t = 0.0
        for _ in range(10):
            y = evolve_stabilizing(y, f, 1.0, 0.05, StepperConfig(dt=1e-3))
            t += 0.05
            times.append(t)
            errors.append(np.sqrt(np.sum((y.values - f.values) ** 2) / 64))
        assert all(b < a for a, b in zip(errors, errors[1:]))
        report = fit_decay_rate(times, errors)
        assert report.rate > 0
        assert report.residual <= 0.1

    def test_mass_mismatch_rejected(self, unit_grid_64):
        f = cosine_target(unit_grid_64)
        y = ScalarField.constant(unit_grid_64, 0.5)
        with pytest.raises(InputError):
            evolve_stabilizing(y, f, 1.0, 0.1)

    def test_nonpositive_target_rejected(self, unit_grid_64):
        f = ScalarField(unit_grid_64, np.linspace(0.0, 2.0, 64))
        y = ScalarField.constant(unit_grid_64, 1.0)
        with pytest.raises(TargetError):
            evolve_stabilizing(y, f, 1.0, 0.1)


class TestFitDecayRate:
    def test_exact_exponential(self):
        t = np.array([0.0, 0.5, 1.0])
        report = fit_decay_rate(t, np.exp(-2.0 * t))
        assert report.rate == pytest.approx(2.0, abs=1e-10)
        assert report.prefactor == pytest.approx(1.0, abs=1e-10)
        assert report.residual <= 1e-12

    def test_constant_series(self):
        report = fit_decay_rate([0.0, 1.0, 2.0], [0.7, 0.7, 0.7])
        assert report.rate == pytest.approx(0.0, abs=1e-12)

    def test_too_few_samples(self):
        with pytest.raises(FitError):
            fit_decay_rate([0.0, 1.0], [1.0, 0.5])

    def test_nonpositive_errors(self):
        with pytest.raises(FitError):
            fit_decay_rate([0.0, 1.0, 2.0], [1.0, 0.0, 0.5])
