import numpy as np
import pytest

from mkv_milstein import (fit_rate, ito_verify, mean_field_ou_jump,
                          moment_trend, poc_experiment,
                          pth_power_inequality_check, rate_experiment,
                          strong_error)
from mkv_milstein.analysis import (ExperimentError, QuadraticMeanTestFunction,
                                   parallel_map)
from mkv_milstein.measure import EmpiricalMeasure, gauss_legendre_01


def drift_only(a=-1.0, c=0.0):
    return mean_field_ou_jump(a=a, c=c, s0=0.0, s1=0.0, g0=0.0, g1=0.0,
                              intensity=0.0)


class TestFitRate:
    def test_exact_quadratic_power_law(self):
        ns = [8, 16, 32, 64]
        mses = [4.0 * n ** -2.0 for n in ns]
        slope, se, rate, rate_se = fit_rate(ns, mses)
        assert rate == pytest.approx(1.0, abs=1e-12)
        assert se == pytest.approx(0.0, abs=1e-10)

    def test_exact_first_order_power_law(self):
        ns = [8, 16, 32, 64, 128]
        mses = [0.3 * n ** -1.0 for n in ns]
        _, _, rate, _ = fit_rate(ns, mses)
        assert rate == pytest.approx(0.5, abs=1e-12)

    def test_jittered_power_law_recovers_slope(self, rng):
        ns = np.array([8, 16, 32, 64, 128, 256])
        true_slope = -1.6
        log_mse = np.log(2.0) + true_slope * np.log(ns) + rng.normal(0, 0.05, len(ns))
        slope, se, _, _ = fit_rate(ns, np.exp(log_mse))
        assert abs(slope - true_slope) < 3 * se + 0.05

    def test_rescaling_invariance(self):
        ns = [4, 8, 16, 32]
        mses = np.array([3.0, 1.1, 0.4, 0.17])
        s1 = fit_rate(ns, mses)[0]
        s2 = fit_rate(ns, 137.0 * mses)[0]
        assert s1 == pytest.approx(s2, rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_rate([8, 16, 32], [1, 2, 3])
        with pytest.raises(ValueError):
            fit_rate([8, 16, 32, 64], [1.0, 0.5, 0.0, 0.1])


class TestStrongError:
    def test_reference_against_itself_is_zero(self):
        model = mean_field_ou_jump()
        res = strong_error(model, "milstein", 16, 16, N=10, R=3, seed=5)
        assert res.mse == 0.0

    def test_deterministic_drift_only_first_order(self):
        # noise off: the scheme is the explicit Euler polygon; against the
        # exact flow x0 e^{at} the error is x0 |(1-h)^n - e^{-1}|, first order
        from mkv_milstein import Grid, RunConfig, sample_realization, simulate
        from mkv_milstein.schemes import initial_states

        a = -1.0
        model = drift_only(a=a)
        ns = [8, 16, 32, 64, 128]
        errs = []
        cfg = RunConfig(grid=Grid(1.0, max(ns)), particle_count=2,
                        monte_carlo_runs=1, base_seed=1)
        real = sample_realization(cfg, model.marks, n_max=max(ns), run_index=0)
        x0 = initial_states(model, cfg, 0)
        exact = x0 * np.exp(a * 1.0)
        for n in ns:
            traj = simulate(model, cfg, n, real, scheme="milstein",
                            taming_enabled=False)
            polygon = x0 * (1.0 + a / n) ** n
            assert np.allclose(traj.final, polygon, rtol=1e-12)
            errs.append(float(np.sqrt(np.mean((traj.final - exact) ** 2))))
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.05)

    def test_mse_decreases_with_resolution(self):
        model = mean_field_ou_jump()
        r8 = strong_error(model, "milstein", 8, 256, N=40, R=6, seed=3)
        r32 = strong_error(model, "milstein", 32, 256, N=40, R=6, seed=3)
        assert r32.mse < r8.mse

    def test_rate_experiment_shares_noise_and_fits(self):
        model = mean_field_ou_jump()
        exp = rate_experiment(model, ["milstein", "euler"], [4, 8, 16, 32],
                              256, N=30, R=8, seed=11)
        m_rate, _ = exp.rms_rate["milstein"]
        e_rate, _ = exp.rms_rate["euler"]
        assert m_rate > e_rate
        assert np.all(exp.mse["milstein"] <= exp.mse["euler"])
        running = exp.running_rms_rate("milstein")
        assert np.isnan(running[2]) and np.isfinite(running[3])

    def test_blowup_fraction_fails_experiment(self):
        from mkv_milstein import cubic_mean_field
        model = cubic_mean_field(x0_mean=0.0, x0_std=3.0)
        with pytest.raises(ExperimentError):
            strong_error(model, "milstein", 4, 16, N=40, R=4, seed=9)

    def test_indivisible_reference_rejected(self):
        model = mean_field_ou_jump()
        with pytest.raises(ValueError):
            strong_error(model, "milstein", 12, 64, N=4, R=2, seed=0)


class TestPoC:
    def test_reference_against_itself(self):
        model = mean_field_ou_jump()
        exp = poc_experiment(model, "milstein", [20, 40], 40, n=8, R=3, seed=2)
        assert exp.discrepancy[-1] == 0.0

    def test_decoupled_systems_identical(self):
        # interaction off: particles never feel the measure, so the same
        # streams give identical trajectories in every system size
        model = drift_only(a=-0.5)
        exp = poc_experiment(model, "milstein", [10, 20], 40, n=8, R=3, seed=4)
        assert np.all(exp.discrepancy == 0.0)

    def test_decoupled_with_noise_identical(self):
        model = mean_field_ou_jump(c=0.0)
        exp = poc_experiment(model, "milstein", [10, 20], 40, n=8, R=2, seed=6)
        assert np.all(exp.discrepancy == 0.0)

    def test_discrepancy_decreases(self):
        model = mean_field_ou_jump()
        exp = poc_experiment(model, "milstein", [10, 40, 160], 640, n=16,
                             R=10, seed=8)
        assert exp.discrepancy[0] > exp.discrepancy[-1]

    def test_oversized_request_rejected(self):
        model = mean_field_ou_jump()
        with pytest.raises(ValueError):
            poc_experiment(model, "milstein", [10, 80], 40, n=8, R=2, seed=0)


class TestItoVerify:
    def test_constant_function_zero_both_sides(self):
        from mkv_milstein.analysis import GenericTestFunction
        zero_vec = lambda x, mu, *rest: np.zeros(1)
        zero_mat = lambda x, mu, *rest: np.zeros((1, 1))
        const = GenericTestFunction(
            f=lambda x, mu: 3.0, dx_f=zero_vec, dxx_f=zero_mat,
            dmu_f=zero_vec, dx_dmu_f=zero_mat, dy_dmu_f=zero_mat,
            dmu2_f=zero_mat, name="const")
        model = mean_field_ou_jump()
        rep = ito_verify(model, 1.0, N=10, n_fine=16, R=3, seed=1, F=const)
        assert rep.direct == 0.0
        assert rep.formula == pytest.approx(0.0, abs=1e-14)

    def test_generic_adapter_matches_closed_form(self, rng):
        # the default quadratic F expressed through raw derivatives must give
        # the same ds-integrand as its closed-form hooks
        from mkv_milstein.analysis import (GenericTestFunction,
                                           _formula_integrand)
        generic = GenericTestFunction(
            f=lambda x, mu: float(x @ x + mu.mean() @ mu.mean()),
            dx_f=lambda x, mu: 2.0 * x,
            dxx_f=lambda x, mu: 2.0 * np.eye(1),
            dmu_f=lambda x, mu, y: 2.0 * mu.mean(),
            dx_dmu_f=lambda x, mu, y: np.zeros((1, 1)),
            dy_dmu_f=lambda x, mu, y: np.zeros((1, 1)),
            dmu2_f=lambda x, mu, y, y2: 2.0 * np.eye(1))
        model = mean_field_ou_jump()
        x = rng.standard_normal((7, 1))
        mu = EmpiricalMeasure(x)
        a = _formula_integrand(QuadraticMeanTestFunction(), model, x, mu)
        b = _formula_integrand(generic, model, x, mu)
        assert np.allclose(a, b, rtol=1e-11)

    def test_missing_derivative_raises(self):
        from mkv_milstein.analysis import GenericTestFunction
        partial = GenericTestFunction(f=lambda x, mu: 0.0)
        model = mean_field_ou_jump()
        with pytest.raises(ValueError, match="derivative"):
            ito_verify(model, 1.0, N=4, n_fine=4, R=1, seed=1, F=partial)

    def test_deterministic_drift_only_chain_rule(self):
        # noise and interaction off, F = x^2 + xbar^2: the identity reduces to
        # the chain rule along the flow; the residual is the scheme's own
        # first-order defect and must scale like 1/n
        model = drift_only(a=-1.0)
        r256 = ito_verify(model, 1.0, N=3, n_fine=256, R=1, seed=3)
        r512 = ito_verify(model, 1.0, N=3, n_fine=512, R=1, seed=3)
        assert abs(r256.residual) < 2e-2
        assert r512.residual == pytest.approx(r256.residual / 2, rel=0.1)

    def test_linear_model_identity_within_monte_carlo_error(self):
        model = mean_field_ou_jump()
        rep = ito_verify(model, 1.0, N=40, n_fine=128, R=80, seed=5)
        assert abs(rep.residual) < 3 * rep.stderr + 2e-2

    def test_residual_shrinks_with_refinement(self):
        model = drift_only(a=-0.8)
        r1 = ito_verify(model, 1.0, N=3, n_fine=32, R=1, seed=7)
        r2 = ito_verify(model, 1.0, N=3, n_fine=64, R=1, seed=7)
        assert abs(r2.residual) < abs(r1.residual)


class TestPthPower:
    def test_equal_points_zero(self):
        # x = y: left side is identically zero and the bound is 0 <= 0
        x = np.array([0.7, -0.2])
        p = 5.5
        xn = np.linalg.norm(x)
        lhs = xn ** p - xn ** p - p * xn ** (p - 2) * float(x @ (x - x))
        assert lhs == 0.0

    def test_boundary_case_equality_beta_integral(self):
        # y = 0: both sides equal |x|^p via the Beta integral
        p = 6.3
        x = np.array([1.4])
        nodes, weights = gauss_legendre_01(16)
        integral = float(np.sum(weights * (1 - nodes) * np.abs(nodes * x[0]) ** (p - 2)))
        rhs = p * (p - 1) * x[0] ** 2 * integral
        assert rhs == pytest.approx(abs(x[0]) ** p, rel=1e-8)

    def test_fuzz_no_violation(self):
        worst = pth_power_inequality_check(20_000, seed=3)
        assert worst <= 1e-10

    def test_one_dimensional_equality_cases_guarded(self):
        # same-sign 1-d segments sit exactly at equality; the split quadrature
        # must not report spurious violations
        worst = pth_power_inequality_check(5_000, seed=4, dims=(1,))
        assert worst <= 1e-10

    def test_rejects_small_p(self):
        with pytest.raises(ValueError):
            pth_power_inequality_check(10, p_range=(3.0, 5.0))


class TestMomentTrend:
    def test_linear_model_moments_flat(self):
        model = mean_field_ou_jump()
        tr = moment_trend(model, "milstein", [4, 8, 16, 32], N=40, R=8,
                          seed=1, taming_enabled=False, order=4)
        assert not tr.increasing_at_95()

    def test_parallel_map_order(self):
        got = parallel_map(lambda i: i * i, range(8), threads=4)
        assert got == [i * i for i in range(8)]
