import numpy as np
import pytest

from mkv_milstein import (EmpiricalMeasure, Grid, RunConfig, cubic_mean_field,
                          mean_field_ou_jump, model_from_name,
                          moment_ode_solution, operator_dmu, operator_dx,
                          sample_realization, simulate, validate_model)


@pytest.fixture
def mu(rng):
    return EmpiricalMeasure(rng.standard_normal((10, 1)))


class TestBuiltinValidation:
    @pytest.mark.parametrize("name", ["mean_field_ou_jump", "cubic_mean_field"])
    def test_builtins_pass_validation(self, name, rng):
        model = model_from_name(name)
        probes = []
        for _ in range(5):
            x = rng.standard_normal(1)
            m = EmpiricalMeasure(rng.standard_normal((6, 1)))
            probes.append((x, m, float(model.marks.atoms[0])))
        report = validate_model(model, probes)
        assert report.ok
        assert max(report.max_rel_error.values()) < 1e-6

    def test_superlinear_jump_variant_validates(self, rng):
        model = cubic_mean_field(rho=0.4)
        probes = [(np.array([1.3]), EmpiricalMeasure(rng.standard_normal((5, 1))),
                   1.0)]
        report = validate_model(model, probes)
        assert report.ok

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            model_from_name("brownian_sheet")


class TestOperators:
    def test_linear_dx_sigma_sigma(self, mu):
        m = mean_field_ou_jump(s0=0.3, s1=0.5)
        x = np.array([1.7])
        got = operator_dx(m, "diffusion", x, mu, ("sigma", 0))
        assert got[0, 0] == pytest.approx(0.5 * (0.3 + 0.5 * 1.7))

    def test_linear_dx_gamma_sigma(self, mu):
        m = mean_field_ou_jump(s0=0.3, s1=0.5, g1=0.4)
        x = np.array([1.7])
        z = 1.0
        got = operator_dx(m, "jump", x, mu, ("sigma", 0), mark=z)
        assert got[0] == pytest.approx(0.4 * z * (0.3 + 0.5 * 1.7))

    def test_linear_dmu_drift_sigma(self, mu):
        m = mean_field_ou_jump(c=0.25, s0=0.3, s1=0.5)
        x, y = np.array([0.2]), np.array([-1.1])
        got = operator_dmu(m, "drift", x, mu, y, ("sigma", 0))
        assert got[0] == pytest.approx(0.25 * (0.3 + 0.5 * (-1.1)))

    def test_measure_free_sigma_gives_zero_dmu(self, mu):
        m = mean_field_ou_jump()
        got = operator_dmu(m, "diffusion", np.array([0.4]), mu,
                           np.array([1.0]), ("sigma", 0))
        assert np.all(got == 0.0)

    def test_dx_matches_directional_finite_difference(self, mu):
        m = cubic_mean_field(beta=0.7, s1=0.4)
        x = np.array([0.9])
        eps = 1e-6
        direction = m.diffusion(x, mu)[:, 0]
        fd = (m.drift(x + eps * direction, mu) - m.drift(x - eps * direction, mu)) / (2 * eps)
        got = operator_dx(m, "drift", x, mu, ("sigma", 0))
        assert got == pytest.approx(fd, rel=1e-6)

    def test_single_atom_perturbation_matches_dmu(self, rng):
        # moving atom j by eps changes f by dmu_f(x, mu, y_j) * eps / N + o(eps)
        m = mean_field_ou_jump(c=0.6)
        atoms = rng.standard_normal((8, 1))
        x = np.array([0.3])
        eps = 1e-6
        up, dn = atoms.copy(), atoms.copy()
        up[3, 0] += eps
        dn[3, 0] -= eps
        fd = (m.drift(x, EmpiricalMeasure(up)) - m.drift(x, EmpiricalMeasure(dn))) / (2 * eps)
        dmu = m.dmu_drift(x, EmpiricalMeasure(atoms), atoms[3])
        assert fd[0] == pytest.approx(dmu[0, 0] / 8, rel=1e-6)

    def test_jump_target_requires_mark(self, mu):
        m = mean_field_ou_jump()
        with pytest.raises(ValueError):
            operator_dx(m, "jump", np.array([0.0]), mu, ("sigma", 0))


class TestMomentOracle:
    def test_noise_off_pure_decay(self):
        # s = g = 0 and a + c = -1: the mean is exp(-t), second moment exp(-2t)
        m = mean_field_ou_jump(a=-1.5, c=0.5, s0=0.0, s1=0.0, g0=0.0, g1=0.0,
                               intensity=0.0)
        mean, q = moment_ode_solution(m, 1.0, 1.0, 1.0)
        assert mean == pytest.approx(np.exp(-1.0))
        assert q == pytest.approx(np.exp(-2.0))

    def test_classical_ou_variance(self):
        # c = 0, jumps off, additive noise: textbook stationary-approach law
        a, s0 = -0.8, 0.5
        m = mean_field_ou_jump(a=a, c=0.0, s0=s0, s1=0.0, g0=0.0, g1=0.0,
                               intensity=0.0)
        t = 1.3
        m0, q0 = 0.7, 0.49
        mean, q = moment_ode_solution(m, m0, q0, t)
        var = q - mean ** 2
        assert var == pytest.approx(s0 ** 2 * (1 - np.exp(2 * a * t)) / (-2 * a),
                                    rel=1e-12)

    def test_resonant_branch_continuous(self):
        # a + c equal to half the q-rate exercises the resonance guard
        m = mean_field_ou_jump(a=-0.5, c=0.0, s0=0.0, s1=0.0, g0=0.0, g1=0.0,
                               intensity=0.0)
        mean, q = moment_ode_solution(m, 1.0, 1.0, 2.0)
        assert q == pytest.approx(np.exp(-2.0), rel=1e-9)

    def test_wrong_family_rejected(self, cubic_model):
        with pytest.raises(ValueError):
            moment_ode_solution(cubic_model, 0.0, 1.0, 1.0)

    @pytest.mark.slow
    def test_full_model_against_brute_force_euler(self):
        """Cross-check of the ODE oracle against a fine brute-force simulation
        of the interacting system before it is trusted in acceptance."""
        model = mean_field_ou_jump()
        t = 1.0
        mean_ode, q_ode = moment_ode_solution(
            model, model.x0_mean, model.x0_mean ** 2 + model.x0_std ** 2, t)
        n, N, R = 2048, 2000, 12
        cfg = RunConfig(grid=Grid(t, n), particle_count=N, monte_carlo_runs=R,
                        base_seed=77)
        means, qs = [], []
        for run in range(R):
            real = sample_realization(cfg, model.marks, n_max=n, run_index=run)
            traj = simulate(model, cfg, n, real, scheme="euler",
                            taming_enabled=False)
            means.append(traj.final[:, 0].mean())
            qs.append((traj.final[:, 0] ** 2).mean())
        se_m = np.std(means, ddof=1) / np.sqrt(R)
        se_q = np.std(qs, ddof=1) / np.sqrt(R)
        assert abs(np.mean(means) - mean_ode) < 3.5 * se_m + 2e-3
        assert abs(np.mean(qs) - q_ode) < 3.5 * se_q + 5e-3
