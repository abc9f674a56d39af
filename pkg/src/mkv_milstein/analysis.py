"""Experiments and verifiers: strong-error rate estimation, propagation of
chaos, the particle-system change-of-variables identity as a Monte Carlo
oracle, and standalone inequality checks.

The unavailable exact solution is replaced everywhere by a fine same-scheme
reference coupled through a shared noise realization; its bias is second
order relative to the errors measured at the tested resolutions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Grid, ModelSpec, RunConfig
from .measure import EmpiricalMeasure, gauss_legendre_01
from .noise import sample_realization
from .schemes import needs_foreign_splits, simulate

__all__ = [
    "ExperimentError",
    "StrongErrorResult",
    "RateExperiment",
    "PoCExperiment",
    "ItoReport",
    "strong_error",
    "rate_experiment",
    "fit_rate",
    "poc_experiment",
    "QuadraticMeanTestFunction",
    "GenericTestFunction",
    "ito_verify",
    "pth_power_inequality_check",
    "moment_trend",
    "parallel_map",
]


class ExperimentError(RuntimeError):
    """An experiment-level failure (e.g. blow-up fraction above threshold)."""


def parallel_map(fn: Callable, args: Sequence, threads: int = 1) -> list:
    """Map preserving argument order; results are reduced in index order so
    the output is independent of the thread count."""
    if threads <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, args))


def _mean_ci(values: np.ndarray):
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    if len(values) < 2:
        return mean, mean, mean
    half = 1.96 * float(values.std(ddof=1)) / np.sqrt(len(values))
    return mean, mean - half, mean + half


# ---------------------------------------------------------------------------
# strong error and rate fitting
# ---------------------------------------------------------------------------

@dataclass
class StrongErrorResult:
    n: int
    n_ref: int
    mse: float
    ci_lo: float
    ci_hi: float
    run_mses: np.ndarray
    excluded_fraction: float


MAX_EXCLUDED_FRACTION = 0.01


def _run_strong_error(model, scheme, n, n_ref, config, run_index,
                      taming_enabled, substeps):
    split = needs_foreign_splits(model, taming_enabled)
    real = sample_realization(config, model.marks, n_max=n_ref,
                              run_index=run_index,
                              dim_brownian=model.dim_brownian,
                              split_at_foreign_jumps=split)
    ref = simulate(model, config, n_ref, real, scheme=scheme,
                   taming_enabled=taming_enabled, substeps=substeps)
    sol = simulate(model, config, n, real, scheme=scheme,
                   taming_enabled=taming_enabled, substeps=substeps)
    bad = ref.flagged | sol.flagged
    keep = ~bad
    if not np.any(keep):
        return np.nan, 1.0
    err = np.sum((ref.final[keep] - sol.final[keep]) ** 2, axis=1)
    return float(err.mean()), float(np.mean(bad))


def strong_error(model: ModelSpec, scheme: str, n: int, n_ref: int, N: int,
                 R: int, seed: int, horizon: float = 1.0,
                 taming_enabled: bool = False, substeps: int = 32,
                 threads: int = 1) -> StrongErrorResult:
    """Terminal-time mean squared coupling error against the same-scheme
    reference at ``n_ref`` on shared noise; CI from run-level variance."""
    if n_ref % n:
        raise ValueError("n_ref must be divisible by n")
    config = RunConfig(grid=Grid(horizon, n_ref), particle_count=N,
                       monte_carlo_runs=R, base_seed=seed, scheme=scheme)
    out = parallel_map(
        lambda r: _run_strong_error(model, scheme, n, n_ref, config, r,
                                    taming_enabled, substeps),
        range(R), threads)
    run_mses = np.array([o[0] for o in out])
    excluded = float(np.mean([o[1] for o in out]))
    if excluded > MAX_EXCLUDED_FRACTION:
        raise ExperimentError(
            f"blow-up exclusions {excluded:.2%} exceed {MAX_EXCLUDED_FRACTION:.0%}")
    mse, lo, hi = _mean_ci(run_mses)
    return StrongErrorResult(n=n, n_ref=n_ref, mse=mse, ci_lo=lo, ci_hi=hi,
                             run_mses=run_mses, excluded_fraction=excluded)


def fit_rate(resolutions, mses):
    """Least-squares slope of log MSE against log n.

    Returns ``(slope, slope_stderr, rms_rate, rms_stderr)`` with
    ``rms_rate = -slope / 2``; requires >= 4 strictly positive points.
    """
    resolutions = np.asarray(resolutions, dtype=float)
    mses = np.asarray(mses, dtype=float)
    if len(resolutions) < 4:
        raise ValueError("rate regression needs at least 4 resolutions")
    if np.any(mses <= 0):
        raise ValueError("all MSE values must be positive")
    t = np.log(resolutions)
    y = np.log(mses)
    tbar = t.mean()
    sxx = float(np.sum((t - tbar) ** 2))
    slope = float(np.sum((t - tbar) * (y - y.mean())) / sxx)
    resid = y - (y.mean() + slope * (t - tbar))
    dof = max(len(t) - 2, 1)
    stderr = float(np.sqrt(np.sum(resid ** 2) / dof / sxx))
    return slope, stderr, -slope / 2.0, stderr / 2.0


@dataclass
class RateExperiment:
    """Per-resolution strong errors and the fitted log-log rate, one record
    per scheme."""

    model_name: str
    resolutions: list
    n_ref: int
    particle_count: int
    runs: int
    seed: int
    mse: dict = field(default_factory=dict)        # scheme -> (K,) array
    ci_lo: dict = field(default_factory=dict)
    ci_hi: dict = field(default_factory=dict)
    rms_rate: dict = field(default_factory=dict)   # scheme -> (rate, stderr)
    excluded: dict = field(default_factory=dict)

    def running_rms_rate(self, scheme: str) -> np.ndarray:
        """RMS rate fitted on the first k >= 4 resolutions, NaN before."""
        out = np.full(len(self.resolutions), np.nan)
        for k in range(4, len(self.resolutions) + 1):
            _, _, rate, _ = fit_rate(self.resolutions[:k], self.mse[scheme][:k])
            out[k - 1] = rate
        return out


def rate_experiment(model: ModelSpec, schemes: Sequence[str],
                    resolutions: Sequence[int], n_ref: int, N: int, R: int,
                    seed: int, horizon: float = 1.0,
                    taming_enabled: bool = False, substeps: int = 32,
                    threads: int = 1) -> RateExperiment:
    """Strong-error study over several resolutions and schemes, all driven by
    one shared realization per run (the reference too)."""
    resolutions = sorted(int(n) for n in resolutions)
    if any(n_ref % n for n in resolutions):
        raise ValueError("n_ref must be divisible by every resolution")
    if n_ref // max(resolutions) < 2:
        raise ValueError("reference resolution too close to the tested ones")
    config = RunConfig(grid=Grid(horizon, n_ref), particle_count=N,
                       monte_carlo_runs=R, base_seed=seed)
    split = needs_foreign_splits(model, taming_enabled)

    def one_run(run_index):
        real = sample_realization(config, model.marks, n_max=n_ref,
                                  run_index=run_index,
                                  dim_brownian=model.dim_brownian,
                                  split_at_foreign_jumps=split)
        out = {}
        for scheme in schemes:
            ref = simulate(model, config, n_ref, real, scheme=scheme,
                           taming_enabled=taming_enabled, substeps=substeps)
            per_n = []
            for n in resolutions:
                sol = simulate(model, config, n, real, scheme=scheme,
                               taming_enabled=taming_enabled, substeps=substeps)
                bad = ref.flagged | sol.flagged
                keep = ~bad
                if not np.any(keep):
                    per_n.append((np.nan, 1.0))
                    continue
                err = np.sum((ref.final[keep] - sol.final[keep]) ** 2, axis=1)
                per_n.append((float(err.mean()), float(np.mean(bad))))
            out[scheme] = per_n
        return out

    runs = parallel_map(one_run, range(R), threads)
    exp = RateExperiment(model_name=model.name, resolutions=list(resolutions),
                         n_ref=n_ref, particle_count=N, runs=R, seed=seed)
    for scheme in schemes:
        table = np.array([[run[scheme][j][0] for j in range(len(resolutions))]
                          for run in runs])
        excl = float(np.mean([run[scheme][j][1] for run in runs
                              for j in range(len(resolutions))]))
        if excl > MAX_EXCLUDED_FRACTION:
            raise ExperimentError(
                f"blow-up exclusions {excl:.2%} exceed {MAX_EXCLUDED_FRACTION:.0%}")
        stats = [_mean_ci(table[:, j]) for j in range(len(resolutions))]
        exp.mse[scheme] = np.array([s[0] for s in stats])
        exp.ci_lo[scheme] = np.array([s[1] for s in stats])
        exp.ci_hi[scheme] = np.array([s[2] for s in stats])
        _, _, rate, rate_se = fit_rate(resolutions, exp.mse[scheme])
        exp.rms_rate[scheme] = (rate, rate_se)
        exp.excluded[scheme] = excl
    return exp


# ---------------------------------------------------------------------------
# propagation of chaos
# ---------------------------------------------------------------------------

@dataclass
class PoCExperiment:
    sizes: list
    size_ref: int
    resolution: int
    runs: int
    discrepancy: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    slope: float
    slope_stderr: float


def poc_experiment(model: ModelSpec, scheme: str, sizes: Sequence[int],
                   size_ref: int, n: int, R: int, seed: int,
                   horizon: float = 1.0, taming_enabled: bool = False,
                   substeps: int = 32, threads: int = 1) -> PoCExperiment:
    """System-vs-larger-system coupling: each size reuses the same
    per-particle noise streams, so discrepancies measure only the effect of
    the interaction through the empirical measure."""
    sizes = sorted(int(s) for s in sizes)
    if sizes[-1] > size_ref:
        raise ValueError("reference size must dominate every tested size")
    base = min(sizes)
    split = needs_foreign_splits(model, taming_enabled)

    def one_run(run_index):
        finals = {}
        for N in [*sizes, size_ref]:
            cfg = RunConfig(grid=Grid(horizon, n), particle_count=N,
                            monte_carlo_runs=R, base_seed=seed, scheme=scheme)
            real = sample_realization(cfg, model.marks, n_max=n,
                                      run_index=run_index,
                                      dim_brownian=model.dim_brownian,
                                      split_at_foreign_jumps=split)
            traj = simulate(model, cfg, n, real, scheme=scheme,
                            taming_enabled=taming_enabled, substeps=substeps)
            finals[N] = traj.final
        ref = finals[size_ref]
        return [float(np.mean(np.sum(
            (finals[N][:base] - ref[:base]) ** 2, axis=1))) for N in sizes]

    rows = np.array(parallel_map(one_run, range(R), threads))
    stats = [_mean_ci(rows[:, j]) for j in range(len(sizes))]
    disc = np.array([s[0] for s in stats])
    lo = np.array([s[1] for s in stats])
    hi = np.array([s[2] for s in stats])
    t = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.maximum(disc, 1e-300))
    tbar = t.mean()
    sxx = float(np.sum((t - tbar) ** 2))
    slope = float(np.sum((t - tbar) * (y - y.mean())) / sxx)
    resid = y - (y.mean() + slope * (t - tbar))
    stderr = float(np.sqrt(np.sum(resid ** 2) / max(len(t) - 2, 1) / sxx))
    return PoCExperiment(sizes=list(sizes), size_ref=size_ref, resolution=n,
                         runs=R, discrepancy=disc, ci_lo=lo, ci_hi=hi,
                         slope=slope, slope_stderr=stderr)


# ---------------------------------------------------------------------------
# change-of-variables (particle-system) identity as a Monte Carlo oracle
# ---------------------------------------------------------------------------

class QuadraticMeanTestFunction:
    """Default test function F(x, mu) = |x|^2 + |mean(mu)|^2.

    All hooks required by the verifier are closed-form and O(N) per state:
    the measure derivative is 2 mean(mu) (constant in the atom argument), its
    second measure derivative is 2 I, and the jump-difference sum collapses
    because F is quadratic.
    """

    name = "quadratic_mean"

    def value(self, x, mu):
        mean = mu.mean()
        return np.sum(x ** 2, axis=-1) + float(mean @ mean)

    def dx(self, x, mu):
        return 2.0 * x

    def dxx_trace_sigsig(self, x, mu, sig):
        # tr[d_x^2 F sigma sigma*] with d_x^2 F = 2 I
        return 2.0 * np.sum(sig ** 2, axis=(-2, -1))

    def dx_dmu_trace_sigsig(self, x, mu, sig):
        return np.zeros(np.shape(x)[:-1])

    def measure_drift_sum(self, x, mu, vals):
        # (1/N) sum_k dmu F(x_i, mu, x_k) . vals_k with dmu F = 2 mean(mu)
        avg = float(2.0 * mu.mean() @ vals.mean(axis=0))
        return np.full(x.shape[0], avg)

    def dy_dmu_sigma_sum(self, x, mu, sig):
        return np.zeros(x.shape[0])

    def dmu2_sigma_sum(self, x, mu, sig):
        # (1/N^2) sum_k tr[dmu^2 F sigma_k sigma_k*] with dmu^2 F = 2 I
        val = 2.0 * float(np.sum(sig ** 2)) / mu.n ** 2
        return np.full(x.shape[0], val)

    def jump_difference_sum(self, x, mu, model):
        """sum_k sum_atoms w_j [F(x_i + 1{k=i} gamma_k, shifted mu) - F(x_i, mu)]
        for all i at once; O(N) thanks to the quadratic structure."""
        marks = model.marks
        mean = mu.mean()
        out = np.zeros(x.shape[0])
        for z, lam in zip(marks.atoms, marks.weights):
            gam = model.jump(x, mu, float(z))               # (N, d)
            own = 2.0 * np.sum(x * gam, axis=1) + np.sum(gam ** 2, axis=1)
            shared = np.sum(2.0 * (gam @ mean) / mu.n
                            + np.sum(gam ** 2, axis=1) / mu.n ** 2)
            out += lam * (own + shared)
        return out

    def integrand_batch(self, states, model):
        """The identity's ds-integrand on every recorded state at once,
        shape (K, N); requires coefficients that broadcast over a leading
        state axis and interact through the measure mean only (the
        built-ins do)."""
        mu = _BatchMeasure(states)
        n_part = mu.n
        mean = mu.mean()                              # (K, 1, d)
        b = np.asarray(model.drift(states, mu))       # (K, N, d)
        sig = np.asarray(model.diffusion(states, mu))  # (K, N, d, m)
        sig_sq = np.sum(sig ** 2, axis=(-2, -1))      # (K, N)

        total = 2.0 * np.sum(states * b, axis=-1)
        total += sig_sq
        total += 2.0 * np.sum(mean * b.mean(axis=1, keepdims=True), axis=-1)
        total += np.sum(sig_sq, axis=1, keepdims=True) / n_part ** 2

        for z, lam in zip(model.marks.atoms, model.marks.weights):
            gam = np.asarray(model.jump(states, mu, float(z)))
            total -= 2.0 * lam * np.sum(states * gam, axis=-1)
            total -= 2.0 * lam * np.sum(mean * gam.mean(axis=1, keepdims=True),
                                        axis=-1)
            own = 2.0 * np.sum(states * gam, axis=-1) + np.sum(gam ** 2, axis=-1)
            shared = np.sum(
                2.0 * np.sum(gam * mean, axis=-1) / n_part
                + np.sum(gam ** 2, axis=-1) / n_part ** 2,
                axis=1, keepdims=True)
            total += lam * (own + shared)
        return total


class _BatchMeasure:
    """Measure view over a whole recorded trajectory, atoms (K, N, d); lets
    mean-interaction coefficients evaluate on every grid state at once."""

    __slots__ = ("atoms", "n", "_mean")

    def __init__(self, states):
        self.atoms = states
        self.n = states.shape[1]
        self._mean = None

    def mean(self):
        if self._mean is None:
            self._mean = self.atoms.mean(axis=1, keepdims=True)  # (K, 1, d)
        return self._mean


class GenericTestFunction:
    """Adapter turning raw derivative callables into verifier hooks.

    ``f(x, mu)``, ``dx_f(x, mu) -> (d,)``, ``dxx_f(x, mu) -> (d, d)``,
    ``dmu_f(x, mu, y) -> (d,)``, ``dx_dmu_f(x, mu, y) -> (d, d)``,
    ``dy_dmu_f(x, mu, y) -> (d, d)`` and ``dmu2_f(x, mu, y, y') -> (d, d)``
    are evaluated pointwise (O(N^2) per state); missing derivatives raise a
    configuration error when the identity needs them.
    """

    def __init__(self, f, dx_f=None, dxx_f=None, dmu_f=None, dx_dmu_f=None,
                 dy_dmu_f=None, dmu2_f=None, name="custom"):
        self.f = f
        self.dx_f, self.dxx_f, self.dmu_f = dx_f, dxx_f, dmu_f
        self.dx_dmu_f, self.dy_dmu_f, self.dmu2_f = dx_dmu_f, dy_dmu_f, dmu2_f
        self.name = name

    def _need(self, fn, label):
        if fn is None:
            raise ValueError(f"test function is missing the {label} derivative")
        return fn

    def value(self, x, mu):
        return np.array([self.f(xi, mu) for xi in x])

    def dx(self, x, mu):
        fn = self._need(self.dx_f, "state")
        return np.stack([np.asarray(fn(xi, mu)) for xi in x])

    def dxx_trace_sigsig(self, x, mu, sig):
        fn = self._need(self.dxx_f, "second state")
        return np.array([float(np.trace(np.asarray(fn(xi, mu)) @ si @ si.T))
                         for xi, si in zip(x, sig)])

    def dx_dmu_trace_sigsig(self, x, mu, sig):
        fn = self._need(self.dx_dmu_f, "state-measure")
        return np.array([float(np.trace(np.asarray(fn(xi, mu, xi)) @ si @ si.T))
                         for xi, si in zip(x, sig)])

    def measure_drift_sum(self, x, mu, vals):
        fn = self._need(self.dmu_f, "measure")
        out = np.empty(x.shape[0])
        for i, xi in enumerate(x):
            out[i] = np.mean([float(np.asarray(fn(xi, mu, yk)) @ vk)
                              for yk, vk in zip(x, vals)])
        return out

    def dy_dmu_sigma_sum(self, x, mu, sig):
        fn = self._need(self.dy_dmu_f, "atom-measure")
        out = np.empty(x.shape[0])
        for i, xi in enumerate(x):
            out[i] = np.mean([
                float(np.trace(np.asarray(fn(xi, mu, yk)) @ sk @ sk.T))
                for yk, sk in zip(x, sig)])
        return out

    def dmu2_sigma_sum(self, x, mu, sig):
        fn = self._need(self.dmu2_f, "second measure")
        out = np.empty(x.shape[0])
        for i, xi in enumerate(x):
            out[i] = np.mean([
                float(np.trace(np.asarray(fn(xi, mu, yk, yk)) @ sk @ sk.T))
                for yk, sk in zip(x, sig)]) / mu.n
        return out

    def jump_difference_sum(self, x, mu, model):
        from .measure import ShiftedMeasure
        marks = model.marks
        base = self.value(x, mu)
        out = np.zeros(x.shape[0])
        for z, lam in zip(marks.atoms, marks.weights):
            gam = model.jump(x, mu, float(z))
            for k in range(mu.n):
                mu_s = ShiftedMeasure(mu, k, gam[k])
                for i in range(x.shape[0]):
                    xi = x[i] + (gam[k] if k == i else 0.0)
                    out[i] += lam * (self.f(xi, mu_s) - base[i])
        return out


def _formula_integrand(F, model, x, mu):
    """Expectation-relevant part of the identity's right side at one state:
    all ds-integrands, including the jump compensator, averaged over i."""
    N = x.shape[0]
    b = model.drift(x, mu)
    sig = model.diffusion(x, mu)

    dxF = F.dx(x, mu)
    total = np.sum(dxF * b, axis=1)
    total += 0.5 * F.dxx_trace_sigsig(x, mu, sig)
    total += F.dx_dmu_trace_sigsig(x, mu, sig) / N
    total += F.measure_drift_sum(x, mu, b)
    total += 0.5 * F.dy_dmu_sigma_sum(x, mu, sig)
    total += 0.5 * F.dmu2_sigma_sum(x, mu, sig)

    marks = model.marks
    if marks.num_atoms:
        for z, lam in zip(marks.atoms, marks.weights):
            gam = model.jump(x, mu, float(z))
            total -= lam * np.sum(dxF * gam, axis=1)
            total -= lam * F.measure_drift_sum(x, mu, gam)
        total += F.jump_difference_sum(x, mu, model)
    return total


@dataclass
class ItoReport:
    n_fine: int
    runs: int
    direct: float
    formula: float
    residual: float
    stderr: float
    run_residuals: np.ndarray


def ito_verify(model: ModelSpec, t: float, N: int, n_fine: int, R: int,
               seed: int, F=None, scheme: str = "milstein",
               taming_enabled: bool = False, threads: int = 1) -> ItoReport:
    """Monte Carlo check of the particle-system change-of-variables identity.

    Left side: E[F(x_t, mu_t)] - E[F(x_0, mu_0)] from simulation.  Right
    side: trapezoid time-quadrature of all ds-integrands (jump part in
    compensator form) along the same paths; the mean-zero stochastic
    integrals are dropped.  Reports the paired residual and its run-level
    standard error.
    """
    F = F or QuadraticMeanTestFunction()
    config = RunConfig(grid=Grid(t, n_fine), particle_count=N,
                       monte_carlo_runs=R, base_seed=seed, scheme=scheme)
    split = needs_foreign_splits(model, taming_enabled)

    def one_run(run_index):
        real = sample_realization(config, model.marks, n_max=n_fine,
                                  run_index=run_index,
                                  dim_brownian=model.dim_brownian,
                                  split_at_foreign_jumps=split)
        traj = simulate(model, config, n_fine, real, scheme=scheme,
                        taming_enabled=taming_enabled, record_path=True)
        states = traj.states                      # (n+1, N, d)
        h = t / n_fine
        if hasattr(F, "integrand_batch"):
            g_all = F.integrand_batch(states, model)          # (n+1, N)
            acc = h * (g_all.sum(axis=0) - 0.5 * (g_all[0] + g_all[-1]))
        else:
            acc = np.zeros(N)
            prev = None
            for k in range(n_fine + 1):
                xk = states[k]
                g = _formula_integrand(F, model, xk, EmpiricalMeasure(xk))
                if prev is not None:
                    acc += 0.5 * h * (prev + g)
                prev = g
        mu0 = EmpiricalMeasure(states[0])
        muT = EmpiricalMeasure(states[-1])
        direct = F.value(states[-1], muT) - F.value(states[0], mu0)
        return float(np.mean(direct)), float(np.mean(acc))

    rows = np.array(parallel_map(one_run, range(R), threads))
    direct = float(rows[:, 0].mean())
    formula = float(rows[:, 1].mean())
    residuals = rows[:, 0] - rows[:, 1]
    stderr = float(residuals.std(ddof=1) / np.sqrt(R)) if R > 1 else np.inf
    return ItoReport(n_fine=n_fine, runs=R, direct=direct, formula=formula,
                     residual=float(residuals.mean()), stderr=stderr,
                     run_residuals=residuals)


# ---------------------------------------------------------------------------
# remainder inequality for |x|^p
# ---------------------------------------------------------------------------

def pth_power_inequality_check(num_samples: int, seed: int = 0,
                               dims=(1, 2, 3), p_range=(4.0, 12.0),
                               order: int = 16):
    """Fuzz the Taylor-remainder bound for |x|^p (p > 4):

        |x|^p - |y|^p - p |y|^{p-2} y.(x-y)
            <= p (p-1) |x-y|^2 int_0^1 (1-theta) |y+theta(x-y)|^{p-2} dtheta.

    The theta-integral uses composite Gauss-Legendre on panels graded toward
    the point where |y + theta (x-y)| is smallest (the one-dimensional
    equality cases put an algebraic kink there), which keeps the quadrature
    error well below the reported slack.  Returns the maximum signed
    violation normalised by (1 + |x| + |y|)^p.
    """
    if p_range[0] < 4.0:
        raise ValueError("the inequality requires p > 4")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    nodes, weights = gauss_legendre_01(order)
    # geometric grading of each side toward the minimum-norm point
    offsets = np.array([0.0, 16.0 ** -3, 16.0 ** -2, 16.0 ** -1, 1.0])
    worst = -np.inf
    per_dim = num_samples // len(dims)
    for d in dims:
        x = rng.standard_normal((per_dim, d)) * \
            10.0 ** rng.uniform(-1, 1, size=(per_dim, 1))
        y = rng.standard_normal((per_dim, d)) * \
            10.0 ** rng.uniform(-1, 1, size=(per_dim, 1))
        p = rng.uniform(p_range[0] + 1e-9, p_range[1], size=per_dim)
        xn = np.linalg.norm(x, axis=1)
        yn = np.linalg.norm(y, axis=1)
        dxy = x - y
        dn2 = np.sum(dxy ** 2, axis=1)
        lhs = xn ** p - yn ** p - p * yn ** (p - 2) * np.sum(y * dxy, axis=1)

        denom = np.where(dn2 > 0, dn2, 1.0)
        tc = np.clip(-np.sum(y * dxy, axis=1) / denom, 0.0, 1.0)
        integral = np.zeros(per_dim)
        for side in (0.0, 1.0):
            span = side - tc                      # signed extent of this side
            for lo, hi in zip(offsets[:-1], offsets[1:]):
                a = tc + lo * span
                width = (hi - lo) * span
                theta = a[:, None] + width[:, None] * nodes[None, :]
                seg = y[:, None, :] + theta[:, :, None] * dxy[:, None, :]
                segn = np.linalg.norm(seg, axis=2)
                integrand = (1.0 - theta) * segn ** (p[:, None] - 2)
                # GL nodes are symmetric, so a mirrored panel sums identically
                integral += np.sum(weights[None, :] * integrand, axis=1) * np.abs(width)
        rhs = p * (p - 1) * dn2 * integral
        violation = (lhs - rhs) / (1.0 + xn + yn) ** p
        worst = max(worst, float(violation.max()))
    return worst


# ---------------------------------------------------------------------------
# moment boundedness trend
# ---------------------------------------------------------------------------

@dataclass
class MomentTrend:
    resolutions: list
    moments: np.ndarray
    slope: float
    slope_stderr: float

    def increasing_at_95(self) -> bool:
        """True when the regression slope of moment against log2(n) is
        significantly positive at one-sided 95%."""
        return self.slope > 1.645 * self.slope_stderr


def moment_trend(model: ModelSpec, scheme: str, resolutions: Sequence[int],
                 N: int, R: int, seed: int, horizon: float = 1.0,
                 taming_enabled: bool = True, order: Optional[float] = None,
                 threads: int = 1) -> MomentTrend:
    """Empirical p-th moment of |x_T| per resolution and the regression trend
    of moment against log2(n); bounded moments show no positive trend."""
    resolutions = sorted(int(n) for n in resolutions)
    order = order or model.moment_order
    n_max = max(resolutions)
    if any(n_max % n for n in resolutions):
        raise ValueError("resolutions must divide the largest one")
    config = RunConfig(grid=Grid(horizon, n_max), particle_count=N,
                       monte_carlo_runs=R, base_seed=seed, scheme=scheme)
    split = needs_foreign_splits(model, taming_enabled)

    def one_run(run_index):
        real = sample_realization(config, model.marks, n_max=n_max,
                                  run_index=run_index,
                                  dim_brownian=model.dim_brownian,
                                  split_at_foreign_jumps=split)
        out = []
        for n in resolutions:
            traj = simulate(model, config, n, real, scheme=scheme,
                            taming_enabled=taming_enabled)
            norms = np.linalg.norm(traj.final[~traj.flagged], axis=1)
            out.append(float(np.mean(norms ** order)))
        return out

    rows = np.array(parallel_map(one_run, range(R), threads))
    moments = rows.mean(axis=0)
    t = np.log2(np.asarray(resolutions, dtype=float))
    tbar = t.mean()
    sxx = float(np.sum((t - tbar) ** 2))
    slope = float(np.sum((t - tbar) * (moments - moments.mean())) / sxx)
    resid = moments - (moments.mean() + slope * (t - tbar))
    stderr = float(np.sqrt(np.sum(resid ** 2) / max(len(t) - 2, 1) / sxx))
    return MomentTrend(resolutions=list(resolutions), moments=moments,
                       slope=slope, slope_stderr=stderr)
