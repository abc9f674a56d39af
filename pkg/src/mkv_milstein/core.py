"""Time grids, model interface, run configuration and deterministic seeding.

Everything here is immutable after construction and safe to share across
threads.  Coefficient callables follow numpy broadcasting on the leading
(particle) axis: states may be passed as ``(d,)`` or ``(B, d)`` arrays and the
returned arrays carry the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Grid",
    "MarkMeasure",
    "ModelSpec",
    "RunConfig",
    "ValidationReport",
    "substream",
    "validate_model",
]

# Stream labels for per-(run, particle) RNG substreams.
STREAM_INIT = 0
STREAM_JUMPS = 1
STREAM_WIENER = 2
STREAM_BRIDGE = 3

#: Relative tolerance for derivative validation (central differences,
#: perturbation 1e-5; the 1e-6 gate leaves a factor ~10 over the expected
#: second-order remainder for unit-scale coefficients).
DERIVATIVE_RTOL = 1e-6
DERIVATIVE_STEP = 1e-5


def substream(base_seed: int, run_index: int, particle_index: int, stream: int,
              extra: tuple = ()) -> np.random.Generator:
    """Counter-based generator keyed purely by (seed, run, particle, stream).

    The same key always yields the same stream, independent of how many other
    particles or runs exist and of scheduling order.
    """
    ss = np.random.SeedSequence(
        entropy=int(base_seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(int(run_index), int(particle_index), int(stream), *extra),
    )
    return np.random.Generator(np.random.Philox(ss))


def time_key(t: float) -> tuple[int, int]:
    """Split the bit pattern of a float time into two uint32 key words."""
    bits = int(np.float64(t).view(np.uint64))
    return (bits >> 32) & 0xFFFFFFFF, bits & 0xFFFFFFFF


@dataclass(frozen=True)
class Grid:
    """Uniform partition of [0, T] into ``step_count`` steps."""

    horizon: float
    step_count: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.step_count < 1:
            raise ValueError("step_count must be a positive integer")

    @property
    def dt(self) -> float:
        return self.horizon / self.step_count

    def times(self) -> np.ndarray:
        return np.arange(self.step_count + 1) * (self.horizon / self.step_count)

    def point(self, k: int) -> float:
        if k == self.step_count:
            return self.horizon
        return k * self.horizon / self.step_count

    def floor_time(self, t: float) -> float:
        """Largest grid point <= t (grid points map to themselves).

        Raises ValueError outside [0, T].  ``floor_time(T) == T``; steppers
        only ever query the open intervals.
        """
        if not (0.0 <= t <= self.horizon) or not np.isfinite(t):
            raise ValueError(f"time {t!r} outside [0, {self.horizon}]")
        if t == self.horizon:
            return self.horizon
        n = self.step_count
        k = min(max(int(np.floor(t * n / self.horizon)), 0), n - 1)
        # rounding of t*n/T can land one grid cell off in either direction;
        # settle on the largest computed grid point that stays <= t
        while k + 1 <= n - 1 and self.point(k + 1) <= t:
            k += 1
        while k > 0 and self.point(k) > t:
            k -= 1
        return self.point(k)

    def step_index(self, t: float) -> int:
        """Index k with t in (t_k, t_{k+1}]; a point exactly on the grid
        belongs to the earlier step (tie rule used for jump bucketing)."""
        if not (0.0 < t <= self.horizon):
            raise ValueError(f"time {t!r} outside (0, {self.horizon}]")
        n = self.step_count
        k = int(np.ceil(t * n / self.horizon)) - 1
        while k > 0 and k * self.horizon / n >= t:
            k -= 1
        while (k + 1) * self.horizon / n < t:
            k += 1
        return k


@dataclass(frozen=True)
class MarkMeasure:
    """Finite-activity jump mark distribution: atoms with intensity weights.

    Total mass is the jump intensity; weights/total form the mark sampling
    distribution.  Atoms are scalars (one-dimensional mark space).
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_1d(np.asarray(self.atoms, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if atoms.shape != weights.shape or atoms.ndim != 1:
            raise ValueError("atoms and weights must be equal-length 1-d arrays")
        if len(atoms) and np.any(weights <= 0):
            raise ValueError("weights must be positive")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls) -> "MarkMeasure":
        return cls(np.zeros(0), np.zeros(0))

    @classmethod
    def symmetric_pair(cls, intensity: float, magnitude: float = 1.0) -> "MarkMeasure":
        """Two atoms +/-magnitude with half the intensity each; odd mark
        moments vanish, which keeps the moment ODEs short."""
        if intensity == 0:
            return cls.empty()
        return cls(np.array([magnitude, -magnitude]),
                   np.array([intensity / 2, intensity / 2]))

    @property
    def total_intensity(self) -> float:
        return float(self.weights.sum())

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    def moment(self, order: int) -> float:
        """Intensity-weighted mark moment sum(weights * atoms**order)."""
        if self.num_atoms == 0:
            return 0.0
        return float(np.sum(self.weights * self.atoms ** order))

    def probabilities(self) -> np.ndarray:
        return self.weights / self.total_intensity


@dataclass(frozen=True)
class ModelSpec:
    """Coefficient functions of one mean-field jump-diffusion model.

    ``drift(x, mu) -> (..., d)``, ``diffusion(x, mu) -> (..., d, m)`` and
    ``jump(x, mu, z) -> (..., d)`` take the state, an empirical measure view
    and (for jumps) a scalar mark.  State derivatives:

    * ``dx_drift -> (..., d, d)``, entry ``[u, v] = d b_u / d x_v``
    * ``dx_diffusion -> (..., d, m, d)``
    * ``dx_jump -> (..., d, d)``

    Measure derivatives take an extra atom argument ``y`` (broadcast against
    ``x``) and return the gradient in the perturbation direction of that atom:

    * ``dmu_drift(x, mu, y) -> (..., d, d)``
    * ``dmu_diffusion(x, mu, y) -> (..., d, m, d)``
    * ``dmu_jump(x, mu, y, z) -> (..., d, d)``

    ``jump_compensator(x, mu)`` must equal the weight-summed jump coefficient
    over the mark atoms; this is checked by :func:`validate_model`.

    ``sigma_measure_flat`` / ``gamma_measure_flat`` declare that the diffusion
    resp. jump coefficient does not depend on the measure at all; steppers use
    the flags to skip cross-particle sums that are identically zero.
    """

    dim_state: int
    dim_brownian: int
    drift: Callable
    diffusion: Callable
    jump: Callable
    jump_compensator: Callable
    dx_drift: Callable
    dx_diffusion: Callable
    dx_jump: Callable
    dmu_drift: Callable
    dmu_diffusion: Callable
    dmu_jump: Callable
    marks: MarkMeasure
    growth_eta: float = 0.0
    moment_order: float = 6.0
    sigma_measure_flat: bool = False
    gamma_measure_flat: bool = False
    x0_mean: float = 0.0
    x0_std: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_brownian < 1:
            raise ValueError("dimensions must be positive")
        if not self.moment_order > 4:
            raise ValueError("moment_order must exceed 4")
        if self.growth_eta < 0:
            raise ValueError("growth_eta must be nonnegative")

    def sample_x0(self, rng: np.random.Generator) -> np.ndarray:
        """Initial state draw; isotropic Gaussian around x0_mean."""
        return self.x0_mean + self.x0_std * rng.standard_normal(self.dim_state)


@dataclass(frozen=True)
class RunConfig:
    """Monte Carlo run description; a value type.

    All per-run / per-particle random streams are pure functions of
    (base_seed, run index, particle index, stream label).
    """

    grid: Grid
    particle_count: int = 100
    monte_carlo_runs: int = 100
    base_seed: int = 0
    threads: int = 1
    scheme: str = "milstein"
    taming: str = "on"

    def __post_init__(self):
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if self.monte_carlo_runs < 1:
            raise ValueError("monte_carlo_runs must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.scheme not in ("euler", "milstein"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.taming not in ("on", "off"):
            raise ValueError(f"taming must be 'on' or 'off', got {self.taming!r}")


@dataclass
class ValidationReport:
    """Outcome of probing a model's analytic derivatives and compensator."""

    max_rel_error: dict
    compensator_error: float
    fatal: list
    flagged: list
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.fatal and not self.flagged


def _rel_err(approx, exact):
    denom = 1.0 + np.abs(exact)
    return float(np.max(np.abs(approx - exact) / denom))


def validate_model(model: ModelSpec, probe_points: Sequence,
                   rtol: float = DERIVATIVE_RTOL,
                   eps: float = DERIVATIVE_STEP) -> ValidationReport:
    """Check analytic derivatives against central finite differences.

    ``probe_points`` is a sequence of ``(x, mu, z)`` triples; ``z`` may be
    None for models without jumps.  Measure derivatives are checked through
    single-atom perturbations of the empirical measure: moving atom j by
    ``eps`` changes f by ``dmu_f(x, mu, y_j) * eps / N`` to first order.
    """
    from .measure import EmpiricalMeasure

    worst = {k: 0.0 for k in
             ("dx_drift", "dx_diffusion", "dx_jump",
              "dmu_drift", "dmu_diffusion", "dmu_jump")}
    fatal, flagged = [], []
    comp_err = 0.0

    def record(kind, err):
        worst[kind] = max(worst[kind], err)
        if err > rtol:
            flagged.append((kind, err))

    for point in probe_points:
        x, mu, z = point
        x = np.asarray(x, dtype=float)
        d = model.dim_state

        for val, label in ((model.drift(x, mu), "drift"),
                           (model.diffusion(x, mu), "diffusion")):
            if not np.all(np.isfinite(val)):
                fatal.append((label, point))

        # state derivatives by central differences
        def fd_state(f, *args):
            cols = []
            for v in range(d):
                step = np.zeros(d)
                step[v] = eps
                cols.append((f(x + step, *args) - f(x - step, *args)) / (2 * eps))
            return np.stack(cols, axis=-1)

        record("dx_drift", _rel_err(fd_state(model.drift, mu), model.dx_drift(x, mu)))
        record("dx_diffusion",
               _rel_err(fd_state(model.diffusion, mu), model.dx_diffusion(x, mu)))
        if z is not None:
            if not np.all(np.isfinite(model.jump(x, mu, z))):
                fatal.append(("jump", point))
            record("dx_jump",
                   _rel_err(fd_state(lambda s, m: model.jump(s, m, z), mu),
                            model.dx_jump(x, mu, z)))

        # measure derivatives: perturb one atom of the empirical measure
        atoms = np.array(mu.atoms, dtype=float)
        n_atoms = atoms.shape[0]
        for j in range(min(n_atoms, 3)):
            y = atoms[j]

            def fd_measure(f, *args):
                cols = []
                for v in range(d):
                    up, dn = atoms.copy(), atoms.copy()
                    up[j, v] += eps
                    dn[j, v] -= eps
                    diff = f(x, EmpiricalMeasure(up), *args) - f(x, EmpiricalMeasure(dn), *args)
                    cols.append(n_atoms * diff / (2 * eps))
                return np.stack(cols, axis=-1)

            record("dmu_drift", _rel_err(fd_measure(model.drift),
                                         model.dmu_drift(x, mu, y)))
            record("dmu_diffusion", _rel_err(fd_measure(model.diffusion),
                                             model.dmu_diffusion(x, mu, y)))
            if z is not None:
                record("dmu_jump",
                       _rel_err(fd_measure(lambda s, m, zz=z: model.jump(s, m, zz)),
                                model.dmu_jump(x, mu, y, z)))

        # compensator against the direct atom sum
        if model.marks.num_atoms:
            direct = np.zeros(d)
            for zj, lj in zip(model.marks.atoms, model.marks.weights):
                direct = direct + lj * model.jump(x, mu, float(zj))
            comp_err = max(comp_err, _rel_err(model.jump_compensator(x, mu), direct))
            if comp_err > rtol:
                flagged.append(("jump_compensator", comp_err))

    return ValidationReport(max_rel_error=worst, compensator_error=comp_err,
                            fatal=fatal, flagged=flagged, tolerance=rtol)
