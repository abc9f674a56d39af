"""Step-count-dependent coefficient taming and empirical assumption probes.

The taming family is the smooth ratio

    tame(f) = f / (1 + n^(-alpha) |f| / scale),   scale = 1 + |x| + W2(mu, d0),

applied blockwise per particle (|f| is the Euclidean/Frobenius norm of the
whole coefficient block), which gives both

    |tame(f)| <= |f|      and      |tame(f)| <= n^alpha * scale

exactly, and tame(f) -> f pointwise as n grows.  Exponents per family:
drift 1/3, diffusion 1/6, first-order operator products 1/6, and jump
1/(4 pbar) so that the intensity-weighted pbar-th power sum of the tamed jump
coefficient stays below n^(1/4) (1 + |x| + W2)^pbar times the total intensity.

Identity mode returns the raw coefficient functions untouched, which is the
appropriate instance of the general scheme for globally Lipschitz models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .core import ModelSpec
from .measure import gauss_legendre_01, w2_index_bound, w2_1d_exact

__all__ = [
    "tame_scalar_family",
    "TamedModel",
    "make_tamed",
    "ProbeRow",
    "ProbeReport",
    "ProbeSample",
    "probe_assumptions",
]

ALPHA_DRIFT = 1.0 / 3.0
ALPHA_DIFFUSION = 1.0 / 6.0
ALPHA_OPERATOR = 1.0 / 6.0

#: relative deviation above which a coefficient evaluation counts as
#: "taming active" in diagnostics
ACTIVITY_THRESHOLD = 1e-3


def _block_norm(value: np.ndarray, block_ndim: int) -> np.ndarray:
    axes = tuple(range(value.ndim - block_ndim, value.ndim))
    return np.sqrt(np.sum(value ** 2, axis=axes))


def tame_scalar_family(value, scale, alpha: float, n: int, block_ndim: int = 1):
    """Ratio taming of one coefficient block family.

    ``value`` has ``block_ndim`` trailing block axes; ``scale`` matches the
    leading axes.  Returns ``value / (1 + n^(-alpha) |value| / scale)``.
    """
    value = np.asarray(value, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if n < 1:
        raise ValueError("n must be >= 1")
    norm = _block_norm(value, block_ndim)
    q = float(n) ** (-alpha) * norm / scale
    shape = q.shape + (1,) * block_ndim
    return value / (1.0 + q.reshape(shape))


def _taming_ratio(value, scale, alpha, n, block_ndim):
    norm = _block_norm(np.asarray(value, dtype=float), block_ndim)
    return float(n) ** (-alpha) * norm / np.asarray(scale, dtype=float)


class TamedModel:
    """A model wrapped with step-count-dependent taming.

    All evaluators are vectorised over a leading particle axis and pure.  The
    first-order operator products are formed from the *raw* derivatives and
    coefficients first and tamed as whole blocks afterwards; jump-shift
    arguments always use the tamed jump coefficient.
    """

    def __init__(self, model: ModelSpec, n: int, enabled: bool = True):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.model = model
        self.n = int(n)
        self.enabled = bool(enabled)
        self.alpha_jump = 1.0 / (4.0 * model.moment_order)

    # -- scale ------------------------------------------------------------

    def scale(self, x, mu) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 1.0 + np.sqrt(np.sum(x ** 2, axis=-1)) + mu.w2_to_dirac0()

    def _apply(self, value, scale, alpha, block_ndim):
        if not self.enabled:
            return value
        return tame_scalar_family(value, scale, alpha, self.n, block_ndim)

    # -- coefficient families ----------------------------------------------

    def drift(self, x, mu):
        value = self.model.drift(x, mu)
        if not self.enabled:
            return value
        return tame_scalar_family(value, self.scale(x, mu), ALPHA_DRIFT,
                                  self.n, 1)

    def diffusion(self, x, mu):
        value = self.model.diffusion(x, mu)
        if not self.enabled:
            return value
        return tame_scalar_family(value, self.scale(x, mu), ALPHA_DIFFUSION,
                                  self.n, 2)

    def jump(self, x, mu, z):
        value = self.model.jump(x, mu, z)
        if not self.enabled:
            return value
        return tame_scalar_family(value, self.scale(x, mu), self.alpha_jump,
                                  self.n, 1)

    def jump_atoms(self, x, mu):
        """Tamed jump coefficient at every mark atom, shape (..., J, d)."""
        marks = self.model.marks
        x = np.asarray(x, dtype=float)
        if marks.num_atoms == 0:
            return np.zeros(x.shape[:-1] + (0, x.shape[-1]))
        vals = np.stack([np.asarray(self.model.jump(x, mu, float(z)), dtype=float)
                         for z in marks.atoms], axis=-2)
        if not self.enabled:
            return vals
        scale = self.scale(x, mu)
        return tame_scalar_family(vals, np.asarray(scale)[..., None],
                                  self.alpha_jump, self.n, 1)

    def jump_compensator(self, x, mu):
        """Intensity-weighted sum of the *tamed* jump coefficient over the
        atoms, so jump and compensator parts tame identically."""
        marks = self.model.marks
        if marks.num_atoms == 0:
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape)
        atoms = self.jump_atoms(x, mu)
        return np.einsum("...jd,j->...d", atoms, marks.weights)

    # -- tamed first-order operator products --------------------------------

    def sigma_dx_sigma(self, x, mu):
        """Tamed (d_x sigma^{ul} . sigma^{l1}) products, shape (..., d, m, m)
        with trailing axes (component u, column l, direction l1)."""
        sig = np.asarray(self.model.diffusion(x, mu), dtype=float)
        grad = np.asarray(self.model.dx_diffusion(x, mu), dtype=float)
        prod = np.einsum("...ulv,...vk->...ulk", grad, sig)
        if not self.enabled:
            return prod
        return tame_scalar_family(prod, self.scale(x, mu), ALPHA_OPERATOR,
                                  self.n, 3)

    def sigma_dmu_sigma(self, x, mu, y):
        """Tamed (dmu sigma^{ul}(x, mu, y) . sigma^{l1}(y, mu)) products,
        shape (..., d, m, m); broadcasting pairs x against y."""
        sig_y = np.asarray(self.model.diffusion(y, mu), dtype=float)
        grad = np.asarray(self.model.dmu_diffusion(x, mu, y), dtype=float)
        prod = np.einsum("...ulv,...vk->...ulk", grad, sig_y)
        x = np.asarray(x, dtype=float)
        scale = 1.0 + np.sqrt(np.sum(x ** 2, axis=-1)) + mu.w2_to_dirac0()
        scale = np.broadcast_to(scale, prod.shape[:-3])
        return self._apply(prod, scale, ALPHA_OPERATOR, 3)

    def sigma_dx_jump(self, x, mu):
        """Tamed (d_x gamma^u(z_j) . sigma^{l1}) products at every mark atom,
        shape (..., J, d, m)."""
        marks = self.model.marks
        sig = np.asarray(self.model.diffusion(x, mu), dtype=float)
        prods = []
        for z in marks.atoms:
            grad = np.asarray(self.model.dx_jump(x, mu, float(z)), dtype=float)
            prods.append(np.einsum("...uv,...vk->...uk", grad, sig))
        prod = np.stack(prods, axis=-3)
        if not self.enabled:
            return prod
        scale = np.asarray(self.scale(x, mu))[..., None]
        return tame_scalar_family(prod, scale, ALPHA_OPERATOR, self.n, 2)

    def sigma_dmu_jump(self, x, mu, y):
        """Tamed (dmu gamma^u(x, mu, y, z_j) . sigma^{l1}(y, mu)) products,
        shape (..., J, d, m)."""
        marks = self.model.marks
        sig_y = np.asarray(self.model.diffusion(y, mu), dtype=float)
        prods = []
        for z in marks.atoms:
            grad = np.asarray(self.model.dmu_jump(x, mu, y, float(z)), dtype=float)
            prods.append(np.einsum("...uv,...vk->...uk", grad, sig_y))
        prod = np.stack(prods, axis=-3)
        x = np.asarray(x, dtype=float)
        scale = 1.0 + np.sqrt(np.sum(x ** 2, axis=-1)) + mu.w2_to_dirac0()
        scale = np.broadcast_to(scale, prod.shape[:-3])[..., None]
        return self._apply(prod, scale, ALPHA_OPERATOR, 2)

    # -- diagnostics --------------------------------------------------------

    def activity_fraction(self, x, mu) -> float:
        """Fraction of particles whose drift/diffusion/jump taming factor
        deviates from identity by more than ACTIVITY_THRESHOLD."""
        if not self.enabled:
            return 0.0
        scale = self.scale(x, mu)
        q = _taming_ratio(self.model.drift(x, mu), scale, ALPHA_DRIFT, self.n, 1)
        q = np.maximum(q, _taming_ratio(self.model.diffusion(x, mu), scale,
                                        ALPHA_DIFFUSION, self.n, 2))
        for z in self.model.marks.atoms:
            q = np.maximum(q, _taming_ratio(self.model.jump(x, mu, float(z)),
                                            scale, self.alpha_jump, self.n, 1))
        return float(np.mean(q > ACTIVITY_THRESHOLD))


def make_tamed(model: ModelSpec, n: int, enabled: bool = True) -> TamedModel:
    """Wrap ``model`` for step count ``n``; ``enabled=False`` is identity mode
    (tamed evaluators coincide with the raw ones exactly)."""
    return TamedModel(model, n, enabled)


@dataclass(frozen=True)
class ProbeSample:
    """Sampling ranges for the empirical assumption probes."""

    count: int = 200
    atom_count: int = 32
    state_scale: float = 10.0
    monotonicity_alpha: float = 2.0
    rate_epsilon: float = 0.5
    quadrature_order: int = 16
    seed: int = 0


@dataclass(frozen=True)
class ProbeRow:
    assumption: str
    n: int
    max_ratio: float
    argmax_state: float


@dataclass
class ProbeReport:
    rows: list = field(default_factory=list)
    non_finite: list = field(default_factory=list)

    def ratio(self, assumption: str) -> float:
        return max(r.max_ratio for r in self.rows if r.assumption == assumption)


def _probe_states(model: ModelSpec, spec: ProbeSample):
    """Log-uniform magnitude states and atom clouds; heavy enough tails to
    exercise the taming region."""
    from .measure import EmpiricalMeasure

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    d = model.dim_state
    for _ in range(spec.count):
        mag = spec.state_scale ** rng.uniform(-1.0, 1.0)
        x = mag * rng.standard_normal(d)
        atoms = rng.standard_normal((spec.atom_count, d)) * \
            spec.state_scale ** rng.uniform(-1.0, 1.0)
        yield x, EmpiricalMeasure(atoms), rng


def probe_assumptions(model: ModelSpec, tamed: TamedModel,
                      sample_spec: ProbeSample = ProbeSample()) -> ProbeReport:
    """Empirically probe the coercivity, monotonicity, taming-gap and
    measure-Lipschitz conditions at the tamed model's step count.

    Each ratio is reported against its natural normaliser; across step counts
    a bounded maximum (no growth trend) is the strongest desk-scale statement
    available, and growth is a flag, not a proof of failure.
    """
    from .measure import EmpiricalMeasure

    pbar = model.moment_order
    marks = model.marks
    nodes, weights = gauss_legendre_01(sample_spec.quadrature_order)
    report = ProbeReport()
    n = tamed.n

    best = {"coercivity": (0.0, 0.0), "monotonicity": (0.0, 0.0),
            "taming_gap": (0.0, 0.0), "measure_lipschitz": (0.0, 0.0)}

    def consider(key, ratio, state):
        if not np.isfinite(ratio):
            report.non_finite.append((key, float(np.linalg.norm(state))))
            return
        if ratio > best[key][0]:
            best[key] = (float(ratio), float(np.linalg.norm(state)))

    for x, mu, rng in _probe_states(model, sample_spec):
        xn = float(np.linalg.norm(x))
        w2 = mu.w2_to_dirac0()

        # pbar-moment coercivity of the tamed coefficients
        b_hat = tamed.drift(x, mu)
        sig_hat = tamed.diffusion(x, mu)
        expr = (2.0 * xn ** (pbar - 2) * float(x @ b_hat)
                + (pbar - 1.0) * xn ** (pbar - 2) * float(np.sum(sig_hat ** 2)))
        if marks.num_atoms:
            gam_hat = tamed.jump_atoms(x, mu)
            for j, lam in enumerate(marks.weights):
                g = gam_hat[j]
                theta_int = float(np.sum(
                    weights * (1.0 - nodes)
                    * np.linalg.norm(x[None, :] + nodes[:, None] * g[None, :],
                                     axis=1) ** (pbar - 2)))
                expr += 2.0 * (pbar - 1.0) * lam * float(g @ g) * theta_int
        consider("coercivity", expr / (1.0 + xn ** pbar + w2 ** pbar), x)

        # monotonicity of the raw coefficients for a paired sample
        x2 = x + rng.standard_normal(x.shape)
        atoms2 = mu.atoms + rng.standard_normal(mu.atoms.shape)
        mu2 = EmpiricalMeasure(atoms2)
        w2sq = (w2_1d_exact(mu, mu2) if model.dim_state == 1
                else w2_index_bound(mu, mu2)) ** 2
        num = 2.0 * float((x - x2) @ (model.drift(x, mu) - model.drift(x2, mu2)))
        num += sample_spec.monotonicity_alpha * float(
            np.sum((model.diffusion(x, mu) - model.diffusion(x2, mu2)) ** 2))
        for z, lam in zip(marks.atoms, marks.weights):
            dgam = model.jump(x, mu, float(z)) - model.jump(x2, mu2, float(z))
            num += sample_spec.monotonicity_alpha * lam * float(dgam @ dgam)
        denom = float(np.sum((x - x2) ** 2)) + w2sq
        consider("monotonicity", num / denom, x)

        # taming gap scaled by the theoretical rate normaliser
        gap = float(np.sum((model.drift(x, mu) - b_hat) ** 2))
        gap += float(np.sum((model.diffusion(x, mu) - sig_hat) ** 2))
        for j, (z, lam) in enumerate(zip(marks.atoms, marks.weights)):
            dg = model.jump(x, mu, float(z)) - tamed.jump(x, mu, float(z))
            gap += lam * float(dg @ dg)
        scale_n = float(n) ** (1.0 + 2.0 / (sample_spec.rate_epsilon + 2.0))
        consider("taming_gap", gap * scale_n / (1.0 + xn ** (2 * (model.growth_eta + 1))), x)

        # measure-Lipschitz transfer of the taming (diffusion and jump);
        # a tamed difference without a raw one (measure-free coefficient,
        # active taming through the scale) has no finite ratio and is flagged
        ratio = 0.0
        pairs = [(model.diffusion, tamed.diffusion, ())]
        pairs += [(model.jump, tamed.jump, (float(z),)) for z in marks.atoms]
        for raw_fn, tam_fn, args in pairs:
            raw = float(np.sum((raw_fn(x, mu, *args) - raw_fn(x, mu2, *args)) ** 2))
            tam = float(np.sum((tam_fn(x, mu, *args) - tam_fn(x, mu2, *args)) ** 2))
            if raw > 1e-24:
                ratio = max(ratio, np.sqrt(tam / raw))
            elif tam > 1e-24:
                consider("measure_lipschitz", np.inf, x)
        if ratio > 0.0:
            consider("measure_lipschitz", ratio, x)

    for key, (ratio, argmax) in best.items():
        report.rows.append(ProbeRow(key, n, ratio, argmax))
    return report
