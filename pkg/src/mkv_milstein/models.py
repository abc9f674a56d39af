"""Built-in example models with closed-form derivatives and moment oracles.

Both built-ins are scalar (d = m = 1) and interact through the measure only
via its mean, so all measure derivatives are constants and analytic moment
oracles stay available.  The composite first-order operators combine a state
or measure derivative of one coefficient with another coefficient as the
multiplier; they are the building blocks of the first-order corrections.
"""

from __future__ import annotations

import numpy as np

from .core import MarkMeasure, ModelSpec

__all__ = [
    "mean_field_ou_jump",
    "cubic_mean_field",
    "model_from_name",
    "moment_ode_solution",
    "operator_dx",
    "operator_dmu",
]


def _lead(x, y=None):
    shape = np.shape(x)[:-1]
    if y is not None:
        shape = np.broadcast_shapes(shape, np.shape(y)[:-1])
    return shape


def _const(value, lead, tail):
    return np.broadcast_to(np.asarray(value, dtype=float), lead + tail)


def mean_field_ou_jump(a=-1.0, c=0.5, s0=0.2, s1=0.8, g0=0.1, g1=0.4,
                       intensity=0.5, mark_size=1.0,
                       x0_mean=1.0, x0_std=0.5, moment_order=6.0) -> ModelSpec:
    """Linear mean-field model: OU-type drift pulled toward the ensemble mean,
    affine diffusion and affine jump amplitude.

    drift(x, mu)   = a x + c mean(mu)
    diffusion(x)   = s0 + s1 x
    jump(x, z)     = (g0 + g1 x) z

    Globally Lipschitz in state and mean, so the growth exponent is 0 and the
    scheme needs no taming.  Diffusion and jump are measure-free, hence all
    their measure derivatives vanish identically.
    """
    marks = MarkMeasure.symmetric_pair(intensity, mark_size)
    lam1 = marks.moment(1)

    def drift(x, mu):
        x = np.asarray(x, dtype=float)
        return a * x + c * mu.mean()

    def diffusion(x, mu):
        x = np.asarray(x, dtype=float)
        return (s0 + s1 * x)[..., None]

    def jump(x, mu, z):
        x = np.asarray(x, dtype=float)
        return (g0 + g1 * x) * z

    def jump_compensator(x, mu):
        x = np.asarray(x, dtype=float)
        return lam1 * (g0 + g1 * x)

    def dx_drift(x, mu):
        return _const(a, _lead(x), (1, 1))

    def dx_diffusion(x, mu):
        return _const(s1, _lead(x), (1, 1, 1))

    def dx_jump(x, mu, z):
        return _const(g1 * z, _lead(x), (1, 1))

    def dmu_drift(x, mu, y):
        return _const(c, _lead(x, y), (1, 1))

    def dmu_diffusion(x, mu, y):
        return _const(0.0, _lead(x, y), (1, 1, 1))

    def dmu_jump(x, mu, y, z):
        return _const(0.0, _lead(x, y), (1, 1))

    return ModelSpec(
        dim_state=1, dim_brownian=1,
        drift=drift, diffusion=diffusion, jump=jump,
        jump_compensator=jump_compensator,
        dx_drift=dx_drift, dx_diffusion=dx_diffusion, dx_jump=dx_jump,
        dmu_drift=dmu_drift, dmu_diffusion=dmu_diffusion, dmu_jump=dmu_jump,
        marks=marks, growth_eta=0.0, moment_order=moment_order,
        sigma_measure_flat=True, gamma_measure_flat=True,
        x0_mean=x0_mean, x0_std=x0_std,
        name="mean_field_ou_jump",
        params=dict(a=a, c=c, s0=s0, s1=s1, g0=g0, g1=g1,
                    intensity=intensity, mark_size=mark_size),
    )


def cubic_mean_field(beta=1.0, c=0.5, s1=0.5, g1=0.3, rho=0.0,
                     intensity=0.5, mark_size=1.0,
                     x0_mean=0.0, x0_std=2.0, moment_order=6.0) -> ModelSpec:
    """Super-linear scalar model: cubic one-sided-Lipschitz drift, linear
    multiplicative diffusion and (optionally) a |x|^(1/2)-super-linear jump.

    drift(x, mu) = x - beta x^3 + c mean(mu)
    diffusion(x) = s1 x
    jump(x, z)   = g1 x (1 + rho |x|^(1/2)) z

    Explicit untamed schemes blow up on this model at coarse resolutions; it
    drives the taming stability checks.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    marks = MarkMeasure.symmetric_pair(intensity, mark_size)
    lam1 = marks.moment(1)

    def drift(x, mu):
        x = np.asarray(x, dtype=float)
        return x - beta * x ** 3 + c * mu.mean()

    def diffusion(x, mu):
        x = np.asarray(x, dtype=float)
        return (s1 * x)[..., None]

    def _amp(x):
        if rho == 0.0:
            return g1 * x
        return g1 * x * (1.0 + rho * np.sqrt(np.abs(x)))

    def _damp(x):
        if rho == 0.0:
            return np.broadcast_to(np.asarray(g1, dtype=float), np.shape(x))
        return g1 * (1.0 + 1.5 * rho * np.sqrt(np.abs(x)))

    def jump(x, mu, z):
        x = np.asarray(x, dtype=float)
        return _amp(x) * z

    def jump_compensator(x, mu):
        x = np.asarray(x, dtype=float)
        return lam1 * _amp(x)

    def dx_drift(x, mu):
        x = np.asarray(x, dtype=float)
        return (1.0 - 3.0 * beta * x ** 2)[..., None]

    def dx_diffusion(x, mu):
        return _const(s1, _lead(x), (1, 1, 1))

    def dx_jump(x, mu, z):
        x = np.asarray(x, dtype=float)
        return (_damp(x) * z)[..., None]

    def dmu_drift(x, mu, y):
        return _const(c, _lead(x, y), (1, 1))

    def dmu_diffusion(x, mu, y):
        return _const(0.0, _lead(x, y), (1, 1, 1))

    def dmu_jump(x, mu, y, z):
        return _const(0.0, _lead(x, y), (1, 1))

    return ModelSpec(
        dim_state=1, dim_brownian=1,
        drift=drift, diffusion=diffusion, jump=jump,
        jump_compensator=jump_compensator,
        dx_drift=dx_drift, dx_diffusion=dx_diffusion, dx_jump=dx_jump,
        dmu_drift=dmu_drift, dmu_diffusion=dmu_diffusion, dmu_jump=dmu_jump,
        marks=marks, growth_eta=2.0, moment_order=moment_order,
        sigma_measure_flat=True, gamma_measure_flat=True,
        x0_mean=x0_mean, x0_std=x0_std,
        name="cubic_mean_field",
        params=dict(beta=beta, c=c, s1=s1, g1=g1, rho=rho,
                    intensity=intensity, mark_size=mark_size),
    )


_FACTORIES = {
    "mean_field_ou_jump": mean_field_ou_jump,
    "cubic_mean_field": cubic_mean_field,
}


def model_from_name(name: str, **overrides) -> ModelSpec:
    """Instantiate a built-in model by name with parameter overrides."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; available: {sorted(_FACTORIES)}")
    return factory(**overrides)


def _exp_convolution(a, b, t):
    """int_0^t exp(a (t - s)) exp(b s) ds, stable near the resonant case."""
    if abs(b - a) < 1e-12 * max(1.0, abs(a), abs(b)):
        mid = 0.5 * (a + b)
        return t * np.exp(mid * t)
    return (np.exp(b * t) - np.exp(a * t)) / (b - a)


def moment_ode_solution(model: ModelSpec, m0: float, q0: float, t: float):
    """Mean and second moment of the limiting (mean-field) linear dynamics.

    The affine coefficients of :func:`mean_field_ou_jump` close the first two
    moment equations.  With lam2 the second mark moment of the compensator,

        m' = (a + c) m
        q' = (2a + s1^2 + g1^2 lam2) q + 2 c m^2
             + (2 s0 s1 + 2 g0 g1 lam2) m + (s0^2 + g0^2 lam2),

    the jump integral being compensated, so jumps contribute no drift to the
    mean; both equations are solved in closed form.
    """
    if model.name != "mean_field_ou_jump":
        raise ValueError("moment oracle only covers the linear model family")
    p = model.params
    a, c = p["a"], p["c"]
    s0, s1, g0, g1 = p["s0"], p["s1"], p["g0"], p["g1"]
    lam2 = model.marks.moment(2)

    mean_rate = a + c
    m = m0 * np.exp(mean_rate * t)

    A = 2.0 * a + s1 ** 2 + g1 ** 2 * lam2
    q = (q0 * np.exp(A * t)
         + 2.0 * c * m0 ** 2 * _exp_convolution(A, 2.0 * mean_rate, t)
         + (2.0 * s0 * s1 + 2.0 * g0 * g1 * lam2) * m0 * _exp_convolution(A, mean_rate, t)
         + (s0 ** 2 + g0 ** 2 * lam2) * _exp_convolution(A, 0.0, t))
    return float(m), float(q)


def _multiplier_value(model, mu, multiplier, at):
    """Evaluate the multiplier coefficient (a diffusion column or the jump
    coefficient at a fixed mark) at the point ``at``."""
    kind = multiplier[0]
    if kind == "sigma":
        ell1 = multiplier[1]
        sig = model.diffusion(at, mu)
        return sig[..., ell1]
    if kind == "gamma":
        z = multiplier[1]
        return model.jump(at, mu, z)
    raise ValueError(f"unknown multiplier kind {kind!r}")


def operator_dx(model: ModelSpec, target: str, x, mu, multiplier, mark=None):
    """State-derivative composite: (d_x f)(x, mu) contracted with the
    multiplier coefficient evaluated at the same point.

    ``target`` selects f from {"drift", "diffusion", "jump"} (``mark``
    supplies the jump target's mark); ``multiplier`` is ``("sigma", ell1)``
    or ``("gamma", z)``.
    """
    direction = _multiplier_value(model, mu, multiplier, x)
    if target == "drift":
        grad = model.dx_drift(x, mu)
        return np.einsum("...uv,...v->...u", grad, direction)
    if target == "diffusion":
        grad = model.dx_diffusion(x, mu)
        return np.einsum("...ulv,...v->...ul", grad, direction)
    if target == "jump":
        if mark is None:
            raise ValueError("jump target requires a mark")
        grad = model.dx_jump(x, mu, mark)
        return np.einsum("...uv,...v->...u", grad, direction)
    raise ValueError(f"unknown target {target!r}")


def operator_dmu(model: ModelSpec, target: str, x, mu, y, multiplier, mark=None):
    """Measure-derivative composite: (dmu f)(x, mu, y) contracted with the
    multiplier coefficient evaluated at the measure atom ``y``."""
    direction = _multiplier_value(model, mu, multiplier, y)
    if target == "drift":
        grad = model.dmu_drift(x, mu, y)
        return np.einsum("...uv,...v->...u", grad, direction)
    if target == "diffusion":
        grad = model.dmu_diffusion(x, mu, y)
        return np.einsum("...ulv,...v->...ul", grad, direction)
    if target == "jump":
        if mark is None:
            raise ValueError("jump target requires a mark")
        grad = model.dmu_jump(x, mu, y, mark)
        return np.einsum("...uv,...v->...u", grad, direction)
    raise ValueError(f"unknown target {target!r}")
