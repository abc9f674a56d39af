"""Time steppers: tamed explicit Euler baseline and the first-order
(Milstein-type) scheme with Brownian- and jump-induced corrections.

All coefficients inside one step are frozen at the step's left endpoint, so
the first-order double integrals factor into (frozen operator) x (iterated
integral) and every jump-induced integrand is piecewise constant between the
system's jump times, making its time- and compensator-integrals exact finite
sums over the jump-adapted sub-intervals.

Correction taxonomy per step, for particle i with left state x_i, measure mu:

* diffusion, Brownian part: sum over directions of the tamed
  (d_x sigma . sigma) products against the iterated integrals
  int (w_r - w_{t_k}) dw_s, plus the 1/N-weighted measure-derivative products
  against cross-particle iterated integrals;
* diffusion, jump part: for every system jump (tau, p, z), the difference of
  the tamed diffusion after relocating particle p by its tamed jump increment,
  times the Brownian increment of particle i over (tau, t_{k+1}];
* jump, Brownian part: at particle i's own jumps, tamed
  (d_x gamma(z) . sigma) products against w(tau) - w(t_k), and the exact
  compensator uses the time-integrals J = int (w_s - w_{t_k}) ds;
* jump, jump part: at particle i's own jump with mark zbar, the accumulated
  differences of the tamed jump coefficient induced by earlier jumps in the
  step; compensated by length-weighted mark sums, exact for piecewise-constant
  integrands.

When the diffusion/jump coefficients are measure-free and taming is in
identity mode, every cross-particle term above vanishes identically and the
steppers skip them; the skipped expressions are exactly zero, not
approximately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import STREAM_INIT, ModelSpec, RunConfig, substream
from .measure import EmpiricalMeasure, ShiftedMeasure
from .noise import NoiseRealization, ResolutionView, StepEvent
from .taming import TamedModel, make_tamed

__all__ = [
    "StepData",
    "StepWorkspace",
    "Trajectory",
    "euler_step",
    "milstein_step",
    "simulate",
    "needs_foreign_splits",
    "BLOWUP_NORM",
]

BLOWUP_NORM = 1e9


def needs_foreign_splits(model: ModelSpec, taming_enabled: bool) -> bool:
    """Whether the scheme reads Brownian data of particle i at other
    particles' jump times.  True as soon as the jump-induced coefficient
    differences can be nonzero for i != jumping particle: measure-dependent
    diffusion/jump coefficients, or active taming (whose scale feels the
    one-atom measure shift)."""
    if model.marks.num_atoms == 0:
        return False
    return (taming_enabled
            or not model.sigma_measure_flat
            or not model.gamma_measure_flat)


@dataclass
class StepData:
    """Noise of one coarse step, in stepper-ready form."""

    dt: float
    t0: float
    t1: float
    dw: np.ndarray                    # (N, m)
    J: np.ndarray                     # (N, m)
    events: list                      # [StepEvent] time-ordered
    view: Optional[ResolutionView] = None
    index: int = 0

    def iterated_self(self):
        return self.view.iterated_self(self.index)

    def iterated_cross(self):
        return self.view.iterated_cross(self.index)


def step_data(view: ResolutionView, k: int) -> StepData:
    t0, t1 = view.step_times(k)
    return StepData(dt=view.dt, t0=t0, t1=t1,
                    dw=view.dw_step[:, k], J=view.J_step[:, k],
                    events=view.events_by_step[k], view=view, index=k)


@dataclass
class StepWorkspace:
    """Optional capture of the per-step term decomposition (for tests and
    debugging; steppers fill it only when passed in)."""

    drift_term: Optional[np.ndarray] = None
    diffusion_term: Optional[np.ndarray] = None
    jump_term: Optional[np.ndarray] = None
    compensator_term: Optional[np.ndarray] = None
    sigma_brownian_self: Optional[np.ndarray] = None
    sigma_brownian_cross: Optional[np.ndarray] = None
    sigma_jump: Optional[np.ndarray] = None
    gamma_brownian: Optional[np.ndarray] = None
    gamma_brownian_cross: Optional[np.ndarray] = None
    gamma_jump: Optional[np.ndarray] = None
    gamma_compensator: Optional[np.ndarray] = None


def _base_parts(x, mu, tamed: TamedModel, step: StepData):
    """Shared zeroth-order assembly; identical for both steppers so the
    degenerate (corrections-off) Milstein output is bit-identical to Euler."""
    marks = tamed.model.marks
    h = step.dt
    b = tamed.drift(x, mu)
    sig = tamed.diffusion(x, mu)
    if marks.num_atoms:
        gam_atoms = tamed.jump_atoms(x, mu)
        comp = np.einsum("njd,j->nd", gam_atoms, marks.weights)
    else:
        gam_atoms = np.zeros(x.shape[:1] + (0, x.shape[1]))
        comp = np.zeros_like(x)
    inc = b * h + np.einsum("ndm,nm->nd", sig, step.dw) - h * comp
    jump_inc = np.zeros_like(x)
    for ev in step.events:
        jump_inc[ev.particle] += gam_atoms[ev.particle, ev.mark_index]
    return inc, jump_inc, b, sig, gam_atoms, comp


def euler_step(x, tamed: TamedModel, step: StepData,
               workspace: Optional[StepWorkspace] = None) -> np.ndarray:
    """Explicit half-order step: drift + frozen diffusion increment +
    compensated frozen jumps."""
    x = np.asarray(x, dtype=float)
    mu = EmpiricalMeasure(x)
    inc, jump_inc, b, sig, gam_atoms, comp = _base_parts(x, mu, tamed, step)
    if workspace is not None:
        workspace.drift_term = b * step.dt
        workspace.diffusion_term = np.einsum("ndm,nm->nd", sig, step.dw)
        workspace.jump_term = jump_inc
        workspace.compensator_term = -step.dt * comp
    return x + inc + jump_inc


def milstein_step(x, tamed: TamedModel, step: StepData, corrections: bool = True,
                  workspace: Optional[StepWorkspace] = None) -> np.ndarray:
    """First-order step; with ``corrections=False`` the output is bit-exactly
    the Euler step on the same noise."""
    x = np.asarray(x, dtype=float)
    mu = EmpiricalMeasure(x)
    inc, jump_inc, b, sig, gam_atoms, comp = _base_parts(x, mu, tamed, step)
    base = x + inc + jump_inc
    if not corrections:
        return base

    model = tamed.model
    N, d = x.shape
    m = model.dim_brownian
    marks = model.marks
    weights = marks.weights
    h = step.dt

    ws = workspace

    # ---- diffusion correction, Brownian part --------------------------------
    prod_xx = tamed.sigma_dx_sigma(x, mu)              # (N, d, m, m)
    its = step.iterated_self()                         # (N, m, m) [l1, l]
    sig_corr = np.einsum("nulk,nkl->nu", prod_xx, its)
    if ws is not None:
        ws.sigma_brownian_self = sig_corr.copy()
        ws.sigma_brownian_cross = np.zeros_like(sig_corr)
    if not model.sigma_measure_flat:
        prod_mu = tamed.sigma_dmu_sigma(x[:, None, :], mu, x[None, :, :])
        cross = step.iterated_cross()                  # (N, N, m, m) [p, i]
        term = np.einsum("ipulk,pikl->iu", prod_mu, cross) / N
        sig_corr = sig_corr + term
        if ws is not None:
            ws.sigma_brownian_cross = term

    # ---- jump correction, Brownian part --------------------------------------
    gam_corr = np.zeros_like(x)
    if marks.num_atoms:
        prod_gx = tamed.sigma_dx_jump(x, mu)           # (N, J, d, m)
        # compensator of the Brownian-drifted jump integrand, exact via J
        gam_corr -= np.einsum("njdm,j,nm->nd", prod_gx, weights, step.J)
        prod_gmu = None
        if not model.gamma_measure_flat:
            prod_gmu = tamed.sigma_dmu_jump(x[:, None, :], mu, x[None, :, :])
            gam_corr -= np.einsum("ikjdm,j,km->id", prod_gmu, weights, step.J) / N
        if ws is not None:
            ws.gamma_brownian = gam_corr.copy()
            ws.gamma_jump = np.zeros_like(x)
            ws.gamma_compensator = np.zeros_like(x)

        # own-jump Brownian-drift terms
        for ev in step.events:
            p = ev.particle
            add = prod_gx[p, ev.mark_index] @ ev.disp
            if prod_gmu is not None:
                add = add + (np.einsum("kdm,km->d",
                                       prod_gmu[p, :, ev.mark_index],
                                       ev.all_disp) / N)
            gam_corr[p] += add
            if ws is not None:
                ws.gamma_brownian[p] += add

    # ---- jump-induced differences (diffusion and jump coefficients) ----------
    sig_jump = np.zeros_like(x)
    if marks.num_atoms and step.events:
        full_rows = tamed.enabled or not model.sigma_measure_flat \
            or not model.gamma_measure_flat
        dsum = np.zeros((N, marks.num_atoms, d))  # accumulated gamma differences
        for ev in step.events:
            p = ev.particle
            shift = gam_atoms[p, ev.mark_index]

            # own jump collects the corrections accumulated so far
            if np.any(dsum[p, ev.mark_index]):
                gam_corr[p] += dsum[p, ev.mark_index]
                if ws is not None:
                    ws.gamma_jump[p] += dsum[p, ev.mark_index]

            tail_len = step.t1 - ev.time
            if full_rows:
                if ev.all_disp is not None:
                    all_disp = ev.all_disp
                elif N == 1:
                    all_disp = ev.disp[None, :]
                else:
                    raise ValueError(
                        "cross-particle jump corrections need a realization "
                        "sampled with split_at_foreign_jumps=True")
                mu_shift = ShiftedMeasure(mu, p, shift)
                x_shift = x.copy()
                x_shift[p] += shift
                d_sig = tamed.diffusion(x_shift, mu_shift) - sig
                tails = step.dw - all_disp
                sig_jump += np.einsum("ndm,nm->nd", d_sig, tails)
                d_gam = tamed.jump_atoms(x_shift, mu_shift) - gam_atoms
                gam_corr -= tail_len * np.einsum("njd,j->nd", d_gam, weights)
                if ws is not None:
                    ws.gamma_compensator -= tail_len * np.einsum(
                        "njd,j->nd", d_gam, weights)
                dsum += d_gam
            else:
                # measure-free coefficients, identity taming: only the jumping
                # particle's own row changes; all other differences are zero
                xp = (x[p] + shift)[None, :]
                d_sig_row = tamed.diffusion(xp, mu)[0] - sig[p]
                tail = step.dw[p] - ev.disp
                sig_jump[p] += d_sig_row @ tail
                d_gam_row = tamed.jump_atoms(xp, mu)[0] - gam_atoms[p]
                gam_corr[p] -= tail_len * np.einsum("jd,j->d", d_gam_row, weights)
                if ws is not None:
                    ws.gamma_compensator[p] -= tail_len * np.einsum(
                        "jd,j->d", d_gam_row, weights)
                dsum[p] += d_gam_row
        if ws is not None:
            ws.sigma_jump = sig_jump

    return base + sig_corr + sig_jump + gam_corr


@dataclass
class Trajectory:
    """Output of one system simulation at one resolution."""

    times: np.ndarray
    final: np.ndarray
    flagged: np.ndarray
    states: Optional[np.ndarray] = None
    max_abs: Optional[np.ndarray] = None
    jump_counts: Optional[np.ndarray] = None
    taming_activity: Optional[np.ndarray] = None

    @property
    def flagged_fraction(self) -> float:
        return float(np.mean(self.flagged))


def initial_states(model: ModelSpec, config: RunConfig, run_index: int) -> np.ndarray:
    """Per-particle initial draws from the (run, particle, init) substreams;
    identical across resolutions, schemes and system sizes containing the
    particle."""
    return np.stack([
        model.sample_x0(substream(config.base_seed, run_index, i, STREAM_INIT))
        for i in range(config.particle_count)])


def simulate(model: ModelSpec, config: RunConfig, resolution: int,
             realization: NoiseRealization, scheme: Optional[str] = None,
             taming_enabled: Optional[bool] = None, substeps: int = 32,
             record_path: bool = False, collect_diagnostics: bool = False) -> Trajectory:
    """Run the whole particle system over [0, T] at ``resolution`` steps.

    Deterministic given the realization; per-particle blow-ups (non-finite
    state or norm above BLOWUP_NORM) freeze the particle at its last finite
    state and flag it.
    """
    if realization.num_particles != config.particle_count:
        raise ValueError("realization particle count does not match config")
    scheme = scheme or config.scheme
    if scheme not in ("euler", "milstein"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if taming_enabled is None:
        taming_enabled = config.taming == "on"
    tamed = make_tamed(model, resolution, enabled=taming_enabled)
    view = realization.coarsen(resolution, substeps)
    n = resolution

    x = initial_states(model, config, realization.run_index)
    flagged = np.zeros(config.particle_count, dtype=bool)
    states = np.empty((n + 1,) + x.shape) if record_path else None
    if record_path:
        states[0] = x
    max_abs = np.empty(n) if collect_diagnostics else None
    jumps = np.empty(n, dtype=int) if collect_diagnostics else None
    activity = np.empty(n) if collect_diagnostics else None

    for k in range(n):
        sd = step_data(view, k)
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            if scheme == "euler":
                x_new = euler_step(x, tamed, sd)
            else:
                x_new = milstein_step(x, tamed, sd)
            # non-finite components poison the squared norm, so one
            # comparison catches both blow-up modes (NaN compares False)
            sq = np.einsum("nd,nd->n", x_new, x_new)
            bad = ~(sq <= BLOWUP_NORM ** 2)
        flagged |= bad
        x_new[flagged] = x[flagged]
        x = x_new
        if record_path:
            states[k + 1] = x
        if collect_diagnostics:
            max_abs[k] = float(np.max(np.abs(x)))
            jumps[k] = len(sd.events)
            activity[k] = tamed.activity_fraction(x, EmpiricalMeasure(x))

    times = np.arange(n + 1) * (realization.horizon / n)
    return Trajectory(times=times, final=x, flagged=flagged, states=states,
                      max_abs=max_abs, jump_counts=jumps,
                      taming_activity=activity)
