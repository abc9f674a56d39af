"""Coupled, jump-adapted driving noise for the whole particle system.

One realization carries, for every particle, the Brownian increments and the
time-integrals ``J = int_a^b (w_s - w_a) ds`` over a jump-adapted refinement
of the finest uniform grid, plus the Poisson jump events.  Construction is
hierarchical so that a particle's noise is a pure function of its own streams:

1. per-particle jump clocks (exponential waiting times, rate = total mark
   intensity) and marks;
2. per-particle (dw, J) pairs on the canonical ``n_max`` grid, sampled jointly
   with the exact covariance  [[h, h^2/2], [h^2/2, h^3/3]];
3. conditional (Brownian-bridge style) refinement of the cells that contain
   jump times, keyed by the split time itself.

Own-jump splits are applied before foreign-jump splits, so the values a
particle's path takes on its canonical grid and at its own jump times do not
depend on how many other particles exist.  Foreign splits are materialised
only on request: they are consumed exclusively by the jump-induced correction
terms whose integrands vanish for measure-free diffusion/jump coefficients.

Coarse-step increments are *defined* as left-to-right sums of the fine data,
which is what makes refinement-coupled strong-error studies exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (STREAM_BRIDGE, STREAM_JUMPS, STREAM_WIENER, Grid,
                   MarkMeasure, RunConfig, substream, time_key)

__all__ = [
    "JumpEvent",
    "StepEvent",
    "NoiseRealization",
    "ResolutionView",
    "sample_realization",
    "iterated_integrals",
]


@dataclass(frozen=True)
class JumpEvent:
    """One Poisson event: time in (0, T], owning particle, mark atom."""

    time: float
    particle: int
    mark_index: int
    mark: float


@dataclass
class StepEvent:
    """A jump event located inside one coarse step, with the Brownian
    displacement of the owning particle accumulated since the step start."""

    time: float
    particle: int
    mark_index: int
    mark: float
    disp: np.ndarray                 # (m,) own-particle w(tau) - w(t_k)
    all_disp: Optional[np.ndarray]   # (N, m) when foreign splits are on


def _draw_jump_times(gen, intensity: float, horizon: float) -> np.ndarray:
    times = []
    t = 0.0
    while True:
        t += gen.exponential(1.0 / intensity)
        if t > horizon:
            break
        times.append(t)
    return np.asarray(times)


def _conditional_split(rho: float, delta: float, dw, J, gen):
    """Split one (dw, J) pair at the relative position ``rho`` in (0, 1).

    Works in units standardised by the cell length, where the covariance of
    the pair is [[1, 1/2], [1/2, 1/3]] independent of the cell size; returns
    the left piece, the right piece being fixed by additivity.
    """
    m = dw.shape[0]
    sqrt_d = np.sqrt(delta)
    s_hat = dw / sqrt_d
    r_hat = J / (delta * sqrt_d)

    # cov blocks of ((dw1, J1), (dw, J)) in standardised units
    s11 = np.array([[rho, rho ** 2 / 2.0],
                    [rho ** 2 / 2.0, rho ** 3 / 3.0]])
    s12 = np.array([[rho, rho ** 2 / 2.0 + rho * (1.0 - rho)],
                    [rho ** 2 / 2.0, rho ** 3 / 3.0 + (1.0 - rho) * rho ** 2 / 2.0]])
    s22_inv = np.array([[4.0, -6.0], [-6.0, 12.0]])
    gain = s12 @ s22_inv
    cond_mean = gain @ np.vstack([s_hat, r_hat])          # (2, m)
    cov = s11 - gain @ s12.T
    # 2x2 Cholesky with clipping against roundoff at rho -> 0 or 1
    c11 = max(cov[0, 0], 0.0)
    l11 = np.sqrt(c11)
    l21 = cov[1, 0] / l11 if l11 > 0 else 0.0
    l22 = np.sqrt(max(cov[1, 1] - l21 ** 2, 0.0))

    z = gen.standard_normal((2, m))
    a_hat = cond_mean[0] + l11 * z[0]
    b_hat = cond_mean[1] + l21 * z[0] + l22 * z[1]
    dw1 = sqrt_d * a_hat
    J1 = delta * sqrt_d * b_hat
    return dw1, J1


class _Splits:
    """Refinement of one canonical cell into pieces.

    ``times`` are the interior split points; piece k spans
    [bounds[k], bounds[k+1]] and carries (dw, J) relative to its own left end.
    """

    __slots__ = ("left", "right", "times", "dw", "J")

    def __init__(self, left, right, dw, J):
        self.left = left
        self.right = right
        self.times: list = []
        self.dw: list = [dw]
        self.J: list = [J]

    def bounds(self):
        return [self.left, *self.times, self.right]

    def insert(self, tau: float, gen) -> bool:
        bounds = self.bounds()
        if any(tau == b for b in bounds):
            return False
        idx = int(np.searchsorted(np.asarray(bounds), tau)) - 1
        pa, pb = bounds[idx], bounds[idx + 1]
        delta = pb - pa
        rho = (tau - pa) / delta
        dw1, J1 = _conditional_split(rho, delta, self.dw[idx], self.J[idx], gen)
        dw2 = self.dw[idx] - dw1
        J2 = self.J[idx] - J1 - (pb - tau) * dw1
        self.times.insert(idx, tau)
        self.dw[idx:idx + 1] = [dw1, dw2]
        self.J[idx:idx + 1] = [J1, J2]
        return True

    def effective(self):
        """Left-to-right totals (dw, J) over the whole cell."""
        dw_tot = self.dw[0].copy()
        J_tot = self.J[0].copy()
        prefix = self.dw[0].copy()
        bounds = self.bounds()
        for k in range(1, len(self.dw)):
            J_tot += self.J[k] + prefix * (bounds[k + 1] - bounds[k])
            dw_tot += self.dw[k]
            prefix += self.dw[k]
        return dw_tot, J_tot

    def prefix_before(self, tau: float) -> np.ndarray:
        """Sum of piece increments strictly left of ``tau`` within the cell
        (``tau`` must be a piece boundary)."""
        out = np.zeros_like(self.dw[0])
        bounds = self.bounds()
        for k in range(len(self.dw)):
            if bounds[k + 1] <= tau:
                out += self.dw[k]
            else:
                break
        return out


class NoiseRealization:
    """All driving noise of one Monte Carlo run of the full system.

    Immutable after construction; resolution views are cached.
    """

    def __init__(self, horizon, n_max, num_particles, dim_brownian, marks,
                 base_seed, run_index, split_at_foreign_jumps=False):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        self.horizon = float(horizon)
        self.n_max = int(n_max)
        self.num_particles = int(num_particles)
        self.dim_brownian = int(dim_brownian)
        self.marks = marks
        self.base_seed = int(base_seed)
        self.run_index = int(run_index)
        self.split_at_foreign = bool(split_at_foreign_jumps)
        self._views: dict = {}

        T, N, m = self.horizon, self.num_particles, self.dim_brownian
        h = T / self.n_max

        self.events = self._draw_events()

        # canonical (dw, J) on the fine grid, one substream per particle
        self.eff_dw = np.empty((N, self.n_max, m))
        self.eff_J = np.empty((N, self.n_max, m))
        for i in range(N):
            g = substream(self.base_seed, self.run_index, i, STREAM_WIENER)
            z = g.standard_normal((self.n_max, m, 2))
            dw = np.sqrt(h) * z[..., 0]
            self.eff_dw[i] = dw
            self.eff_J[i] = 0.5 * h * dw + np.sqrt(h ** 3 / 12.0) * z[..., 1]

        # jump-adapted refinement: own splits first, then foreign ones
        self.splits: list[dict] = [dict() for _ in range(N)]
        by_particle: list[list] = [[] for _ in range(N)]
        for ev in self.events:
            by_particle[ev.particle].append(ev.time)
        for i in range(N):
            for tau in by_particle[i]:
                self._split(i, tau)
        if self.split_at_foreign:
            for ev in self.events:
                for i in range(N):
                    if i != ev.particle:
                        self._split(i, ev.time)

    # -- construction helpers -------------------------------------------------

    def _draw_events(self):
        lam = self.marks.total_intensity
        if lam == 0.0:
            return []
        probs = np.cumsum(self.marks.probabilities())
        times_by_particle = {}
        seen = {}
        for i in range(self.num_particles):
            attempt = 0
            while True:
                g = substream(self.base_seed, self.run_index, i, STREAM_JUMPS,
                              extra=(attempt,) if attempt else ())
                times = _draw_jump_times(g, lam, self.horizon)
                # positive waiting times make within-particle ties impossible;
                # cross-particle ties are probability zero and re-drawn
                if not any(t in seen for t in times):
                    marks_idx = np.minimum(
                        np.searchsorted(probs, g.random(len(times))),
                        len(probs) - 1)
                    break
                attempt += 1
            times_by_particle[i] = (times, marks_idx)
            for t in times:
                seen[t] = i
        events = []
        for i, (times, marks_idx) in times_by_particle.items():
            for t, j in zip(times, marks_idx):
                events.append(JumpEvent(float(t), i, int(j),
                                        float(self.marks.atoms[int(j)])))
        events.sort(key=lambda e: e.time)
        return events

    def _split(self, particle: int, tau: float):
        h = self.horizon / self.n_max
        cell = min(int(tau / h), self.n_max - 1)
        left, right = cell * h, (cell + 1) * h
        if tau <= left or tau >= right:
            # grid-point tie: the boundary is already a partition point
            if tau < left and cell > 0:
                return self._split_at(particle, cell - 1, tau)
            return
        self._split_at(particle, cell, tau)

    def _split_at(self, particle: int, cell: int, tau: float):
        h = self.horizon / self.n_max
        sp = self.splits[particle].get(cell)
        if sp is None:
            sp = _Splits(cell * h, (cell + 1) * h,
                         self.eff_dw[particle, cell].copy(),
                         self.eff_J[particle, cell].copy())
            self.splits[particle][cell] = sp
        g = substream(self.base_seed, self.run_index, particle, STREAM_BRIDGE,
                      extra=time_key(tau))
        if sp.insert(tau, g):
            dw_eff, J_eff = sp.effective()
            self.eff_dw[particle, cell] = dw_eff
            self.eff_J[particle, cell] = J_eff

    # -- queries ---------------------------------------------------------------

    def displacement(self, particle: int, start_cell: int, tau: float) -> np.ndarray:
        """w(tau) - w(start_cell * h) along one particle's partition; ``tau``
        must be a partition point of that particle (or a cell boundary)."""
        h = self.horizon / self.n_max
        cell = min(int(tau / h), self.n_max - 1)
        if tau <= cell * h:
            cell -= 1
        out = np.sum(self.eff_dw[particle, start_cell:cell], axis=0)
        sp = self.splits[particle].get(cell)
        if tau >= (cell + 1) * h:
            out = out + self.eff_dw[particle, cell]
        elif sp is not None:
            out = out + sp.prefix_before(tau)
        elif tau > cell * h:
            raise ValueError(
                f"time {tau} is not a partition point of particle {particle}")
        return out

    def coarsen(self, target_n: int, substeps: int = 32) -> "ResolutionView":
        key = (int(target_n), int(substeps))
        if key not in self._views:
            self._views[key] = ResolutionView(self, target_n, substeps)
        return self._views[key]

    def save(self, path):
        """Debug dump of the effective fine data (versioned container)."""
        ev = np.array([(e.time, e.particle, e.mark_index) for e in self.events],
                      dtype=float).reshape(-1, 3)
        np.savez_compressed(
            path, format_version=1, horizon=self.horizon, n_max=self.n_max,
            num_particles=self.num_particles, dim_brownian=self.dim_brownian,
            base_seed=self.base_seed, run_index=self.run_index,
            events=ev, eff_dw=self.eff_dw, eff_J=self.eff_J)


class ResolutionView:
    """One realization seen at a coarser uniform resolution.

    Coarse-step (dw, J) are left-to-right aggregates of the fine cells, so the
    same underlying randomness drives every resolution it is coarsened to.
    """

    def __init__(self, real: NoiseRealization, n: int, substeps: int = 32):
        if n < 1 or real.n_max % n != 0:
            raise ValueError(f"target resolution {n} must divide n_max={real.n_max}")
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        self.real = real
        self.n = int(n)
        self.substeps = int(substeps)
        self.factor = real.n_max // self.n
        self.dt = real.horizon / self.n
        N, m = real.num_particles, real.dim_brownian
        f, h_cell = self.factor, real.horizon / real.n_max

        dw_view = real.eff_dw.reshape(N, self.n, f, m)
        J_view = real.eff_J.reshape(N, self.n, f, m)
        prefix = np.zeros((N, self.n, m))
        J_step = np.zeros((N, self.n, m))
        for j in range(f):
            J_step += J_view[:, :, j] + prefix * h_cell
            prefix = prefix + dw_view[:, :, j]
        self.dw_step = prefix
        self.J_step = J_step

        grid = Grid(real.horizon, self.n)
        self.events_by_step: list[list[StepEvent]] = [[] for _ in range(self.n)]
        for ev in real.events:
            k = grid.step_index(ev.time)
            disp = real.displacement(ev.particle, k * f, ev.time)
            all_disp = None
            if real.split_at_foreign:
                all_disp = np.stack([real.displacement(i, k * f, ev.time)
                                     for i in range(N)])
            self.events_by_step[k].append(
                StepEvent(ev.time, ev.particle, ev.mark_index, ev.mark,
                          disp, all_disp))
        self._self_cache: dict = {}
        self._cross_cache: dict = {}

    def step_times(self, k: int):
        return k * self.dt, (k + 1) * self.dt

    # -- iterated integrals ----------------------------------------------------

    def _bucket_data(self, k: int):
        """Bucketed prefixes/increments over the step for Riemann sums.

        The partition is the canonical fine grid inside the step grouped into
        at most ``substeps`` buckets; jump splits stay interior to buckets.
        """
        f = self.factor
        M = min(self.substeps, f)
        while f % M:
            M -= 1
        size = f // M
        N, m = self.real.num_particles, self.real.dim_brownian
        cells = self.real.eff_dw[:, k * f:(k + 1) * f].reshape(N, M, size, m)
        inc = cells.sum(axis=2)                          # (N, M, m)
        pre = np.cumsum(inc, axis=1) - inc               # displacement at bucket start
        return pre, inc

    def iterated_self(self, k: int) -> np.ndarray:
        """(N, m, m) table, entry [i, l1, l] approximating
        int_step (w^{i,l1}_s - w^{i,l1}_{t_k}) dw^{i,l}_s; the diagonal uses
        the exact identity ((dw)^2 - h)/2, and I[l1,l] + I[l,l1] equals
        dw^{l1} dw^{l} - [l1==l] h exactly by construction."""
        if k in self._self_cache:
            return self._self_cache[k]
        N, m = self.real.num_particles, self.real.dim_brownian
        dw = self.dw_step[:, k]
        table = np.empty((N, m, m))
        diag = 0.5 * (dw ** 2 - self.dt)
        if m == 1:
            table[:, 0, 0] = diag[:, 0]
        else:
            pre, inc = self._bucket_data(k)
            riemann = np.einsum("nja,njb->nab", pre, inc)
            outer = dw[:, :, None] * dw[:, None, :]
            for l1 in range(m):
                table[:, l1, l1] = diag[:, l1]
                for l in range(l1 + 1, m):
                    table[:, l1, l] = riemann[:, l1, l]
                    table[:, l, l1] = outer[:, l1, l] - riemann[:, l1, l]
        self._self_cache[k] = table
        return table

    def iterated_cross(self, k: int) -> np.ndarray:
        """(N, N, m, m) table, entry [p, i, l1, l] approximating
        int_step (w^{p,l1}_s - w^{p,l1}_{t_k}) dw^{i,l}_s.  Self rows reuse
        :meth:`iterated_self`; the (p, i)/(i, p) pairing identity
        I[p,i,l1,l] + I[i,p,l,l1] = dw^{p,l1} dw^{i,l} holds exactly."""
        if k in self._cross_cache:
            return self._cross_cache[k]
        N, m = self.real.num_particles, self.real.dim_brownian
        pre, inc = self._bucket_data(k)
        table = np.einsum("pja,ijb->piab", pre, inc)
        dw = self.dw_step[:, k]
        outer = np.einsum("pa,ib->piab", dw, dw)
        iu, il = np.triu_indices(N, 1)
        table[il, iu] = np.swapaxes(outer[iu, il] - table[iu, il], -1, -2)
        idx = np.arange(N)
        table[idx, idx] = self.iterated_self(k)
        self._cross_cache[k] = table
        return table


def sample_realization(config: RunConfig, mark_measure: MarkMeasure,
                       n_max: int, run_index: int, dim_brownian: int = 1,
                       split_at_foreign_jumps: bool = False) -> NoiseRealization:
    """Draw the full-system noise for one Monte Carlo run.

    The realization is a pure function of ``(config.base_seed, run_index)``
    and per-particle substreams, so particle i's path does not depend on the
    number of particles or on scheduling order.
    """
    return NoiseRealization(
        horizon=config.grid.horizon, n_max=n_max,
        num_particles=config.particle_count, dim_brownian=dim_brownian,
        marks=mark_measure, base_seed=config.base_seed, run_index=run_index,
        split_at_foreign_jumps=split_at_foreign_jumps)


def iterated_integrals(real: NoiseRealization, target_n: int,
                       step_index: int, substeps: int = 32):
    """(self_table, cross_table) of double stochastic integrals over one
    coarse step; see :meth:`ResolutionView.iterated_self` /
    :meth:`ResolutionView.iterated_cross`."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    view = real.coarsen(target_n, substeps)
    return view.iterated_self(step_index), view.iterated_cross(step_index)
