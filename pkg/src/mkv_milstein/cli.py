"""Configuration-driven entry point.

Subcommands: ``simulate`` (trajectories), ``rate`` (strong-error study),
``poc`` (propagation-of-chaos study), ``verify`` (property battery) and
``probe`` (assumption probes).  Configs are JSON; every run writes a manifest
that embeds the fully resolved config and suffices to reproduce the outputs
byte for byte.  CSV files start with the schema comment line
``# mkv-milstein schema v1``.

Exit codes: 0 success, 1 usage/config error, 2 experiment-level failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .analysis import (ExperimentError, pth_power_inequality_check,
                       poc_experiment, rate_experiment)
from .core import Grid, RunConfig
from .measure import measure_taylor_check
from .models import model_from_name, moment_ode_solution
from .noise import sample_realization
from .schemes import needs_foreign_splits, simulate
from .taming import ProbeSample, make_tamed, probe_assumptions

SCHEMA_LINE = "# mkv-milstein schema v1"
OUT_DIR_ENV = "MKV_MILSTEIN_OUT"

SUBCOMMANDS = ("simulate", "rate", "poc", "verify", "probe")


class UsageError(ValueError):
    """Bad config or command line; maps to exit code 1."""


@dataclass
class ExperimentConfig:
    """Fully resolved description of one experiment run."""

    subcommand: str
    model: str = "mean_field_ou_jump"
    model_params: dict = field(default_factory=dict)
    scheme: str = "milstein"            # euler | milstein | both (rate only)
    taming: str = "auto"                # on | off | auto (on iff super-linear)
    horizon: float = 1.0
    particle_count: int = 100
    runs: int = 50
    base_seed: int = 0
    threads: int = 1
    resolution: int = 64
    resolutions: list = field(default_factory=lambda: [8, 16, 32, 64])
    n_ref: int = 1024
    poc_sizes: list = field(default_factory=lambda: [50, 100, 200, 400])
    poc_ref: int = 1600
    substeps: int = 32
    rate_epsilon: float = 0.5
    record: str = "final"               # final | path (simulate)
    probe_resolutions: list = field(default_factory=lambda: [4, 64, 1024])
    probe_samples: int = 200
    out_dir: str = "."

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        if self.scheme not in ("euler", "milstein", "both"):
            raise UsageError(f"unknown scheme {self.scheme!r}")
        if self.taming not in ("on", "off", "auto"):
            raise UsageError(f"taming must be on/off/auto, not {self.taming!r}")
        if self.record not in ("final", "path"):
            raise UsageError(f"record must be final/path, not {self.record!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "subcommand" not in data:
            raise UsageError("missing config key: subcommand")
        try:
            return cls(**data)
        except TypeError as exc:
            raise UsageError(str(exc))

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    # a manifest is itself a valid config carrier
    if "config" in data and "schema" in data:
        data = data["config"]
    return data


def _parse_override(text: str):
    if "=" not in text:
        raise UsageError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(data: dict, overrides) -> dict:
    out = dict(data)
    for text in overrides or ():
        key, value = _parse_override(text)
        if key.startswith("model_params."):
            params = dict(out.get("model_params", {}))
            params[key.split(".", 1)[1]] = value
            out["model_params"] = params
        else:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, header, rows) -> None:
    lines = [SCHEMA_LINE, ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_manifest(cfg: ExperimentConfig, path: str) -> None:
    manifest = {
        "schema": "mkv-milstein manifest v1",
        "code_version": __version__,
        "seed": cfg.base_seed,
        "config": cfg.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_taming(cfg: ExperimentConfig, model) -> bool:
    if cfg.taming == "auto":
        return model.growth_eta > 0
    return cfg.taming == "on"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _run_rate(cfg: ExperimentConfig, out_dir: str, summary: list) -> int:
    model = model_from_name(cfg.model, **cfg.model_params)
    taming = _resolve_taming(cfg, model)
    schemes = ["milstein", "euler"] if cfg.scheme == "both" else [cfg.scheme]
    exp = rate_experiment(model, schemes, cfg.resolutions, cfg.n_ref,
                          cfg.particle_count, cfg.runs, cfg.base_seed,
                          horizon=cfg.horizon, taming_enabled=taming,
                          substeps=cfg.substeps, threads=cfg.threads)
    for scheme in schemes:
        running = exp.running_rms_rate(scheme)
        rows = [(n, exp.mse[scheme][j], exp.ci_lo[scheme][j],
                 exp.ci_hi[scheme][j], running[j])
                for j, n in enumerate(exp.resolutions)]
        write_csv(os.path.join(out_dir, f"rate_{scheme}.csv"),
                  ("n", "mse", "ci_lo", "ci_hi", "rms_rate_running"), rows)
        rate, se = exp.rms_rate[scheme]
        summary.append(f"{scheme}: fitted RMS rate {rate:.4f} +/- {se:.4f} "
                       f"over n={exp.resolutions}, reference n={cfg.n_ref}")
        summary.append(f"{scheme}: blow-up exclusions {exp.excluded[scheme]:.3%}")
    summary.append("reference solution: fine same-scheme surrogate on coupled "
                   "noise (exact solution unavailable); its bias is second "
                   "order relative to the measured errors")
    return 0


def _run_poc(cfg: ExperimentConfig, out_dir: str, summary: list) -> int:
    model = model_from_name(cfg.model, **cfg.model_params)
    taming = _resolve_taming(cfg, model)
    scheme = "milstein" if cfg.scheme == "both" else cfg.scheme
    exp = poc_experiment(model, scheme, cfg.poc_sizes, cfg.poc_ref,
                         cfg.resolution, cfg.runs, cfg.base_seed,
                         horizon=cfg.horizon, taming_enabled=taming,
                         substeps=cfg.substeps, threads=cfg.threads)
    rows = [(N, exp.discrepancy[j], exp.ci_lo[j], exp.ci_hi[j])
            for j, N in enumerate(exp.sizes)]
    write_csv(os.path.join(out_dir, "poc.csv"),
              ("N", "discrepancy", "ci_lo", "ci_hi"), rows)
    summary.append(f"{scheme}: coupling discrepancy vs N_ref={exp.size_ref} "
                   f"fitted N-slope {exp.slope:.3f} +/- {exp.slope_stderr:.3f}")
    summary.append("informational: the asymptotic constant of the chaos "
                   "propagation bound is not reproducible at desk scale; the "
                   "slope is reported, only the decreasing trend is asserted")
    return 0


def _run_simulate(cfg: ExperimentConfig, out_dir: str, summary: list) -> int:
    model = model_from_name(cfg.model, **cfg.model_params)
    taming = _resolve_taming(cfg, model)
    scheme = "milstein" if cfg.scheme == "both" else cfg.scheme
    run_cfg = RunConfig(grid=Grid(cfg.horizon, cfg.resolution),
                        particle_count=cfg.particle_count,
                        monte_carlo_runs=cfg.runs, base_seed=cfg.base_seed,
                        scheme=scheme)
    rows = []
    flagged = 0
    for run in range(cfg.runs):
        real = sample_realization(
            run_cfg, model.marks, n_max=cfg.resolution, run_index=run,
            dim_brownian=model.dim_brownian,
            split_at_foreign_jumps=needs_foreign_splits(model, taming))
        traj = simulate(model, run_cfg, cfg.resolution, real, scheme=scheme,
                        taming_enabled=taming,
                        record_path=(cfg.record == "path"),
                        collect_diagnostics=True)
        flagged += int(traj.flagged.sum())
        if cfg.record == "path":
            for k, t in enumerate(traj.times):
                for i in range(cfg.particle_count):
                    for comp in range(model.dim_state):
                        rows.append((t, run, i, comp, traj.states[k, i, comp]))
        else:
            for i in range(cfg.particle_count):
                for comp in range(model.dim_state):
                    rows.append((traj.times[-1], run, i, comp,
                                 traj.final[i, comp]))
    write_csv(os.path.join(out_dir, "trajectory.csv"),
              ("t", "run", "particle", "component", "value"), rows)
    total = cfg.runs * cfg.particle_count
    summary.append(f"{scheme}: {cfg.runs} runs x {cfg.particle_count} particles "
                   f"at n={cfg.resolution}; flagged paths {flagged}/{total}")
    return 0


def _run_probe(cfg: ExperimentConfig, out_dir: str, summary: list) -> int:
    model = model_from_name(cfg.model, **cfg.model_params)
    rows = []
    spec = ProbeSample(count=cfg.probe_samples, seed=cfg.base_seed,
                       rate_epsilon=cfg.rate_epsilon)
    trend: dict = {}
    for n in cfg.probe_resolutions:
        tamed = make_tamed(model, n, enabled=_resolve_taming(cfg, model))
        report = probe_assumptions(model, tamed, spec)
        for row in report.rows:
            rows.append((row.assumption, row.n, row.max_ratio, row.argmax_state))
            trend.setdefault(row.assumption, []).append(row.max_ratio)
    write_csv(os.path.join(out_dir, "probe.csv"),
              ("assumption", "n", "max_ratio", "argmax_x"), rows)
    for name, ratios in trend.items():
        growing = len(ratios) > 1 and ratios[-1] > 2.0 * ratios[0]
        status = "growing (flag)" if growing else "bounded"
        summary.append(f"probe {name}: max ratios {['%.3g' % r for r in ratios]} "
                       f"across n={cfg.probe_resolutions} -> {status}")
    return 0


def _run_verify(cfg: ExperimentConfig, out_dir: str, summary: list) -> int:
    """Moderate-scale property battery; nonzero exit if anything fails."""
    checks = []

    def check(name, passed, detail=""):
        checks.append((name, bool(passed), detail))

    # measure-derivative expansion identity
    rng = np.random.default_rng(cfg.base_seed)
    res = 0.0
    for _ in range(20):
        X = rng.standard_normal((5, 1))
        Y = rng.standard_normal((5, 1))
        res = max(res, measure_taylor_check(
            lambda z, mu: float(mu.mean()[0]) ** 2,
            lambda z, mu, y: np.array([2.0 * float(mu.mean()[0])]),
            np.zeros(1), X, Y, order=4))
    check("measure_taylor_quadratic", res < 1e-10, f"max residual {res:.2e}")

    # remainder inequality
    worst = pth_power_inequality_check(20_000, seed=cfg.base_seed)
    check("pth_power_inequality", worst <= 1e-10, f"max violation {worst:.2e}")

    # noise coupling at small scale
    model = model_from_name("mean_field_ou_jump")
    run_cfg = RunConfig(grid=Grid(1.0, 64), particle_count=16,
                        monte_carlo_runs=1, base_seed=cfg.base_seed)
    real = sample_realization(run_cfg, model.marks, n_max=64, run_index=0)
    view8 = real.coarsen(8)
    agg = np.zeros_like(view8.dw_step[:, 0])
    for j in range(8):
        agg = agg + real.eff_dw[:, j]
    check("noise_coarse_sum", np.array_equal(view8.dw_step[:, 0], agg),
          "left-to-right aggregation")
    t1 = simulate(model, run_cfg, 8, real, scheme="milstein", taming_enabled=False)
    t2 = simulate(model, run_cfg, 8, real, scheme="milstein", taming_enabled=False)
    check("simulate_deterministic", np.array_equal(t1.final, t2.final))

    # moment oracle at small scale (3 standard errors)
    mn, q = moment_ode_solution(model, model.x0_mean,
                                model.x0_mean ** 2 + model.x0_std ** 2, 1.0)
    finals = []
    for run in range(8):
        real = sample_realization(run_cfg, model.marks, n_max=256, run_index=run)
        traj = simulate(model, run_cfg, 256, real, scheme="milstein",
                        taming_enabled=False)
        finals.append(traj.final[:, 0].mean())
    se = np.std(finals, ddof=1) / np.sqrt(len(finals))
    check("moment_oracle_mean", abs(np.mean(finals) - mn) < 3 * se + 5e-3,
          f"sim {np.mean(finals):.4f} vs ode {mn:.4f}")

    rows = [(name, int(ok), detail) for name, ok, detail in checks]
    write_csv(os.path.join(out_dir, "verify.csv"),
              ("check", "passed", "detail"), rows)
    failed = [name for name, ok, _ in checks if not ok]
    for name, ok, detail in checks:
        summary.append(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    return 2 if failed else 0


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run(config: ExperimentConfig) -> int:
    """Execute one experiment: manifest + CSV artifacts + summary text."""
    out_dir = config.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(config, os.path.join(out_dir, "manifest.json"))
    summary: list[str] = [f"mkv-milstein {config.subcommand} "
                          f"(model={config.model}, seed={config.base_seed})"]
    dispatch = {
        "rate": _run_rate,
        "poc": _run_poc,
        "simulate": _run_simulate,
        "probe": _run_probe,
        "verify": _run_verify,
    }
    try:
        status = dispatch[config.subcommand](config, out_dir, summary)
    except ExperimentError as exc:
        summary.append(f"EXPERIMENT FAILED: {exc}")
        status = 2
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary) + "\n")
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mkv-milstein",
        description="Mean-field jump-diffusion particle simulations and "
                    "strong-convergence studies.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON config (or manifest) path")
    parser.add_argument("--seed", type=int, help="override base seed")
    parser.add_argument("--threads", type=int, help="worker thread count")
    parser.add_argument("--out", help="output directory "
                        f"(default: ${OUT_DIR_ENV} or '.')")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        dest="overrides", help="override any config key; "
                        "model parameters as model_params.<name>=<value>")
    args = parser.parse_args(argv)

    try:
        data = load_config(args.config) if args.config else {}
        data.setdefault("subcommand", args.subcommand)
        if data["subcommand"] != args.subcommand:
            data["subcommand"] = args.subcommand
        data = apply_overrides(data, args.overrides)
        if args.seed is not None:
            data["base_seed"] = args.seed
        if args.threads is not None:
            data["threads"] = args.threads
        if args.out is not None:
            data["out_dir"] = args.out
        elif "out_dir" not in data:
            data["out_dir"] = os.environ.get(OUT_DIR_ENV, ".")
        config = ExperimentConfig.from_dict(data)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return run(config)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
