#!/usr/bin/env python3
"""Empirical assumption probes for the super-linear model across step counts;
emits probe.csv (assumption, n, max_ratio, argmax_x) plus a trend summary."""

import sys

from mkv_milstein.cli import ExperimentConfig, run


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "./out_probe"
    config = ExperimentConfig.from_dict(dict(
        subcommand="probe",
        model="cubic_mean_field",
        taming="on",
        probe_resolutions=[4, 16, 64, 256, 1024, 4096],
        probe_samples=400,
        base_seed=7,
        out_dir=out,
    ))
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
