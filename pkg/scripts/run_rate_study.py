#!/usr/bin/env python3
"""Strong-convergence rate study at the acceptance scale.

Both schemes run on the same coupled noise against a fine same-scheme
reference; CSVs and a summary land in the output directory (first argument,
default ./out_rate).
"""

import sys

from mkv_milstein.cli import ExperimentConfig, run


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "./out_rate"
    config = ExperimentConfig.from_dict(dict(
        subcommand="rate",
        model="mean_field_ou_jump",
        scheme="both",
        taming="off",
        particle_count=500,
        runs=100,
        resolutions=[8, 16, 32, 64, 128, 256],
        n_ref=4096,
        base_seed=20240601,
        out_dir=out,
    ))
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
