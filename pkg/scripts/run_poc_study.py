#!/usr/bin/env python3
"""Propagation-of-chaos trend study: coupling discrepancy between systems of
increasing size and a large reference system sharing per-particle noise."""

import sys

from mkv_milstein.cli import ExperimentConfig, run


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "./out_poc"
    config = ExperimentConfig.from_dict(dict(
        subcommand="poc",
        model="mean_field_ou_jump",
        scheme="milstein",
        taming="off",
        poc_sizes=[50, 100, 200, 400],
        poc_ref=3200,
        resolution=64,
        runs=120,
        base_seed=101,
        out_dir=out,
    ))
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
