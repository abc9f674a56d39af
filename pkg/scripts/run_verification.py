#!/usr/bin/env python3
"""Moderate-scale property battery (identities, inequalities, determinism);
exit status 2 if any check fails."""

import sys

from mkv_milstein.cli import ExperimentConfig, run


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "./out_verify"
    config = ExperimentConfig.from_dict(dict(
        subcommand="verify",
        base_seed=0,
        out_dir=out,
    ))
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
