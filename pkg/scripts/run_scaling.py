"""Per-point latency versus training-set size, graph index and linear scan.

Thin wrapper over the ``scaling`` subcommand with the baseline enabled.
"""

import sys

from fastmuygps.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:] or ["--n-list", "100000,200000", "--k", "50"]
    sys.exit(main(["scaling", "--baseline", *argv]))
