#!/usr/bin/env python3
"""
Online Quantile Regression CLI.

This script provides a command-line interface for streaming quantile estimation:
1. fit: stream CSV or JSONL records into a learner and checkpoint it
2. predict: evaluate a checkpointed learner at query points
3. simulate: run synthetic convergence-rate experiments
4. inspect: print checkpoint metadata

Run with --help on any subcommand for its flags.
"""

import sys
from pathlib import Path

# Add parent directory to Python path for package imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from online_quantile.cli import main


if __name__ == "__main__":
    sys.exit(main())
