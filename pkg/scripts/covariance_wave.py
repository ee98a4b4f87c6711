"""Covariance wave d[t', t] for theta = 0 and theta = -0.7.

Usage: python3 scripts/covariance_wave.py [extra bocamp flags]
"""
import sys
from pathlib import Path

from bocamp.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "covariance_wave.json"
COMMAND = "se"

if __name__ == "__main__":
    sys.exit(main([COMMAND, "--config", str(CONFIG), *sys.argv[1:]]))
