"""MSE against condition number for CAMP, AMP and OAMP/VAMP.

Usage: python3 scripts/mse_vs_kappa.py [extra bocamp flags]
"""
import sys
from pathlib import Path

from bocamp.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "mse_vs_kappa.json"
COMMAND = "sweep"

if __name__ == "__main__":
    sys.exit(main([COMMAND, "--config", str(CONFIG), *sys.argv[1:]]))
