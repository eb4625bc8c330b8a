"""Mott-memristor artificial neuron circuit simulation.

Physics-first simulator for VO2/NbO2 threshold-switch neuron circuits:
device compact model and transition energetics (device), circuit ODE
assembly (circuit), stimulus protocol grammar (stimulus), adaptive
integration (solver), spike-train and energy analysis (analysis), and the
built-in behavior catalog with CLI (catalog, runner, cli).
"""

from .backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
