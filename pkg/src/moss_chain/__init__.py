"""MOSS spectrum-sharing contract on a simulated permissioned PBFT chain."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .scenario import load_scenario, run_scenario, verify_chain

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "load_scenario", "run_scenario", "verify_chain", "__version__"]
