"""Simulation of analog matrix-computing circuits built from resistive crosspoint arrays and op-amps."""
from .circuits import TOPOLOGIES, CircuitSystem, OAParams, TIAConfig
from .device import ConductanceMatrix, DeviceConfig, map_matrix, program_with_verify, quantize
from .matrix import SplitPair, eigenvalues, split_canonical

__version__ = "0.1.0"

__all__ = [
    "TOPOLOGIES",
    "CircuitSystem",
    "OAParams",
    "TIAConfig",
    "ConductanceMatrix",
    "DeviceConfig",
    "map_matrix",
    "program_with_verify",
    "quantize",
    "SplitPair",
    "eigenvalues",
    "split_canonical",
]
