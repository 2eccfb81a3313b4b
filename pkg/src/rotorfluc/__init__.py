"""Quantum and classical simulation of laser-induced rotor alignment and its fluctuations."""

from .basis import BasisBlock, RotorLevel, cos2_operator, cos4_operator, legendre_matrix_element
from .config import RunConfig, load_config, parse_config
from .pulse import MoleculeSpec, PulseSpec

__all__ = [
    "BasisBlock",
    "MoleculeSpec",
    "PulseSpec",
    "RotorLevel",
    "RunConfig",
    "cos2_operator",
    "cos4_operator",
    "legendre_matrix_element",
    "load_config",
    "parse_config",
]
