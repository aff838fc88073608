"""Variational crack detection for digitized paintings.

An observed image is decomposed into a crack-free background and a crack
indicator field by minimizing a data term, Ambrosio-Tortorelli regularity
terms and a crack-prior consistency term with Adam.
"""

from .detect import DetectConfig, detect, detect_patch
from .energy import EnergyParams, energy_and_gradients, total_energy
from .optimizer import AdamConfig, adam_step, solve

__all__ = [
    "AdamConfig",
    "DetectConfig",
    "EnergyParams",
    "adam_step",
    "detect",
    "detect_patch",
    "energy_and_gradients",
    "solve",
    "total_energy",
]
