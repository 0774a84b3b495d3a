"""Stochastic coupled quasigeostrophic ocean / energy-balance atmosphere model."""

__version__ = "0.1.0"

from .grid import Grid, ScalarField, make_grid
from .model import ForcingProfiles, Model, PhysParams, State
from .noise import CovarianceSpec, NoisePath, sample_path, wiener_shift

__all__ = [
    "Grid",
    "ScalarField",
    "make_grid",
    "ForcingProfiles",
    "Model",
    "PhysParams",
    "State",
    "CovarianceSpec",
    "NoisePath",
    "sample_path",
    "wiener_shift",
]
