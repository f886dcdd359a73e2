"""Simulator and verification harness for the multi-species stirring
process on d-dimensional periodic lattices."""

from .dynamics import (
    OccupationPath,
    ReplicaSpec,
    SimClock,
    geometric_grid,
    run_batch,
    run_replica,
    simulate,
)
from .lattice import Torus
from .state import ModelParams, sample_stationary

__all__ = [
    "ModelParams",
    "OccupationPath",
    "ReplicaSpec",
    "SimClock",
    "Torus",
    "geometric_grid",
    "run_batch",
    "run_replica",
    "sample_stationary",
    "simulate",
]

__version__ = "0.1.0"
