"""Symplectic shadow integration: learn the inverse modified Hamiltonian of a
symplectic integrator from flow data, integrate it, and recover the exact
Hamiltonian by backward error analysis."""

from .errors import (
    ContractViolation,
    ConvergenceError,
    DomainError,
    FactorizationError,
    ParseError,
    UnsupportedOrder,
)
from .gp_model import FlowDataset, GpHamiltonianModel, IntegratorTag, Normalization, as_field, train
from .integrators import ImplicitSolveOptions, Method, TrajectoryRecord, integrate
from .kernels import KernelParams
from .phase_systems import HamiltonianField, HarmonicOscillator, HenonHeilesSystem, PendulumSystem, PhaseState

__version__ = "0.1.0"

__all__ = [
    "ContractViolation", "ConvergenceError", "DomainError", "FactorizationError", "ParseError", "UnsupportedOrder",
    "FlowDataset", "GpHamiltonianModel", "IntegratorTag", "Normalization", "as_field", "train",
    "ImplicitSolveOptions", "Method", "TrajectoryRecord", "integrate",
    "KernelParams",
    "HamiltonianField", "HarmonicOscillator", "HenonHeilesSystem", "PendulumSystem", "PhaseState",
]
