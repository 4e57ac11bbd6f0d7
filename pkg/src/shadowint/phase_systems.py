"""Phase-space conventions, the Hamiltonian field interface and the benchmark systems.

States are flat arrays ``z = (q, p)`` of length ``2n``. Gradients use the same
ordering (q block first), and Hessians are ``2n x 2n`` with blocks

    [[H_qq, H_qp],
     [H_pq, H_pp]]

where ``H_qp[i, j] = d^2 H / dq_i dp_j``.

All field methods broadcast over leading axes, so a stack of states of shape
``(..., 2n)`` yields values ``(...)``, gradients ``(..., 2n)`` and Hessians
``(..., 2n, 2n)``.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DomainError


def symplectic_matrix(n: int) -> np.ndarray:
    """Canonical structure matrix ``J = [[0, -I], [I, 0]]`` of size ``2n``."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, -eye], [eye, zero]])


@dataclass(frozen=True, eq=False)
class PhaseState:
    """A single point ``(q, p)`` of phase space."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float)).copy()
        p = np.atleast_1d(np.asarray(self.p, dtype=float)).copy()
        if q.ndim != 1 or q.shape != p.shape or q.size < 1:
            raise ContractViolation(f"q and p must be equal-length vectors, got {q.shape} and {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise DomainError("phase state entries must be finite")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def __eq__(self, other):
        if not isinstance(other, PhaseState):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.p, other.p)

    __hash__ = None

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        if z.ndim != 1 or z.size % 2:
            raise ContractViolation(f"phase vector must have even length, got shape {z.shape}")
        n = z.size // 2
        return cls(z[:n], z[n:])


def as_phase_array(z, n: int | None = None) -> np.ndarray:
    """Coerce ``z`` (array or PhaseState) to a float array, checking the last axis is ``2n``."""
    if isinstance(z, PhaseState):
        z = z.z
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or z.shape[-1] % 2:
        raise ContractViolation(f"phase array needs an even trailing axis, got shape {z.shape}")
    if n is not None and z.shape[-1] != 2 * n:
        raise ContractViolation(f"expected phase dimension {2 * n}, got {z.shape[-1]}")
    return z


class HamiltonianField(ABC):
    """Scalar Hamiltonian with gradient and Hessian on ``R^{2n}``."""

    n: int
    separable: bool = False

    @abstractmethod
    def value(self, z): ...

    @abstractmethod
    def gradient(self, z): ...

    @abstractmethod
    def hessian(self, z): ...

    def jet(self, z):
        """``(value, gradient, hessian)`` at ``z``; subclasses may share work between them."""
        return self.value(z), self.gradient(z), self.hessian(z)

    def __call__(self, z):
        return self.value(z)


class SeparableField(HamiltonianField):
    """``H(q, p) = |p|^2 / 2 + V(q)`` with unit mass matrix.

    Subclasses provide the potential and its first two derivatives; everything
    else follows.
    """

    separable = True

    @abstractmethod
    def potential(self, q): ...

    @abstractmethod
    def potential_grad(self, q): ...

    @abstractmethod
    def potential_hess(self, q): ...

    def value(self, z):
        z = as_phase_array(z, self.n)
        q, p = z[..., : self.n], z[..., self.n :]
        return 0.5 * np.sum(p * p, axis=-1) + self.potential(q)

    def gradient(self, z):
        z = as_phase_array(z, self.n)
        q, p = z[..., : self.n], z[..., self.n :]
        return np.concatenate([self.potential_grad(q), p], axis=-1)

    def hessian(self, z):
        z = as_phase_array(z, self.n)
        n = self.n
        out = np.zeros(z.shape[:-1] + (2 * n, 2 * n))
        out[..., :n, :n] = self.potential_hess(z[..., :n])
        out[..., n:, n:] = np.eye(n)
        return out


class HarmonicOscillator(SeparableField):
    """``H = (|q|^2 + |p|^2) / 2``."""

    def __init__(self, n: int = 1):
        self.n = n

    def potential(self, q):
        return 0.5 * np.sum(q * q, axis=-1)

    def potential_grad(self, q):
        return np.array(q, dtype=float)

    def potential_hess(self, q):
        q = np.asarray(q)
        return np.broadcast_to(np.eye(self.n), q.shape[:-1] + (self.n, self.n)).copy()

    def __repr__(self):
        return f"HarmonicOscillator(n={self.n})"


class PendulumSystem(SeparableField):
    """Mathematical pendulum, ``H = p^2/2 + 1 - cos q``."""

    n = 1

    def potential(self, q):
        return 1.0 - np.cos(q[..., 0])

    def potential_grad(self, q):
        return np.sin(q)

    def potential_hess(self, q):
        return np.cos(q)[..., None]

    def __repr__(self):
        return "PendulumSystem()"


class HenonHeilesSystem(SeparableField):
    """Henon-Heiles with coupling ``mu``:
    ``V(q) = |q|^2/2 + mu (q1^2 q2 - q2^3/3)``.
    """

    n = 2

    def __init__(self, mu: float = 0.8):
        self.mu = float(mu)

    def potential(self, q):
        q1, q2 = q[..., 0], q[..., 1]
        return 0.5 * (q1 * q1 + q2 * q2) + self.mu * (q1 * q1 * q2 - q2**3 / 3.0)

    def potential_grad(self, q):
        q1, q2 = q[..., 0], q[..., 1]
        g1 = q1 + 2.0 * self.mu * q1 * q2
        g2 = q2 + self.mu * (q1 * q1 - q2 * q2)
        return np.stack([g1, g2], axis=-1)

    def potential_hess(self, q):
        q1, q2 = q[..., 0], q[..., 1]
        h11 = 1.0 + 2.0 * self.mu * q2
        h12 = 2.0 * self.mu * q1
        h22 = 1.0 - 2.0 * self.mu * q2
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    @property
    def critical_energy(self) -> float:
        return henon_heiles_critical_energy(self.mu)

    def __repr__(self):
        return f"HenonHeilesSystem(mu={self.mu})"


def hamiltonian_vector_field(field: HamiltonianField, z) -> np.ndarray:
    """Velocity ``J^{-1} grad H(z) = (H_p, -H_q)``."""
    z = as_phase_array(z, field.n)
    g = field.gradient(z)
    n = field.n
    return np.concatenate([g[..., n:], -g[..., :n]], axis=-1)


def henon_heiles_critical_energy(mu: float) -> float:
    """Upper end ``1 / (6 mu^2)`` of the energy interval with bounded level-set components."""
    if mu == 0:
        raise DomainError("critical energy is undefined for mu = 0")
    return 1.0 / (6.0 * mu * mu)
