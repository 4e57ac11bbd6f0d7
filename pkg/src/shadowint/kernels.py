"""Squared-exponential kernel, its derivatives, and regularized Gram factorizations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

from .errors import ContractViolation, DomainError, FactorizationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelParams:
    """``k(x, y) = k_c exp(-|x - y|^2 / e^2)``."""

    k_c: float = 1.0
    e: float = 1.0

    def __post_init__(self):
        if not (self.k_c > 0 and self.e > 0):
            raise DomainError(f"kernel parameters must be positive, got k_c={self.k_c}, e={self.e}")


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise ContractViolation(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    return x, y


def rbf_eval(x, y, params: KernelParams):
    x, y = _pair(x, y)
    d = x - y
    return params.k_c * np.exp(-np.sum(d * d, axis=-1) / params.e**2)


def rbf_grad1(x, y, params: KernelParams):
    """Gradient of ``k(x, y)`` with respect to ``x``."""
    x, y = _pair(x, y)
    d = x - y
    k = params.k_c * np.exp(-np.sum(d * d, axis=-1) / params.e**2)
    return (-2.0 / params.e**2) * d * k[..., None]


def rbf_hess1(x, y, params: KernelParams):
    """Hessian of ``k(x, y)`` with respect to ``x``."""
    x, y = _pair(x, y)
    d = x - y
    e2 = params.e**2
    k = params.k_c * np.exp(-np.sum(d * d, axis=-1) / e2)
    eye = np.eye(d.shape[-1])
    outer = d[..., :, None] * d[..., None, :]
    return ((4.0 / e2**2) * outer - (2.0 / e2) * eye) * k[..., None, None]


def cross_matrix(X, Z, params: KernelParams) -> np.ndarray:
    """Matrix ``k(X, Z)`` of shape ``(len(X), len(Z))``."""
    X, Z = _pair(np.atleast_2d(X), np.atleast_2d(Z))
    D = X[:, None, :] - Z[None, :, :]
    return params.k_c * np.exp(-np.sum(D * D, axis=-1) / params.e**2)


def cross_grad1(X, Z, params: KernelParams) -> np.ndarray:
    """``grad_1 k(x_i, z_j)`` stacked to shape ``(len(X), len(Z), d)``."""
    X, Z = _pair(np.atleast_2d(X), np.atleast_2d(Z))
    D = X[:, None, :] - Z[None, :, :]
    K = params.k_c * np.exp(-np.sum(D * D, axis=-1) / params.e**2)
    return (-2.0 / params.e**2) * D * K[..., None]


def gram_matrix(Z, params: KernelParams) -> np.ndarray:
    """Symmetric ``k(Z, Z)`` built from exact pairwise differences."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 0:
        raise DomainError("gram matrix of an empty node set")
    D = Z[:, None, :] - Z[None, :, :]
    K = params.k_c * np.exp(-np.sum(D * D, axis=-1) / params.e**2)
    # d_ij = -d_ji exactly, so K should already be bit-symmetric; mirror the upper triangle to guarantee it
    return np.triu(K) + np.triu(K, 1).T


@dataclass(frozen=True, eq=False)
class RegularizedGram:
    """Upper Cholesky factor of ``k(Z, Z) + sigma I``."""

    nodes: np.ndarray
    params: KernelParams
    sigma: float
    factor: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def matrix(self) -> np.ndarray:
        return gram_matrix(self.nodes, self.params) + self.sigma * np.eye(self.size)

    def solve(self, b) -> np.ndarray:
        """``(k(Z,Z) + sigma I)^{-1} b`` for a vector or a matrix of right-hand sides."""
        return cho_solve((self.factor, False), np.asarray(b, dtype=float), check_finite=False)


def factorize_regularized(Z, params: KernelParams, sigma: float) -> RegularizedGram:
    if sigma < 0:
        raise DomainError(f"sigma must be nonnegative, got {sigma}")
    Z = np.array(np.atleast_2d(Z), dtype=float)
    A = gram_matrix(Z, params) + sigma * np.eye(Z.shape[0])
    c, info = dpotrf(A, lower=False, clean=True, overwrite_a=False)
    if info > 0:
        raise FactorizationError(
            f"k(Z,Z) + {sigma:g} I is not positive definite (leading minor {info})", pivot=int(info)
        )
    if info < 0:
        raise ContractViolation(f"dpotrf argument {-info} invalid")
    Z.setflags(write=False)
    c.setflags(write=False)
    return RegularizedGram(nodes=Z, params=params, sigma=float(sigma), factor=c)


def factorize_with_retry(Z, params: KernelParams, sigma: float, max_sigma: float = 1e-7) -> RegularizedGram:
    """Factorize, escalating ``sigma`` by 100x up to ``max_sigma`` on failure."""
    s = sigma
    while True:
        try:
            return factorize_regularized(Z, params, s)
        except FactorizationError as err:
            nxt = max(s * 100.0, 1e-16)
            if nxt > max_sigma * (1 + 1e-12):
                raise
            log.warning("Cholesky failed at sigma=%g (pivot %d); retrying with %g", s, err.pivot, nxt)
            s = nxt
