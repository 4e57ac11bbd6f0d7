"""Truncated modified and inverse modified Hamiltonians.

For a one-step method ``Psi_h`` the modified Hamiltonian ``Ht`` has an exact
time-``h`` flow equal to ``Psi_h`` applied to ``H``; the inverse modified
Hamiltonian ``Hb`` is the one whose ``Psi_h`` equals the exact flow of ``H``.
Both are power series in ``h`` and only their first terms are implemented.

Block convention on the flat ``2n x 2n`` Hessian in ``(q, p)`` ordering:
``H_qq = hess[:n, :n]``, ``H_pp = hess[n:, n:]`` and ``H_qp = hess[:n, n:]``
(rows indexed by ``q``).

Symplectic Euler here is the variant ``qbar = q + h H_p(qbar, p)``,
``pbar = p - h H_q(qbar, p)``. Its series are

    Ht = H + h/2 H_q.H_p + h^2/12 (H_q.H_pp.H_q + H_p.H_qq.H_p + 4 H_p.H_qp.H_q) + O(h^3)
    Hb = H - h/2 H_q.H_p + h^2/6  (H_q.H_pp.H_q + H_p.H_qq.H_p +   H_p.H_qp.H_q) + O(h^3)

and for the implicit midpoint rule, with ``f = J^{-1} grad H``,

    Ht = H - h^2/24 f.Hess(H).f + O(h^4),    Hb = H + h^2/24 f.Hess(H).f + O(h^4).
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation, DomainError, UnsupportedOrder
from .gp_model import GpHamiltonianModel, IntegratorTag, as_field
from .phase_systems import HamiltonianField, as_phase_array
from .sampling_io import MeshSpec, uniform_mesh

SE_ORDERS = (0, 1, 2)
MP_ORDERS = (0, 1, 2, 3)


def _order(order, allowed):
    if isinstance(order, bool) or int(order) != order or int(order) not in allowed:
        raise UnsupportedOrder(f"truncation order {order!r} not available; supported: {allowed}")
    return int(order)


def _blocks(grad, hess, n):
    return grad[..., :n], grad[..., n:], hess[..., :n, :n], hess[..., n:, n:], hess[..., :n, n:]


def _quad(a, M, b):
    return np.einsum("...i,...ij,...j->...", a, M, b)


def _se_terms(field, z):
    z = as_phase_array(z, field.n)
    value, grad, hess = field.jet(z)
    Hq, Hp, Hqq, Hpp, Hqp = _blocks(grad, hess, field.n)
    first = np.einsum("...i,...i->...", Hq, Hp)
    A = _quad(Hq, Hpp, Hq)
    B = _quad(Hp, Hqq, Hp)
    C = _quad(Hp, Hqp, Hq)
    return value, first, A, B, C


def _mp_term(field, z):
    z = as_phase_array(z, field.n)
    value, grad, hess = field.jet(z)
    n = field.n
    f = np.concatenate([grad[..., n:], -grad[..., :n]], axis=-1)
    return value, _quad(f, hess, f)


def modified_h_se(field: HamiltonianField, z, h: float, order: int = 2):
    """Modified Hamiltonian of symplectic Euler truncated after ``h**order``."""
    order = _order(order, SE_ORDERS)
    if order == 0:
        return field.value(as_phase_array(z, field.n))
    value, first, A, B, C = _se_terms(field, z)
    out = value + 0.5 * h * first
    if order == 2:
        out = out + h * h / 12.0 * (A + B + 4.0 * C)
    return out


def inverse_modified_h_se(field: HamiltonianField, z, h: float, order: int = 2):
    """Inverse modified Hamiltonian of symplectic Euler truncated after ``h**order``."""
    order = _order(order, SE_ORDERS)
    if order == 0:
        return field.value(as_phase_array(z, field.n))
    value, first, A, B, C = _se_terms(field, z)
    out = value - 0.5 * h * first
    if order == 2:
        out = out + h * h / 6.0 * (A + B + C)
    return out


def modified_h_mp(field: HamiltonianField, z, h: float, order: int = 2):
    """Modified Hamiltonian of the implicit midpoint rule; the series is even in ``h``."""
    order = _order(order, MP_ORDERS)
    if order < 2:
        return field.value(as_phase_array(z, field.n))
    value, corr = _mp_term(field, z)
    return value - h * h / 24.0 * corr


def inverse_modified_h_mp(field: HamiltonianField, z, h: float, order: int = 2):
    order = _order(order, MP_ORDERS)
    if order < 2:
        return field.value(as_phase_array(z, field.n))
    value, corr = _mp_term(field, z)
    return value + h * h / 24.0 * corr


_MODIFIED = {IntegratorTag.SE: modified_h_se, IntegratorTag.MP: modified_h_mp}
_INVERSE = {IntegratorTag.SE: inverse_modified_h_se, IntegratorTag.MP: inverse_modified_h_mp}


def supported_orders(tag) -> tuple:
    return SE_ORDERS if IntegratorTag(tag) is IntegratorTag.SE else MP_ORDERS


def identify_hamiltonian(model: GpHamiltonianModel, z, order: int = 2):
    """Recover ``H`` from the learned inverse modified Hamiltonian.

    Since the integrator applied to ``Hb`` reproduces the exact flow of ``H``,
    the modified Hamiltonian of ``Hb`` is ``H``; it is evaluated pointwise at
    the training step size.
    """
    return _MODIFIED[model.integrator](as_field(model), z, model.h, order)


def recover_potential(model: GpHamiltonianModel, q, order: int = 2):
    """Identified Hamiltonian at zero momentum, ``V(q) = H(q, 0)`` for mechanical systems."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        q = q[None]
    if q.shape[-1] != model.n:
        raise ContractViolation(f"configuration dimension {q.shape[-1]} does not match model n={model.n}")
    z = np.concatenate([q, np.zeros_like(q)], axis=-1)
    return identify_hamiltonian(model, z, order)


def _evaluate(fn, points):
    if isinstance(fn, HamiltonianField):
        return np.asarray(fn.value(points), dtype=float)
    return np.asarray(fn(points), dtype=float)


def sigma_hdiff(exact, identified, mesh) -> float:
    """Population standard deviation of ``exact - identified`` over a uniform mesh.

    ``exact`` and ``identified`` are fields or vectorized callables; ``mesh``
    is a MeshSpec or an explicit array of points.
    """
    points = uniform_mesh(mesh) if isinstance(mesh, MeshSpec) else np.atleast_2d(np.asarray(mesh, dtype=float))
    if points.shape[0] == 0 or points.size == 0:
        raise DomainError("mesh has no points")
    diff = _evaluate(exact, points) - _evaluate(identified, points)
    return float(np.std(diff))


class _TruncatedField(HamiltonianField):
    """Scalar field given pointwise, with derivatives by central differences.

    Used only for verification: the series terms already contain second
    derivatives, so their derivatives are not available in closed form.
    """

    def __init__(self, fn, n, step=1e-4):
        self.fn = fn
        self.n = n
        self.step = step

    def value(self, z):
        return self.fn(as_phase_array(z, self.n))

    def _shifted(self, z, offsets):
        # offsets: (k, d) -> values at z + offset, shape (k,) + z.shape[:-1]
        pts = z[None, ...] + offsets.reshape((offsets.shape[0],) + (1,) * (z.ndim - 1) + (z.shape[-1],))
        return self.fn(pts)

    def gradient(self, z):
        z = as_phase_array(z, self.n)
        d, s = z.shape[-1], self.step
        E = np.eye(d) * s
        vals = self._shifted(z, np.concatenate([E, -E]))
        return np.moveaxis((vals[:d] - vals[d:]) / (2 * s), 0, -1)

    def hessian(self, z):
        z = as_phase_array(z, self.n)
        d, s = z.shape[-1], self.step
        E = np.eye(d) * s
        offs = np.array([si * E[i] + sj * E[j] for i in range(d) for j in range(d)
                         for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1))])
        vals = self._shifted(z, offs).reshape((d, d, 4) + z.shape[:-1])
        H = (vals[:, :, 0] - vals[:, :, 1] - vals[:, :, 2] + vals[:, :, 3]) / (4 * s * s)
        H = np.moveaxis(np.moveaxis(H, 0, -1), 0, -1)
        return 0.5 * (H + np.swapaxes(H, -1, -2))


def _geometric_ladder(h_list):
    hs = np.asarray(h_list, dtype=float).ravel()
    if hs.size < 3:
        raise DomainError("need at least three step sizes")
    if not np.all(hs > 0):
        raise DomainError("step sizes must be positive")
    ratios = hs[1:] / hs[:-1]
    if np.any(np.abs(ratios - 1.0) < 1e-12) or not np.allclose(ratios, ratios[0], rtol=1e-9, atol=0.0):
        raise DomainError(f"step sizes {hs.tolist()} do not form a geometric ladder")
    return hs


def composition_residuals(field: HamiltonianField, h_list, tag, sample_points, order=2) -> np.ndarray:
    """``max_z |Ht[Hb](z) - H(z)|`` for each step size (both series truncated at ``order``)."""
    tag = IntegratorTag(tag)
    order = _order(order, supported_orders(tag))
    pts = as_phase_array(np.atleast_2d(sample_points), field.n)
    exact = field.value(pts)
    out = []
    for h in np.asarray(h_list, dtype=float):
        inner = _TruncatedField(lambda x, h=h: _INVERSE[tag](field, x, h, order), field.n)
        outer = _MODIFIED[tag](inner, pts, h, order)
        out.append(float(np.max(np.abs(outer - exact))))
    return np.array(out)


def bea_order_check(field: HamiltonianField, h_list, tag, sample_points, order=2) -> float:
    """Log-log slope of the composition residual against ``h``.

    Truncation at ``h^2`` leaves ``O(h^3)`` for symplectic Euler and, the
    midpoint series being even, ``O(h^4)`` for the midpoint rule.
    """
    hs = _geometric_ladder(h_list)
    res = composition_residuals(field, hs, tag, sample_points, order)
    if not np.all(res > 0):
        raise DomainError("composition residual vanished; slope undefined")
    slope, _ = np.polyfit(np.log(hs), np.log(res), 1)
    return float(slope)
