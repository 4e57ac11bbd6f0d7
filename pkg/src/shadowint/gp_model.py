"""Learning inverse modified Hamiltonians from flow-map data with a GP mean.

The surrogate is the GP posterior mean ``Hbar(y) = k(y, Z)^T (K + sigma I)^{-1} v``
with ``v`` the unknown node values ``Hbar(Z)``. Requiring that one step of the
chosen symplectic integrator applied to ``Hbar`` maps every ``y_j`` onto its
observed image ``ybar_j`` gives equations that are linear in ``v``; together
with one normalization row they are solved in the least-squares sense.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from .errors import ContractViolation, DomainError, FactorizationError
from .kernels import KernelParams, RegularizedGram, cross_grad1, cross_matrix, factorize_with_retry
from .phase_systems import HamiltonianField, as_phase_array

log = logging.getLogger(__name__)

# rows per block of evaluation points when stacking kernel derivative tensors
_CHUNK = 512


class IntegratorTag(str, Enum):
    SE = "SE"
    MP = "MP"


@dataclass(frozen=True, eq=False)
class FlowDataset:
    """Observed pairs ``ybar_j = phi_h(y_j)``."""

    Y: np.ndarray
    Ybar: np.ndarray
    h: float

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        Ybar = np.atleast_2d(np.asarray(self.Ybar, dtype=float))
        if Y.shape != Ybar.shape or Y.shape[0] < 1 or Y.shape[1] % 2:
            raise ContractViolation(f"Y {Y.shape} and Ybar {Ybar.shape} must match with even width")
        if not self.h > 0:
            raise DomainError(f"step size must be positive, got {self.h}")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Ybar", Ybar)

    @property
    def n(self) -> int:
        return self.Y.shape[1] // 2

    def __len__(self):
        return self.Y.shape[0]


@dataclass(frozen=True)
class Normalization:
    """Pin ``Hbar(y0) = H0``; the Hamiltonian is only defined up to a constant."""

    y0: tuple
    H0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "y0", tuple(float(v) for v in np.ravel(self.y0)))


def _check(data: FlowDataset, Z, norm: Normalization):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 0:
        raise DomainError("node set is empty")
    if Z.shape[1] != data.Y.shape[1] or len(norm.y0) != Z.shape[1]:
        raise ContractViolation("nodes, data and normalization point must share the phase dimension")
    return Z


def _gradient_rows(points, gram: RegularizedGram) -> np.ndarray:
    """Rows ``d/dy^c k(x_j, Z)^T (K + sigma I)^{-1}`` ordered (j, c)."""
    G = cross_grad1(points, gram.nodes, gram.params)  # (m, N, d)
    rows = G.transpose(0, 2, 1).reshape(-1, gram.size)
    return gram.solve(rows.T).T


def _assemble(points, data: FlowDataset, gram: RegularizedGram, norm: Normalization):
    n = data.n
    step = data.Ybar - data.Y
    # J (ybar - y) = (-(pbar - p), qbar - q)
    rhs = np.concatenate([-step[:, n:], step[:, :n]], axis=1).ravel() / data.h
    A_flow = _gradient_rows(points, gram)
    norm_row = gram.solve(cross_matrix(np.asarray(norm.y0)[None, :], gram.nodes, gram.params)[0])
    A = np.vstack([A_flow, norm_row[None, :]])
    b = np.concatenate([rhs, [norm.H0]])
    return A, b


def assemble_se_system(data: FlowDataset, Z, params: KernelParams, sigma: float, normalization: Normalization,
                       gram: RegularizedGram | None = None):
    """Least-squares system for symplectic Euler, rows evaluated at ``(qbar_j, p_j)``.

    Returns ``(A, b)`` with ``2 n len(data) + 1`` rows.
    """
    Z = _check(data, Z, normalization)
    gram = gram or factorize_with_retry(Z, params, sigma)
    n = data.n
    points = np.concatenate([data.Ybar[:, :n], data.Y[:, n:]], axis=1)
    return _assemble(points, data, gram, normalization)


def assemble_mp_system(data: FlowDataset, Z, params: KernelParams, sigma: float, normalization: Normalization,
                       gram: RegularizedGram | None = None):
    """Least-squares system for the implicit midpoint rule, rows evaluated at ``(y_j + ybar_j)/2``."""
    Z = _check(data, Z, normalization)
    gram = gram or factorize_with_retry(Z, params, sigma)
    points = 0.5 * (data.Y + data.Ybar)
    return _assemble(points, data, gram, normalization)


@dataclass(frozen=True, eq=False)
class GpHamiltonianModel:
    nodes: np.ndarray
    node_values: np.ndarray
    gram: RegularizedGram
    params: KernelParams
    integrator: IntegratorTag
    h: float
    normalization: Normalization
    residual: float = 0.0
    rows: int = 0
    rank: int = 0
    rank_deficient: bool = False
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.node_values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DomainError("node values must be finite")
        object.__setattr__(self, "node_values", v)
        object.__setattr__(self, "integrator", IntegratorTag(self.integrator))
        object.__setattr__(self, "weights", self.gram.solve(v))
        object.__setattr__(self, "_ld", (
            self.nodes.astype(_LD), self.weights.astype(_LD), _LD(self.params.e) ** 2, _LD(self.params.k_c)))

    @property
    def n(self) -> int:
        return self.nodes.shape[1] // 2

    @property
    def sigma(self) -> float:
        return self.gram.sigma

    def to_dict(self) -> dict:
        return {
            "kernel": {"k_c": self.params.k_c, "e": self.params.e},
            "sigma": self.gram.sigma,
            "integrator": self.integrator.value,
            "h": self.h,
            "normalization": {"y0": list(self.normalization.y0), "H0": self.normalization.H0},
            "nodes": self.nodes.tolist(),
            "node_values": self.node_values.tolist(),
            "residual": self.residual,
            "rows": self.rows,
            "rank": self.rank,
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpHamiltonianModel":
        try:
            params = KernelParams(**d["kernel"])
            nodes = np.asarray(d["nodes"], dtype=float)
            gram = factorize_with_retry(nodes, params, float(d["sigma"]), max_sigma=float(d["sigma"]))
            return cls(
                nodes=gram.nodes,
                node_values=np.asarray(d["node_values"], dtype=float),
                gram=gram,
                params=params,
                integrator=d["integrator"],
                h=float(d["h"]),
                normalization=Normalization(**d["normalization"]),
                residual=float(d.get("residual", 0.0)),
                rows=int(d.get("rows", 0)),
                rank=int(d.get("rank", 0)),
                rank_deficient=bool(d.get("rank_deficient", False)),
            )
        except (KeyError, TypeError) as exc:
            raise ContractViolation(f"malformed model document: {exc!r}") from exc


def train(data: FlowDataset, Z, params: KernelParams, sigma: float, integrator, normalization: Normalization | None = None
          ) -> GpHamiltonianModel:
    """Fit node values by minimum-norm least squares (SVD-based)."""
    integrator = IntegratorTag(integrator)
    if normalization is None:
        normalization = Normalization(data.Y[0], 0.0)
    Z = _check(data, Z, normalization)
    gram = factorize_with_retry(Z, params, sigma)
    assemble = assemble_se_system if integrator is IntegratorTag.SE else assemble_mp_system
    A, b = assemble(data, Z, params, gram.sigma, normalization, gram=gram)
    v, _, rank, _ = scipy.linalg.lstsq(A, b, lapack_driver="gelsd")
    residual = float(np.linalg.norm(A @ v - b))
    deficient = rank < A.shape[1]
    if deficient:
        log.warning("least-squares system %dx%d has numerical rank %d", A.shape[0], A.shape[1], rank)
    return GpHamiltonianModel(
        nodes=gram.nodes,
        node_values=v,
        gram=gram,
        params=params,
        integrator=integrator,
        h=data.h,
        normalization=normalization,
        residual=residual,
        rows=A.shape[0],
        rank=int(rank),
        rank_deficient=bool(deficient),
    )


# Node weights reach ~1e7 at sigma = 1e-13 and cancel in the kernel sums; double
# precision leaves ~1e-9 noise in the gradient, far above the implicit-solve
# tolerance. Sums are therefore evaluated in x87 extended precision.
_LD = np.longdouble


def _ld_state(model):
    return model._ld


def _chunks(flat, size):
    for i in range(0, max(flat.shape[0], 1), size):
        yield flat[i:i + size]


def _kernel_block(model, blk):
    Z, w, e2, kc = _ld_state(model)
    D = blk.astype(_LD)[:, None, :] - Z[None, :, :]
    W = kc * np.exp(-np.sum(D * D, axis=-1) / e2) * w
    return D, W, e2


def gp_mean(model: GpHamiltonianModel, y):
    """Posterior mean ``k(y, Z)^T (K + sigma I)^{-1} Hbar(Z)``."""
    y = as_phase_array(y, model.n)
    Z, w, e2, kc = _ld_state(model)
    if y.ndim == 1:
        d = y.astype(_LD) - Z
        return float(kc * np.exp(-np.einsum("ij,ij->i", d, d) / e2) @ w)
    flat = y.reshape(-1, y.shape[-1])
    out = [_kernel_block(model, blk)[1].sum(axis=1) for blk in _chunks(flat, _CHUNK)]
    return np.concatenate(out).astype(float).reshape(y.shape[:-1])


def gp_grad(model: GpHamiltonianModel, y):
    y = as_phase_array(y, model.n)
    Z, w, e2, kc = _ld_state(model)
    if y.ndim == 1:
        d = y.astype(_LD) - Z
        k = kc * np.exp(-np.einsum("ij,ij->i", d, d) / e2)
        return ((-2 / e2) * (d.T @ (k * w))).astype(float)
    flat = y.reshape(-1, y.shape[-1])
    out = []
    for blk in _chunks(flat, _CHUNK):
        D, W, _ = _kernel_block(model, blk)
        out.append((-2 / e2) * np.einsum("mnd,mn->md", D, W))
    return np.concatenate(out).astype(float).reshape(y.shape)


def gp_hess(model: GpHamiltonianModel, y):
    y = as_phase_array(y, model.n)
    dim = y.shape[-1]
    flat = y.reshape(-1, dim)
    out = []
    for blk in _chunks(flat, _CHUNK // 4):
        D, W, e2 = _kernel_block(model, blk)
        outer = np.einsum("mni,mnj,mn->mij", D, D, W)
        H = (4 / e2**2) * outer - (2 / e2) * W.sum(axis=1)[:, None, None] * np.eye(dim, dtype=_LD)
        out.append(0.5 * (H + H.transpose(0, 2, 1)))
    return np.concatenate(out).astype(float).reshape(y.shape + (dim,))


def gp_jet(model: GpHamiltonianModel, y):
    """Mean, gradient and Hessian from one pass over the kernel sums."""
    y = as_phase_array(y, model.n)
    dim = y.shape[-1]
    flat = y.reshape(-1, dim)
    vals, grads, hess = [], [], []
    for blk in _chunks(flat, _CHUNK // 4):
        D, W, e2 = _kernel_block(model, blk)
        s = W.sum(axis=1)
        vals.append(s)
        grads.append((-2 / e2) * np.einsum("mnd,mn->md", D, W))
        H = (4 / e2**2) * np.einsum("mni,mnj,mn->mij", D, D, W) - (2 / e2) * s[:, None, None] * np.eye(dim, dtype=_LD)
        hess.append(0.5 * (H + H.transpose(0, 2, 1)))
    lead = y.shape[:-1]
    return (
        np.concatenate(vals).astype(float).reshape(lead),
        np.concatenate(grads).astype(float).reshape(y.shape),
        np.concatenate(hess).astype(float).reshape(y.shape + (dim,)),
    )


class GpField(HamiltonianField):
    """Adapter exposing a trained model through the field interface."""

    def __init__(self, model: GpHamiltonianModel):
        self.model = model
        self.n = model.n

    def value(self, z):
        return gp_mean(self.model, z)

    def gradient(self, z):
        return gp_grad(self.model, z)

    def hessian(self, z):
        return gp_hess(self.model, z)

    def jet(self, z):
        return gp_jet(self.model, z)

    @property
    def coarse(self) -> "HamiltonianField":
        """Double-precision view, used by the implicit steppers to warm-start their solves."""
        return _DoubleGpField(self.model)

    def __repr__(self):
        m = self.model
        return f"GpField(N={m.nodes.shape[0]}, {m.integrator.value}, h={m.h})"


class _DoubleGpField(HamiltonianField):
    """Gradient of the posterior mean in plain float64 for single points.

    About ten times cheaper than the extended-precision sums, with absolute
    errors near ``eps * sum |w_i k_i|`` (1e-7 for the larger models).
    """

    def __init__(self, model: GpHamiltonianModel):
        self.model = model
        self.n = model.n

    def value(self, z):
        return gp_mean(self.model, z)

    def gradient(self, z):
        m = self.model
        d = np.asarray(z, dtype=float) - m.nodes
        k = m.params.k_c * np.exp(-np.einsum("ij,ij->i", d, d) / m.params.e**2)
        return (-2 / m.params.e**2) * (d.T @ (k * m.weights))

    def hessian(self, z):
        return gp_hess(self.model, z)


def as_field(model: GpHamiltonianModel) -> GpField:
    return GpField(model)


# -- structure-agnostic baseline: a GP fitted directly to the flow map ---------

@dataclass(frozen=True, eq=False)
class FlowMapGpModel:
    """Independent zero-mean GPs for each output coordinate, sharing hyperparameters.

    ``noise`` is the observation-noise variance added to the Gram diagonal.
    """

    X: np.ndarray
    alpha: np.ndarray
    params: KernelParams
    noise: float
    log_marginal_likelihood: float

    @property
    def noise_level(self) -> float:
        """Noise standard deviation."""
        return float(np.sqrt(self.noise))

    @property
    def n(self) -> int:
        return self.X.shape[1] // 2


def _log_marginal_likelihood(X, T, params, noise):
    K = cross_matrix(X, X, params)
    K[np.diag_indices_from(K)] += noise
    try:
        L = scipy.linalg.cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    alpha = scipy.linalg.cho_solve((L, True), T, check_finite=False)
    m, d = T.shape
    lml = -0.5 * np.sum(T * alpha) - d * np.sum(np.log(np.diag(L))) - 0.5 * m * d * np.log(2 * np.pi)
    return lml, alpha


def default_flowmap_grid(diameter: float):
    """``k_c`` in {0.1, 1, 10} times 8 length scales from ``diameter/50`` to ``diameter``."""
    scales = np.geomspace(diameter / 50.0, diameter, 8)
    params = [KernelParams(kc, float(e)) for kc in (0.1, 1.0, 10.0) for e in scales]
    return params, [1e-10, 1e-8, 1e-6]


def fit_flowmap_baseline(data: FlowDataset, param_grid, noise_grid) -> FlowMapGpModel:
    """Choose kernel parameters and noise by maximizing the summed log marginal likelihood on a grid."""
    param_grid, noise_grid = list(param_grid), list(noise_grid)
    if not param_grid or not noise_grid:
        raise DomainError("hyperparameter grids must be nonempty")
    X, T = data.Y, data.Ybar
    best = None
    for params in param_grid:
        for noise in noise_grid:
            fit = _log_marginal_likelihood(X, T, params, float(noise))
            if fit is None or not np.isfinite(fit[0]):
                continue
            if best is None or fit[0] > best[0]:
                best = (fit[0], fit[1], params, float(noise))
    if best is None:
        raise FactorizationError("no hyperparameter candidate gave a positive definite Gram matrix", pivot=0)
    lml, alpha, params, noise = best
    log.info("flow-map GP: k_c=%g e=%g noise=%g lml=%.6g", params.k_c, params.e, noise, lml)
    X = X.copy()
    X.setflags(write=False)
    return FlowMapGpModel(X=X, alpha=alpha, params=params, noise=noise, log_marginal_likelihood=float(lml))


def predict_flowmap(model: FlowMapGpModel, z) -> np.ndarray:
    """Posterior mean of the time-``h`` map at ``z`` (broadcasts over leading axes)."""
    z = as_phase_array(z, model.n)
    flat = z.reshape(-1, z.shape[-1])
    out = cross_matrix(flat, model.X, model.params) @ model.alpha
    return out.reshape(z.shape)


def iterate_flowmap(model: FlowMapGpModel, z0, steps: int) -> np.ndarray:
    if steps < 0:
        raise DomainError("steps must be nonnegative")
    z = as_phase_array(z0, model.n).astype(float)
    out = np.empty((steps + 1, z.size))
    out[0] = z
    Xt, alpha, params = model.X, model.alpha, model.params
    inv_e2 = 1.0 / params.e**2
    for k in range(steps):
        d = z - Xt
        z = (params.k_c * np.exp(-np.einsum("ij,ij->i", d, d) * inv_e2)) @ alpha
        out[k + 1] = z
    return out
