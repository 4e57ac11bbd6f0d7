"""Symplectic one-step methods, the Stormer-Verlet reference flow and trajectory drivers."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ContractViolation, ConvergenceError, DomainError
from .phase_systems import HamiltonianField, as_phase_array


class Method(str, Enum):
    SE = "SE"
    MP = "MP"
    SV = "SV"


class SolveStrategy(str, Enum):
    FIXED_POINT = "FixedPoint"
    NEWTON_FALLBACK = "NewtonFallback"


@dataclass(frozen=True)
class ImplicitSolveOptions:
    """Residual tolerance (infinity norm) and iteration budget for implicit steps.

    With ``NEWTON_FALLBACK`` the fixed-point sweep switches to damped Newton
    once the residual shrinks by less than ``stall_ratio`` per sweep.

    Iterations that stop making progress are accepted if their residual is
    below ``stagnation_tolerance``: surrogate fields evaluated from large
    cancelling kernel sums have a noise floor near 1e-12.
    """

    tolerance: float = 1e-12
    max_iterations: int = 50
    strategy: SolveStrategy = SolveStrategy.NEWTON_FALLBACK
    stall_ratio: float = 0.5
    stagnation_tolerance: float = 1e-10

    def __post_init__(self):
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        object.__setattr__(self, "strategy", SolveStrategy(self.strategy))


DEFAULT_OPTIONS = ImplicitSolveOptions()

# warm-start pass on a field's cheaper ``coarse`` approximation: iterate to its noise floor
_COARSE_OPTIONS = ImplicitSolveOptions(strategy=SolveStrategy.FIXED_POINT, stagnation_tolerance=1e-6)


def _warm_start(make_residual, jacobian, x0, field, what):
    coarse = getattr(field, "coarse", None)
    if coarse is None:
        return x0
    try:
        x, _ = _solve(make_residual(coarse), jacobian, x0, _COARSE_OPTIONS, what)
    except ConvergenceError:
        return x0
    return x


@dataclass
class TrajectoryRecord:
    states: np.ndarray
    h: float
    t0: float = 0.0
    method_tag: str = ""
    field_tag: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] < 1 or self.states.shape[1] % 2:
            raise ContractViolation(f"bad trajectory shape {self.states.shape}")

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.states.shape[0])

    def __len__(self):
        return self.states.shape[0]


def _solve(residual, jacobian, x0, opts: ImplicitSolveOptions, what: str):
    """Solve ``x = G(x)``.

    ``residual(x)`` returns ``(x - G(x), G(x), aux)``; ``jacobian(x)`` the
    derivative of ``x - G(x)``. Returns the accepted iterate and the ``aux``
    of its evaluation.
    """
    x = x0
    r, g, aux = residual(x)
    rnorm = np.max(np.abs(r))
    newton = False
    for _ in range(opts.max_iterations):
        if rnorm <= opts.tolerance:
            return x, aux
        if not newton:
            x_new = g
            r_new, g_new, aux_new = residual(x_new)
            rn_new = np.max(np.abs(r_new))
            if not np.isfinite(rn_new):
                raise ConvergenceError(f"{what}: fixed-point iteration diverged", residual=rnorm)
            if rn_new > opts.stall_ratio * rnorm:
                if min(rn_new, rnorm) <= opts.stagnation_tolerance:
                    return (x_new, aux_new) if rn_new < rnorm else (x, aux)
                if opts.strategy is SolveStrategy.NEWTON_FALLBACK:
                    newton = True
                    if rn_new >= rnorm:
                        continue
        else:
            try:
                dx = np.linalg.solve(jacobian(x), -r)
            except np.linalg.LinAlgError as exc:
                raise ConvergenceError(f"{what}: singular Newton matrix", residual=rnorm) from exc
            lam = 1.0
            while True:
                x_new = x + lam * dx
                r_new, g_new, aux_new = residual(x_new)
                rn_new = np.max(np.abs(r_new))
                if rn_new < rnorm or lam < 1e-4:
                    break
                lam *= 0.5
            if not rn_new < rnorm:
                if rnorm <= opts.stagnation_tolerance:
                    return x, aux
                raise ConvergenceError(f"{what}: Newton step made no progress", residual=rnorm)
        x, r, g, aux, rnorm = x_new, r_new, g_new, aux_new, rn_new
    if rnorm <= opts.tolerance:
        return x, aux
    raise ConvergenceError(
        f"{what}: residual {rnorm:.3e} above tolerance {opts.tolerance:.1e} after {opts.max_iterations} iterations",
        residual=rnorm,
    )


def symplectic_euler_step(field: HamiltonianField, z, h: float, opts: ImplicitSolveOptions = DEFAULT_OPTIONS):
    """One step of ``qbar = q + h H_p(qbar, p)``, ``pbar = p - h H_q(qbar, p)``."""
    z = as_phase_array(z, field.n)
    n = field.n
    if h == 0:
        return z.copy()
    q, p = z[:n], z[n:]
    if getattr(field, "separable", False):
        # H_p = p does not depend on qbar, so the implicit equation is solved exactly
        qbar = q + h * p
        return np.concatenate([qbar, p - h * field.potential_grad(qbar)])

    def make_residual(f):
        def residual(qb):
            grad = f.gradient(np.concatenate([qb, p]))
            g = q + h * grad[n:]
            return qb - g, g, grad
        return residual

    def jacobian(qb):
        hess = field.hessian(np.concatenate([qb, p]))
        return np.eye(n) - h * hess[n:, :n]

    q0 = _warm_start(make_residual, jacobian, q, field, "symplectic Euler")
    qbar, grad = _solve(make_residual(field), jacobian, q0, opts, "symplectic Euler")
    return np.concatenate([qbar, p - h * grad[:n]])


def implicit_midpoint_step(field: HamiltonianField, z, h: float, opts: ImplicitSolveOptions = DEFAULT_OPTIONS):
    """One step of ``zbar = z + h J^{-1} grad H((z + zbar)/2)``."""
    z = as_phase_array(z, field.n)
    n = field.n
    if h == 0:
        return z.copy()

    def make_residual(f):
        def residual(zb):
            grad = f.gradient(0.5 * (z + zb))
            g = z + h * np.concatenate([grad[n:], -grad[:n]])
            return zb - g, g, None
        return residual

    def jacobian(zb):
        hess = field.hessian(0.5 * (z + zb))
        return np.eye(2 * n) - 0.5 * h * np.concatenate([hess[n:], -hess[:n]])

    z0 = _warm_start(make_residual, jacobian, z, field, "implicit midpoint")
    zbar, _ = _solve(make_residual(field), jacobian, z0, opts, "implicit midpoint")
    return zbar


def stormer_verlet_step(field: HamiltonianField, z, h: float):
    """Velocity-Verlet kick-drift-kick step; broadcasts over leading axes of ``z``."""
    if not getattr(field, "separable", False):
        raise ContractViolation(f"Stormer-Verlet needs a separable unit-mass field, got {field!r}")
    z = as_phase_array(z, field.n)
    n = field.n
    q, p = z[..., :n], z[..., n:]
    p_half = p - 0.5 * h * field.potential_grad(q)
    q_new = q + h * p_half
    p_new = p_half - 0.5 * h * field.potential_grad(q_new)
    return np.concatenate([q_new, p_new], axis=-1)


def reference_flow(field: HamiltonianField, z, h: float, n_substeps: int):
    """Approximate the exact time-``h`` flow by ``n_substeps`` Stormer-Verlet steps."""
    if n_substeps < 1:
        raise DomainError("n_substeps must be at least 1")
    dt = h / n_substeps
    out = as_phase_array(z, field.n)
    for _ in range(n_substeps):
        out = stormer_verlet_step(field, out, dt)
    return out


_STEPPERS = {
    Method.SE: symplectic_euler_step,
    Method.MP: implicit_midpoint_step,
}


def step(field: HamiltonianField, z, h: float, method, opts: ImplicitSolveOptions = DEFAULT_OPTIONS):
    method = Method(method)
    if method is Method.SV:
        return stormer_verlet_step(field, z, h)
    return _STEPPERS[method](field, z, h, opts)


def integrate(
    field: HamiltonianField,
    z0,
    h: float,
    steps: int,
    method,
    opts: ImplicitSolveOptions = DEFAULT_OPTIONS,
    *,
    field_tag: str = "",
    stop=None,
) -> TrajectoryRecord:
    """Iterate a one-step method ``steps`` times from ``z0``.

    ``stop(z)`` may return True to end the run early (e.g. on escape); the
    record then holds the states computed so far and ``meta['stopped_at']``.
    """
    if steps < 0:
        raise DomainError("steps must be nonnegative")
    method = Method(method)
    z = as_phase_array(z0, field.n).copy()
    states = np.empty((steps + 1, z.size))
    states[0] = z
    meta = {}
    k = 0
    for k in range(steps):
        try:
            z = step(field, z, h, method, opts)
        except ConvergenceError as err:
            err.step_index = k
            raise
        states[k + 1] = z
        if stop is not None and stop(z):
            meta["stopped_at"] = k + 1
            states = states[: k + 2]
            break
    return TrajectoryRecord(states, h=h, method_tag=method.value, field_tag=field_tag or repr(field), meta=meta)
