import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_jacobian
from shadowint.errors import ContractViolation, ConvergenceError, DomainError
from shadowint.integrators import (
    ImplicitSolveOptions,
    Method,
    SolveStrategy,
    TrajectoryRecord,
    implicit_midpoint_step,
    integrate,
    reference_flow,
    step,
    stormer_verlet_step,
    symplectic_euler_step,
)
from shadowint.phase_systems import (
    HamiltonianField,
    HarmonicOscillator,
    HenonHeilesSystem,
    PendulumSystem,
    symplectic_matrix,
)


class Coupled(HamiltonianField):
    """Non-separable test Hamiltonian ``(q^2 + p^2)/2 + a q^2 p^2``."""

    n = 1

    def __init__(self, a=0.1):
        self.a = a

    def __repr__(self):
        return f"Coupled({self.a})"

    def value(self, z):
        z = np.asarray(z, float)
        q, p = z[..., 0], z[..., 1]
        return 0.5 * (q * q + p * p) + self.a * q * q * p * p

    def gradient(self, z):
        z = np.asarray(z, float)
        q, p = z[..., 0], z[..., 1]
        return np.stack([q + 2 * self.a * q * p * p, p + 2 * self.a * q * q * p], -1)

    def hessian(self, z):
        z = np.asarray(z, float)
        q, p = z[..., 0], z[..., 1]
        hqq = 1 + 2 * self.a * p * p
        hpp = 1 + 2 * self.a * q * q
        hqp = 4 * self.a * q * p
        return np.stack([np.stack([hqq, hqp], -1), np.stack([hqp, hpp], -1)], -2)


class Opaque(HamiltonianField):
    """Hide separability so the general implicit path is used."""

    def __init__(self, inner):
        self.inner = inner
        self.n = inner.n

    def value(self, z):
        return self.inner.value(z)

    def gradient(self, z):
        return self.inner.gradient(z)

    def hessian(self, z):
        return self.inner.hessian(z)


TIGHT = ImplicitSolveOptions(tolerance=1e-14, stagnation_tolerance=1e-14)


def test_options_validation():
    with pytest.raises(DomainError):
        ImplicitSolveOptions(tolerance=0)
    with pytest.raises(DomainError):
        ImplicitSolveOptions(max_iterations=0)
    assert ImplicitSolveOptions(strategy="FixedPoint").strategy is SolveStrategy.FIXED_POINT


@pytest.mark.parametrize("field", [HarmonicOscillator(), Opaque(HarmonicOscillator())], ids=["explicit", "implicit"])
def test_symplectic_euler_examples(field):
    np.testing.assert_allclose(symplectic_euler_step(field, [1.0, 0.0], 0.1), [1.0, -0.1], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(symplectic_euler_step(field, [0.3, 0.2], 0.0), [0.3, 0.2])


def test_symplectic_euler_fixed_points():
    np.testing.assert_allclose(symplectic_euler_step(PendulumSystem(), [np.pi, 0.0], 0.3), [np.pi, 0.0], atol=1e-15)
    np.testing.assert_allclose(symplectic_euler_step(Opaque(PendulumSystem()), [np.pi, 0.0], 0.3), [np.pi, 0.0],
                               atol=1e-15)


def test_explicit_and_implicit_symplectic_euler_agree(rng):
    for z in rng.uniform(-1, 1, (20, 4)):
        a = symplectic_euler_step(HenonHeilesSystem(0.8), z, 0.1)
        b = symplectic_euler_step(Opaque(HenonHeilesSystem(0.8)), z, 0.1, TIGHT)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_implicit_midpoint_examples():
    out = implicit_midpoint_step(HarmonicOscillator(), [1.0, 0.0], 0.1, TIGHT)
    # Cayley map of the rotation generator
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    I = np.eye(2)
    expect = np.linalg.solve(I - 0.05 * A, (I + 0.05 * A) @ [1.0, 0.0])
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-14)
    np.testing.assert_allclose(out, [0.99501246, -0.09975062], atol=5e-9)
    np.testing.assert_array_equal(implicit_midpoint_step(HarmonicOscillator(), [1.0, 2.0], 0.0), [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(0.01, 0.5))
def test_midpoint_conserves_quadratic_energy(z, h):
    H = HarmonicOscillator(2)
    z = np.array(z)
    out = implicit_midpoint_step(H, z, h, TIGHT)
    assert abs(H.value(out) - H.value(z)) <= 1e-12 * max(H.value(z), 1.0)


def test_implicit_residuals_rechecked(rng):
    f, h, n = Coupled(0.3), 0.2, 1
    for z in rng.uniform(-1, 1, (20, 2)):
        out = symplectic_euler_step(f, z, h)
        g = f.gradient(np.array([out[0], z[1]]))
        assert abs(out[0] - z[0] - h * g[n]) <= 1e-12
        assert abs(out[1] - (z[1] - h * g[0])) <= 1e-15
        out = implicit_midpoint_step(f, z, h)
        g = f.gradient(0.5 * (z + out))
        assert np.max(np.abs(out - z - h * np.array([g[1], -g[0]]))) <= 1e-12


def test_newton_fallback_rescues_stiff_fixed_point():
    # h * Lipschitz > 1: plain iteration diverges, Newton converges
    f, z, h = Coupled(2.0), np.array([1.2, 1.1]), 0.4
    with pytest.raises(ConvergenceError) as info, np.errstate(over="ignore", invalid="ignore"):
        implicit_midpoint_step(f, z, h, ImplicitSolveOptions(strategy="FixedPoint"))
    assert np.isfinite(info.value.residual) and info.value.residual > 1e-12
    out = implicit_midpoint_step(f, z, h)
    g = f.gradient(0.5 * (z + out))
    assert np.max(np.abs(out - z - h * np.array([g[1], -g[0]]))) <= 1e-12


def test_stormer_verlet_examples():
    np.testing.assert_allclose(stormer_verlet_step(HarmonicOscillator(), [1.0, 0.0], 0.2), [0.98, -0.198], atol=1e-15)
    np.testing.assert_array_equal(stormer_verlet_step(PendulumSystem(), [0.5, 0.1], 0.0), [0.5, 0.1])
    with pytest.raises(ContractViolation):
        stormer_verlet_step(Coupled(), [0.0, 0.0], 0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.floats(-0.5, 0.5))
def test_stormer_verlet_time_symmetric(z, h):
    P = PendulumSystem()
    back = stormer_verlet_step(P, stormer_verlet_step(P, z, h), -h)
    np.testing.assert_allclose(back, z, rtol=0, atol=1e-14)


def test_reference_flow():
    P = PendulumSystem()
    z = np.array([1.0, 0.5])
    a, b = reference_flow(P, z, 0.3, 800), reference_flow(P, z, 0.3, 8000)
    assert np.max(np.abs(a - b)) <= 1e-8
    np.testing.assert_array_equal(reference_flow(P, z, 0.3, 1), stormer_verlet_step(P, z, 0.3))
    Z = np.stack([z, -z])
    np.testing.assert_allclose(reference_flow(P, Z, 0.3, 10)[1], reference_flow(P, -z, 0.3, 10), atol=1e-16)
    with pytest.raises(DomainError):
        reference_flow(P, z, 0.3, 0)


def test_integrate_basics():
    P = PendulumSystem()
    rec = integrate(P, [0.4, 0.0], 0.3, 0, "SE")
    assert len(rec) == 1 and rec.states[0].tolist() == [0.4, 0.0]
    rec = integrate(P, [0.4, 0.0], 0.3, 100, Method.SE, field_tag="pendulum")
    assert rec.states.shape == (101, 2) and rec.field_tag == "pendulum" and rec.method_tag == "SE"
    np.testing.assert_array_equal(rec.states[5], step(P, rec.states[4], 0.3, "SE"))
    np.testing.assert_allclose(rec.times[-1], 30.0)
    # period of the small oscillation is ~6.35: the orbit comes back near its start
    k = int(np.argmin(np.linalg.norm(rec.states[10:40] - rec.states[0], axis=1))) + 10
    assert np.linalg.norm(rec.states[k] - rec.states[0]) < 0.05
    with pytest.raises(DomainError):
        integrate(P, [0.4, 0.0], 0.3, -1, "SE")


def test_integrate_stop_and_error_index():
    rec = integrate(PendulumSystem(), [0.0, 2.5], 0.3, 1000, "SV", stop=lambda z: z[0] > 3)
    assert rec.meta["stopped_at"] == len(rec) - 1 and rec.states[-1][0] > 3
    opts = ImplicitSolveOptions(max_iterations=2, strategy="FixedPoint", stagnation_tolerance=1e-16)
    with pytest.raises(ConvergenceError) as info:
        integrate(Coupled(0.3), [0.5, 0.5], 0.2, 5, "MP", opts)
    assert info.value.step_index == 0


def test_midpoint_conserves_harmonic_energy_over_long_run():
    H = HarmonicOscillator()
    # the solve error (<= tolerance per step) accumulates with one sign, so a
    # 1e-10 energy budget over 1e4 steps needs a tolerance well below 1e-14
    rec = integrate(H, [1.0, 0.0], 0.1, 10_000, "MP", TIGHT)
    E = H.value(rec.states)
    assert np.max(np.abs(E - E[0])) / E[0] <= 1e-10


def test_trajectory_record_validation():
    with pytest.raises(ContractViolation):
        TrajectoryRecord(np.zeros((2, 3)), h=0.1)


def step_jacobian(field, method, z, h):
    return fd_jacobian(lambda x: step(field, x, h, method, TIGHT), z)


SYMPLECTIC_CASES = [(f, m) for f in (PendulumSystem(), HenonHeilesSystem(0.8), Coupled(0.2))
                    for m in ("SE", "MP", "SV") if f.separable or m != "SV"]


@pytest.mark.parametrize("field, method", SYMPLECTIC_CASES, ids=lambda v: v if isinstance(v, str) else repr(v))
def test_symplecticity(field, method, rng):
    J = symplectic_matrix(field.n)
    for z in rng.uniform(-0.8, 0.8, (10, 2 * field.n)):
        Psi = step_jacobian(field, method, z, 0.3)
        assert np.max(np.abs(Psi.T @ J @ Psi - J)) <= 1e-6


def test_global_order_on_pendulum():
    P = PendulumSystem()
    z0, T = np.array([0.8, 0.3]), 4.0
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    exact = reference_flow(P, z0, T, 40_000)
    for method, order in (("SE", 1), ("MP", 2)):
        errs = [np.max(np.abs(integrate(P, z0, h, int(round(T / h)), method).states[-1] - exact)) for h in hs]
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert abs(slope - order) <= 0.15, (method, slope)
