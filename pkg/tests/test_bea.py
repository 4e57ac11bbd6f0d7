import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import PENDULUM_BOX
from shadowint import bea
from shadowint.bea import (
    _TruncatedField,
    bea_order_check,
    identify_hamiltonian,
    inverse_modified_h_mp,
    inverse_modified_h_se,
    modified_h_mp,
    modified_h_se,
    recover_potential,
    sigma_hdiff,
)
from shadowint.errors import ContractViolation, DomainError, UnsupportedOrder
from shadowint.gp_model import gp_mean
from shadowint.integrators import ImplicitSolveOptions, implicit_midpoint_step, reference_flow, symplectic_euler_step
from shadowint.phase_systems import HamiltonianField, HarmonicOscillator, HenonHeilesSystem, PendulumSystem
from shadowint.sampling_io import DomainBox, MeshSpec

P, HO = PendulumSystem(), HarmonicOscillator()
TIGHT = ImplicitSolveOptions(tolerance=1e-14, stagnation_tolerance=1e-14)


class Skewed(HamiltonianField):
    """Non-separable quadratic-plus-cubic Hamiltonian in two degrees of freedom."""

    n = 2

    def value(self, z):
        q1, q2, p1, p2 = np.moveaxis(np.asarray(z, float), -1, 0)
        return 0.5 * (p1**2 + p2**2 + q1**2 + q2**2) + 0.3 * q1 * p2 + 0.2 * q1**2 * q2 + 0.2 * p1 * p2 * q1

    def gradient(self, z):
        q1, q2, p1, p2 = np.moveaxis(np.asarray(z, float), -1, 0)
        return np.stack([q1 + 0.3 * p2 + 0.4 * q1 * q2 + 0.2 * p1 * p2, q2 + 0.2 * q1**2,
                         p1 + 0.2 * p2 * q1, p2 + 0.3 * q1 + 0.2 * p1 * q1], -1)

    def hessian(self, z):
        q1, q2, p1, p2 = np.moveaxis(np.asarray(z, float), -1, 0)
        one, zero = np.ones_like(q1), np.zeros_like(q1)
        rows = [
            [one + 0.4 * q2, 0.4 * q1, 0.2 * p2, 0.3 * one + 0.2 * p1],
            [0.4 * q1, one, zero, zero],
            [0.2 * p2, zero, one, 0.2 * q1],
            [0.3 * one + 0.2 * p1, zero, 0.2 * q1, one],
        ]
        return np.stack([np.stack(r, -1) for r in rows], -2)


def test_order_zero_is_the_hamiltonian(rng):
    for fn in (modified_h_se, inverse_modified_h_se, modified_h_mp, inverse_modified_h_mp):
        z = rng.normal(size=2)
        assert fn(P, z, 0.3, 0) == P.value(z)


def test_unsupported_orders():
    with pytest.raises(UnsupportedOrder):
        modified_h_se(P, [0.0, 0.0], 0.1, 3)
    with pytest.raises(UnsupportedOrder):
        inverse_modified_h_mp(P, [0.0, 0.0], 0.1, 4)
    with pytest.raises(UnsupportedOrder):
        modified_h_mp(P, [0.0, 0.0], 0.1, 1.5)
    assert issubclass(UnsupportedOrder, DomainError)


def test_se_hand_values():
    # H_q.H_p = q p = 1 at (1, 1); the first-order term carries +h/2 for this variant
    assert modified_h_se(HO, [1.0, 1.0], 0.1, 1) == pytest.approx(1.05, rel=1e-15)
    z = [1.0, 0.5]
    assert inverse_modified_h_se(P, z, 0.3, 1) == pytest.approx(P.value(z) - 0.15 * np.sin(1.0) * 0.5, rel=1e-15)
    # separable H at p = 0: the h term vanishes
    assert modified_h_se(P, [0.7, 0.0], 0.3, 1) == P.value([0.7, 0.0])


def test_first_order_terms_are_negatives(rng):
    for z in rng.normal(size=(10, 2)):
        d_mod = modified_h_se(P, z, 0.2, 1) - P.value(z)
        d_inv = inverse_modified_h_se(P, z, 0.2, 1) - P.value(z)
        assert d_mod == pytest.approx(-d_inv, rel=1e-14)


def test_mp_hand_values():
    assert modified_h_mp(HO, [1.0, 0.0], 0.2, 2) == pytest.approx(0.5 - 0.04 / 24, rel=1e-15)
    assert inverse_modified_h_mp(HO, [1.0, 0.0], 0.2, 2) == pytest.approx(0.5 + 0.04 / 24, rel=1e-15)
    assert modified_h_mp(HO, [1.0, 0.0], 0.2, 3) == modified_h_mp(HO, [1.0, 0.0], 0.2, 2)
    assert modified_h_mp(HO, [1.0, 0.0], 0.2, 1) == HO.value([1.0, 0.0])
    for fn in (modified_h_mp, inverse_modified_h_mp, modified_h_se, inverse_modified_h_se):
        assert fn(P, [0.0, 0.0], 0.3, 2) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(0.01, 0.5))
def test_mp_corrections_cancel(q, p, h):
    z = np.array([q, p])
    s = modified_h_mp(P, z, h, 2) + inverse_modified_h_mp(P, z, h, 2) - 2 * P.value(z)
    assert abs(s) <= 1e-14


def test_series_vectorize(rng):
    Z = rng.normal(size=(3, 4, 4))
    f = Skewed()
    for fn in (modified_h_se, inverse_modified_h_se, modified_h_mp, inverse_modified_h_mp):
        out = fn(f, Z, 0.1, 2)
        assert out.shape == (3, 4)
        assert out[2, 1] == pytest.approx(fn(f, Z[2, 1], 0.1, 2), rel=1e-14)


def test_se_modified_hamiltonian_is_conserved_to_third_order():
    # one SE step changes the order-2 modified Hamiltonian by O(h^4) on a non-separable field
    f, z = Skewed(), np.array([0.3, -0.2, 0.1, 0.4])
    errs = [abs(modified_h_se(f, symplectic_euler_step(f, z, h, TIGHT), h, 2) - modified_h_se(f, z, h, 2))
            for h in (0.04, 0.02, 0.01)]
    slopes = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(slopes - 4) < 0.2)


def test_inverse_modified_fields_reproduce_exact_flow():
    # SE on the truncated inverse modified Hamiltonian: local error O(h^4); MP: O(h^5)
    z = np.array([0.7, 0.4])
    for inv, stepper, order in ((inverse_modified_h_se, symplectic_euler_step, 4),
                                (inverse_modified_h_mp, implicit_midpoint_step, 5)):
        errs = []
        for h in (0.2, 0.1, 0.05):
            F = _TruncatedField(lambda x, h=h: inv(P, x, h, 2), 1, step=1e-4)
            errs.append(np.max(np.abs(stepper(F, z, h, TIGHT) - reference_flow(P, z, h, 4000))))
        slope = np.polyfit(np.log([0.2, 0.1, 0.05]), np.log(errs), 1)[0]
        assert abs(slope - order) < 0.4, (order, slope)


def test_bea_order_check_slopes(rng):
    pts = rng.uniform(PENDULUM_BOX.lower, PENDULUM_BOX.upper, (20, 2))
    assert 2.6 <= bea_order_check(P, [0.2, 0.1, 0.05], "SE", pts) <= 3.4
    assert 3.6 <= bea_order_check(P, [0.2, 0.1, 0.05], "MP", pts) <= 4.4
    assert 3.6 <= bea_order_check(HO, [0.2, 0.1, 0.05], "MP", pts) <= 4.4


def test_bea_order_check_rejects_degenerate_ladders():
    pts = np.zeros((1, 2)) + 0.3
    for ladder in ([0.2, 0.1], [0.2, 0.2, 0.2], [0.2, 0.1, 0.07], [0.2, -0.1, 0.05]):
        with pytest.raises(DomainError):
            bea_order_check(P, ladder, "SE", pts)


def test_sigma_hdiff_properties(rng):
    box = DomainBox([0.0, 0.0], [1.0, 1.0])
    mesh = MeshSpec(box, (101, 3))
    assert sigma_hdiff(P, lambda z: P.value(z) + 3.0, mesh) == pytest.approx(0.0, abs=1e-15)
    ramp = sigma_hdiff(lambda z: z[:, 0] * 0.0, lambda z: 2.0 * z[:, 0], mesh)
    # discrete uniform mesh: population std of k/(m-1), k=0..m-1, is sqrt((m+1)/(12(m-1)))
    assert ramp == pytest.approx(2.0 * np.sqrt(102 / (12 * 100)), rel=1e-12)
    assert ramp == pytest.approx(2.0 / np.sqrt(12), rel=1e-2)
    with pytest.raises(DomainError):
        sigma_hdiff(P, P, np.empty((0, 2)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_sigma_hdiff_shift_invariant(c1, c2):
    mesh = MeshSpec(PENDULUM_BOX, (15, 11))
    ident = lambda z: modified_h_se(P, z, 0.3, 2)  # noqa: E731
    base = sigma_hdiff(P, ident, mesh)
    shifted = sigma_hdiff(lambda z: P.value(z) + c1, lambda z: ident(z) + c2, mesh)
    assert shifted == pytest.approx(base, rel=1e-6, abs=1e-9)


def test_identify_and_recover(se_model, mp_model, rng):
    z = rng.uniform(-1, 1, 2)
    assert identify_hamiltonian(se_model, z, 0) == gp_mean(se_model, z)
    assert identify_hamiltonian(se_model, z, 2) == modified_h_se(bea.as_field(se_model), z, se_model.h, 2)
    assert identify_hamiltonian(mp_model, z, 3) == modified_h_mp(bea.as_field(mp_model), z, mp_model.h, 3)
    with pytest.raises(UnsupportedOrder):
        identify_hamiltonian(se_model, z, 3)
    assert recover_potential(se_model, [0.4], 2) == identify_hamiltonian(se_model, [0.4, 0.0], 2)
    Q = np.array([[0.1], [0.2]])
    assert recover_potential(se_model, Q, 1).shape == (2,)
    with pytest.raises(ContractViolation):
        recover_potential(se_model, [0.1, 0.2], 2)


def test_identified_potential_on_small_model(se_model):
    # small training set: identification error is larger than at full settings
    q = np.linspace(-np.pi, np.pi, 21)[:, None]
    V = recover_potential(se_model, q, 2)
    shift = V[10] - 0.0  # value at q = 0
    assert np.max(np.abs(V - shift - (1 - np.cos(q[:, 0])))) < 0.05
    assert V[-1] - shift == pytest.approx(2.0, abs=0.05)


def test_hh_composition_order(rng):
    hh = HenonHeilesSystem(0.8)
    pts = rng.uniform(-0.5, 0.5, (10, 4))
    assert 2.6 <= bea_order_check(hh, [0.2, 0.1, 0.05], "SE", pts) <= 3.4
