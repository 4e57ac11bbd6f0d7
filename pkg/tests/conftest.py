import numpy as np
import pytest

from shadowint.gp_model import FlowDataset, train
from shadowint.kernels import KernelParams
from shadowint.phase_systems import PendulumSystem
from shadowint.sampling_io import DomainBox, generate_flow_dataset, halton_sequence

PENDULUM_BOX = DomainBox([-2 * np.pi, -1.2], [2 * np.pi, 1.2])


def fd_gradient(f, x, eps=1e-6):
    """Central differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def fd_jacobian(F, x, eps=1e-6):
    """Central differences of a vector function; column i is dF/dx_i."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        cols.append((np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2 * eps))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def pendulum():
    return PendulumSystem()


@pytest.fixture(scope="session")
def pendulum_data():
    """Small pendulum dataset for unit tests (the full protocols live in the acceptance suite)."""
    Y = halton_sequence(2, 60, PENDULUM_BOX)
    return generate_flow_dataset(PendulumSystem(), Y, 0.3, 200)


@pytest.fixture(scope="session")
def se_model(pendulum_data):
    return train(pendulum_data, pendulum_data.Y, KernelParams(1.0, 2.0), 1e-13, "SE")


@pytest.fixture(scope="session")
def mp_model(pendulum_data):
    return train(pendulum_data, pendulum_data.Y, KernelParams(1.0, 2.0), 1e-13, "MP")


# one line per acceptance criterion, printed after the run (see test_acceptance.py)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[number]
        verdict = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        detail = "; ".join(f"{name}={'ok' if ok else 'FAIL'} ({info})" for name, ok, info in checks)
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {detail}")
