import numpy as np
import pytest

from mobidk.robot_model import default_model, whole_inertia, whole_jacobian


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_q(rng, n=None):
    """Arm angles in [-pi, pi], base within a few metres and any yaw."""
    shape = (9,) if n is None else (n, 9)
    q = rng.uniform(-np.pi, np.pi, shape)
    q[..., 6:8] = rng.uniform(-3.0, 3.0, q[..., 6:8].shape)
    return q


def random_instance(model, rng):
    """(q, J, M, v_d) at a random configuration, rejecting near-singular Jacobians."""
    while True:
        q = random_q(rng)
        J = whole_jacobian(model, q)
        if np.linalg.svd(J, compute_uv=False)[-1] > 1e-2:
            return q, J, whole_inertia(model, q[:6]), rng.normal(0.0, 0.3, 6)


def random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T + n * np.eye(n))


# acceptance criteria append "PASS/FAIL ..." lines here; printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
