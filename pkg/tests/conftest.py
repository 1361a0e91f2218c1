import numpy as np
import pytest
import scipy.linalg as sla

from resilient_mm import ModeModel
from resilient_mm.sim import benchmark_topology, build_benchmark


# discrete-time two-state smart-grid swing model behind the breaker example;
# SMART_GRID_A_10 is the 0.1 s discretization, powers of it give other steps
SMART_GRID_A_10 = np.array([[0.9520, 0.0936], [-0.9358, 0.8584]])


def smart_grid_mode(dt: float = 0.01) -> ModeModel:
    """Compromised-measurement variant: first state measured, sensor attacked."""
    A = np.real(sla.fractional_matrix_power(SMART_GRID_A_10, dt / 0.1))
    return ModeModel(
        A=A,
        B=np.zeros((2, 1)),
        G=np.zeros((2, 1)),
        C=np.array([[1.0, 0.0]]),
        D=np.zeros((1, 1)),
        H=np.array([[1.0]]),
        Q=1e-4 * np.eye(2),
        R=1e-4 * np.eye(1),
    )


def unstable_actuator_sensor_mode() -> ModeModel:
    """Unstable two-state system with one actuator and one sensor attack."""
    return ModeModel(
        A=np.array([[1.5, 1.0], [0.0, 0.1]]),
        B=np.eye(2),
        G=np.array([[1.0, 0.0], [0.0, 0.0]]),
        C=np.eye(2),
        D=np.zeros((2, 2)),
        H=np.array([[0.0, 0.0], [0.0, 1.0]]),
        Q=1e-4 * np.eye(2),
        R=1e-4 * np.eye(2),
    )


def two_sensor_system(H: np.ndarray) -> ModeModel:
    """The two-sensor example family with zeros at 0.1 and 1.2."""
    p = H.shape[1]
    return ModeModel(
        A=np.array([[0.1, 1.0], [0.0, 1.2]]),
        B=np.zeros((2, 1)),
        G=np.zeros((2, p)),
        C=np.eye(2),
        D=np.zeros((2, 1)),
        H=H,
        Q=1e-4 * np.eye(2),
        R=1e-4 * np.eye(2),
    )


def random_stable_system(rng, n, m, l, spectral_radius=0.9):
    """Random attack-free mode with a stable A and PD noise covariances."""
    A = rng.standard_normal((n, n))
    A *= spectral_radius / max(np.abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((l, n))
    D = rng.standard_normal((l, m))
    Lq = rng.standard_normal((n, n))
    Lr = rng.standard_normal((l, l))
    Q = 1e-3 * (Lq @ Lq.T + 0.1 * np.eye(n))
    R = 1e-3 * (Lr @ Lr.T + 0.1 * np.eye(l))
    return ModeModel(
        A=A, B=B, G=np.zeros((n, 0)), C=C, D=D, H=np.zeros((l, 0)), Q=Q, R=R
    )


@pytest.fixture(scope="session")
def benchmark():
    modes, scenario = build_benchmark()
    return benchmark_topology(), modes, scenario


@pytest.fixture(scope="session")
def benchmark_trace(benchmark):
    from resilient_mm import simulate

    _, modes, scenario = benchmark
    return simulate(modes, scenario)


@pytest.fixture(scope="session")
def mirror_pair():
    from resilient_mm.sim import mirror_pair_modes, mirror_pair_scenario

    return mirror_pair_modes(), mirror_pair_scenario()


@pytest.fixture(scope="session")
def mirror_plan(mirror_pair):
    from resilient_mm.sim import design_unidentifiable_attack, mirror_pair_scenario

    modes, _ = mirror_pair
    scenario = mirror_pair_scenario(horizon=2000, seed=101)
    return design_unidentifiable_attack(
        modes, q=0, star=1, scenario=scenario, n_runs=30, refine=1, burn_in=300
    )
