import numba
import numpy as np
import pytest

from pemude.odesim import DynamicalSystem, Kernel, SolverConfig, integrate, uniform_grid
from pemude.systems import rossler_system


@numba.njit(cache=True)
def _zero_f(x, p, u, out):
    for i in range(x.shape[0]):
        out[i] = 0.0


@numba.njit(cache=True)
def _zero_jac(x, p, u, J):
    J[:, :] = 0.0


def zero_system(dim: int = 1) -> DynamicalSystem:
    """dx/dt = 0 with a compiled kernel, for hand-checkable PEM problems."""
    pvec = np.zeros(0)
    return DynamicalSystem(dim, lambda x, t, p, u: np.zeros(dim), params=pvec,
                           kernel=Kernel(_zero_f, _zero_jac, pvec))


def rossler_data(t_end: float = 20.0, dt: float = 0.1, x0=(1.0, 1.0, 1.0)):
    grid = uniform_grid(0.0, t_end, dt)
    return integrate(rossler_system(), x0, (0.0, t_end),
                     SolverConfig(save_times=grid, abstol=1e-10, reltol=1e-10))


@pytest.fixture(scope="session")
def rossler_short():
    return rossler_data()


def gradient_rel_error(g, fd, coords) -> float:
    """Max-norm error over the sampled coordinates relative to the max-norm FD gradient."""
    a, b = np.asarray(g)[coords], np.asarray(fd)[coords]
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
