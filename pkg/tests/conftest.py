import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kolmolab.matrix_core import OperatorSpec, kalman_index
from kolmolab.models import builtin_model

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def heat():
    return builtin_model("heat1d").spec()


@pytest.fixture(scope="session")
def rot():
    return builtin_model("rotation").spec()


@pytest.fixture(scope="session")
def kol():
    return builtin_model("kolmogorov").spec()


@pytest.fixture(scope="session")
def mix():
    return builtin_model("mix").spec()


def random_hypoelliptic(seed: int, N: int = 3, scale: float = 0.5) -> OperatorSpec:
    """Rank-one diffusion plus a random drift, redrawn until the Kalman condition holds."""
    rng = np.random.default_rng(seed)
    while True:
        a = rng.standard_normal(N)
        A = np.outer(a, a)
        B = scale * rng.standard_normal((N, N))
        spec = OperatorSpec(A, B, name=f"random{seed}")
        if kalman_index(spec).hypoelliptic:
            return spec


@pytest.fixture(scope="session")
def constants_cache():
    from kolmolab.constants import compute_constants

    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = compute_constants(builtin_model(name).spec())
        return cache[name]

    return get


def random_trace_free(seed: int, N: int = 3) -> OperatorSpec:
    """Rank-one diffusion with a random skew drift (spectrum on the imaginary axis)."""
    rng = np.random.default_rng(seed)
    while True:
        a = rng.standard_normal(N)
        S = rng.standard_normal((N, N))
        spec = OperatorSpec(np.outer(a, a), 0.5 * (S - S.T), name=f"skew{seed}")
        if kalman_index(spec).hypoelliptic:
            return spec


def pytest_terminal_summary(terminalreporter):
    lines = [value for reps in terminalreporter.stats.values() for rep in reps
             for key, value in getattr(rep, "user_properties", ()) if key == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines)):
            terminalreporter.write_line(line)
