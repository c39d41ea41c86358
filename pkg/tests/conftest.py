import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from tbmeta import Params, build_truncated_power_law
from tbmeta.netgen import DegreeDistribution

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def defaults():
    return Params()


@pytest.fixture
def small_dist():
    return build_truncated_power_law(3.0, 3, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_params(rng, **overrides) -> Params:
    """Positive rates on scales where every model mechanism matters."""
    vals = dict(
        Lambda=rng.uniform(0.5, 2.0), beta=rng.uniform(0.01, 1.0), mu=rng.uniform(0.02, 1.0),
        q=rng.uniform(0.0, 0.5), alpha=rng.uniform(0.01, 1.0), theta=rng.uniform(0.0, 0.9),
        delta=rng.uniform(0.05, 1.0), eta=rng.uniform(0.01, 1.0), gamma=rng.uniform(0.0, 0.5),
        d=rng.uniform(0.0, 0.3), xi=rng.uniform(0.0, 0.5),
        D_S=rng.uniform(0.1, 3.0), D_E=rng.uniform(0.1, 3.0),
        D_I=rng.uniform(0.1, 3.0), D_R=rng.uniform(0.1, 3.0),
    )
    vals.update(overrides)
    return Params(**vals)


def random_dist(rng, n_min=2, n_max=30) -> DegreeDistribution:
    n = int(rng.integers(n_min, n_max + 1))
    degrees = np.sort(rng.choice(np.arange(1, 4 * n_max), size=n, replace=False))
    return DegreeDistribution.from_weights(degrees, rng.uniform(0.05, 1.0, size=n))


@st.composite
def params_st(draw, **overrides):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_params(np.random.default_rng(seed), **overrides)


@st.composite
def dist_st(draw, n_max=20):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_dist(np.random.default_rng(seed), n_max=n_max)


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


class criterion:
    """Context manager recording one acceptance line, pass or fail."""

    def __init__(self, number: int, title: str):
        self.key = f"{number}. {title}"
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = self.detail if ok else f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE[self.key] = (ok, detail)
        print(f"\n[acceptance] {'PASS' if ok else 'FAIL'} criterion {self.key} {detail}")
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}  {detail}")
