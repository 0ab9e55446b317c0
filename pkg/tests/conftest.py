import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from glmcf.geometry import MetricSpec, PeriodicGrid, build_metric

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CONFORMAL_F = "0.1*sin(q1)"


def flat(n=2, N=32):
    return build_metric(MetricSpec("flat"), PeriodicGrid(n, N))


def conformal(n=2, N=32, f=CONFORMAL_F):
    return build_metric(MetricSpec.from_strings("conformal", n, f), PeriodicGrid(n, N))


def diagonal(N=32, d=("1+0.2*sin(q2)", "1+0.1*cos(q1)")):
    return build_metric(MetricSpec.from_strings("diagonal", 2, d=d), PeriodicGrid(2, N))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
