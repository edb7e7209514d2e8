import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from collstate import models
from collstate.fsm import Machine
from collstate.models import CSParams, LimitCSParams, NExpParams
from collstate.runstats import RunHistogram

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_machine(rng, p, alphabet=("C", "R"), sparsity=0.0):
    """Dense (or randomly thinned) stochastic machine with a random initial vector."""
    t = rng.random((len(alphabet), p, p))
    if sparsity:
        t *= rng.random(t.shape) >= sparsity
    rows = t.sum(axis=(0, 2))
    for i in np.flatnonzero(rows == 0):
        t[0, i, rng.integers(p)] = 1.0
    t /= t.sum(axis=(0, 2))[None, :, None]
    pi = rng.dirichlet(np.ones(p))
    return Machine(alphabet, t, pi)


def one_state(q):
    return Machine(("C", "R"), np.array([[[q]], [[1 - q]]]), np.array([1.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(rng, kind):
    if kind == "CS":
        return CSParams(float(rng.uniform(1, 1e4)), float(rng.uniform(0, 0.995)),
                        float(rng.uniform(0, 3)))
    if kind == "limit-CS":
        return LimitCSParams(float(rng.uniform(1, 1e4)), float(rng.uniform(0.05, 3)))
    n = int(rng.integers(1, 5))
    rates = np.sort(rng.uniform(models.B_MIN, models.B_MAX, n))
    if (np.diff(rates) <= 0).any():
        rates = np.linspace(0.01, 0.9, n)
    return NExpParams(tuple(rng.uniform(1, 1e4, n)), tuple(rates))


def random_hist(rng, k_max):
    counts = {k: int(rng.poisson(50 * math.exp(-0.1 * k))) for k in range(1, k_max + 1)}
    counts = {k: v for k, v in counts.items() if v}
    total = sum((k + 1) * v for k, v in counts.items()) + 1
    return RunHistogram(counts, sum(counts.values()), total)


def fd_gradient(hist, params, h=1e-4):
    """Central differences with one Richardson step (truncation error O(h^4))."""
    fam = models._family_of(params)
    theta = params.as_vector().astype(float)
    counts, k_max = models._count_vector(hist, None)

    def f(x):
        return models._loglike(counts, fam.log_intensity(x, k_max))

    def central(i, step):
        up, dn = theta.copy(), theta.copy()
        up[i] += step
        dn[i] -= step
        return (f(up) - f(dn)) / (2 * step)

    g = np.empty_like(theta)
    for i in range(theta.size):
        step = h * max(abs(theta[i]), 1e-3)
        g[i] = (4 * central(i, step / 2) - central(i, step)) / 3
    return g
