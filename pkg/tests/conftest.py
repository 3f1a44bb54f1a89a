import numpy as np
import pytest

from tipmarket.ckks import default_params, keygen, small_params
from tipmarket.influence import Dataset, TrainConfig, build_projection, estimate_kfac, train

# Empirical bounds, frozen ~8x above the maxima printed by benchmarks/calibrate.py
# (fresh 1.2e-7 over 1000 vectors, product 1.2e-7 over 100 pairs, |v| <= 1).
B_FRESH = 1e-6
B_MUL = 1e-6


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def keys(params):
    return keygen(params, 1)


@pytest.fixture(scope="session")
def sparams():
    return small_params()


@pytest.fixture(scope="session")
def skeys(sparams):
    return keygen(sparams, 7)


def logistic_data(seed, n, d, scale=0.5, l2=0.01):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d) * scale
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ w)))).astype(float)
    return Dataset(X, y)


@pytest.fixture(scope="session")
def reference():
    """Reference convex config: d = 8 isotropic logistic regression, l2 = 0.01."""
    data = logistic_data(0, 400, 8)
    train_set, eval_set, pool = data[:250], data[250:300], data[300:]
    model = train(train_set, TrainConfig(l2=0.01))
    kfac = estimate_kfac(model, train_set)
    proj = build_projection(kfac, [(9, 1)])
    return {"model": model, "train": train_set, "eval": eval_set, "pool": pool, "kfac": kfac, "proj": proj}


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
