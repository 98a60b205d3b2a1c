import numpy as np
import pytest

from acsbm.model import ModelSpec, SparsitySchedule

DENSE_B = -np.ones((3, 3)) - 0.5 * np.eye(3)


def dense_spec(link="log"):
    if link == "identity":
        return ModelSpec(3, (2, 2), 0.2 * np.ones((3, 3)) - 0.1 * np.eye(3), [0.05, -0.05],
                         "identity", "uniform")
    return ModelSpec(3, (2, 2), DENSE_B, [-0.7, 0.1], link, "uniform")


def sparse_regular_spec():
    return ModelSpec(2, (2, 2), 1.5 * np.ones((2, 2)) - np.eye(2), [1.0, -0.5], "log", "uniform")


SPARSE = SparsitySchedule(-0.8)
DENSE = SparsitySchedule(0.0)


def _sym(rng, K, lo, hi):
    B = rng.uniform(lo, hi, (K, K))
    return np.triu(B) + np.triu(B, 1).T


def random_spec(rng, link=None, K=None, full_rank=False):
    """A random valid dense spec; entries chosen so every probability is in [0, 1]."""
    link = link or rng.choice(["identity", "log", "logit", "probit"])
    K = K or int(rng.integers(1, 5))
    M = int(rng.integers(1, 4))
    levels = tuple(int(v) for v in rng.integers(2, 4, M))
    if link == "log":
        beta = rng.uniform(-1.0, 0.5, M)
        while True:
            B = _sym(rng, K, -3.0, -0.2) - beta.clip(0).sum()
            if not full_rank or np.linalg.matrix_rank(np.exp(B)) == K:
                break
    elif link == "identity":
        beta = rng.uniform(-0.05, 0.1, M)
        B = _sym(rng, K, 0.1 - beta.clip(max=0).sum(), 0.6)
    else:
        beta = rng.uniform(-1, 1, M)
        B = _sym(rng, K, -2, 2)
    pmf = rng.dirichlet(np.ones(K * int(np.prod(levels))))
    return ModelSpec(K, levels, B, beta, str(link), pmf)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
