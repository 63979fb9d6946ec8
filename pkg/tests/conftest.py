import numpy as np
import pytest

from donanet.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def var(a):
    """float64 leaf tensor that records gradients."""
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def away_from_zero(rng, shape, margin=0.05):
    """Random values with |x| >= margin so kinks stay out of finite-difference reach."""
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def naive_region_stats(x, boxes):
    """Two-pass per-box mean and population variance, plain loops."""
    c = x.shape[0]
    mu = np.zeros((len(boxes), c))
    v = np.zeros((len(boxes), c))
    for r, (r0, c0, nr, nc) in enumerate(boxes):
        for ch in range(c):
            vals = [x[ch, i, j] for i in range(r0, r0 + nr) for j in range(c0, c0 + nc)]
            m = sum(vals) / len(vals)
            mu[r, ch] = m
            v[r, ch] = sum((t - m) ** 2 for t in vals) / len(vals)
    return mu, v


# -- acceptance reporting --------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    # a criterion passes only if every test carrying its mark passes
    _CRITERIA.setdefault(mark.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if all(_CRITERIA[n]) else 'FAIL'}")
