import numpy as np
import pytest

from robeval.data import mnist_subset
from robeval.nn import cnn, linear_model, mlp, train_toy

ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = mark.args
        ACCEPTANCE_LINES.append(f"AC {number}: {'PASS' if rep.passed else 'FAIL'} {title}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mnist_train():
    return mnist_subset("train")


@pytest.fixture(scope="session")
def mnist_test():
    return mnist_subset("test")


@pytest.fixture(scope="session")
def confident_mlp(mnist_train):
    """Small plainly trained MLP whose logit gaps are large on most test points."""
    x, y = mnist_train
    return train_toy(mlp(784, 10, hidden=(64,), seed=0), x, y, epochs=20, seed=0)


@pytest.fixture(scope="session")
def robust_mlp(mnist_train):
    """d-256-256-K MLP trained with l-inf PGD at radius 0.15."""
    x, y = mnist_train
    return train_toy(mlp(784, 10, seed=0), x, y, mode="pgd", eps=0.15, epochs=10, seed=0)


@pytest.fixture(scope="session")
def mnist_cnn(mnist_train):
    x, y = mnist_train
    return train_toy(cnn(seed=0), x, y, epochs=8, seed=0)


def binary_linear(w, bias):
    """Two-class linear model whose logit difference z_0 - z_1 is ``w.x + bias``."""
    w = np.asarray(w, dtype=np.float64)
    return linear_model(np.stack([w / 2, -w / 2]), np.array([bias / 2, -bias / 2]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
