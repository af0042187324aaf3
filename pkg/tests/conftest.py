import numpy as np
import pytest

from fademl.nn import Conv2D, Dense, MaxPool, Network, ReLU, Softmax

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def small_conv_net(seed=0, shape=(2, 6, 6), classes=6, dtype=np.float32):
    layers = [Conv2D(3), ReLU(), MaxPool(2), Dense(classes), Softmax()]
    net = Network(layers, shape).initialize(seed)
    return net.astype(dtype)


@pytest.fixture
def conv_net():
    return small_conv_net()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
