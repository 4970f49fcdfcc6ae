import math

import numpy as np
import pytest

from mardpg import numgrad as ng


def scalar_lstm(params, h_prev, c_prev, x):
    """Independent elementwise LSTM step written with plain Python loops."""
    z = list(x) + list(h_prev)
    hidden = len(h_prev)

    def gate(name, j):
        W, b = params[f"W_{name}"], params[f"b_{name}"]
        return sum(W[j, k] * z[k] for k in range(len(z))) + b[j]

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    h, c = [], []
    for j in range(hidden):
        i = sig(gate("i", j))
        f = sig(gate("f", j))
        g = math.tanh(gate("g", j))
        o = sig(gate("o", j))
        cj = f * c_prev[j] + i * g
        c.append(cj)
        h.append(o * math.tanh(cj))
    return np.array(h), np.array(c)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_lstm(rng):
    params = ng.init_params(ng.lstm_shapes(5, 4), rng)
    for k in params:
        if k.startswith("b_"):
            params[k] = rng.uniform(-0.5, 0.5, params[k].shape)
    return params


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
