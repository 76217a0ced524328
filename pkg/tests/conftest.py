import numpy as np
import pytest

from dicer.autodiff import Tape, Tensor


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. the array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = f()
        flat[k] = old - h
        down = f()
        flat[k] = old
        gflat[k] = (up - down) / (2 * h)
    return g


def tape_grads(build, arrays):
    """Analytic gradients of ``build(*tensors)`` (a scalar Tensor) w.r.t. each array."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = build(*leaves)
    grads = tape.backward(out)
    return [grads.get(t, np.zeros_like(t.data)) for t in leaves]


def assert_fd_matches(build, arrays, tol=1e-6):
    """Tape gradients of ``build`` agree with central differences for every input."""
    analytic = tape_grads(build, arrays)
    for a, g in zip(arrays, analytic):
        def f():
            return float(build(*[Tensor(x) for x in arrays]).data)
        num = numeric_grad(f, a)
        np.testing.assert_allclose(g, num, rtol=tol, atol=tol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion_line():
    def record(number, passed, detail):
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        line = f"criterion {number}: {status} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
