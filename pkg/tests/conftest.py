import numpy as np
import pytest


def numeric_gradient_errors(fn, tables, grads, rng, n=40, h=1e-6, floor=1e-4):
    """Relative errors between ``grads`` and central differences of ``fn()``.

    Coordinates are drawn from rows with a nonzero analytic gradient.
    """
    coords = []
    for name, g in grads.items():
        flat = g.reshape(len(g), -1)
        rows = np.flatnonzero(np.any(flat != 0, axis=1))
        for r in rows:
            coords.extend((name, int(r), j) for j in range(flat.shape[1]))
    picks = rng.choice(len(coords), size=min(n, len(coords)), replace=False)
    errors = []
    for i in picks:
        name, r, j = coords[i]
        arr = tables[name].reshape(len(tables[name]), -1)
        old = arr[r, j]
        arr[r, j] = old + h
        up = fn()
        arr[r, j] = old - h
        dn = fn()
        arr[r, j] = old
        num = (up - dn) / (2 * h)
        ana = grads[name].reshape(len(grads[name]), -1)[r, j]
        errors.append(abs(ana - num) / max(abs(ana), abs(num), floor))
    return np.array(errors)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
