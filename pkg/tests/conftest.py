import numpy as np
import pytest

from hardabsa import numerics as nx


def numerical_grad(fn, arrays, h=1e-4):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every entry of every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = fn(*arrays)
            a[i] = old - h
            fm = fn(*arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    """Relative error with an absolute fallback for entries below ``floor`` in magnitude."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(scale < floor, diff, diff / np.maximum(scale, 1e-300))
    return float(rel.max()) if rel.size else 0.0


def check_grad(build, arrays, h=1e-4, tol=1e-3):
    """``build(*tensors)`` returns a scalar Tensor; compare autodiff against finite differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [nx.Tensor(a, requires_grad=True) for a in arrays]
    nx.backward(build(*leaves))
    analytic = [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, leaves)]

    def f(*arrs):
        with nx.no_grad():
            return build(*[nx.Tensor(a) for a in arrs]).item()

    numeric = numerical_grad(f, arrays, h)
    errs = [max_rel_error(a, n) for a, n in zip(analytic, numeric)]
    assert max(errs) < tol, f"gradient mismatch, relative errors {errs}"
    return max(errs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# pass/fail lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
