"""Independent reference implementations used as test oracles."""

import itertools

import numpy as np
import pytest


def brute_vg(x):
    """Every pair, every intermediate point, exact chord test (0-based edges)."""
    x = [float(v) for v in x]
    n = len(x)
    out = set()
    for i, j in itertools.combinations(range(n), 2):
        if all(x[u] < (x[j] - x[i]) * (u - j) / (j - i) + x[j] for u in range(i + 1, j)):
            out.add((i, j))
    return out


def brute_hvg(x):
    n = len(x)
    return {
        (i, j)
        for i, j in itertools.combinations(range(n), 2)
        if all(x[u] < min(x[i], x[j]) for u in range(i + 1, j))
    }


def brute_lpvg(x, limit):
    x = [float(v) for v in x]
    n = len(x)
    out = set()
    for i, j in itertools.combinations(range(n), 2):
        blocked = sum(
            1 for u in range(i + 1, j) if not x[u] < (x[j] - x[i]) * (u - j) / (j - i) + x[j]
        )
        if blocked <= limit:
            out.add((i, j))
    return out


def central_difference(f, arrays, eps=1e-4):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            up = f()
            arr[idx] = orig - eps
            down = f()
            arr[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-12):
    """Worst ``max|a - n| / max(max|a|, max|n|)`` over the gradient arrays.

    Each array's error is scaled by that array's largest gradient
    magnitude, so near-zero entries do not dominate.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a)
        n = np.asarray(n)
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n)) / scale))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gradcheck(build, arrays, seed=0, eps=1e-4):
    """Compare tape gradients of ``sum(build(*tensors) * R)`` to central differences.

    ``R`` is a fixed random weighting so every output entry matters.
    Returns the worst relative error.
    """
    from avgraph import nn

    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [nn.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    weights = np.random.default_rng(seed + 999).standard_normal(out.shape)
    nn.sum(nn.mul(out, weights)).backward()
    analytic = [t.grad for t in tensors]

    def f():
        return float(np.sum(build(*[nn.Tensor(a) for a in arrays]).data * weights))

    numeric = central_difference(f, arrays, eps)
    return max_relative_error(analytic, numeric)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, ok, detail):
    """Remember one acceptance verdict; all verdicts print in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
