import time

import numpy as np
import pytest

from nnerror.diffnet import NetworkParams, init_params


def central_fd(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central differences of a scalar or array-valued f along every coordinate of x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def random_params(seed: int, width: int = 6, out_dim: int = 2, bias_scale: float = 0.3) -> NetworkParams:
    p = init_params(seed, width, out_dim)
    rng = np.random.default_rng(seed + 1000)
    p.b1 = bias_scale * rng.standard_normal(width)
    p.b2 = bias_scale * rng.standard_normal(width)
    p.b3 = bias_scale * rng.standard_normal(out_dim)
    return p


def interleaved_mean_seconds(step_a, step_b, n: int, block: int = 50) -> tuple[float, float]:
    """Mean wall time per call of two steps, timed in alternating blocks so load drift hits both."""
    step_a(), step_b()
    spent = [0.0, 0.0]
    done = 0
    while done < n:
        k = min(block, n - done)
        for i, step in enumerate((step_a, step_b)):
            start = time.perf_counter()
            for _ in range(k):
                step()
            spent[i] += time.perf_counter() - start
        done += k
    return spent[0] / n, spent[1] / n


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
