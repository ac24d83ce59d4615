import numpy as np
import pytest



def finite_difference(f, params, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of every param Tensor."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            g.reshape(-1)[i] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance bookkeeping ----------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    """Remember one acceptance verdict and echo it immediately."""
    ACCEPTANCE[number] = (bool(passed), title, detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} -- {detail}")
