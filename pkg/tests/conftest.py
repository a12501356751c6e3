import numpy as np
import pytest

from bvsurv.data import sort_by_time


def make_dataset(n=60, p=5, beta=None, seed=0, censor_rate=0.3, fixed=()):
    """Small exponential-PH dataset with independent censoring."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
    t = rng.exponential(1.0, n) / np.exp(X @ beta)
    c = rng.exponential(1.0 / censor_rate, n) if censor_rate > 0 else np.full(n, np.inf)
    status = (t <= c).astype(int)
    if status.sum() == 0:
        status[0] = 1
    return sort_by_time(np.minimum(t, c), status, X, fixed_columns=fixed)


@pytest.fixture
def small_data():
    return make_dataset(n=80, p=6, beta=[1.0, -0.8, 0, 0, 0, 0], seed=1)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
            terminalreporter.write_line(ACCEPTANCE[key])
