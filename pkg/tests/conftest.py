import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from intervmed.data import Dataset

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(n=200, p=2, q=1, seed=0, binary_y=False, effect=0.5):
    """Small randomized dataset with chained mediators."""
    rng = np.random.default_rng(seed)
    A = np.zeros(n)
    A[rng.permutation(n)[: n // 2]] = 1.0
    L = rng.normal(size=(n, q))
    M = np.empty((n, p))
    prev = np.zeros(n)
    for j in range(p):
        M[:, j] = effect * A + 0.4 * prev + (L[:, 0] * 0.3 if q else 0) + rng.normal(size=n)
        prev = M[:, j]
    eta = -0.2 + 0.3 * A + M @ np.linspace(0.5, 0.2, p) + (L @ np.full(q, 0.2) if q else 0)
    if binary_y:
        Y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        Y = eta + rng.normal(size=n)
    return Dataset(treatment=A, mediators=M, outcome=Y, covariates=L,
                   mediator_names=tuple(f"M{j + 1}" for j in range(p)),
                   covariate_names=tuple(f"L{j + 1}" for j in range(q)),
                   outcome_type="binary" if binary_y else "continuous")


@pytest.fixture
def small_dataset():
    return make_dataset()


@pytest.fixture
def binary_dataset():
    return make_dataset(n=300, binary_y=True, seed=1)


# -- acceptance summary: one line per criterion -------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if report.passed:
            outcome = "PASS"
        elif report.skipped:
            outcome = "SKIP"
        else:
            outcome = "FAIL"
        detail = props.get("detail", "")
        if report.skipped and not detail and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _CRITERIA[props["criterion"]] = (outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(k.rstrip("ab")), k)):
        outcome, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:>3}: {outcome}  {detail}")
