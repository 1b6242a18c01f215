import numpy as np
import pytest
from hypothesis import settings

from tradeopt.economy import PolicyWedges, generate_synthetic
from tradeopt.equilibrium import SolverOptions

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

TIGHT = SolverOptions(tol=1e-12)


@pytest.fixture(scope="session")
def cal21():
    return generate_synthetic(0, 2, 1)


@pytest.fixture(scope="session")
def cal22():
    return generate_synthetic(1, 2, 2)


@pytest.fixture(scope="session")
def cal33():
    return generate_synthetic(7, 3, 3)


def random_wedges(cal, rng, tariff=(0.0, 0.3), subsidy=(0.0, 0.2)):
    """Random admissible wedges: tariffs on foreign routes, per-origin subsidies."""
    N, J = cal.N, cal.J
    t = rng.uniform(*tariff, size=(N, N, J))
    t[np.arange(N), np.arange(N), :] = 0.0
    s = rng.uniform(*subsidy, size=(N, J))
    e = np.broadcast_to(-s[:, None, :], (N, N, J)).copy()
    return PolicyWedges(t, e)


# -- acceptance summary -----------------------------------------------------

_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        _acceptance[report.nodeid.split("::")[-1]] = (report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        passed, detail = _acceptance[name]
        number = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {label}  {detail}")
