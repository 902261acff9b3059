import pytest

from fido_lab.config import TOY
from fido_lab.model import init_model

# Filled by tests marked with @pytest.mark.criterion; printed once at the end.
CRITERIA: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    label = marker.args[0]
    CRITERIA[label] = CRITERIA.get(label, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(CRITERIA, key=lambda s: (int(s.split()[0].rstrip("abc")), s)):
        terminalreporter.write_line(f"{'PASS' if CRITERIA[label] else 'FAIL'}  {label}")


@pytest.fixture(scope="session")
def toy_model():
    return init_model(TOY, seed=0)
