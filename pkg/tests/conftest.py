import numpy as np
import pytest

from rtfnet.tensor import get_tape

# criterion number -> (title, outcome, detail); filled by the acceptance module
ACCEPTANCE: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion check")


@pytest.fixture(autouse=True)
def _clean_tape():
    get_tape().clear()
    yield
    get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    ACCEPTANCE[n] = [title, "PASS" if rep.passed else "FAIL", detail]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, status, detail = ACCEPTANCE[n]
        line = f"criterion {n} [PRIMARY] {title}: {status}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
