import pytest

from streamwork.minicp import MiniModel
from streamwork.problems import builtin_problem


@pytest.fixture(scope="session")
def bh_model():
    return builtin_problem("black_hole").base


@pytest.fixture(scope="session")
def sg_model():
    return builtin_problem("social_golfers").base


@pytest.fixture(scope="session")
def vl_model():
    return builtin_problem("vessel_loading").base


def latin_model(n):
    return MiniModel.build(
        "ls", {"n": n}, [{"name": "a", "index": ["1..n", "1..n"], "domain": "1..n"}],
        ["forall(i in 1..n)(alldifferent([a[i, j] | j in 1..n]))",
         "forall(j in 1..n)(alldifferent([a[i, j] | i in 1..n]))"])


def queens_model(n):
    return MiniModel.build(
        "q", {"n": n}, [{"name": "q", "index": ["1..n"], "domain": "1..n"}],
        ["alldifferent(q)", "forall(i, j in 1..n where i < j)(abs(q[i] - q[j]) != j - i)"])


def perm_model(n):
    return MiniModel.build("perm", {"n": n}, [{"name": "x", "index": ["1..n"], "domain": "1..n"}],
                           ["alldifferent(x)"])


# ------------------------------------------------------- acceptance summary

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    # a criterion passes only if every phase of every test carrying it passed
    _, ok = _ACCEPTANCE.get(number, (title, True))
    _ACCEPTANCE[number] = (title, ok and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
