import numpy as np
import pytest

from linearizer.maps import AnalyticBijection, coupling_stack, identity_map
from linearizer.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture(scope="session")
def coupling2():
    return coupling_stack(2, 6, rng=RngStream(11), out_scale=0.5)


@pytest.fixture(scope="session")
def coupling4():
    return coupling_stack(4, 6, rng=RngStream(12))


@pytest.fixture(scope="session")
def coupling4b():
    return coupling_stack(4, 6, rng=RngStream(13))


@pytest.fixture(scope="session")
def cube1():
    return AnalyticBijection("cube", 1)


def maps_of_every_kind(dim: int):
    """One representative per shipped map kind, keyed by a readable label."""
    from linearizer.maps import ActNorm, AdditiveCoupling, AffineCoupling, Composition, HouseholderMixing

    r = RngStream(99)
    act = ActNorm(dim)
    act.log_scale.data = r.normal(dim, 0.3)
    act.bias.data = r.normal(dim, 0.5)
    return {
        "identity": identity_map(dim),
        "cube": AnalyticBijection("cube", dim),
        "scaled-sinh": AnalyticBijection("scaled-sinh", dim),
        "affine": AnalyticBijection("affine", dim, rng=r),
        "actnorm": act,
        "affine-coupling": AffineCoupling(dim, rng=r, out_scale=0.5),
        "additive-coupling": AdditiveCoupling(dim, swap=True, rng=r, out_scale=0.5),
        "householder": HouseholderMixing(dim, rng=r),
        "stack": coupling_stack(dim, 6, rng=r),
        "additive-stack": coupling_stack(dim, 6, "additive", rng=r),
        "composition": Composition([AnalyticBijection("scaled-sinh", dim), HouseholderMixing(dim, rng=r)]),
    }


# acceptance reporting: one pass/fail line per criterion at the end of the run
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "status": "PASS", "detail": ""})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped:
        entry["status"] = "SKIP"
    props = dict(item.user_properties)
    if props:
        entry["detail"] = ", ".join(f"{k}={v}" for k, v in props.items())


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        line = f"criterion {number:2d} {e['status']}  {e['title']}"
        if e["detail"]:
            line += f"  ({e['detail']})"
        terminalreporter.write_line(line)
