import numpy as np
import pytest

from handgrid.handspec import (
    ActuatorParams,
    HandModel,
    JointLimits,
    JointSpec,
    LinkSpec,
    Proxy,
    builtin_models,
)

BUILTIN_NAMES = ("isyhand", "isyhand_flat", "allegro_like", "leap_like")


@pytest.fixture(scope="session")
def models():
    return builtin_models()


@pytest.fixture(params=BUILTIN_NAMES)
def model(request, models):
    return models[request.param]


def chain_model(axes=((0.0, 0.0, 1.0),), lengths=None, lo=-3.0, hi=3.0, velocity=10.0, effort=5.0, inertia=1e-3):
    """Serial chain base -> l1 -> l2 ... with one revolute joint per axis."""
    lengths = lengths or [0.1] * len(axes)
    links = [LinkSpec("base", 0.1, (Proxy((0.0, 0.0, 0.0), 0.01),))]
    joints = []
    for i, (axis, length) in enumerate(zip(axes, lengths)):
        parent = "base" if i == 0 else f"l{i}"
        links.append(LinkSpec(f"l{i + 1}", 0.05, (Proxy((length, 0.0, 0.0), 0.01),)))
        joints.append(
            JointSpec(
                name=f"j{i + 1}",
                parent=parent,
                child=f"l{i + 1}",
                origin_xyz=(0.0, 0.0, 0.0) if i == 0 else (lengths[i - 1], 0.0, 0.0),
                origin_quat=(1.0, 0.0, 0.0, 0.0),
                axis=tuple(axis),
                limits=JointLimits(lo, hi, velocity, effort),
                actuator=ActuatorParams(3.0, 0.1, 0.01, 0.001),
                inertia=inertia,
            )
        )
    return HandModel("chain", tuple(links), tuple(joints), "j1")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance criterion reporting ------------------------------------------------

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    number, title = mark.args
    seen = item.config.stash[_CRITERIA]
    ok = rep.passed and seen.get(number, (title, True))[1]
    seen[number] = (title, ok)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    seen = config.stash[_CRITERIA]
    if not seen:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(seen):
        title, ok = seen[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}")
