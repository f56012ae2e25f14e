import numpy as np
import pytest

from eventmvs import synth
from eventmvs.event_io import Calibration

_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _CRITERIA[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def cal():
    return Calibration(240, 180, 200.0, 200.0, 120.0, 90.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_SCENES: dict[str, tuple] = {}


def scene_data(name: str):
    """``(events, trajectory, ground_truth, calibration)`` for a built-in scene, cached per session."""
    if name not in _SCENES:
        cal = synth.davis_calibration()
        ev, traj, gt = synth.generate(synth.BUILTIN_SCENES[name](), cal)
        _SCENES[name] = (ev, traj, gt, cal)
    return _SCENES[name]


@pytest.fixture(scope="session")
def three_planes():
    return scene_data("3planes")


@pytest.fixture(scope="session")
def three_walls():
    return scene_data("3walls")
