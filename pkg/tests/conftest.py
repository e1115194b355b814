import numpy as np
import pytest

from somoformer.scene import Scene, SkeletonDef, TrajectoryWindow


def random_scene(n_persons=2, n_frames=30, n_joints=3, seed=0, fps=15.0):
    rng = np.random.default_rng(seed)
    skel = SkeletonDef.from_names([f"j{i}" for i in range(n_joints)], "j0")
    persons = tuple(rng.normal(size=(n_frames, n_joints, 3)) for _ in range(n_persons))
    return Scene(fps, skel, persons, tuple(f"p{i}" for i in range(n_persons)))


def random_window(rng, n_slots=2, n_joints=3, t=4, T=4, n_real=None, spread=2.0):
    """Window with ``n_real`` real persons in the leading slots, smooth-ish trajectories."""
    n_real = n_slots if n_real is None else n_real
    base = rng.uniform(-spread, spread, size=(n_slots, 1, 3, 1)) * np.array([1, 0, 1])[None, None, :, None]
    steps = rng.normal(scale=0.05, size=(n_slots, n_joints, 3, t + T)).cumsum(axis=-1)
    full = base + rng.normal(scale=0.3, size=(n_slots, n_joints, 3, 1)) + steps
    mask = np.arange(n_slots) < n_real
    full[~mask] = 0.0
    return TrajectoryWindow(full[..., :t], full[..., t:] if T else None, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, passed, detail)``; ``passed=None`` means skipped."""
    def record(number, title, passed, detail=""):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"criterion {number:>2} {status}  {title}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
