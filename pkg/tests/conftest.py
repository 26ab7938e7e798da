import math
from pathlib import Path

import numpy as np
import pytest

from depthnav.geometry import CircleObstacle, Scene, Segment, Vec2

ROOT = Path(__file__).resolve().parents[1]
TRACKS = ROOT / "tracks"


def square_room(size=10.0, start=(5.0, 5.0, 0.0), circles=()):
    """Closed square room drawn with explicit wall segments."""
    s = size
    corners = [(0, 0), (s, 0), (s, s), (0, s)]
    segs = tuple(Segment(Vec2(*corners[i]), Vec2(*corners[(i + 1) % 4])) for i in range(4))
    return Scene(segs, tuple(circles), Vec2(start[0], start[1]), start[2], (0.0, 0.0, s, s), name="room")


def open_scene(segments=(), circles=(), start=(0.0, 0.0, 0.0), extent=50.0):
    return Scene(tuple(segments), tuple(circles), Vec2(start[0], start[1]), start[2],
                 (-extent, -extent, extent, extent), name="open", open_bounds=True)


@pytest.fixture
def room():
    return square_room()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit(angle):
    return (math.cos(angle), math.sin(angle))


# acceptance lines collected during the run and echoed in the terminal summary
ACCEPTANCE: dict[str, str] = {}


def report(criterion: str, passed: bool, detail: str) -> str:
    line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
