"""Planar scene primitives, scene files, ray casting and collision queries.

A :class:`Scene` is immutable. Moving circles are never advanced in place;
their position is derived from the query ``time`` (constant velocity, with an
optional wrap at the scene bounds).

Scene file directives (one per line, ``#`` starts a comment)::

    name <text>
    bounds xmin ymin xmax ymax
    open_bounds
    start x y yaw
    segment ax ay bx by
    circle cx cy r [vx vy]
    finish ax ay bx by      # optional start/finish line for lap timing
    wrap                    # moving circles wrap around at the bounds
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numba
import numpy as np

from .errors import ContractError, SceneParseError, SceneValidationError

DEFAULT_FOOTPRINT = 0.25


class Vec2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Segment:
    a: Vec2
    b: Vec2

    def __post_init__(self):
        _require_finite("segment", (*self.a, *self.b))
        if self.a == self.b:
            raise SceneValidationError(f"segment {self.a} -> {self.b} has zero length")


@dataclass(frozen=True)
class CircleObstacle:
    center: Vec2
    radius: float
    velocity: Vec2 = Vec2(0.0, 0.0)

    def __post_init__(self):
        _require_finite("circle", (*self.center, self.radius, *self.velocity))
        if not self.radius > 0:
            raise SceneValidationError(f"circle radius must be positive, got {self.radius}")

    @property
    def moving(self) -> bool:
        return self.velocity != (0.0, 0.0)


def _require_finite(what, values):
    if not all(math.isfinite(v) for v in values):
        raise SceneValidationError(f"{what} has non-finite coordinates: {values}")


@dataclass(frozen=True)
class Scene:
    """Static walls plus (possibly moving) circular obstacles.

    Unless ``open_bounds`` is set, the four edges of ``bounds`` act as walls.
    Those implicit walls are not listed in ``segments`` but take part in every
    ray cast and collision query.
    """

    segments: tuple[Segment, ...]
    circles: tuple[CircleObstacle, ...]
    start_position: Vec2
    start_yaw: float
    bounds: tuple[float, float, float, float]
    name: str = "scene"
    open_bounds: bool = False
    finish: Segment | None = None
    wrap: bool = False
    footprint_radius: float = DEFAULT_FOOTPRINT

    _walls: np.ndarray = field(init=False, repr=False, compare=False)
    _circles: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "circles", tuple(self.circles))
        object.__setattr__(self, "start_position", Vec2(*map(float, self.start_position)))
        xmin, ymin, xmax, ymax = (float(v) for v in self.bounds)
        object.__setattr__(self, "bounds", (xmin, ymin, xmax, ymax))
        _require_finite("bounds", self.bounds)
        if not (xmin < xmax and ymin < ymax):
            raise SceneValidationError(f"bounds must satisfy xmin < xmax and ymin < ymax, got {self.bounds}")

        walls = [(*s.a, *s.b) for s in self.segments]
        if not self.open_bounds:
            walls += [
                (xmin, ymin, xmax, ymin),
                (xmax, ymin, xmax, ymax),
                (xmax, ymax, xmin, ymax),
                (xmin, ymax, xmin, ymin),
            ]
        object.__setattr__(self, "_walls", np.array(walls, dtype=np.float64).reshape(-1, 4))
        circ = [(*c.center, c.radius, *c.velocity) for c in self.circles]
        object.__setattr__(self, "_circles", np.array(circ, dtype=np.float64).reshape(-1, 5))
        self._walls.setflags(write=False)
        self._circles.setflags(write=False)

        sx, sy = self.start_position
        if not (math.isfinite(sx) and math.isfinite(sy) and math.isfinite(self.start_yaw)):
            raise SceneValidationError("start pose is not finite")
        if not (xmin <= sx <= xmax and ymin <= sy <= ymax):
            raise SceneValidationError("start pose outside bounds")
        if collision_check(self, self.start_position, self.footprint_radius, 0.0):
            raise SceneValidationError("start pose in collision")

    @property
    def wall_array(self) -> np.ndarray:
        """``(k, 4)`` array of ``ax, ay, bx, by`` including implicit bound walls."""
        return self._walls

    @property
    def has_moving(self) -> bool:
        return any(c.moving for c in self.circles)

    def circle_array(self, time: float = 0.0) -> np.ndarray:
        """``(m, 3)`` array of ``cx, cy, r`` with moving circles placed at ``time``."""
        c = self._circles
        if c.shape[0] == 0:
            return c[:, :3]
        pos = c[:, :2] + c[:, 3:5] * time
        if self.wrap:
            lo = np.array(self.bounds[:2])
            span = np.array(self.bounds[2:]) - lo
            pos = lo + np.mod(pos - lo, span)
        return np.column_stack([pos, c[:, 2]])


# ---------------------------------------------------------------------------
# scene files


_ARITY = {
    "bounds": 4,
    "start": 3,
    "segment": 4,
    "finish": 4,
    "open_bounds": 0,
    "wrap": 0,
}


def parse_scene(text: str, source: str | None = None, footprint_radius: float = DEFAULT_FOOTPRINT) -> Scene:
    """Parse scene-file text into a validated :class:`Scene`."""
    name = None
    bounds = None
    start = None
    finish = None
    open_bounds = False
    wrap = False
    segments = []
    circles = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        directive, _, rest = line.partition(" ")
        rest = rest.strip()
        if directive == "name":
            if not rest:
                raise SceneParseError("'name' needs a label", lineno, source)
            name = rest
            continue
        if directive not in _ARITY and directive != "circle":
            raise SceneParseError(f"unknown directive '{directive}'", lineno, source)

        fields = rest.split()
        try:
            nums = [float(f) for f in fields]
        except ValueError:
            bad = next(f for f in fields if not _is_float(f))
            raise SceneParseError(f"'{directive}': field '{bad}' is not a number", lineno, source) from None

        if directive == "circle":
            if len(nums) not in (3, 5):
                raise SceneParseError(f"'circle' takes 3 or 5 numbers, got {len(nums)}", lineno, source)
        elif len(nums) != _ARITY[directive]:
            raise SceneParseError(
                f"'{directive}' takes {_ARITY[directive]} numbers, got {len(nums)}", lineno, source
            )

        try:
            if directive == "bounds":
                bounds = tuple(nums)
            elif directive == "start":
                start = nums
            elif directive == "segment":
                segments.append(Segment(Vec2(*nums[:2]), Vec2(*nums[2:])))
            elif directive == "finish":
                finish = Segment(Vec2(*nums[:2]), Vec2(*nums[2:]))
            elif directive == "circle":
                vel = Vec2(*nums[3:5]) if len(nums) == 5 else Vec2(0.0, 0.0)
                circles.append(CircleObstacle(Vec2(*nums[:2]), nums[2], vel))
            elif directive == "open_bounds":
                open_bounds = True
            elif directive == "wrap":
                wrap = True
        except SceneValidationError as exc:
            raise SceneParseError(str(exc), lineno, source) from None

    if start is None:
        raise SceneParseError("missing 'start' directive", None, source)
    if bounds is None:
        bounds = _auto_bounds(segments, circles, start)
    return Scene(
        segments=tuple(segments),
        circles=tuple(circles),
        start_position=Vec2(start[0], start[1]),
        start_yaw=start[2],
        bounds=bounds,
        name=name or (Path(source).stem if source else "scene"),
        open_bounds=open_bounds,
        finish=finish,
        wrap=wrap,
        footprint_radius=footprint_radius,
    )


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def _auto_bounds(segments, circles, start):
    xs = [start[0]]
    ys = [start[1]]
    for s in segments:
        xs += [s.a.x, s.b.x]
        ys += [s.a.y, s.b.y]
    for c in circles:
        xs += [c.center.x - c.radius, c.center.x + c.radius]
        ys += [c.center.y - c.radius, c.center.y + c.radius]
    xmin, xmax, ymin, ymax = min(xs), max(xs), min(ys), max(ys)
    if xmin == xmax or ymin == ymax:
        raise SceneParseError("cannot infer bounds; add a 'bounds' directive")
    return (xmin, ymin, xmax, ymax)


def load_scene(path, footprint_radius: float = DEFAULT_FOOTPRINT) -> Scene:
    path = Path(path)
    return parse_scene(path.read_text(encoding="utf-8"), source=str(path), footprint_radius=footprint_radius)


def format_scene(scene: Scene) -> str:
    """Serialize ``scene`` back to the scene-file format (round-trips exactly)."""
    lines = [f"name {scene.name}", "bounds " + " ".join(repr(v) for v in scene.bounds)]
    if scene.open_bounds:
        lines.append("open_bounds")
    if scene.wrap:
        lines.append("wrap")
    lines.append(f"start {scene.start_position.x!r} {scene.start_position.y!r} {scene.start_yaw!r}")
    if scene.finish is not None:
        f = scene.finish
        lines.append(f"finish {f.a.x!r} {f.a.y!r} {f.b.x!r} {f.b.y!r}")
    for s in scene.segments:
        lines.append(f"segment {s.a.x!r} {s.a.y!r} {s.b.x!r} {s.b.y!r}")
    for c in scene.circles:
        line = f"circle {c.center.x!r} {c.center.y!r} {c.radius!r}"
        if c.moving:
            line += f" {c.velocity.x!r} {c.velocity.y!r}"
        lines.append(line)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ray casting


def cast_rays(scene: Scene, origin, dirs: np.ndarray, r_max: float, time: float = 0.0):
    """Closed-form distances along many rays sharing one origin.

    ``dirs`` is an ``(n, 2)`` array of unit vectors. Returns ``(distances,
    hits)``; rays that hit nothing within ``r_max`` report ``r_max``.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    circles = np.ascontiguousarray(scene.circle_array(time))
    return _cast_kernel(float(origin[0]), float(origin[1]), dirs, scene.wall_array, circles, float(r_max))


@numba.njit(cache=True)
def _cast_kernel(ox, oy, dirs, walls, circles, r_max):
    n = dirs.shape[0]
    dist = np.empty(n)
    hits = np.empty(n, dtype=np.bool_)
    for i in range(n):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        best = np.inf
        for j in range(walls.shape[0]):
            ex = walls[j, 2] - walls[j, 0]
            ey = walls[j, 3] - walls[j, 1]
            den = dx * ey - dy * ex
            if den == 0.0:
                continue
            wx = walls[j, 0] - ox
            wy = walls[j, 1] - oy
            t = (wx * ey - wy * ex) / den
            if t < 0.0 or t >= best:
                continue
            s = (dy * wx - dx * wy) / den
            if 0.0 <= s <= 1.0:
                best = t
        for j in range(circles.shape[0]):
            ocx = ox - circles[j, 0]
            ocy = oy - circles[j, 1]
            b = dx * ocx + dy * ocy
            disc = b * b - (ocx * ocx + ocy * ocy - circles[j, 2] * circles[j, 2])
            if disc < 0.0:
                continue
            sq = np.sqrt(disc)
            t = -b - sq
            if t < 0.0:
                t = -b + sq
            if 0.0 <= t < best:
                best = t
        if best <= r_max:
            dist[i] = best
            hits[i] = True
        else:
            dist[i] = r_max
            hits[i] = False
    return dist, hits


def ray_cast(scene: Scene, origin, direction, r_max: float, time: float = 0.0) -> tuple[float, bool]:
    """Distance to the nearest primitive along one ray, or ``(r_max, False)``."""
    d = np.asarray(direction, dtype=np.float64).reshape(1, 2)
    if abs(math.hypot(d[0, 0], d[0, 1]) - 1.0) > 1e-9:
        raise ContractError(f"ray direction must be a unit vector, got {tuple(d[0])}")
    if not r_max > 0:
        raise ContractError(f"r_max must be positive, got {r_max}")
    if time < 0:
        raise ContractError(f"time must be nonnegative, got {time}")
    dist, hit = cast_rays(scene, origin, d, r_max, time)
    return float(dist[0]), bool(hit[0])


# ---------------------------------------------------------------------------
# collision


def point_segment_distance(p, walls: np.ndarray) -> np.ndarray:
    """Distance from point ``p`` to each row ``ax, ay, bx, by`` of ``walls``."""
    px, py = float(p[0]), float(p[1])
    ax, ay = walls[:, 0], walls[:, 1]
    ex = walls[:, 2] - ax
    ey = walls[:, 3] - ay
    u = np.clip(((px - ax) * ex + (py - ay) * ey) / (ex * ex + ey * ey), 0.0, 1.0)
    return np.hypot(ax + u * ex - px, ay + u * ey - py)


def clearance(scene: Scene, position, time: float = 0.0) -> float:
    """Smallest distance from ``position`` to any primitive surface.

    Circles count as solid discs, so a point inside one has clearance 0.
    """
    best = math.inf
    if scene.wall_array.shape[0]:
        best = float(point_segment_distance(position, scene.wall_array).min())
    c = scene.circle_array(time)
    if c.shape[0]:
        d = np.hypot(c[:, 0] - position[0], c[:, 1] - position[1]) - c[:, 2]
        best = min(best, max(float(d.min()), 0.0))
    return best


def collision_check(scene: Scene, position, footprint_radius: float = DEFAULT_FOOTPRINT, time: float = 0.0) -> bool:
    """True when a disc of ``footprint_radius`` at ``position`` touches anything.

    Contact at exactly ``footprint_radius`` counts as a collision.
    """
    if not footprint_radius > 0:
        raise ContractError(f"footprint_radius must be positive, got {footprint_radius}")
    if scene.wall_array.shape[0]:
        if point_segment_distance(position, scene.wall_array).min() <= footprint_radius:
            return True
    c = scene.circle_array(time)
    if c.shape[0]:
        d = np.hypot(c[:, 0] - position[0], c[:, 1] - position[1])
        if np.any(d <= c[:, 2] + footprint_radius):
            return True
    return False


def segments_cross(p0, p1, seg: Segment) -> int:
    """Signed crossing of the motion ``p0 -> p1`` over ``seg``.

    Returns +1 when moving from the left of ``seg.a -> seg.b`` to its right,
    -1 for the opposite direction and 0 when the paths do not intersect.
    """
    ax, ay = seg.a
    ex, ey = seg.b.x - ax, seg.b.y - ay
    s0 = ex * (p0[1] - ay) - ey * (p0[0] - ax)
    s1 = ex * (p1[1] - ay) - ey * (p1[0] - ax)
    if (s0 > 0) == (s1 > 0):
        return 0
    # where along the segment the motion crosses its supporting line
    f = s0 / (s0 - s1)
    cx = p0[0] + f * (p1[0] - p0[0])
    cy = p0[1] + f * (p1[1] - p0[1])
    u = ((cx - ax) * ex + (cy - ay) * ey) / (ex * ex + ey * ey)
    if not 0.0 <= u <= 1.0:
        return 0
    return 1 if s0 > 0 else -1
