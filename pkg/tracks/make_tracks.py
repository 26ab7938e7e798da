"""Regenerate the shipped ``*.scene`` files.

Run from the repository root::

    python tracks/make_tracks.py
"""

from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent


def _fmt(v):
    return f"{v:.4f}".rstrip("0").rstrip(".") if v != 0 else "0"


def closed_polyline(points):
    pts = list(points) + [points[0]]
    return [(*pts[i], *pts[i + 1]) for i in range(len(pts) - 1)]


def offset_loop(center, width):
    """Left and right boundaries of a corridor around a closed centerline."""
    nxt = np.roll(center, -1, axis=0)
    prv = np.roll(center, 1, axis=0)
    tangent = nxt - prv
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    return center + 0.5 * width * normal, center - 0.5 * width * normal


def min_turn_radius(center):
    nxt = np.roll(center, -1, axis=0)
    prv = np.roll(center, 1, axis=0)
    a = np.linalg.norm(center - prv, axis=1)
    b = np.linalg.norm(nxt - center, axis=1)
    c = np.linalg.norm(nxt - prv, axis=1)
    cross = np.abs((center - prv)[:, 0] * (nxt - center)[:, 1] - (center - prv)[:, 1] * (nxt - center)[:, 0])
    with np.errstate(divide="ignore"):
        r = a * b * c / (2.0 * cross)
    return float(r.min())


def write_scene(path, name, bounds, start, segments, finish=None, circles=(), header=(), extra=()):
    lines = [f"# {h}" for h in header]
    lines += [f"name {name}", "bounds " + " ".join(_fmt(v) for v in bounds)]
    lines += list(extra)
    lines.append("start " + " ".join(_fmt(v) for v in start))
    if finish is not None:
        lines.append("finish " + " ".join(_fmt(v) for v in finish))
    lines += ["segment " + " ".join(_fmt(v) for v in s) for s in segments]
    lines += ["circle " + " ".join(_fmt(v) for v in c) for c in circles]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def corridor_oval(straight=20.0, radius=6.0, width=3.0, arc_segments=24, pillars=((2.0, -6.4, 0.3),), path=None):
    half = straight / 2.0
    center = []
    for x in np.linspace(-half, half, 9)[:-1]:
        center.append((x, -radius))
    for t in np.linspace(-np.pi / 2, np.pi / 2, arc_segments + 1)[:-1]:
        center.append((half + radius * np.cos(t), radius * np.sin(t)))
    for x in np.linspace(half, -half, 9)[:-1]:
        center.append((x, radius))
    for t in np.linspace(np.pi / 2, 3 * np.pi / 2, arc_segments + 1)[:-1]:
        center.append((-half + radius * np.cos(t), radius * np.sin(t)))
    center = np.array(center)
    inner, outer = offset_loop(center, width)
    # only keep vertices that matter for straight runs: drop collinear points
    segs = closed_polyline(_simplify(inner)) + closed_polyline(_simplify(outer))
    m = radius + width
    bounds = (-half - m - 1, -m - 1, half + m + 1, m + 1)
    start = (-half + 5.0, -radius, 0.0)
    finish = (-half + 4.0, -radius - width / 2, -half + 4.0, -radius + width / 2)
    write_scene(
        path or HERE / "corridor_oval.scene", "corridor_oval", bounds, start, segs, finish, circles=pillars,
        header=["Stadium-shaped corridor: 20 m straights, 6 m centerline radius, 3 m wide.",
                "Counter-clockwise laps; the finish line is crossed in +x on the bottom straight.",
                "One 0.3 m pillar on the bottom straight forces a swerve every lap."],
    )


def _simplify(points, tol=1e-9):
    keep = []
    n = len(points)
    for i in range(n):
        p, q, r = points[i - 1], points[i], points[(i + 1) % n]
        cross = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0])
        if abs(cross) > tol:
            keep.append(q)
    return keep


def training_track(width=2.6, n=160):
    """Multidirectional loop: radial wobbles give left and right corners of mixed radii."""
    theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    r = 8.0 + 1.6 * np.sin(3 * theta + 0.4) + 0.4 * np.cos(5 * theta)
    center = np.column_stack([1.25 * r * np.cos(theta), r * np.sin(theta)])
    rmin = min_turn_radius(center)
    assert rmin > 0.5 * width + 0.3, rmin
    inner, outer = offset_loop(center, width)
    segs = closed_polyline(list(inner)) + closed_polyline(list(outer))
    lo = np.minimum(inner.min(axis=0), outer.min(axis=0)) - 1.0
    hi = np.maximum(inner.max(axis=0), outer.max(axis=0)) + 1.0
    p0, p1 = center[0], center[1]
    yaw = float(np.arctan2(p1[1] - p0[1], p1[0] - p0[0]))
    # finish line a little behind the start, across the corridor
    back = center[-2]
    tang = (p0 - back) / np.linalg.norm(p0 - back)
    nrm = np.array([-tang[1], tang[0]])
    f0 = back + 0.5 * width * nrm
    f1 = back - 0.5 * width * nrm
    write_scene(
        HERE / "training.scene", "training", (*lo, *hi), (p0[0], p0[1], yaw), segs,
        (f1[0], f1[1], f0[0], f0[1]),
        header=["Multidirectional racetrack with mixed left/right corners of varying radii.",
                f"Corridor width {width} m; tightest centerline radius {rmin:.2f} m."],
    )


def crossing_corridor(length=40.0, width=4.0):
    h = width / 2
    segs = [(0, -h, length, -h), (0, h, length, h), (0, -h, 0, h), (length, -h, length, h)]
    write_scene(
        HERE / "crossing.scene", "crossing", (0, -8, length, 8), (2.0, 0.0, 0.0), segs,
        circles=[(8.0, -6.0, 0.3, 0.0, 1.0)],
        header=["Straight 4 m corridor with one pedestrian-sized circle crossing at 1 m/s.",
                "Evaluation scenarios re-time the crossing per seed; the circle here is the template."],
        extra=["open_bounds"],
    )


def obstacle_field(size=24.0, n=40, seed=3):
    rng = np.random.default_rng(seed)
    circles = []
    while len(circles) < n:
        c = rng.uniform(1.0, size - 1.0, 2)
        r = rng.uniform(0.2, 0.7)
        if np.hypot(*(c - size / 2)) < 2.5:
            continue
        if any(np.hypot(*(c - np.array(o[:2]))) < r + o[2] + 1.2 for o in circles):
            continue
        circles.append((c[0], c[1], r))
    write_scene(
        HERE / "obstacle_field.scene", "obstacle_field", (0, 0, size, size), (size / 2, size / 2, 0.0), [],
        circles=circles,
        header=["Cluttered square of static circular obstacles (trees/boulders) for exploration runs."],
    )


if __name__ == "__main__":
    corridor_oval()
    training_track()
    crossing_corridor()
    obstacle_field()
