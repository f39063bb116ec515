"""ASCII PLY export of a scene: static points, sampled object trajectories and camera frusta."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .scene import Scene
from .splines import eval_spline

GRAY = (160, 160, 160)
CAMERA = (255, 255, 255)
PALETTE = [(230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48), (145, 30, 180),
           (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212)]


def trajectory_samples(scene: Scene, rate_hz: float = 10.0) -> list[np.ndarray]:
    """Points along each object piece, ``rate_hz`` samples per second of the reference clock."""
    fps = scene.cameras[scene.reference].stream.fps if scene.cameras else 1.0
    step = fps / rate_hz
    out = []
    for o in scene.objects:
        a, b = o.curve.domain
        t = a + step * np.arange(int(np.floor((b - a) / step + 1e-9)) + 1)
        out.append(eval_spline(o.curve, t))
    return out


def frustum(cam, depth: float) -> np.ndarray:
    """Apex and four image-corner points at ``depth`` along the optical axis, in world coordinates."""
    K = cam.intrinsics
    corners = np.array([[0, 0], [K.image_w, 0], [K.image_w, K.image_h], [0, K.image_h]], float)
    rays = np.hstack([(corners - K.center) / K.f, np.ones((4, 1))]) * depth
    local = np.vstack([np.zeros(3), rays])
    return (local - cam.pose.t) @ cam.pose.R


def scene_to_ply(scene: Scene, rate_hz: float = 10.0, frustum_depth: float | None = None) -> str:
    verts, edges = [], []
    for p in scene.points:
        verts.append((p, GRAY))
    for k, pts in enumerate(trajectory_samples(scene, rate_hz)):
        color = PALETTE[scene.objects[k].object_id % len(PALETTE)]
        base = len(verts)
        verts.extend((p, color) for p in pts)
        edges.extend((base + m, base + m + 1, color) for m in range(len(pts) - 1))
    if frustum_depth is None:
        b = scene.baseline()
        frustum_depth = 0.3 * (b if b else 1.0)
    for cam in scene.cameras:
        base = len(verts)
        verts.extend((p, CAMERA) for p in frustum(cam, frustum_depth))
        for a, b in ((0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (2, 3), (3, 4), (4, 1)):
            edges.append((base + a, base + b, CAMERA))

    lines = ["ply", "format ascii 1.0", f"element vertex {len(verts)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue",
             f"element edge {len(edges)}", "property int vertex1", "property int vertex2",
             "property uchar red", "property uchar green", "property uchar blue", "end_header"]
    for p, c in verts:
        lines.append(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}")
    for a, b, c in edges:
        lines.append(f"{a} {b} {c[0]} {c[1]} {c[2]}")
    return "\n".join(lines) + "\n"


def export_ply(scene: Scene, path, rate_hz: float = 10.0):
    Path(path).write_text(scene_to_ply(scene, rate_hz), encoding="ascii", newline="\n")
