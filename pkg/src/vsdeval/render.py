"""Software z-buffer rasterizer producing depth maps of posed meshes.

Conventions:

* pixel ``(u, v)`` samples the continuous image point ``(u + 0.5, v + 0.5)``;
* coverage ties on an edge follow the top-left rule, so triangles sharing an
  edge never both claim (or both skip) a pixel;
* depth is interpolated perspective-correctly (1/Z is affine in screen space);
* geometry is clipped against the plane Z = ``NEAR_PLANE``; no backface culling.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, MeshEntirelyBehindCamera
from .geometry import CameraIntrinsics, Mesh, Pose
from .maps import DepthMap, DistanceMap, VisibilityMask

NEAR_PLANE = 10.0  # mm


def _clip_near(tri: np.ndarray, near: float) -> list[np.ndarray]:
    """Clip one camera-space triangle to Z >= near; returns 0-2 triangles."""
    poly = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        a_in, b_in = a[2] >= near, b[2] >= near
        if a_in:
            poly.append(a)
        if a_in != b_in:
            s = (near - a[2]) / (b[2] - a[2])
            p = a + s * (b - a)
            p[2] = near
            poly.append(p)
    return [np.array([poly[0], poly[k], poly[k + 1]]) for k in range(1, len(poly) - 1)]


def _edge(ax, ay, bx, by, px, py):
    """Edge function, evaluated so that swapping the endpoints negates it exactly."""
    if (ax, ay) > (bx, by):
        return -((ax - bx) * (py - by) - (ay - by) * (px - bx))
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by) -> bool:
    dx, dy = bx - ax, by - ay
    return dy < 0 or (dy == 0 and dx > 0)


def _raster_triangle(zbuf: np.ndarray, s: np.ndarray) -> None:
    """Rasterize one screen-space triangle (rows: x, y, z_cam) into ``zbuf``."""
    h, w = zbuf.shape
    (x0, y0, z0), (x1, y1, z1), (x2, y2, z2) = (tuple(map(float, r)) for r in s)
    area = _edge(x0, y0, x1, y1, x2, y2)
    if area == 0:
        return
    if area < 0:
        x1, y1, z1, x2, y2, z2 = x2, y2, z2, x1, y1, z1
        area = _edge(x0, y0, x1, y1, x2, y2)
        if not area > 0:
            return
    u_lo = max(int(np.ceil(min(x0, x1, x2) - 0.5)), 0)
    u_hi = min(int(np.floor(max(x0, x1, x2) - 0.5)), w - 1)
    v_lo = max(int(np.ceil(min(y0, y1, y2) - 0.5)), 0)
    v_hi = min(int(np.floor(max(y0, y1, y2) - 0.5)), h - 1)
    if u_lo > u_hi or v_lo > v_hi:
        return
    px = np.arange(u_lo, u_hi + 1, dtype=np.float64)[None, :] + 0.5
    py = np.arange(v_lo, v_hi + 1, dtype=np.float64)[:, None] + 0.5

    e0 = _edge(x1, y1, x2, y2, px, py)
    e1 = _edge(x2, y2, x0, y0, px, py)
    e2 = _edge(x0, y0, x1, y1, px, py)
    inside = (
        ((e0 > 0) | ((e0 == 0) & _top_left(x1, y1, x2, y2)))
        & ((e1 > 0) | ((e1 == 0) & _top_left(x2, y2, x0, y0)))
        & ((e2 > 0) | ((e2 == 0) & _top_left(x0, y0, x1, y1)))
    )
    if not inside.any():
        return
    inv_z = (e0 / z0 + e1 / z1 + e2 / z2) / area
    with np.errstate(divide="ignore"):
        z = 1.0 / inv_z
    region = zbuf[v_lo : v_hi + 1, u_lo : u_hi + 1]
    closer = inside & (z < region)
    region[closer] = z[closer]


def render_depth(mesh: Mesh, pose: Pose, intrinsics: CameraIntrinsics) -> DepthMap:
    """Z-buffered depth map of ``mesh`` at ``pose``; uncovered pixels are invalid."""
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        raise ValueError("cannot render an empty mesh")
    pts = pose.transform_points(mesh.vertices)
    if not np.any(pts[:, 2] > NEAR_PLANE):
        raise MeshEntirelyBehindCamera(f"all {len(pts)} vertices lie at or behind the near plane Z={NEAR_PLANE} mm")

    tris = pts[mesh.triangles]  # (m, 3, 3)
    z = tris[:, :, 2]
    front = np.all(z >= NEAR_PLANE, axis=1)
    straddle = ~front & np.any(z > NEAR_PLANE, axis=1)

    pieces = [tris[front]]
    for idx in np.flatnonzero(straddle):
        pieces.extend(t[None] for t in _clip_near(tris[idx], NEAR_PLANE))
    cam = np.concatenate(pieces) if pieces else np.zeros((0, 3, 3))

    screen = np.empty_like(cam)
    screen[:, :, 0] = intrinsics.fx * cam[:, :, 0] / cam[:, :, 2] + intrinsics.cx
    screen[:, :, 1] = intrinsics.fy * cam[:, :, 1] / cam[:, :, 2] + intrinsics.cy
    screen[:, :, 2] = cam[:, :, 2]

    # Drop triangles whose bounding box holds no pixel center.
    lo = np.ceil(screen[:, :, :2].min(axis=1) - 0.5)
    hi = np.floor(screen[:, :, :2].max(axis=1) - 0.5)
    keep = (
        (lo[:, 0] <= hi[:, 0])
        & (lo[:, 1] <= hi[:, 1])
        & (hi[:, 0] >= 0)
        & (hi[:, 1] >= 0)
        & (lo[:, 0] <= intrinsics.width - 1)
        & (lo[:, 1] <= intrinsics.height - 1)
    )

    zbuf = np.full(intrinsics.shape, np.inf)
    for s in screen[keep]:
        _raster_triangle(zbuf, s)
    valid = np.isfinite(zbuf)
    return DepthMap(np.where(valid, zbuf, 0.0), valid)


def render_scene(items, intrinsics: CameraIntrinsics) -> DepthMap:
    """Depth map of several ``(mesh, pose)`` pairs sharing one z-buffer."""
    zbuf = np.full(intrinsics.shape, np.inf)
    for mesh, pose in items:
        try:
            d = render_depth(mesh, pose, intrinsics)
        except MeshEntirelyBehindCamera:
            continue
        zbuf = np.where(d.valid & (d.values < zbuf), d.values, zbuf)
    valid = np.isfinite(zbuf)
    return DepthMap(np.where(valid, zbuf, 0.0), valid)


def ray_factors(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Per-pixel ``sqrt(((u-cx)/fx)^2 + ((v-cy)/fy)^2 + 1)``."""
    u = np.arange(intrinsics.width, dtype=np.float64)[None, :]
    v = np.arange(intrinsics.height, dtype=np.float64)[:, None]
    return np.sqrt(((u - intrinsics.cx) / intrinsics.fx) ** 2 + ((v - intrinsics.cy) / intrinsics.fy) ** 2 + 1.0)


def depth_to_distance(depth: DepthMap, intrinsics: CameraIntrinsics) -> DistanceMap:
    if depth.shape != intrinsics.shape:
        raise DimensionMismatch(f"depth map {depth.shape} does not match intrinsics {intrinsics.shape}")
    dist = np.where(depth.valid, depth.values * ray_factors(intrinsics), 0.0)
    return DistanceMap(dist, depth.valid)


def silhouette(depth: DepthMap | DistanceMap) -> VisibilityMask:
    return VisibilityMask(depth.valid.copy())
