"""Rigid-body math, the pinhole camera model and triangle meshes.

All lengths are millimeters. Poses map model coordinates to camera
coordinates (``x_c = R @ x_m + t``); the camera follows the usual computer
vision convention: X right, Y down, Z along the optical axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    EmptyRange,
    InvalidIntrinsics,
    InvalidMesh,
    InvalidPose,
    NonPositiveDepth,
    TooFewVertices,
)

# Rotations within this of orthonormal are kept verbatim.
ORTHO_EXACT_TOL = 1e-6
# Between the two tolerances a rotation is repaired by polar decomposition.
ORTHO_REPAIR_TOL = 1e-4

HULL_PREFILTER_MIN_VERTICES = 10_000


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def polar_rotation(m: np.ndarray) -> np.ndarray:
    """Closest rotation matrix to ``m`` in the Frobenius norm."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform from the model frame to the camera frame.

    Rotations within 1e-4 of orthonormal are repaired by polar decomposition
    and flagged through ``reorthonormalized``; anything worse is rejected.
    """

    rotation: np.ndarray
    translation: np.ndarray
    reorthonormalized: bool = field(default=False, compare=False)

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(-1)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if r.size != 9:
            raise InvalidPose(f"rotation needs 9 elements, got {r.size}")
        if t.size != 3:
            raise InvalidPose(f"translation needs 3 elements, got {t.size}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidPose("pose contains non-finite values")
        r = r.reshape(3, 3)
        dev = float(np.abs(r.T @ r - np.eye(3)).max())
        det = float(np.linalg.det(r))
        if det <= 0:
            raise InvalidPose(f"rotation determinant is {det:.6g}, expected +1")
        fixed = self.reorthonormalized
        if dev > ORTHO_REPAIR_TOL:
            raise InvalidPose(f"rotation is not orthonormal (max |R^T R - I| = {dev:.3g})")
        if dev > ORTHO_EXACT_TOL:
            r = polar_rotation(r)
            fixed = True
        object.__setattr__(self, "rotation", _readonly(r))
        object.__setattr__(self, "translation", _readonly(t))
        object.__setattr__(self, "reorthonormalized", fixed)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        r = np.array2string(self.rotation.reshape(-1), precision=6, separator=",")
        t = np.array2string(self.translation, precision=6, separator=",")
        return f"Pose(R={r}, t={t})"


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle_rad) * k + (1 - math.cos(angle_rad)) * (k @ k)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InvalidIntrinsics(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidIntrinsics(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidIntrinsics("image size must be integral")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width < 1 or self.height < 1:
            raise InvalidIntrinsics(f"image size must be >= 1 (got {self.width}x{self.height})")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        """Image array shape, ``(height, width)``."""
        return (self.height, self.width)


def transform_point(pose: Pose, point) -> np.ndarray:
    return pose.rotation @ np.asarray(point, dtype=np.float64) + pose.translation


def project(intrinsics: CameraIntrinsics, point_cam) -> np.ndarray:
    """Pinhole projection of a camera-frame point to pixel coordinates."""
    x, y, z = (float(c) for c in point_cam)
    if not z > 0:
        raise NonPositiveDepth(f"cannot project point with z={z}")
    return np.array([intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy])


def project_points(intrinsics: CameraIntrinsics, points_cam) -> np.ndarray:
    """Vectorized :func:`project`; rows with ``z <= 0`` raise."""
    p = np.asarray(points_cam, dtype=np.float64)
    z = p[:, 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth("cannot project points with z <= 0")
    return np.stack([intrinsics.fx * p[:, 0] / z + intrinsics.cx, intrinsics.fy * p[:, 1] / z + intrinsics.cy], axis=1)


def backproject(intrinsics: CameraIntrinsics, uv, depth: float) -> np.ndarray:
    """Camera-frame point at Z = ``depth`` that projects to ``uv``."""
    u, v = (float(c) for c in uv)
    if not depth > 0:
        raise NonPositiveDepth(f"cannot backproject with depth={depth}")
    return np.array([(u - intrinsics.cx) / intrinsics.fx * depth, (v - intrinsics.cy) / intrinsics.fy * depth, float(depth)])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh in model coordinates (mm)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        f = np.array(self.triangles, dtype=np.int64)
        if v.size == 0:
            v = v.reshape(0, 3)
        if f.size == 0:
            f = f.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidMesh(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise InvalidMesh(f"triangles must be (m, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidMesh("vertices contain non-finite coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidMesh("triangle index out of range")
        degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if np.any(degenerate):
            raise InvalidMesh(f"triangle {int(np.argmax(degenerate))} repeats a vertex index")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "triangles", _readonly(f))

    @cached_property
    def diameter(self) -> float:
        return mesh_diameter(self)

    def transformed(self, pose: Pose) -> "Mesh":
        return Mesh(pose.transform_points(self.vertices), self.triangles)


def _max_pairwise_distance(pts: np.ndarray, block: int = 1024) -> float:
    best = 0.0
    n = len(pts)
    for i in range(0, n, block):
        chunk = pts[i : i + block]
        d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def mesh_diameter(mesh: Mesh | np.ndarray) -> float:
    """Largest distance between any two vertices.

    Exact. Large vertex sets are first reduced to their convex hull, which
    always contains both endpoints of the diameter.
    """
    pts = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh, dtype=np.float64)
    if len(pts) < 2:
        raise TooFewVertices(f"diameter needs at least 2 vertices, got {len(pts)}")
    if len(pts) > HULL_PREFILTER_MIN_VERTICES:
        from scipy.spatial import ConvexHull, QhullError

        try:
            pts = pts[np.sort(ConvexHull(pts).vertices)]
        except QhullError:
            pass  # flat or degenerate cloud: scan everything
    return _max_pairwise_distance(pts)


# --- view sphere --------------------------------------------------------------


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """Unit icosahedron with vertices at both poles."""
    lat = math.atan(0.5)
    verts = [(0.0, 0.0, 1.0)]
    for k in range(5):
        az = math.radians(72 * k)
        verts.append((math.cos(lat) * math.cos(az), math.cos(lat) * math.sin(az), math.sin(lat)))
    for k in range(5):
        az = math.radians(36 + 72 * k)
        verts.append((math.cos(lat) * math.cos(az), math.cos(lat) * math.sin(az), -math.sin(lat)))
    verts.append((0.0, 0.0, -1.0))
    faces = []
    for k in range(5):
        a, b = 1 + k, 1 + (k + 1) % 5
        c, d = 6 + k, 6 + (k + 1) % 5
        faces += [(0, a, b), (a, c, b), (b, c, d), (c, 11, d)]
    return np.array(verts), np.array(faces)


def _subdivide(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    verts = list(map(tuple, verts))
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = np.add(verts[i], verts[j])
            m /= np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(tuple(m))
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.array(verts), np.array(out)


def _edge_angles(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    dots = np.einsum("ij,ij->i", verts[edges[:, 0]], verts[edges[:, 1]])
    return np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    return math.degrees(math.acos(max(-1.0, min(1.0, float(np.dot(a, b))))))


def _sph(v: np.ndarray) -> tuple[float, float]:
    elev = math.degrees(math.asin(max(-1.0, min(1.0, float(v[2])))))
    az = math.degrees(math.atan2(float(v[1]), float(v[0]))) % 360.0
    return elev, az


def look_at_origin(position) -> Pose:
    """World-to-camera pose of a camera at ``position`` looking at the origin.

    Zero roll: the camera's up direction is world +Z projected onto the
    image plane (world +Y when looking straight along Z).
    """
    c = np.asarray(position, dtype=np.float64)
    z = -c / np.linalg.norm(c)
    up = np.array([0.0, 0.0, 1.0])
    up_perp = up - np.dot(up, z) * z
    if np.linalg.norm(up_perp) < 1e-9:
        up = np.array([0.0, 1.0, 0.0])
        up_perp = up - np.dot(up, z) * z
    y = -up_perp / np.linalg.norm(up_perp)
    x = np.cross(y, z)
    r = np.stack([x, y, z])
    return Pose(r, -r @ c)


def sample_view_sphere(
    radius: float,
    azimuth_range: Sequence[float] = (0.0, 360.0),
    elevation_range: Sequence[float] = (-90.0, 90.0),
    min_angular_step: float = 10.0,
) -> list[Pose]:
    """Camera poses on a sphere around the origin, all looking at it.

    Viewpoints come from the finest icosahedron subdivision whose neighbors
    are still at least ``min_angular_step`` degrees apart (greedily thinned
    when even the base icosahedron is too dense), restricted to the given
    azimuth/elevation ranges and ordered by (elevation, azimuth).
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if not min_angular_step > 0:
        raise ValueError("min_angular_step must be positive")
    az0, az1 = (float(a) for a in azimuth_range)
    el0, el1 = (float(e) for e in elevation_range)
    if az0 > az1 or el0 > el1:
        raise EmptyRange(f"empty range: azimuth {azimuth_range}, elevation {elevation_range}")

    verts, faces = _icosahedron()
    eps = 1e-9
    if _edge_angles(verts, faces).min() + eps < min_angular_step:
        order = sorted(range(len(verts)), key=lambda i: _sph(verts[i]))
        kept: list[np.ndarray] = []
        for i in order:
            if all(_angle_deg(verts[i], k) + 1e-6 >= min_angular_step for k in kept):
                kept.append(verts[i])
        points = np.array(kept)
    else:
        for _ in range(8):
            nv, nf = _subdivide(verts, faces)
            if _edge_angles(nv, nf).min() + eps < min_angular_step:
                break
            verts, faces = nv, nf
        points = verts

    selected = []
    for p in points:
        elev, az = _sph(p)
        if not (el0 - eps <= elev <= el1 + eps):
            continue
        at_pole = abs(abs(elev) - 90.0) < 1e-7
        in_az = az0 - eps <= az <= az1 + eps or az0 - eps <= az + 360.0 <= az1 + eps
        if at_pole or in_az:
            selected.append((round(elev, 9), round(az, 9), p))
    if not selected:
        raise EmptyRange(
            f"no viewpoint within azimuth {azimuth_range} and elevation {elevation_range} at step {min_angular_step}"
        )
    selected.sort(key=lambda s: (s[0], s[1]))
    return [look_at_origin(radius * p) for _, _, p in selected]
