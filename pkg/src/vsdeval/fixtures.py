"""Synthetic miniature datasets in the on-disk layout, for tests and demos.

Scenes are rendered with the toolkit's own rasterizer: annotated objects,
unannotated occluders and a background plane share one z-buffer, then the
depth is quantized to 16 bits and a fraction of pixels is dropped to mimic
sensor dropout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import MANIFEST, EstimateRecord, save_estimates, write_depth_png
from .geometry import CameraIntrinsics, Mesh, Pose, rotation_about_axis
from .ply import write_ply
from .render import render_scene


def box_mesh(sx: float, sy: float, sz: float, center=(0.0, 0.0, 0.0)) -> Mesh:
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    v = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)]) + np.asarray(center)
    # vertex index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return Mesh(v, tris)


def cube_mesh(edge: float = 2.0) -> Mesh:
    return box_mesh(edge, edge, edge)


def cylinder_mesh(radius: float, height: float, facets: int) -> Mesh:
    """Closed cylinder around the model Z axis; every vertex lies on a rim."""
    ang = 2 * np.pi * np.arange(facets) / facets
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.hstack([ring, np.full((facets, 1), -height / 2)])
    top = np.hstack([ring, np.full((facets, 1), height / 2)])
    v = np.vstack([bottom, top])
    tris = []
    for i in range(facets):
        j = (i + 1) % facets
        tris += [(i, j, facets + j), (i, facets + j, facets + i)]
    for k in range(1, facets - 1):
        tris += [(0, k + 1, k), (facets, facets + k, facets + k + 1)]
    return Mesh(v, tris)


def plate_mesh(vertices_2d, triangles, z: float = 0.0) -> Mesh:
    v = np.hstack([np.asarray(vertices_2d, dtype=np.float64), np.full((len(vertices_2d), 1), z)])
    return Mesh(v, triangles)


def rect_plate(width: float, height: float) -> Mesh:
    """Zero-thickness rectangle centered on the model origin in the XY plane."""
    hw, hh = width / 2, height / 2
    return plate_mesh([(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)], [(0, 1, 2), (0, 2, 3)])


def pose_at_pixel(intrinsics: CameraIntrinsics, u: float, v: float, z: float, rotation=None) -> Pose:
    """Pose placing the model origin on the ray through continuous image point ``(u, v)`` at depth ``z``."""
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    return Pose(np.eye(3) if rotation is None else rotation, [x, y, z])


def grid_triangle_plate(base: float, height: float, n: int) -> Mesh:
    """Zero-thickness isosceles triangle in the XY plane, tessellated on an n-step grid.

    The base lies at ``y = -height/2`` and the apex at ``(0, height/2)``.
    """
    verts, index = [], {}
    for i in range(n + 1):
        y = -height / 2 + height * i / n
        half = base / 2 * (n - i) / n
        for j in range(n - i + 1):
            x = -half + (2 * half * j / (n - i) if n - i else 0.0)
            index[(i, j)] = len(verts)
            verts.append((x, y))
    tris = []
    for i in range(n):
        for j in range(n - i):
            tris.append((index[(i, j)], index[(i, j + 1)], index[(i + 1, j)]))
            if j < n - i - 1:
                tris.append((index[(i, j + 1)], index[(i + 1, j + 1)], index[(i + 1, j)]))
    return plate_mesh(verts, tris)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass
class FixtureImage:
    im_id: int
    intrinsics: CameraIntrinsics
    gt: list[tuple[int, Pose]]
    occluders: list[tuple[Mesh, Pose]] = field(default_factory=list)
    background_z: float | None = 1000.0
    dropout: float = 0.0


def background_plane(intrinsics: CameraIntrinsics, z: float) -> tuple[Mesh, Pose]:
    hw = (intrinsics.width + 2) * z / intrinsics.fx
    hh = (intrinsics.height + 2) * z / intrinsics.fy
    m = Mesh([[-hw, -hh, 0], [hw, -hh, 0], [hw, hh, 0], [-hw, hh, 0]], [(0, 1, 2), (0, 2, 3)])
    cx = (intrinsics.width / 2 - intrinsics.cx) * z / intrinsics.fx
    cy = (intrinsics.height / 2 - intrinsics.cy) * z / intrinsics.fy
    return m, Pose(np.eye(3), [cx, cy, z])


def write_dataset(
    root,
    name: str,
    models: dict[int, Mesh],
    scenes: dict[int, Sequence[FixtureImage]],
    depth_scale: float = 0.1,
    seed: int = 0,
) -> Path:
    """Render and write a complete dataset directory; returns its path."""
    root = Path(root) / name
    (root / "models").mkdir(parents=True, exist_ok=True)
    manifest = {"name": name, "model_unit_mm": 1.0, "depth_scale": depth_scale, "object_ids": sorted(models)}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    for obj_id, mesh in sorted(models.items()):
        write_ply(mesh, root / "models" / f"obj_{obj_id:06d}.ply")

    rng = np.random.default_rng(seed)
    for scene_id, images in sorted(scenes.items()):
        sdir = root / "test" / f"{scene_id:06d}"
        (sdir / "depth").mkdir(parents=True, exist_ok=True)
        cams, gts = {}, {}
        for im in images:
            K = im.intrinsics
            items = [(models[o], p) for o, p in im.gt] + list(im.occluders)
            if im.background_z is not None:
                items.append(background_plane(K, im.background_z))
            depth = render_scene(items, K).values.copy()
            if im.dropout > 0:
                depth[rng.random(depth.shape) < im.dropout] = 0.0
            write_depth_png(sdir / "depth" / f"{im.im_id:06d}.png", depth, depth_scale)
            cams[str(im.im_id)] = {
                "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                "width": K.width, "height": K.height, "depth_scale": depth_scale,
            }  # fmt: skip
            gts[str(im.im_id)] = [
                {"obj_id": o, "R": p.rotation.reshape(-1).tolist(), "t": p.translation.tolist()} for o, p in im.gt
            ]
        (sdir / "scene_camera.json").write_text(json.dumps(cams, indent=1) + "\n")
        (sdir / "scene_gt.json").write_text(json.dumps(gts, indent=1) + "\n")
    return root


def gt_estimates(scenes: dict[int, Sequence[FixtureImage]]) -> list[EstimateRecord]:
    """One exact ground-truth estimate per target (the first instance)."""
    out = []
    for scene_id, images in sorted(scenes.items()):
        for im in images:
            seen = set()
            for o, p in im.gt:
                if o not in seen:
                    seen.add(o)
                    out.append(EstimateRecord(scene_id, im.im_id, o, 1.0, p, 0.0))
    return sorted(out, key=lambda e: (e.scene_id, e.im_id, e.obj_id))


FIXTURE_INTRINSICS = CameraIntrinsics(250.0, 250.0, 100.0, 75.0, 200, 150)


def fixture_models() -> dict[int, Mesh]:
    return {
        1: cube_mesh(60.0),
        2: cylinder_mesh(25.0, 70.0, 24),
        3: box_mesh(80.0, 40.0, 24.0),
    }


def _placed(rng, x, y, z) -> Pose:
    return Pose(random_rotation(rng), [x, y, z])


def fixture_scenes(seed: int = 0) -> dict[str, dict[int, list[FixtureImage]]]:
    """Scene layouts of the two fixture datasets ``fixa`` and ``fixb``."""
    rng = np.random.default_rng(seed)
    K = FIXTURE_INTRINSICS
    cols, rows = (-150.0, 0.0, 150.0), (-70.0, 70.0)

    # fixa, scene 1 image 0: three objects, two instances each.
    multi = [(o, _placed(rng, cols[o - 1], y, 800.0 + rng.uniform(-30, 30))) for o in (1, 2, 3) for y in rows]
    # scene 1 image 1: same idea with a slab occluding part of the middle column.
    multi_occ = [(o, _placed(rng, cols[o - 1], y, 780.0 + rng.uniform(-30, 30))) for o in (1, 2, 3) for y in rows]
    slab = (box_mesh(50.0, 260.0, 10.0), Pose(np.eye(3), [-10.0, 0.0, 600.0]))
    # scene 2: single instances, mild dropout.
    singles = [
        FixtureImage(k, K, [(o, _placed(rng, rng.uniform(-60, 60), rng.uniform(-40, 40), rng.uniform(650, 850)))], dropout=0.02)
        for k, o in enumerate((1, 2, 3))
    ]
    fixa = {
        1: [FixtureImage(0, K, multi), FixtureImage(1, K, multi_occ, occluders=[slab], dropout=0.01)],
        2: singles,
    }

    # fixb: one object per image, occluders of growing width in front of it.
    fixb_images = []
    for k, width in enumerate((0.0, 30.0, 60.0, 200.0)):
        o = (1, 3, 2, 1)[k]
        pose = _placed(rng, 0.0, 0.0, 750.0)
        occ = [(box_mesh(width, 300.0, 10.0), Pose(np.eye(3), [-40.0 + width / 2, 0.0, 550.0]))] if width else []
        fixb_images.append(FixtureImage(k, K, [(o, pose)], occluders=occ, dropout=0.01))
    fixb = {1: fixb_images}
    return {"fixa": fixa, "fixb": fixb}


def generate_fixtures(out_root, seed: int = 0) -> list[Path]:
    """Write ``fixa`` and ``fixb`` plus exact-gt estimates under ``out_root/estimates``."""
    out_root = Path(out_root)
    models = fixture_models()
    paths = []
    (out_root / "estimates").mkdir(parents=True, exist_ok=True)
    for i, (name, scenes) in enumerate(sorted(fixture_scenes(seed).items())):
        paths.append(write_dataset(out_root, name, models, scenes, seed=seed + i))
        save_estimates(gt_estimates(scenes), out_root / "estimates" / f"{name}.csv")
    return paths


def perturbed(records: Sequence[EstimateRecord], offset=(0.0, 0.0, 0.0), angle_deg: float = 0.0, axis=(0, 0, 1)):
    """Estimates shifted by ``offset`` (camera frame, mm) and rotated about a model axis."""
    r = rotation_about_axis(axis, math.radians(angle_deg))
    out = []
    for e in records:
        p = Pose(e.pose.rotation @ r, e.pose.translation + np.asarray(offset, dtype=np.float64))
        out.append(EstimateRecord(e.scene_id, e.im_id, e.obj_id, e.score, p, e.time_s))
    return out
