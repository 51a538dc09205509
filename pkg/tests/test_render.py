import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from vsdeval.errors import DimensionMismatch, MeshEntirelyBehindCamera
from vsdeval.fixtures import cube_mesh, random_rotation
from vsdeval.geometry import CameraIntrinsics, Mesh, Pose, backproject, project_points
from vsdeval.maps import DepthMap, dump_map_png, dump_mask_png
from vsdeval.render import depth_to_distance, render_depth, render_scene, silhouette

K = CameraIntrinsics(500, 500, 320, 240, 640, 480)
SMALL = CameraIntrinsics(100, 100, 32, 24, 64, 48)
IDENT = Pose.identity()


def pixel_quad(intr, u0, v0, u1, v1, z):
    """Fronto-parallel rectangle whose image spans [u0, u1] x [v0, v1] at depth z."""
    corners = [(u0, v0), (u1, v0), (u1, v1), (u0, v1)]
    v = [backproject(intr, c, z) for c in corners]
    return Mesh(v, [(0, 1, 2), (0, 2, 3)])


def test_fronto_parallel_triangle():
    tri = Mesh([backproject(K, (300, 220), 1000), backproject(K, (350, 220), 1000), backproject(K, (320, 270), 1000)], [(0, 1, 2)])
    d = render_depth(tri, IDENT, K)
    assert d.valid[240, 320] and d.values[240, 320] == pytest.approx(1000.0, abs=1e-9)
    assert not d.valid[10, 10] and d.values[10, 10] == 0.0


def test_slanted_plane_matches_ray_casting():
    # plane z = 1000 + 0.5 x, as a quad spanning x, y in [-300, 300]
    xs = [(-300, -300), (300, -300), (300, 300), (-300, 300)]
    verts = [(x, y, 1000 + 0.5 * x) for x, y in xs]
    d = render_depth(Mesh(verts, [(0, 1, 2), (0, 2, 3)]), IDENT, K)
    vv, uu = np.nonzero(d.valid)
    assert len(uu) > 50_000
    rx = (uu + 0.5 - K.cx) / K.fx
    ry = (vv + 0.5 - K.cy) / K.fy
    z = 1000 / (1 - 0.5 * rx)  # ray (rx, ry, 1) * z hits z = 1000 + 0.5 * rx * z
    assert np.abs(d.values[vv, uu] - z).max() < 1e-3
    # coverage: every pixel whose ray hits inside the quad is covered
    x, y = rx * z, ry * z
    assert np.all((np.abs(x) <= 300 + 1e-6) & (np.abs(y) <= 300 + 1e-6))


def test_depth_to_distance_examples():
    intr = CameraIntrinsics(100, 100, 10, 20, 80, 100)
    depth = np.zeros((100, 80))
    depth[20, 10] = 1000
    d = depth_to_distance(DepthMap.from_array(depth), intr)
    assert d.values[20, 10] == 1000.0
    assert d.valid.sum() == 1
    # (u-cx)/fx = 0.6, (v-cy)/fy = 0.8
    intr2 = CameraIntrinsics(10, 10, 0, 0, 7, 9)
    dm = np.zeros((9, 7))
    dm[8, 6] = 1000
    assert depth_to_distance(DepthMap.from_array(dm), intr2).values[8, 6] == pytest.approx(1000 * math.sqrt(2), rel=1e-12)


def test_depth_to_distance_matches_backprojection():
    rng = np.random.default_rng(0)
    intr = CameraIntrinsics(321.5, 297.25, 41.3, 29.7, 90, 60)
    raw = rng.uniform(100, 5000, intr.shape)
    raw[rng.random(intr.shape) < 0.2] = 0
    depth = DepthMap.from_array(raw)
    dist = depth_to_distance(depth, intr)
    for v in range(intr.height):
        for u in range(intr.width):
            if not depth.valid[v, u]:
                assert not dist.valid[v, u]
                continue
            ref = np.linalg.norm(backproject(intr, (u, v), depth.values[v, u]))
            assert abs(dist.values[v, u] - ref) <= 1e-9 * ref
    with pytest.raises(DimensionMismatch):
        depth_to_distance(DepthMap.empty(3, 3), intr)


def test_distance_not_below_depth():
    d = render_depth(cube_mesh(100), Pose(random_rotation(np.random.default_rng(1)), [20, -10, 600]), K)
    dist = depth_to_distance(d, K)
    assert np.all(dist.values[d.valid] >= d.values[d.valid])


def test_silhouette_examples():
    assert silhouette(DepthMap.empty(4, 5)).count() == 0
    a = np.zeros((4, 5))
    a[2, 3] = 7
    m = silhouette(DepthMap.from_array(a))
    assert m.count() == 1 and m.bits[2, 3]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cube_silhouette_point_in_polygon(seed):
    pose = Pose(random_rotation(np.random.default_rng(seed)), [15.0, -8.0, 700.0])
    m = silhouette(render_depth(cube_mesh(120), pose, K))
    uv = project_points(K, pose.transform_points(cube_mesh(120).vertices))
    hull = ConvexHull(uv)
    vv, uu = np.mgrid[0 : K.height, 0 : K.width]
    pts = np.stack([uu.ravel() + 0.5, vv.ravel() + 0.5], axis=1)
    # hull.equations rows are (a, b, c) with a*x + b*y + c <= 0 inside
    inside = np.all(pts @ hull.equations[:, :2].T + hull.equations[:, 2] <= 0, axis=1)
    assert m.count() == int(inside.sum())
    assert np.array_equal(m.bits.ravel(), inside)


def test_zbuffer_keeps_nearest():
    near = pixel_quad(K, 300, 200, 360, 260, 500)
    far = pixel_quad(K, 330, 230, 400, 300, 900)
    for order in ([(near, IDENT), (far, IDENT)], [(far, IDENT), (near, IDENT)]):
        d = render_scene(order, K)
        both = render_depth(near, IDENT, K).valid & render_depth(far, IDENT, K).valid
        assert both.sum() > 0
        assert np.allclose(d.values[both], 500.0, atol=1e-9)
    merged = Mesh(np.vstack([near.vertices, far.vertices]), np.vstack([near.triangles, far.triangles + 4]))
    d = render_depth(merged, IDENT, K)
    assert np.allclose(d.values[both], 500.0, atol=1e-9)


def test_translation_along_axis_shifts_depth():
    tri = Mesh([(-50, -40, 0), (60, -30, 0), (0, 70, 0)], [(0, 1, 2)])
    a = render_depth(tri, Pose(np.eye(3), [0, 0, 800]), K)
    b = render_depth(tri, Pose(np.eye(3), [0, 0, 850]), K)
    common = a.valid & b.valid
    assert common.sum() > 1000
    assert np.allclose(b.values[common] - a.values[common], 50.0, atol=1e-6)


def test_render_is_deterministic():
    pose = Pose(random_rotation(np.random.default_rng(5)), [0, 0, 500])
    a = render_depth(cube_mesh(80), pose, K)
    b = render_depth(cube_mesh(80), pose, K)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.valid, b.valid)


def test_pixel_center_convention():
    # columns whose centers u + 0.5 lie in [10.2, 20.2) are 10..19; shifted by
    # 0.4 px they become 11..20
    a = render_depth(pixel_quad(SMALL, 10.2, 5.2, 20.2, 15.2, 1000), IDENT, SMALL)
    b = render_depth(pixel_quad(SMALL, 10.6, 5.2, 20.6, 15.2, 1000), IDENT, SMALL)
    assert np.array_equal(np.nonzero(a.valid.any(axis=0))[0], np.arange(10, 20))
    assert np.array_equal(np.nonzero(b.valid.any(axis=0))[0], np.arange(11, 21))
    assert np.array_equal(np.nonzero(a.valid.any(axis=1))[0], np.arange(5, 15))


def test_top_left_rule_no_gaps_no_overlaps():
    # every edge, including the shared diagonal, passes through pixel centers
    verts = [backproject(SMALL, c, 1000) for c in [(10.5, 10.5), (20.5, 10.5), (20.5, 20.5), (10.5, 20.5)]]
    t1 = Mesh(verts, [(0, 1, 2)])
    t2 = Mesh(verts, [(0, 2, 3)])
    c1 = render_depth(t1, IDENT, SMALL).valid.astype(int)
    c2 = render_depth(t2, IDENT, SMALL).valid.astype(int)
    cover = c1 + c2
    assert cover.max() == 1
    expected = np.zeros(SMALL.shape, dtype=int)
    expected[10:20, 10:20] = 1  # top and left edges in, bottom and right out
    assert np.array_equal(cover, expected)


def test_fan_of_triangles_no_double_fill():
    # 12 triangles around a vertex at a pixel center: each covered pixel once
    c = np.array([32.5, 24.5])
    ring = [c + 15 * np.array([math.cos(a), math.sin(a)]) for a in np.linspace(0, 2 * math.pi, 13)[:-1]]
    verts = [backproject(SMALL, c, 1000)] + [backproject(SMALL, p, 1000) for p in ring]
    total = np.zeros(SMALL.shape, dtype=int)
    for k in range(12):
        total += render_depth(Mesh(verts, [(0, 1 + k, 1 + (k + 1) % 12)]), IDENT, SMALL).valid
    assert total.max() == 1
    assert total[24, 32] == 1


def test_no_backface_culling():
    v = [(-50, -50, 0), (50, -50, 0), (0, 50, 0)]
    a = render_depth(Mesh(v, [(0, 1, 2)]), Pose(np.eye(3), [0, 0, 500]), K)
    b = render_depth(Mesh(v, [(0, 2, 1)]), Pose(np.eye(3), [0, 0, 500]), K)
    assert a.valid.sum() > 0 and a == b


def test_near_plane_clipping():
    # triangle straddling z = 10: the front part is rendered, nothing closer than 10
    tri = Mesh([(-5, -5, 2), (5, -5, 2), (0, 5, 60)], [(0, 1, 2)])
    d = render_depth(tri, IDENT, SMALL)
    assert d.valid.sum() > 0
    assert d.values[d.valid].min() >= 10.0 - 1e-9
    with pytest.raises(MeshEntirelyBehindCamera):
        render_depth(tri, Pose(np.eye(3), [0, 0, -100]), SMALL)


def test_debug_dumps(tmp_path):
    from PIL import Image

    d = render_depth(cube_mesh(100), Pose(np.eye(3), [0, 0, 500]), K)
    scale = dump_map_png(d, tmp_path / "d.png")
    img = np.asarray(Image.open(tmp_path / "d.png"))
    assert img.dtype == np.uint16
    assert float((tmp_path / "d.png.scale.txt").read_text()) == scale
    assert np.allclose(img[d.valid] * scale, d.values[d.valid], atol=scale)
    dump_mask_png(silhouette(d), tmp_path / "m.png")
    m = np.asarray(Image.open(tmp_path / "m.png"))
    assert np.array_equal(m.astype(bool), d.valid)
