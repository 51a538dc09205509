import math
import struct
import warnings

import numpy as np
import pytest

from vsdeval.errors import ParseError, UnsupportedElement
from vsdeval.fixtures import cube_mesh
from vsdeval.geometry import Mesh
from vsdeval.ply import load_model, parse_ply, write_ply

CUBE_ASCII = b"""ply
format ascii 1.0
comment unit cube, edge 2
element vertex 8
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
element face 12
property list uchar int vertex_indices
end_header
-1 -1 -1 255 0 0
-1 -1 1 255 0 0
-1 1 -1 255 0 0
-1 1 1 255 0 0
1 -1 -1 255 0 0
1 -1 1 255 0 0
1 1 -1 255 0 0
1 1 1 255 0 0
3 0 1 3
3 0 3 2
3 4 6 7
3 4 7 5
3 0 4 5
3 0 5 1
3 2 3 7
3 2 7 6
3 0 2 6
3 0 6 4
3 1 5 7
3 1 7 3
"""


def binary_cube(endian="<", vertex_type="f", face_count_type="B"):
    m = parse_ply(CUBE_ASCII)
    fmt = {"<": "binary_little_endian", ">": "binary_big_endian"}[endian]
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex 8\n"
        + "".join(f"property {'float' if vertex_type == 'f' else 'double'} {c}\n" for c in "xyz")
        + "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        + "element face 12\nproperty list uchar int vertex_indices\nend_header\n"
    ).encode()
    body = b"".join(struct.pack(endian + vertex_type * 3 + "BBB", *v, 255, 0, 0) for v in m.vertices)
    body += b"".join(struct.pack(endian + face_count_type + "iii", 3, *f) for f in m.triangles)
    return header + body


def test_ascii_cube():
    m = parse_ply(CUBE_ASCII)
    assert m.vertices.shape == (8, 3) and m.triangles.shape == (12, 3)
    assert math.isclose(m.diameter, 2 * math.sqrt(3), rel_tol=1e-12)
    scaled = parse_ply(CUBE_ASCII, scale=10.0)
    assert math.isclose(scaled.diameter, 20 * math.sqrt(3), rel_tol=1e-12)


@pytest.mark.parametrize("endian", ["<", ">"])
def test_binary_matches_ascii_bit_exactly(endian):
    a = parse_ply(CUBE_ASCII, scale=0.1)
    b = parse_ply(binary_cube(endian), scale=0.1)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_ascii_float32_values_match_binary():
    # 0.1 is not representable; both encodings must round through float32
    text = CUBE_ASCII.replace(b"-1 -1 -1 255", b"0.1 -1 -1 255")
    a = parse_ply(text)
    verts = a.vertices.copy()
    binary = b"ply\nformat binary_little_endian 1.0\nelement vertex 8\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
    binary += np.asarray(verts, dtype="<f4").tobytes()
    b = parse_ply(binary)
    assert np.array_equal(a.vertices, b.vertices)
    assert a.vertices[0, 0] == float(np.float32(0.1))


def test_write_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    m = Mesh(rng.normal(size=(20, 3)) * 37.123456789, [(0, 1, 2), (3, 4, 5), (5, 6, 19)])
    for binary in (False, True):
        p = tmp_path / f"m{binary}.ply"
        write_ply(m, p, binary=binary)
        back = load_model(p)
        assert np.array_equal(back.vertices, m.vertices)
        assert np.array_equal(back.triangles, m.triangles)


def test_truncated_binary_names_offset():
    data = binary_cube()
    with pytest.raises(ParseError) as exc:
        parse_ply(data[:-7])
    assert exc.value.offset is not None and exc.value.offset > 0
    assert "offset" in str(exc.value)


def test_truncated_ascii():
    data = CUBE_ASCII[: CUBE_ASCII.index(b"3 0 1 3")]
    with pytest.raises(ParseError) as exc:
        parse_ply(data)
    assert exc.value.offset == len(data)


def test_bad_headers():
    with pytest.raises(ParseError):
        parse_ply(b"not a ply")
    with pytest.raises(ParseError):
        parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty quaternion x\nend_header\n0\n")
    with pytest.raises(ParseError):
        parse_ply(b"ply\nformat binary_middle_endian 1.0\nend_header\n")
    with pytest.raises(ParseError):
        parse_ply(b"ply\nformat ascii 1.0\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n")


def test_unknown_element_and_polygons_and_degenerates():
    data = b"""ply
format ascii 1.0
element vertex 5
property double x
property double y
property double z
property float nx
property float ny
property float nz
property float u
property float v
element face 3
property list uchar uint vertex_indices
element edge 1
property int vertex1
property int vertex2
end_header
0 0 0 0 0 1 0 0
1 0 0 0 0 1 1 0
1 1 0 0 0 1 1 1
0 1 0 0 0 1 0 1
0.5 2 0 0 0 1 0.5 1
4 0 1 2 3
3 2 4 3
3 0 0 1
0 1
"""
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        m = parse_ply(data)
    cats = [x.category for x in w]
    assert cats.count(UnsupportedElement) == 2  # the edge element and one degenerate face
    assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3], [2, 4, 3]]


def test_binary_variable_length_lists():
    header = b"ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 2\nproperty list uchar int vertex_indices\nend_header\n"
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype="<f4").tobytes()
    f = struct.pack("<Biiii", 4, 0, 1, 2, 3) + struct.pack("<Biii", 3, 0, 2, 3)
    m = parse_ply(header + v + f)
    assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3], [0, 2, 3]]


def test_fixture_cube_roundtrip(tmp_path):
    write_ply(cube_mesh(60), tmp_path / "c.ply", binary=True)
    assert math.isclose(load_model(tmp_path / "c.ply").diameter, 60 * math.sqrt(3), rel_tol=1e-12)
