"""PLY mesh reader and writer (ascii, binary little- and big-endian).

Only geometry is kept: vertex ``x, y, z`` and the face index lists. Normals,
colors and texture coordinates are parsed and dropped; unknown elements are
skipped with an :class:`~vsdeval.errors.UnsupportedElement` warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidMesh, ParseError, UnsupportedElement
from .geometry import Mesh

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}  # fmt: skip

_FACE_LISTS = ("vertex_indices", "vertex_index")


@dataclass
class _Property:
    name: str
    dtype: str
    count_dtype: str | None = None  # set for list properties


@dataclass
class _Element:
    name: str
    count: int
    props: list[_Property] = field(default_factory=list)


def _parse_header(data: bytes, path):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')", path=path, offset=0)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements: list[_Element] = []
    offset = 0
    for lineno, raw in enumerate(data[:end].split(b"\n"), start=1):
        line = raw.decode("ascii", errors="replace").strip()
        parts = line.split()
        here = offset
        offset += len(raw) + 1
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        try:
            if parts[0] == "format":
                fmt = parts[1]
                if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
                    raise ParseError(f"unsupported format {fmt!r}", path=path, line=lineno, offset=here)
            elif parts[0] == "element":
                elements.append(_Element(parts[1], int(parts[2])))
            elif parts[0] == "property":
                if not elements:
                    raise ParseError("property before any element", path=path, line=lineno, offset=here)
                if parts[1] == "list":
                    elements[-1].props.append(_Property(parts[4], _TYPES[parts[3]], _TYPES[parts[2]]))
                else:
                    elements[-1].props.append(_Property(parts[2], _TYPES[parts[1]]))
            else:
                raise ParseError(f"unknown header keyword {parts[0]!r}", path=path, line=lineno, offset=here)
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed header line {line!r}", path=path, line=lineno, offset=here) from None
    if fmt is None:
        raise ParseError("missing format line", path=path, offset=0)
    return fmt, elements, body_start


def _read_ascii(data: bytes, start: int, elements, path):
    out = {}
    pos = start
    for el in elements:
        rows = []
        for i in range(el.count):
            # skip blank lines between rows
            while True:
                if pos >= len(data):
                    raise ParseError(
                        f"file ends inside element {el.name!r} (row {i} of {el.count})", path=path, offset=pos
                    )
                nl = data.find(b"\n", pos)
                nl = len(data) if nl < 0 else nl
                line, line_at, pos = data[pos:nl], pos, nl + 1
                if line.strip():
                    break
            tokens = line.split()
            row, k = [], 0
            try:
                for p in el.props:
                    if p.count_dtype is None:
                        row.append(tokens[k])
                        k += 1
                    else:
                        n = int(tokens[k])
                        row.append(tokens[k + 1 : k + 1 + n])
                        if len(row[-1]) != n:
                            raise IndexError
                        k += 1 + n
            except (IndexError, ValueError):
                raise ParseError(f"short or malformed {el.name!r} row {i}", path=path, offset=line_at) from None
            rows.append(row)
        cols = {}
        for j, p in enumerate(el.props):
            try:
                if p.count_dtype is None:
                    cols[p.name] = np.array([r[j] for r in rows], dtype=object).astype(np.dtype(p.dtype))
                else:
                    cols[p.name] = [np.array(r[j], dtype=object).astype(np.dtype(p.dtype)) for r in rows]
            except ValueError:
                raise ParseError(f"non-numeric value in {el.name!r}.{p.name}", path=path, offset=start) from None
        out[el.name] = cols
    return out


def _read_binary(data: bytes, start: int, elements, endian: str, path):
    out = {}
    pos = start
    for el in elements:
        lists = [p for p in el.props if p.count_dtype is not None]
        cols = {}
        if not lists:
            dt = np.dtype([(p.name, endian + p.dtype) for p in el.props])
            need = dt.itemsize * el.count
            if pos + need > len(data):
                raise ParseError(
                    f"file ends inside element {el.name!r}: need {need} bytes, have {len(data) - pos}",
                    path=path,
                    offset=pos,
                )
            arr = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
            cols = {p.name: arr[p.name].astype(arr[p.name].dtype.newbyteorder("=")) for p in el.props}
            pos += need
        else:
            cols, pos = _read_binary_lists(data, pos, el, endian, path)
        out[el.name] = cols
    return out


def _read_binary_lists(data, pos, el, endian, path):
    # Fast path: every list has the length found in the first row.
    lengths = {}
    probe = pos
    try:
        for p in el.props:
            if p.count_dtype is None:
                probe += np.dtype(p.dtype).itemsize
            else:
                n = int(np.frombuffer(data, dtype=endian + p.count_dtype, count=1, offset=probe)[0])
                lengths[p.name] = n
                probe += np.dtype(p.count_dtype).itemsize + n * np.dtype(p.dtype).itemsize
    except ValueError:
        if el.count:
            raise ParseError(f"file ends inside element {el.name!r}", path=path, offset=pos) from None
    if el.count:
        fields = []
        for p in el.props:
            if p.count_dtype is None:
                fields.append((p.name, endian + p.dtype))
            else:
                fields.append((p.name + "@n", endian + p.count_dtype))
                fields.append((p.name, endian + p.dtype, (lengths[p.name],)))
        dt = np.dtype(fields)
        need = dt.itemsize * el.count
        if pos + need <= len(data):
            arr = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
            if all(np.all(arr[p.name + "@n"] == lengths[p.name]) for p in el.props if p.count_dtype):
                cols = {}
                for p in el.props:
                    a = arr[p.name]
                    cols[p.name] = a.astype(a.dtype.newbyteorder("="))
                return cols, pos + need
    # Slow path: variable-length lists, one row at a time.
    cols = {p.name: [] for p in el.props}
    for i in range(el.count):
        row_at = pos
        try:
            for p in el.props:
                if p.count_dtype is None:
                    v = np.frombuffer(data, dtype=endian + p.dtype, count=1, offset=pos)[0]
                    pos += np.dtype(p.dtype).itemsize
                    cols[p.name].append(v)
                else:
                    n = int(np.frombuffer(data, dtype=endian + p.count_dtype, count=1, offset=pos)[0])
                    pos += np.dtype(p.count_dtype).itemsize
                    v = np.frombuffer(data, dtype=endian + p.dtype, count=n, offset=pos)
                    pos += n * np.dtype(p.dtype).itemsize
                    cols[p.name].append(v.astype(v.dtype.newbyteorder("=")))
        except ValueError:
            raise ParseError(
                f"file ends inside element {el.name!r} (row {i} of {el.count})", path=path, offset=row_at
            ) from None
    for p in el.props:
        if p.count_dtype is None:
            cols[p.name] = np.array(cols[p.name], dtype=np.dtype(p.dtype))
    return cols, pos


def parse_ply(data: bytes, scale: float = 1.0, path=None) -> Mesh:
    """Parse PLY bytes into a :class:`Mesh`, multiplying coordinates by ``scale``."""
    fmt, elements, body = _parse_header(data, path)
    names = [e.name for e in elements]
    if "vertex" not in names:
        raise ParseError("no 'vertex' element", path=path, offset=0)
    for el in elements:
        if el.name not in ("vertex", "face"):
            warnings.warn(f"ignoring PLY element {el.name!r} ({el.count} rows)", UnsupportedElement, stacklevel=2)
    if fmt == "ascii":
        cols = _read_ascii(data, body, elements, path)
    else:
        cols = _read_binary(data, body, elements, "<" if fmt == "binary_little_endian" else ">", path)

    vcols = cols["vertex"]
    if not all(k in vcols for k in "xyz"):
        raise ParseError("vertex element lacks x, y or z", path=path, offset=0)
    verts = np.stack([np.asarray(vcols[k], dtype=np.float64) for k in "xyz"], axis=1) * float(scale)

    tris = np.zeros((0, 3), dtype=np.int64)
    if "face" in cols:
        name = next((n for n in _FACE_LISTS if n in cols["face"]), None)
        if name is None:
            raise ParseError("face element lacks a vertex_indices list", path=path, offset=0)
        faces = cols["face"][name]
        if isinstance(faces, np.ndarray) and faces.ndim == 2 and faces.shape[1] == 3:
            tris = faces.astype(np.int64)
        else:
            out = []
            for f in faces:
                f = np.asarray(f, dtype=np.int64)
                out.extend((f[0], f[k], f[k + 1]) for k in range(1, len(f) - 1))
            tris = np.array(out, dtype=np.int64).reshape(-1, 3)
    degenerate = (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])
    if np.any(degenerate):
        warnings.warn(f"dropping {int(degenerate.sum())} degenerate faces", UnsupportedElement, stacklevel=2)
        tris = tris[~degenerate]
    try:
        return Mesh(verts, tris)
    except InvalidMesh as exc:
        raise ParseError(str(exc), path=path) from None


def load_model(path, scale: float = 1.0) -> Mesh:
    """Read a PLY model; ``scale`` converts file units to millimeters."""
    path = Path(path)
    return parse_ply(path.read_bytes(), scale=scale, path=path)


def write_ply(mesh: Mesh, path, binary: bool = False) -> None:
    """Write vertices as doubles and faces as ``uchar``/``int`` lists."""
    path = Path(path)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    if binary:
        vdt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8")])
        v = np.empty(len(mesh.vertices), dtype=vdt)
        v["x"], v["y"], v["z"] = mesh.vertices.T
        fdt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
        f = np.empty(len(mesh.triangles), dtype=fdt)
        f["n"] = 3
        f["i"] = mesh.triangles
        body = v.tobytes() + f.tobytes()
    else:
        lines = [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
        lines += ["3 " + " ".join(str(int(i)) for i in row) for row in mesh.triangles]
        body = ("\n".join(lines) + "\n").encode("ascii")
    path.write_bytes(header + body)
