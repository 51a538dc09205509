"""Readers and writers for the on-disk dataset layout.

A dataset directory looks like::

    <dataset>/
      dataset.json                  manifest
      models/obj_000001.ply         one PLY model per object id
      test/000001/                  one directory per scene (6-digit id)
        scene_camera.json           {"<im_id>": {"fx","fy","cx","cy","width","height","depth_scale"}}
        scene_gt.json               {"<im_id>": [{"obj_id", "R": [9 floats, row-major], "t": [3 floats, mm]}]}
        depth/000000.png            16-bit depth, value * depth_scale = mm, 0 = missing
        rgb/000000.png              optional, never read by the metrics
      test_targets.csv              optional target list (scene_id,im_id,obj_id)

The manifest holds ``name``, ``model_unit_mm`` (millimeters per model-file
unit), ``depth_scale`` (default mm per depth unit) and ``object_ids``.

Estimates are comma-separated rows
``scene_id,im_id,obj_id,score,R,t,time`` where R holds 9 and t holds 3
space-separated numbers.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InconsistentIds, InvalidIntrinsics, InvalidPose, MissingFile, MissingModel, NonFiniteValue, ParseError
from .geometry import CameraIntrinsics, Mesh, Pose
from .maps import DepthMap
from .ply import load_model

MANIFEST = "dataset.json"
ESTIMATES_HEADER = "scene_id,im_id,obj_id,score,R,t,time"
TARGETS_HEADER = "scene_id,im_id,obj_id"
DATASET_ROOT_ENV = "VSDEVAL_DATASET_ROOT"


@dataclass(frozen=True)
class SceneImage:
    scene_id: int
    im_id: int
    intrinsics: CameraIntrinsics
    depth_scale: float
    depth: DepthMap
    gt_instances: tuple[tuple[int, Pose], ...]

    def instances_of(self, obj_id: int) -> list[tuple[int, Pose]]:
        """``(gt_index, pose)`` for every annotated instance of ``obj_id``."""
        return [(i, p) for i, (o, p) in enumerate(self.gt_instances) if o == obj_id]


@dataclass(frozen=True, order=True)
class TestTarget:
    scene_id: int
    im_id: int
    obj_id: int

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class EstimateRecord:
    scene_id: int
    im_id: int
    obj_id: int
    score: float
    pose: Pose
    time_s: float = 0.0

    @property
    def key(self) -> TestTarget:
        return TestTarget(self.scene_id, self.im_id, self.obj_id)


def _load_json(path: Path):
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None


def read_depth_png(path) -> np.ndarray:
    from PIL import Image

    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing depth image: {path}")
    try:
        with Image.open(path) as im:
            a = np.array(im)
    except OSError as exc:
        raise ParseError(f"unreadable image: {exc}", path=path) from None
    if a.ndim != 2:
        raise ParseError(f"depth image must be single-channel, got shape {a.shape}", path=path)
    return a


def write_depth_png(path, depth_mm: np.ndarray, depth_scale: float) -> None:
    """Quantize a depth array (mm, 0 = missing) to a 16-bit PNG."""
    from PIL import Image

    q = np.round(np.asarray(depth_mm, dtype=np.float64) / depth_scale)
    if q.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range at this depth_scale")
    Image.fromarray(q.astype(np.uint16)).save(Path(path))


def _pose_from_lists(r, t) -> Pose:
    return Pose(np.asarray(r, dtype=np.float64).reshape(3, 3), np.asarray(t, dtype=np.float64))


def load_scene(scene_dir, default_depth_scale: float | None = None) -> list[SceneImage]:
    """All annotated images of one scene directory, ordered by image id."""
    scene_dir = Path(scene_dir)
    try:
        scene_id = int(scene_dir.name)
    except ValueError:
        raise ParseError("scene directory name must be an integer id", path=scene_dir) from None
    cam_path = scene_dir / "scene_camera.json"
    gt_path = scene_dir / "scene_gt.json"
    cams = _load_json(cam_path)
    gts = _load_json(gt_path)
    if not isinstance(cams, dict) or not isinstance(gts, dict):
        raise ParseError("expected a JSON object keyed by image id", path=cam_path if not isinstance(cams, dict) else gt_path)

    unknown = sorted(set(gts) - set(cams), key=str)
    if unknown:
        raise InconsistentIds(f"{gt_path}: image ids {unknown} have no camera entry in {cam_path.name}")

    images = []
    for key in sorted(cams, key=lambda k: int(k)):
        im_id = int(key)
        c = cams[key]
        try:
            scale = float(c.get("depth_scale", default_depth_scale if default_depth_scale is not None else 1.0))
            if not scale > 0:
                raise ValueError("depth_scale must be positive")
        except (TypeError, ValueError) as exc:
            raise ParseError(f"image {im_id}: {exc}", path=cam_path) from None
        raw = read_depth_png(scene_dir / "depth" / f"{im_id:06d}.png")
        try:
            intr = CameraIntrinsics(
                c["fx"], c["fy"], c["cx"], c["cy"], c.get("width", raw.shape[1]), c.get("height", raw.shape[0])
            )
        except (KeyError, TypeError, InvalidIntrinsics) as exc:
            raise ParseError(f"image {im_id}: bad camera entry ({exc})", path=cam_path) from None
        if intr.shape != raw.shape:
            raise InconsistentIds(f"{cam_path}: image {im_id} declares {intr.shape}, depth image is {raw.shape}")
        depth = DepthMap(raw.astype(np.float64) * scale, raw > 0)

        instances = []
        for k, inst in enumerate(gts.get(key, [])):
            try:
                instances.append((int(inst["obj_id"]), _pose_from_lists(inst["R"], inst["t"])))
            except (KeyError, TypeError, ValueError, InvalidPose) as exc:
                raise ParseError(f"image {im_id}, instance {k}: bad ground-truth pose ({exc})", path=gt_path) from None
        images.append(SceneImage(scene_id, im_id, intr, scale, depth, tuple(instances)))
    return images


# --- targets ------------------------------------------------------------------


def _data_lines(text: str, header: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#") or s.replace(" ", "") == header:
            continue
        yield lineno, s


def parse_targets(text: str, path=None) -> list[TestTarget]:
    targets = set()
    for lineno, s in _data_lines(text, TARGETS_HEADER):
        parts = [p.strip() for p in s.split(",")]
        try:
            if len(parts) != 3:
                raise ValueError(f"expected 3 fields, got {len(parts)}")
            targets.add(TestTarget(*(int(p) for p in parts)))
        except ValueError as exc:
            raise ParseError(f"bad target row: {exc}", path=path, line=lineno) from None
    return sorted(targets)


def load_targets(path) -> list[TestTarget]:
    """Deduplicated targets sorted by (scene_id, im_id, obj_id)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing targets file: {path}")
    return parse_targets(path.read_text(), path=path)


def save_targets(targets: Iterable[TestTarget], path) -> None:
    rows = [TARGETS_HEADER] + [f"{t.scene_id},{t.im_id},{t.obj_id}" for t in sorted(set(targets))]
    atomic_write_text(path, "\n".join(rows) + "\n")


def derive_targets(images: Iterable[SceneImage]) -> list[TestTarget]:
    """One target per (image, annotated object), however many instances it has."""
    return sorted({TestTarget(im.scene_id, im.im_id, o) for im in images for o, _ in im.gt_instances})


# --- estimates ----------------------------------------------------------------


def _finite(text: str, what: str, path, lineno) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{what}: not a number: {text!r}", path=path, line=lineno) from None
    if not math.isfinite(v):
        raise NonFiniteValue(f"{what} is not finite ({text})", path=path, line=lineno)
    return v


def parse_estimates(text: str, path=None) -> list[EstimateRecord]:
    records = []
    for lineno, s in _data_lines(text, ESTIMATES_HEADER):
        parts = s.split(",")
        if len(parts) != 7:
            raise ParseError(f"expected 7 comma-separated fields, got {len(parts)}", path=path, line=lineno)
        try:
            ids = [int(p) for p in parts[:3]]
        except ValueError:
            raise ParseError("scene_id, im_id and obj_id must be integers", path=path, line=lineno) from None
        score = _finite(parts[3], "score", path, lineno)
        r = [_finite(x, "R", path, lineno) for x in parts[4].split()]
        t = [_finite(x, "t", path, lineno) for x in parts[5].split()]
        time_s = _finite(parts[6], "time", path, lineno)
        if len(r) != 9 or len(t) != 3:
            raise ParseError(f"R needs 9 and t needs 3 values, got {len(r)} and {len(t)}", path=path, line=lineno)
        if time_s < 0:
            raise ParseError(f"time must be >= 0, got {time_s}", path=path, line=lineno)
        try:
            pose = _pose_from_lists(r, t)
        except InvalidPose as exc:
            raise ParseError(f"invalid pose: {exc}", path=path, line=lineno) from None
        records.append(EstimateRecord(ids[0], ids[1], ids[2], score, pose, time_s))
    return records


def load_estimates(path) -> list[EstimateRecord]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing estimates file: {path}")
    return parse_estimates(path.read_text(), path=path)


def _g(x: float) -> str:
    return format(float(x), ".17g")


def format_estimates(records: Iterable[EstimateRecord]) -> str:
    rows = [ESTIMATES_HEADER]
    for e in records:
        r = " ".join(_g(x) for x in e.pose.rotation.reshape(-1))
        t = " ".join(_g(x) for x in e.pose.translation)
        rows.append(f"{e.scene_id},{e.im_id},{e.obj_id},{_g(e.score)},{r},{t},{_g(e.time_s)}")
    return "\n".join(rows) + "\n"


def save_estimates(records: Iterable[EstimateRecord], path) -> None:
    atomic_write_text(path, format_estimates(records))


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling and rename, so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "w", newline="\n") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


# --- whole datasets -----------------------------------------------------------


@dataclass
class Dataset:
    """A dataset directory with lazily loaded models and scenes."""

    root: Path
    name: str
    model_unit_mm: float = 1.0
    depth_scale: float = 1.0
    object_ids: tuple[int, ...] = ()
    _models: dict = field(default_factory=dict, repr=False, compare=False)
    _scenes: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        m = _load_json(root / MANIFEST)
        try:
            return cls(
                root=root,
                name=str(m.get("name", root.name)),
                model_unit_mm=float(m.get("model_unit_mm", 1.0)),
                depth_scale=float(m.get("depth_scale", 1.0)),
                object_ids=tuple(int(o) for o in m.get("object_ids", ())),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"bad manifest: {exc}", path=root / MANIFEST) from None

    def model_path(self, obj_id: int) -> Path:
        return self.root / "models" / f"obj_{obj_id:06d}.ply"

    def model(self, obj_id: int) -> Mesh:
        if obj_id not in self._models:
            path = self.model_path(obj_id)
            if not path.is_file():
                raise MissingModel(f"dataset {self.name!r}: no model for object {obj_id} ({path})")
            self._models[obj_id] = load_model(path, scale=self.model_unit_mm)
        return self._models[obj_id]

    def scene_dirs(self) -> list[Path]:
        test = self.root / "test"
        if not test.is_dir():
            return []
        return sorted((p for p in test.iterdir() if p.is_dir() and p.name.isdigit()), key=lambda p: int(p.name))

    def scene_ids(self) -> list[int]:
        return [int(p.name) for p in self.scene_dirs()]

    def scene(self, scene_id: int) -> dict[int, SceneImage]:
        if scene_id not in self._scenes:
            d = self.root / "test" / f"{scene_id:06d}"
            if not d.is_dir():
                raise MissingFile(f"dataset {self.name!r}: no scene directory {d}")
            self._scenes[scene_id] = {im.im_id: im for im in load_scene(d, self.depth_scale)}
        return self._scenes[scene_id]

    def image(self, scene_id: int, im_id: int) -> SceneImage:
        images = self.scene(scene_id)
        if im_id not in images:
            raise InconsistentIds(f"dataset {self.name!r}: scene {scene_id} has no image {im_id}")
        return images[im_id]

    def images(self) -> list[SceneImage]:
        return [im for sid in self.scene_ids() for im in self.scene(sid).values()]

    def targets(self, path=None) -> list[TestTarget]:
        """Targets from ``path``, else ``test_targets.csv``, else derived from the annotations."""
        if path is None and (self.root / "test_targets.csv").is_file():
            path = self.root / "test_targets.csv"
        if path is not None:
            return load_targets(path)
        return derive_targets(self.images())


def discover_datasets(root) -> list[Dataset]:
    """``root`` itself if it holds a manifest, else every child directory that does."""
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(f"dataset root does not exist: {root}")
    if (root / MANIFEST).is_file():
        return [Dataset.open(root)]
    found = [Dataset.open(p) for p in sorted(root.iterdir()) if (p / MANIFEST).is_file()]
    if not found:
        raise MissingFile(f"no {MANIFEST} under {root}")
    names = [d.name for d in found]
    if len(set(names)) != len(names):
        raise InconsistentIds(f"duplicate dataset names under {root}: {names}")
    return found


# --- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    category: str  # manifest | model | scene | pose
    where: str
    message: str

    def __str__(self):
        return f"[{self.category}] {self.where}: {self.message}"


def _check_rotation(r) -> str | None:
    from .geometry import ORTHO_REPAIR_TOL

    try:
        m = np.asarray(r, dtype=np.float64).reshape(3, 3)
    except (TypeError, ValueError):
        return "R must hold 9 numbers"
    if not np.all(np.isfinite(m)):
        return "R has non-finite entries"
    dev = float(np.abs(m.T @ m - np.eye(3)).max())
    if dev > ORTHO_REPAIR_TOL:
        return f"R is not orthonormal (max |R^T R - I| = {dev:.3g})"
    if np.linalg.det(m) <= 0:
        return "R has determinant <= 0"
    return None


def validate_dataset(root) -> list[Finding]:
    """Check manifest, models and scenes for consistency; collects every problem."""
    root = Path(root)
    findings: list[Finding] = []
    try:
        ds = Dataset.open(root)
    except (MissingFile, ParseError) as exc:
        return [Finding("manifest", str(root / MANIFEST), str(exc))]

    model_ok = {}
    for obj_id in ds.object_ids:
        path = ds.model_path(obj_id)
        try:
            ds.model(obj_id)
            model_ok[obj_id] = True
        except (MissingModel, ParseError) as exc:
            model_ok[obj_id] = False
            findings.append(Finding("model", str(path), str(exc)))

    for sdir in ds.scene_dirs():
        try:
            cams = _load_json(sdir / "scene_camera.json")
            gts = _load_json(sdir / "scene_gt.json")
        except (MissingFile, ParseError) as exc:
            findings.append(Finding("scene", str(sdir), str(exc)))
            continue
        for key in sorted(set(gts) - set(cams), key=str):
            findings.append(Finding("scene", f"{sdir.name}/{key}", "ground truth for an image without camera entry"))
        for key in sorted(cams, key=str):
            try:
                im_id = int(key)
            except ValueError:
                findings.append(Finding("scene", f"{sdir.name}/{key}", "image id is not an integer"))
                continue
            depth_path = sdir / "depth" / f"{im_id:06d}.png"
            try:
                read_depth_png(depth_path)
            except (MissingFile, ParseError) as exc:
                findings.append(Finding("scene", f"scene {sdir.name} image {im_id}", str(exc)))
            for row, inst in enumerate(gts.get(key, [])):
                where = f"scene {int(sdir.name)} image {im_id} row {row}"
                if not isinstance(inst, dict) or not {"obj_id", "R", "t"} <= set(inst):
                    findings.append(Finding("pose", where, "entry needs obj_id, R and t"))
                    continue
                obj_id = inst["obj_id"]
                if obj_id not in model_ok:
                    if not ds.model_path(obj_id).is_file():
                        findings.append(Finding("model", where, f"object {obj_id} has no model file"))
                    else:
                        findings.append(Finding("manifest", where, f"object {obj_id} is not listed in the manifest"))
                problem = _check_rotation(inst["R"])
                if problem:
                    findings.append(Finding("pose", where, problem))
                t = np.asarray(inst["t"], dtype=np.float64).reshape(-1) if isinstance(inst["t"], list) else None
                if t is None or t.size != 3 or not np.all(np.isfinite(t)):
                    findings.append(Finding("pose", where, "t must hold 3 finite numbers (mm)"))
    return findings
