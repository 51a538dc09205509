"""Pose-error functions and correctness criteria.

``e_vsd`` is the Visible Surface Discrepancy with a 0/1 per-pixel cost;
``e_add``/``e_adi`` are the average vertex distances (same vertex / closest
vertex) used by the older Linemod protocol.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EmptyUnion, KindMismatch
from .geometry import Mesh, Pose
from .maps import DistanceMap, VisibilityMask, check_shapes

DEFAULT_TAU = 20.0  # mm
DEFAULT_THETA = 0.3
AD_THRESHOLD_FACTOR = 0.1
ADI_GRID_MIN_VERTICES = 2000


class ErrorKind(str, enum.Enum):
    VSD = "VSD"
    ADD = "ADD"
    ADI = "ADI"


@dataclass(frozen=True)
class PoseError:
    kind: ErrorKind
    value: float

    def __post_init__(self):
        kind = ErrorKind(self.kind)
        value = float(self.value)
        if kind is ErrorKind.VSD and not 0.0 <= value <= 1.0:
            raise ValueError(f"VSD error must lie in [0, 1], got {value}")
        if kind is not ErrorKind.VSD and not value >= 0.0:
            raise ValueError(f"{kind.value} error must be >= 0, got {value}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "value", value)


@dataclass(frozen=True)
class VsdConfig:
    tau: float = DEFAULT_TAU
    theta: float = DEFAULT_THETA

    def __post_init__(self):
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValueError(f"misalignment tolerance tau must be > 0, got {self.tau}")
        if not 0 < self.theta <= 1:
            raise ValueError(f"correctness threshold theta must lie in (0, 1], got {self.theta}")


@dataclass(frozen=True, eq=False)
class VsdStats:
    """Per-pixel ingredients of e_VSD that do not depend on tau.

    ``diffs`` holds sorted ``|S_est - S_gt|`` over the mask intersection, so
    the error for any tau is ``(union - #(diffs < tau)) / union``.
    """

    union: int
    diffs: np.ndarray

    def error(self, tau: float) -> float:
        if self.union == 0:
            raise EmptyUnion("both visibility masks are empty")
        matched = int(np.searchsorted(self.diffs, tau, side="left"))
        return (self.union - matched) / self.union

    def __eq__(self, other):
        if not isinstance(other, VsdStats):
            return NotImplemented
        return self.union == other.union and np.array_equal(self.diffs, other.diffs)

    __hash__ = None


def vsd_stats(est_dist: DistanceMap, gt_dist: DistanceMap, est_mask: VisibilityMask, gt_mask: VisibilityMask) -> VsdStats:
    check_shapes(est_dist, gt_dist, est_mask, gt_mask)
    inter = est_mask.bits & gt_mask.bits
    union = int(np.count_nonzero(est_mask.bits | gt_mask.bits))
    diffs = np.sort(np.abs(est_dist.values[inter] - gt_dist.values[inter]))
    return VsdStats(union, diffs)


def e_vsd(
    est_dist: DistanceMap,
    gt_dist: DistanceMap,
    est_mask: VisibilityMask,
    gt_mask: VisibilityMask,
    tau: float = DEFAULT_TAU,
) -> PoseError:
    """Fraction of pixels in the mask union that are not matched within ``tau``.

    A pixel is matched when both masks contain it and the two rendered
    distances differ by strictly less than ``tau``.

    :raises EmptyUnion: if neither mask has a pixel; such a target cannot be
        scored and must be handled by the caller.
    """
    check_shapes(est_dist, gt_dist, est_mask, gt_mask)
    inter = est_mask.bits & gt_mask.bits
    union = int(np.count_nonzero(est_mask.bits | gt_mask.bits))
    if union == 0:
        raise EmptyUnion("both visibility masks are empty")
    matched = int(np.count_nonzero(np.abs(est_dist.values[inter] - gt_dist.values[inter]) < tau))
    return PoseError(ErrorKind.VSD, (union - matched) / union)


def e_add(mesh: Mesh, gt: Pose, est: Pose) -> PoseError:
    """Mean distance between each vertex under ``gt`` and the same vertex under ``est``."""
    if len(mesh.vertices) == 0:
        raise ValueError("mesh has no vertices")
    a = gt.transform_points(mesh.vertices)
    b = est.transform_points(mesh.vertices)
    return PoseError(ErrorKind.ADD, float(np.linalg.norm(a - b, axis=1).mean()))


def nearest_distances_brute(queries: np.ndarray, points: np.ndarray, block: int = 512) -> np.ndarray:
    out = np.empty(len(queries))
    for i in range(0, len(queries), block):
        q = queries[i : i + block]
        d2 = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        out[i : i + block] = np.sqrt(d2.min(axis=1))
    return out


def nearest_distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distance from every query to its closest point (exact)."""
    if len(points) < ADI_GRID_MIN_VERTICES:
        return nearest_distances_brute(queries, points)
    from scipy.spatial import cKDTree

    d, _ = cKDTree(points).query(queries, k=1)
    return np.asarray(d, dtype=np.float64)


def e_adi(mesh: Mesh, gt: Pose, est: Pose) -> PoseError:
    """Mean distance from each vertex under ``gt`` to the closest vertex under ``est``."""
    if len(mesh.vertices) == 0:
        raise ValueError("mesh has no vertices")
    a = gt.transform_points(mesh.vertices)
    b = est.transform_points(mesh.vertices)
    return PoseError(ErrorKind.ADI, float(nearest_distances(a, b).mean()))


def correct_vsd(err: PoseError, theta: float = DEFAULT_THETA) -> bool:
    if err.kind is not ErrorKind.VSD:
        raise KindMismatch(f"expected a VSD error, got {err.kind.value}")
    return err.value < theta


def correct_ad(err: PoseError, diameter: float) -> bool:
    if err.kind not in (ErrorKind.ADD, ErrorKind.ADI):
        raise KindMismatch(f"expected an ADD or ADI error, got {err.kind.value}")
    if not diameter > 0:
        raise ValueError(f"diameter must be positive, got {diameter}")
    return err.value <= AD_THRESHOLD_FACTOR * diameter


def resample_surface(mesh: Mesh, n: int, seed: int = 0) -> Mesh:
    """Area-uniform random surface points, as a triangle-free mesh.

    Optional preprocessing for ``e_add``/``e_adi`` on unevenly tessellated
    models; the default evaluation uses the raw vertices.
    """
    rng = np.random.default_rng(seed)
    tri = mesh.vertices[mesh.triangles]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    idx = rng.choice(len(tri), size=n, p=area / area.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    t = tri[idx]
    pts = (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]
    return Mesh(pts, np.zeros((0, 3), dtype=np.int64))
