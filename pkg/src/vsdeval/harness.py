"""Per-target evaluation and recall aggregation.

A target is an (image, object) pair. The highest-scoring submitted estimate
for it is compared with every annotated instance of the object that is at
least 10% visible; the smallest e_VSD wins. Targets with no such instance are
left out of the recall denominator, targets without an estimate count as
failures.
"""

from __future__ import annotations

import enum
import io
import json
import logging
from collections import OrderedDict, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset, EstimateRecord, SceneImage, TestTarget
from .errors import (
    EmptyBins,
    EmptySilhouette,
    EmptyUnion,
    InconsistentIds,
    MeshEntirelyBehindCamera,
    RenderFailure,
    VsdEvalError,
)
from .geometry import CameraIntrinsics, Mesh, Pose
from .maps import DepthMap, DistanceMap
from .metrics import VsdConfig, VsdStats, correct_vsd, e_vsd, vsd_stats
from .render import depth_to_distance, render_depth, silhouette
from .visibility import MIN_VISIBLE_FRACTION, VisibilityConfig, visib_mask_est, visib_mask_gt, visible_fraction

log = logging.getLogger(__name__)

POSE_QUANTUM = 1e-6


class SkipReason(str, enum.Enum):
    BELOW_VISIBILITY = "BelowVisibilityFilter"
    NO_ESTIMATE = "NoEstimate"
    EMPTY_UNION = "EmptyUnion"


@dataclass(frozen=True)
class InstanceEval:
    gt_index: int
    visible_fraction: float
    stats: VsdStats | None = None  # None when there is no estimate to compare


@dataclass(frozen=True)
class TargetResult:
    target: TestTarget
    dataset: str = ""
    matched_instance: int | None = None
    error: float | None = None
    correct: bool = False
    skipped_reason: SkipReason | None = None
    visible_fraction: float = 0.0  # largest over all instances of the object
    instances: tuple[InstanceEval, ...] = field(default=(), repr=False)

    @property
    def eligible(self) -> bool:
        return self.skipped_reason is not SkipReason.BELOW_VISIBILITY

    def error_at(self, tau: float) -> float | None:
        """Minimum e_VSD over eligible instances for another tau."""
        errs = []
        for inst in self.instances:
            if inst.stats is None or inst.stats.union == 0:
                continue
            errs.append(inst.stats.error(tau))
        return min(errs) if errs else None


class RenderCache:
    """Bounded LRU of rendered depth maps keyed by object, quantized pose and camera."""

    def __init__(self, maxsize: int = 256):
        self.maxsize = maxsize
        self._items: OrderedDict = OrderedDict()

    @staticmethod
    def key(obj_id: int, pose: Pose, intrinsics: CameraIntrinsics):
        q = np.round(np.concatenate([pose.rotation.reshape(-1), pose.translation]) / POSE_QUANTUM).astype(np.int64)
        return (obj_id, q.tobytes(), intrinsics)

    def render(self, obj_id: int, mesh: Mesh, pose: Pose, intrinsics: CameraIntrinsics) -> DepthMap:
        k = self.key(obj_id, pose, intrinsics)
        hit = self._items.get(k)
        if hit is not None:
            self._items.move_to_end(k)
            return hit
        try:
            depth = render_depth(mesh, pose, intrinsics)
        except MeshEntirelyBehindCamera:
            depth = DepthMap.empty(*intrinsics.shape)
        self._items[k] = depth
        if len(self._items) > self.maxsize:
            self._items.popitem(last=False)
        return depth


def select_estimate(estimates: Sequence[EstimateRecord], target: TestTarget) -> EstimateRecord | None:
    """Highest-scoring estimate for ``target``; the earliest row wins ties."""
    best = None
    n = 0
    for e in estimates:
        if (e.scene_id, e.im_id, e.obj_id) != (target.scene_id, target.im_id, target.obj_id):
            continue
        n += 1
        if best is None or e.score > best.score:
            best = e
    if n > 1:
        log.warning("target %s: %d estimates submitted, using the highest-scoring one", target, n)
    return best


def evaluate_target(
    target: TestTarget,
    estimates: Sequence[EstimateRecord],
    scene: SceneImage,
    mesh: Mesh,
    vsd_cfg: VsdConfig = VsdConfig(),
    visib_cfg: VisibilityConfig = VisibilityConfig(),
    *,
    dataset: str = "",
    cache: RenderCache | None = None,
    scene_dist: DistanceMap | None = None,
) -> TargetResult:
    if (scene.scene_id, scene.im_id) != (target.scene_id, target.im_id):
        raise InconsistentIds(f"target {target} evaluated against image {scene.scene_id}/{scene.im_id}")
    instances = scene.instances_of(target.obj_id)
    if not instances:
        raise InconsistentIds(f"target {target}: image has no annotated instance of object {target.obj_id}")
    cache = cache if cache is not None else RenderCache()
    K = scene.intrinsics
    if scene_dist is None:
        scene_dist = depth_to_distance(scene.depth, K)

    try:
        gt = []
        best_frac = 0.0
        for gt_index, pose in instances:
            gt_depth = cache.render(target.obj_id, mesh, pose, K)
            gt_dist = depth_to_distance(gt_depth, K)
            gt_mask = visib_mask_gt(gt_dist, scene_dist, visib_cfg)
            try:
                frac = visible_fraction(gt_mask, silhouette(gt_depth))
            except EmptySilhouette:
                frac = 0.0
            best_frac = max(best_frac, frac)
            if frac >= MIN_VISIBLE_FRACTION:
                gt.append((gt_index, frac, gt_dist, gt_mask))

        common = dict(target=target, dataset=dataset, visible_fraction=best_frac)
        if not gt:
            log.info("target %s skipped: largest visible fraction %.3f", target, best_frac)
            return TargetResult(skipped_reason=SkipReason.BELOW_VISIBILITY, **common)

        est = select_estimate(estimates, target)
        if est is None:
            return TargetResult(
                skipped_reason=SkipReason.NO_ESTIMATE,
                instances=tuple(InstanceEval(i, f) for i, f, _, _ in gt),
                **common,
            )

        est_depth = cache.render(target.obj_id, mesh, est.pose, K)
        est_dist = depth_to_distance(est_depth, K)
        best = None
        evals = []
        for gt_index, frac, gt_dist, gt_mask in gt:
            est_mask = visib_mask_est(est_dist, scene_dist, gt_mask, visib_cfg)
            evals.append(InstanceEval(gt_index, frac, vsd_stats(est_dist, gt_dist, est_mask, gt_mask)))
            try:
                err = e_vsd(est_dist, gt_dist, est_mask, gt_mask, vsd_cfg.tau)
            except EmptyUnion:
                continue
            if best is None or err.value < best[1].value:
                best = (gt_index, err)
    except VsdEvalError:
        raise
    except Exception as exc:
        raise RenderFailure(f"dataset {dataset!r}, target {target}: {exc}") from exc

    if best is None:
        log.error("target %s: empty visibility union for every instance (degenerate geometry)", target)
        return TargetResult(skipped_reason=SkipReason.EMPTY_UNION, instances=tuple(evals), **common)
    gt_index, err = best
    return TargetResult(
        matched_instance=gt_index,
        error=err.value,
        correct=correct_vsd(err, vsd_cfg.theta),
        instances=tuple(evals),
        **common,
    )


def group_estimates(estimates: Iterable[EstimateRecord]) -> dict[TestTarget, list[EstimateRecord]]:
    groups: dict[TestTarget, list[EstimateRecord]] = defaultdict(list)
    for e in estimates:
        groups[e.key].append(e)
    return groups


_worker_dataset: Dataset | None = None


def _init_worker(root, name):
    global _worker_dataset
    _worker_dataset = Dataset.open(root)
    _worker_dataset.name = name


def _evaluate_chunk(dataset: Dataset, chunk, vsd_cfg, visib_cfg) -> list[TargetResult]:
    cache = RenderCache()
    out = []
    dist_cache: dict = {}
    for target, ests in chunk:
        scene = dataset.image(target.scene_id, target.im_id)
        key = (target.scene_id, target.im_id)
        if key not in dist_cache:
            dist_cache.clear()
            dist_cache[key] = depth_to_distance(scene.depth, scene.intrinsics)
        out.append(
            evaluate_target(
                target,
                ests,
                scene,
                dataset.model(target.obj_id),
                vsd_cfg,
                visib_cfg,
                dataset=dataset.name,
                cache=cache,
                scene_dist=dist_cache[key],
            )
        )
    return out


def _worker_chunk(chunk, vsd_cfg, visib_cfg):
    return _evaluate_chunk(_worker_dataset, chunk, vsd_cfg, visib_cfg)


def evaluate_dataset(
    dataset: Dataset,
    targets: Sequence[TestTarget],
    estimates: Iterable[EstimateRecord],
    vsd_cfg: VsdConfig = VsdConfig(),
    visib_cfg: VisibilityConfig = VisibilityConfig(),
    workers: int = 1,
    chunk_size: int | None = None,
) -> list[TargetResult]:
    """Evaluate every target; results come back in target order for any worker count."""
    targets = sorted(set(targets))
    groups = group_estimates(estimates)
    stray = set(groups) - set(targets)
    if stray:
        log.warning("dataset %s: %d estimates refer to non-target (image, object) pairs", dataset.name, len(stray))
    work = [(t, groups.get(t, [])) for t in targets]
    if chunk_size is None:
        chunk_size = max(1, min(16, -(-len(work) // max(workers, 1))))
    chunks = [work[i : i + chunk_size] for i in range(0, len(work), chunk_size)]
    if workers <= 1 or len(chunks) <= 1:
        results = []
        for c in chunks:
            results.extend(_evaluate_chunk(dataset, c, vsd_cfg, visib_cfg))
        return results
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(dataset.root, dataset.name)) as ex:
        parts = ex.map(_worker_chunk, chunks, [vsd_cfg] * len(chunks), [visib_cfg] * len(chunks))
        return [r for part in parts for r in part]


# --- aggregation --------------------------------------------------------------


@dataclass(frozen=True)
class DatasetScore:
    recall: float | None
    per_object: dict[int, float | None]
    total: int
    evaluated: int
    skipped: int
    correct: int
    no_estimate: int
    empty_union: int


@dataclass(frozen=True)
class RecallReport:
    datasets: dict[str, DatasetScore]
    overall: float | None
    params: dict[str, float] = field(default_factory=dict)

    @property
    def per_dataset(self) -> dict[str, float | None]:
        return {name: s.recall for name, s in self.datasets.items()}

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "params": dict(sorted(self.params.items())),
            "datasets": {
                name: {**asdict(s), "per_object": {str(k): v for k, v in sorted(s.per_object.items())}}
                for name, s in sorted(self.datasets.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RecallReport":
        datasets = {
            name: DatasetScore(**{**s, "per_object": {int(k): v for k, v in s["per_object"].items()}})
            for name, s in d["datasets"].items()
        }
        return cls(datasets, d["overall"], dict(d.get("params", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def score_dataset(results: Iterable[TargetResult]) -> DatasetScore:
    results = list(results)
    eligible = [r for r in results if r.eligible]
    by_obj: dict[int, list[TargetResult]] = defaultdict(list)
    for r in eligible:
        by_obj[r.target.obj_id].append(r)
    for r in results:
        by_obj.setdefault(r.target.obj_id, [])
    correct = sum(r.correct for r in eligible)
    return DatasetScore(
        recall=_ratio(correct, len(eligible)),
        per_object={o: _ratio(sum(r.correct for r in rs), len(rs)) for o, rs in sorted(by_obj.items())},
        total=len(results),
        evaluated=len(eligible),
        skipped=len(results) - len(eligible),
        correct=correct,
        no_estimate=sum(r.skipped_reason is SkipReason.NO_ESTIMATE for r in results),
        empty_union=sum(r.skipped_reason is SkipReason.EMPTY_UNION for r in results),
    )


def score(results_by_dataset: Mapping[str, Iterable[TargetResult]], params: Mapping[str, float] | None = None) -> RecallReport:
    """Recall per object and per dataset; overall is the plain mean of dataset recalls."""
    datasets = {name: score_dataset(rs) for name, rs in sorted(results_by_dataset.items())}
    overall = _mean(s.recall for s in datasets.values())
    return RecallReport(datasets, overall, dict(params or {}))


@dataclass(frozen=True)
class SweepGrid:
    taus: tuple[float, ...]
    thetas: tuple[float, ...]
    overall: tuple[tuple[float | None, ...], ...]  # [tau index][theta index]
    per_dataset: dict[str, tuple[tuple[float | None, ...], ...]]

    def to_csv(self) -> str:
        names = sorted(self.per_dataset)
        buf = io.StringIO()
        buf.write(",".join(["tau", "theta", "overall"] + names) + "\n")
        for i, tau in enumerate(self.taus):
            for j, theta in enumerate(self.thetas):
                cells = [_fmt(tau), _fmt(theta), _fmt(self.overall[i][j])]
                cells += [_fmt(self.per_dataset[n][i][j]) for n in names]
                buf.write(",".join(cells) + "\n")
        return buf.getvalue()


def sweep(
    results_by_dataset: Mapping[str, Sequence[TargetResult]], taus: Sequence[float], thetas: Sequence[float]
) -> SweepGrid:
    """Overall recall for every (tau, theta) from the cached per-pixel statistics.

    Uses the visibility masks of the original run, so delta is fixed.
    """
    for tau in taus:
        VsdConfig(tau=tau)
    for theta in thetas:
        VsdConfig(theta=theta)
    per_dataset = {}
    for name, results in sorted(results_by_dataset.items()):
        eligible = [r for r in results if r.eligible]
        rows = []
        for tau in taus:
            errs = [r.error_at(tau) for r in eligible]
            rows.append(tuple(_ratio(sum(e is not None and e < th for e in errs), len(errs)) for th in thetas))
        per_dataset[name] = tuple(rows)
    overall = tuple(
        tuple(_mean(per_dataset[n][i][j] for n in per_dataset) for j in range(len(thetas))) for i in range(len(taus))
    )
    return SweepGrid(tuple(float(t) for t in taus), tuple(float(t) for t in thetas), overall, per_dataset)


@dataclass(frozen=True)
class VisibilityBin:
    lo: float
    hi: float
    targets: int
    correct: int

    @property
    def recall(self) -> float | None:
        return _ratio(self.correct, self.targets)


def recall_by_visible_fraction(results: Iterable[TargetResult], bin_edges: Sequence[float]) -> list[VisibilityBin]:
    """Recall of eligible targets binned by their largest instance visible fraction.

    Bins are ``(lo, hi]`` and must cover ``(0, 1]``.
    """
    edges = [float(e) for e in bin_edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] > 0 or edges[-1] < 1:
        raise EmptyBins(f"bin edges must increase strictly and cover (0, 1], got {bin_edges}")
    counts = [[0, 0] for _ in edges[1:]]
    for r in results:
        if not r.eligible:
            continue
        k = int(np.searchsorted(edges, r.visible_fraction, side="left")) - 1
        k = min(max(k, 0), len(counts) - 1)
        counts[k][0] += 1
        counts[k][1] += int(r.correct)
    return [VisibilityBin(lo, hi, n, c) for (lo, hi), (n, c) in zip(zip(edges, edges[1:]), counts)]


# --- tables -------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


LEDGER_COLUMNS = (
    "dataset", "scene_id", "im_id", "obj_id", "matched_instance", "error",
    "correct", "skipped_reason", "visible_fraction",
)  # fmt: skip


def ledger_csv(results_by_dataset: Mapping[str, Iterable[TargetResult]]) -> str:
    buf = io.StringIO()
    buf.write(",".join(LEDGER_COLUMNS) + "\n")
    for name, results in sorted(results_by_dataset.items()):
        for r in results:
            row = [
                name, r.target.scene_id, r.target.im_id, r.target.obj_id, r.matched_instance,
                r.error, r.correct, r.skipped_reason.value if r.skipped_reason else None, r.visible_fraction,
            ]  # fmt: skip
            buf.write(",".join(_fmt(c) for c in row) + "\n")
    return buf.getvalue()


def per_object_csv(report: RecallReport) -> str:
    buf = io.StringIO()
    buf.write("dataset,obj_id,recall\n")
    for name, s in sorted(report.datasets.items()):
        for obj, rec in sorted(s.per_object.items()):
            buf.write(f"{name},{obj},{_fmt(rec)}\n")
    return buf.getvalue()


def visibility_csv(bins: Sequence[VisibilityBin]) -> str:
    buf = io.StringIO()
    buf.write("lo,hi,targets,correct,recall\n")
    for b in bins:
        buf.write(",".join(_fmt(c) for c in (b.lo, b.hi, b.targets, b.correct, b.recall)) + "\n")
    return buf.getvalue()


def run(
    datasets: Sequence[Dataset],
    estimates: Mapping[str, Sequence[EstimateRecord]],
    targets: Mapping[str, Sequence[TestTarget]] | None = None,
    vsd_cfg: VsdConfig = VsdConfig(),
    visib_cfg: VisibilityConfig = VisibilityConfig(),
    workers: int = 1,
) -> tuple[dict[str, list[TargetResult]], RecallReport]:
    """Evaluate several datasets and score them into one report."""
    results = {}
    for ds in sorted(datasets, key=lambda d: d.name):
        ts = targets[ds.name] if targets and ds.name in targets else ds.targets()
        results[ds.name] = evaluate_dataset(ds, ts, estimates.get(ds.name, []), vsd_cfg, visib_cfg, workers)
    params = {"tau": float(vsd_cfg.tau), "theta": float(vsd_cfg.theta), "delta": float(visib_cfg.delta)}
    return results, score(results, params)
