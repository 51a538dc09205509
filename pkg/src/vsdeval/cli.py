"""Command-line front end: ``vsdeval {eval,sweep,validate,fixturegen,serve}``.

Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid input or settings.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .dataset import (
    DATASET_ROOT_ENV,
    Dataset,
    discover_datasets,
    load_estimates,
    load_targets,
    validate_dataset,
)
from .errors import (
    EmptyBins,
    InconsistentIds,
    MissingFile,
    MissingModel,
    ParseError,
    RenderFailure,
)
from .harness import ledger_csv, per_object_csv, recall_by_visible_fraction, run, sweep, visibility_csv
from .metrics import DEFAULT_TAU, DEFAULT_THETA, VsdConfig
from .visibility import DEFAULT_DELTA, VisibilityConfig

log = logging.getLogger("vsdeval")

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2
DEFAULT_VISIB_BINS = tuple(i / 10 for i in range(11))


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Path
    estimates_file: Path
    output_dir: Path
    targets_file: Path | None = None
    tau: float = DEFAULT_TAU
    theta: float = DEFAULT_THETA
    delta: float = DEFAULT_DELTA
    workers: int = 1

    def validate(self) -> tuple[VsdConfig, VisibilityConfig]:
        if self.workers < 1:
            raise ValueError(f"--workers must be >= 1, got {self.workers}")
        return VsdConfig(self.tau, self.theta), VisibilityConfig(self.delta)


def _per_dataset(path: Path | None, datasets: Sequence[Dataset], loader: Callable, what: str) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if path.is_dir():
        out = {}
        for ds in datasets:
            f = path / f"{ds.name}.csv"
            if f.is_file():
                out[ds.name] = loader(f)
            else:
                log.warning("no %s file for dataset %s (%s)", what, ds.name, f)
        return out
    if not path.exists():
        raise MissingFile(f"{what} file not found: {path}")
    if len(datasets) != 1:
        raise ValueError(f"a single {what} file needs a single dataset; pass a directory holding <dataset>.csv files")
    return {datasets[0].name: loader(path)}


def write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    """Stage every file as a temporary sibling, then rename them all in one go."""
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            tmp = out_dir / f".{name}.tmp{os.getpid()}"
            staged.append((tmp, out_dir / name))
            with open(tmp, "w", newline="\n") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
        for tmp, final in staged:
            os.replace(tmp, final)
    finally:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)


def _evaluate(cfg: RunConfig):
    vsd_cfg, visib_cfg = cfg.validate()
    datasets = discover_datasets(cfg.dataset_root)
    if not Path(cfg.estimates_file).exists():
        raise MissingFile(f"estimates file not found: {cfg.estimates_file}")
    estimates = _per_dataset(cfg.estimates_file, datasets, load_estimates, "estimates")
    targets = _per_dataset(cfg.targets_file, datasets, load_targets, "targets")
    return run(datasets, estimates, targets, vsd_cfg, visib_cfg, cfg.workers)


def cmd_eval(cfg: RunConfig, visib_bins: Sequence[float] = DEFAULT_VISIB_BINS) -> int:
    def body():
        results, report = _evaluate(cfg)
        bins = recall_by_visible_fraction([r for rs in results.values() for r in rs], visib_bins)
        write_outputs(
            Path(cfg.output_dir),
            {
                "ledger.csv": ledger_csv(results),
                "report.json": report.to_json(),
                "per_object.csv": per_object_csv(report),
                "visibility.csv": visibility_csv(bins),
            },
        )
        overall = "n/a" if report.overall is None else f"{report.overall:.4f}"
        print(f"overall recall {overall} ({', '.join(f'{k}={_pct(v)}' for k, v in report.per_dataset.items())})")

    return _guarded(body)


def cmd_sweep(cfg: RunConfig, taus: Sequence[float], thetas: Sequence[float]) -> int:
    def body():
        if not taus or not thetas:
            raise ValueError("--taus and --thetas need at least one value each")
        for t in taus:
            VsdConfig(tau=t)
        for t in thetas:
            VsdConfig(theta=t)
        results, _ = _evaluate(cfg)
        grid = sweep(results, taus, thetas)
        write_outputs(Path(cfg.output_dir), {"sweep.csv": grid.to_csv()})
        print(f"wrote {len(taus)}x{len(thetas)} recall grid to {Path(cfg.output_dir) / 'sweep.csv'}")

    return _guarded(body)


def cmd_validate(dataset_root) -> int:
    def body():
        root = Path(dataset_root)
        if not root.is_dir():
            raise MissingFile(f"dataset root does not exist: {root}")
        roots = [root] if (root / "dataset.json").is_file() else sorted(p for p in root.iterdir() if (p / "dataset.json").is_file())
        if not roots:
            roots = [root]
        findings = [f for r in roots for f in validate_dataset(r)]
        for f in findings:
            print(f, file=sys.stderr)
        if findings:
            cats = sorted({f.category for f in findings})
            print(f"{len(findings)} problem(s) in: {', '.join(cats)}", file=sys.stderr)
            return EXIT_INVALID
        print(f"ok: {len(roots)} dataset(s) validated")
        return EXIT_OK

    return _guarded(body)


def _pct(v):
    return "n/a" if v is None else f"{v:.4f}"


def _guarded(body: Callable) -> int:
    try:
        rc = body()
        return EXIT_OK if rc is None else rc
    except (ValueError, ParseError, InconsistentIds, MissingModel, EmptyBins) as exc:
        # MissingFile subclasses OSError, not ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RenderFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        print("interrupted; no outputs written", file=sys.stderr)
        return 130


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Echo defaults in --help, except for unset optional paths."""

    def _get_help_string(self, action):
        if action.default is None or isinstance(action.default, bool):
            return action.help
        return super()._get_help_string(action)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--dataset",
        type=Path,
        default=os.environ.get(DATASET_ROOT_ENV),
        help=f"dataset directory, or a directory of datasets (default: ${DATASET_ROOT_ENV})",
    )
    p.add_argument("--estimates", type=Path, required=True, help="estimates CSV, or a directory with <dataset>.csv files")
    p.add_argument("--targets", type=Path, default=None, help="targets CSV or directory (default: derived from ground truth)")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="misalignment tolerance tau, in mm")
    p.add_argument("--theta", type=float, default=DEFAULT_THETA, help="correctness threshold theta, unitless in (0, 1]")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA, help="occlusion tolerance delta, in mm")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="vsdeval", description="6D object pose evaluation", formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score estimates and write the recall report", formatter_class=fmt)
    _add_run_args(p)
    p.add_argument("--visib-bins", type=_floats, default=list(DEFAULT_VISIB_BINS), help="visible-fraction bin edges")

    p = sub.add_parser("sweep", help="recall grid over tau and theta", formatter_class=fmt)
    _add_run_args(p)
    p.add_argument("--taus", type=_floats, default=[5.0, 10.0, 20.0, 40.0, 80.0], help="tau values, in mm")
    p.add_argument("--thetas", type=_floats, default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0], help="theta values")

    p = sub.add_parser("validate", help="check a dataset for consistency", formatter_class=fmt)
    p.add_argument("--dataset", type=Path, default=os.environ.get(DATASET_ROOT_ENV), help="dataset directory")

    p = sub.add_parser("fixturegen", help="write the synthetic fixture datasets", formatter_class=fmt)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the submission service", formatter_class=fmt)
    p.add_argument("--dataset", type=Path, default=os.environ.get(DATASET_ROOT_ENV), help="dataset directory")
    p.add_argument("--store", type=Path, required=True, help="directory for submissions and reports")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8000, help="TCP port")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="misalignment tolerance tau, in mm")
    p.add_argument("--theta", type=float, default=DEFAULT_THETA, help="correctness threshold theta")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA, help="occlusion tolerance delta, in mm")
    p.add_argument("--workers", type=int, default=1, help="worker processes per scoring job")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command in ("eval", "sweep", "validate", "serve") and args.dataset is None:
        print(f"error: --dataset is required (or set ${DATASET_ROOT_ENV})", file=sys.stderr)
        return EXIT_INVALID

    if args.command in ("eval", "sweep"):
        cfg = RunConfig(
            dataset_root=args.dataset,
            estimates_file=args.estimates,
            output_dir=args.out,
            targets_file=args.targets,
            tau=args.tau,
            theta=args.theta,
            delta=args.delta,
            workers=args.workers,
        )
        if args.command == "eval":
            return cmd_eval(cfg, args.visib_bins)
        return cmd_sweep(cfg, args.taus, args.thetas)
    if args.command == "validate":
        return cmd_validate(args.dataset)
    if args.command == "fixturegen":
        from .fixtures import generate_fixtures

        for p in generate_fixtures(args.out, seed=args.seed):
            print(p)
        return EXIT_OK
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        def body():
            app = create_app(
                args.dataset,
                args.store,
                VsdConfig(args.tau, args.theta),
                VisibilityConfig(args.delta),
                workers=args.workers,
            )
            uvicorn.run(app, host=args.host, port=args.port)

        return _guarded(body)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
