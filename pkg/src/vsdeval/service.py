"""Minimal continuous-submission service.

Endpoints (JSON responses, versioned under ``/v1``):

``POST /v1/submissions?method_name=M[&dataset=D]``
    Body is either one estimates CSV (``text/csv`` or any non-form type) or a
    ``multipart/form-data`` form with one file per dataset, each named
    ``<dataset>.csv``. A raw body applies to ``dataset`` (optional when the
    root holds a single dataset). Returns ``202 {"id", "status"}``; 400 with
    ``{"message", "line", "path"}`` on a parse failure, 413 over the size cap.

``GET /v1/submissions/{id}``
    ``{"id", "method_name", "received_at", "status", "datasets", "error",
    "report"}`` where ``report`` is the full recall report once Done.

``GET /v1/leaderboard[?dataset=D]``
    ``{"entries": [{"rank", "id", "method_name", "received_at", "overall",
    "per_dataset"}]}`` over Done submissions, best overall recall first, ties
    by earliest submission. ``dataset`` keeps only entries that scored it.

Persistence is file-backed under the store directory: ``ledger.jsonl`` is an
append-only event log, ``payloads/<id>/<dataset>.csv`` keeps the estimates and
``reports/<id>.json`` the finished report. On start the ledger is replayed and
every Queued or Running job is scored again.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import queue
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .dataset import Dataset, atomic_write_text, discover_datasets, load_estimates, parse_estimates
from .errors import ParseError, VsdEvalError
from .harness import RecallReport, run
from .metrics import VsdConfig
from .visibility import VisibilityConfig

log = logging.getLogger(__name__)

DEFAULT_MAX_BYTES = 16 * 1024 * 1024
QUEUED, RUNNING, DONE, FAILED = "Queued", "Running", "Done", "Failed"
_NEXT = {QUEUED: {RUNNING}, RUNNING: {DONE, FAILED}, DONE: set(), FAILED: set()}


@dataclasses.dataclass(frozen=True)
class Submission:
    id: str
    method_name: str
    received_at: str
    seq: int
    datasets: tuple[str, ...]
    status: str = QUEUED
    error: str | None = None
    report: RecallReport | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "method_name": self.method_name,
            "received_at": self.received_at,
            "status": self.status,
            "datasets": list(self.datasets),
            "error": self.error,
            "report": None if self.report is None else self.report.to_dict(),
        }


class SubmissionStore:
    """Ledger, payloads and reports on disk; an in-memory snapshot for reads.

    Entries in ``_subs`` are immutable and replaced wholesale, so readers
    never need the lock.
    """

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "payloads").mkdir(parents=True, exist_ok=True)
        (self.root / "reports").mkdir(parents=True, exist_ok=True)
        self.ledger_path = self.root / "ledger.jsonl"
        self._lock = threading.Lock()
        self._subs: dict[str, Submission] = {}
        self._seq = 0
        self._replay()

    def _replay(self) -> None:
        if not self.ledger_path.exists():
            return
        with open(self.ledger_path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    ev = json.loads(line)
                except json.JSONDecodeError:
                    # a torn final line from a crash mid-append
                    log.warning("skipping unreadable ledger line %d", n)
                    continue
                if ev["event"] == "submitted":
                    self._subs[ev["id"]] = Submission(
                        ev["id"], ev["method_name"], ev["received_at"], ev["seq"], tuple(ev["datasets"])
                    )
                    self._seq = max(self._seq, ev["seq"] + 1)
                elif ev["event"] == "status" and ev["id"] in self._subs:
                    sub = self._subs[ev["id"]]
                    self._subs[ev["id"]] = dataclasses.replace(sub, status=ev["status"], error=ev.get("error"))
        for sid, sub in self._subs.items():
            if sub.status == DONE:
                path = self.report_path(sid)
                if path.exists():
                    report = RecallReport.from_dict(json.loads(path.read_text()))
                    self._subs[sid] = dataclasses.replace(sub, report=report)
                else:
                    self._subs[sid] = dataclasses.replace(sub, status=QUEUED)

    def _append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True) + "\n"
        with open(self.ledger_path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def payload_dir(self, sid: str) -> Path:
        return self.root / "payloads" / sid

    def report_path(self, sid: str) -> Path:
        return self.root / "reports" / f"{sid}.json"

    def add(self, method_name: str, payloads: Mapping[str, str], received_at: str | None = None) -> Submission:
        sid = uuid.uuid4().hex
        received_at = received_at or datetime.now(timezone.utc).isoformat(timespec="microseconds")
        pdir = self.payload_dir(sid)
        pdir.mkdir(parents=True)
        for name, text in payloads.items():
            atomic_write_text(pdir / f"{name}.csv", text)
        with self._lock:
            sub = Submission(sid, method_name, received_at, self._seq, tuple(sorted(payloads)))
            self._seq += 1
            self._append(
                {"event": "submitted", "id": sid, "method_name": method_name, "received_at": received_at,
                 "seq": sub.seq, "datasets": list(sub.datasets)}
            )  # fmt: skip
            self._subs[sid] = sub
        return sub

    def set_status(self, sid: str, status: str, error: str | None = None, report: RecallReport | None = None) -> Submission:
        with self._lock:
            sub = self._subs[sid]
            if status not in _NEXT[sub.status]:
                raise ValueError(f"illegal transition {sub.status} -> {status} for {sid}")
            if report is not None:
                atomic_write_text(self.report_path(sid), report.to_json())
            self._append({"event": "status", "id": sid, "status": status, "error": error})
            sub = dataclasses.replace(sub, status=status, error=error, report=report)
            self._subs[sid] = sub
        return sub

    def inject_done(self, method_name: str, report: RecallReport, received_at: str | None = None) -> Submission:
        """Record an already-scored submission (seeding and tests)."""
        datasets = {name: "" for name in report.datasets}
        sub = self.add(method_name, datasets, received_at)
        self.set_status(sub.id, RUNNING)
        return self.set_status(sub.id, DONE, report=report)

    def get(self, sid: str) -> Submission | None:
        return self._subs.get(sid)

    def pending(self) -> list[Submission]:
        return sorted((s for s in self._subs.values() if s.status in (QUEUED, RUNNING)), key=lambda s: s.seq)

    def leaderboard(self, dataset: str | None = None) -> list[Submission]:
        done = [s for s in list(self._subs.values()) if s.status == DONE and s.report is not None]
        if dataset is not None:
            done = [s for s in done if dataset in s.report.datasets]
        overall = lambda s: -1.0 if s.report.overall is None else s.report.overall  # noqa: E731
        return sorted(done, key=lambda s: (-overall(s), s.received_at, s.seq))


class Scorer:
    """Single background thread scoring submissions in arrival order."""

    def __init__(
        self,
        store: SubmissionStore,
        datasets: list[Dataset],
        vsd_cfg: VsdConfig,
        visib_cfg: VisibilityConfig,
        workers: int = 1,
        max_queue: int = 0,
    ):
        self.store, self.datasets = store, datasets
        self.vsd_cfg, self.visib_cfg, self.workers = vsd_cfg, visib_cfg, workers
        self.queue: queue.Queue[str | None] = queue.Queue(max_queue)
        self._thread = threading.Thread(target=self._loop, name="vsdeval-scorer", daemon=True)

    def start(self) -> None:
        for sub in self.store.pending():
            self.queue.put(sub.id)
        self._thread.start()

    def stop(self, timeout: float | None = None) -> None:
        self.queue.put(None)
        self._thread.join(timeout)

    def wait_idle(self, timeout: float | None = None) -> None:
        """Block until every queued job has been scored (tests, shutdown)."""
        done = threading.Event()

        def waiter():
            self.queue.join()
            done.set()

        threading.Thread(target=waiter, daemon=True).start()
        if not done.wait(timeout):
            raise TimeoutError("scoring queue did not drain")

    def score(self, sid: str) -> RecallReport:
        pdir = self.store.payload_dir(sid)
        estimates = {d.name: load_estimates(pdir / f"{d.name}.csv") for d in self.datasets if (pdir / f"{d.name}.csv").exists()}
        _, report = run(self.datasets, estimates, None, self.vsd_cfg, self.visib_cfg, self.workers)
        return report

    def _loop(self) -> None:
        while True:
            sid = self.queue.get()
            try:
                if sid is None:
                    return
                sub = self.store.get(sid)
                if sub is None or sub.status not in (QUEUED, RUNNING):
                    continue
                if sub.status == QUEUED:
                    self.store.set_status(sid, RUNNING)
                try:
                    report = self.score(sid)
                except (VsdEvalError, OSError, ValueError) as exc:
                    log.exception("scoring %s failed", sid)
                    self.store.set_status(sid, FAILED, error=f"{type(exc).__name__}: {exc}")
                else:
                    self.store.set_status(sid, DONE, report=report)
            finally:
                self.queue.task_done()


def _parse_error_body(exc: ParseError, dataset: str) -> dict:
    return {"message": str(exc), "line": exc.line, "path": dataset}


def create_app(
    dataset_root,
    store_dir,
    vsd_cfg: VsdConfig = VsdConfig(),
    visib_cfg: VisibilityConfig = VisibilityConfig(),
    *,
    max_bytes: int = DEFAULT_MAX_BYTES,
    workers: int = 1,
    max_queue: int = 0,
) -> FastAPI:
    datasets = discover_datasets(dataset_root)
    names = [d.name for d in datasets]
    store = SubmissionStore(store_dir)
    scorer = Scorer(store, datasets, vsd_cfg, visib_cfg, workers, max_queue)
    scorer.start()

    app = FastAPI(title="vsdeval", version="1")
    app.state.store, app.state.scorer = store, scorer

    async def read_payloads(request: Request, dataset: str | None) -> dict[str, bytes]:
        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() and int(declared) > max_bytes:
            raise HTTPException(413, f"payload exceeds {max_bytes} bytes")
        if request.headers.get("content-type", "").startswith("multipart/form-data"):
            form = await request.form()
            out = {}
            for _, value in form.multi_items():
                if not hasattr(value, "read"):
                    continue
                name = Path(value.filename or "").stem
                if name not in names:
                    raise HTTPException(400, f"upload {value.filename!r} does not name a dataset ({', '.join(names)})")
                out[name] = await value.read()
            if not out:
                raise HTTPException(400, "multipart submission carries no files")
            if sum(map(len, out.values())) > max_bytes:
                raise HTTPException(413, f"payload exceeds {max_bytes} bytes")
            return out
        body = bytearray()
        async for chunk in request.stream():
            body += chunk
            if len(body) > max_bytes:
                raise HTTPException(413, f"payload exceeds {max_bytes} bytes")
        if dataset is None:
            if len(names) != 1:
                raise HTTPException(400, f"query parameter 'dataset' is required (one of {', '.join(names)})")
            dataset = names[0]
        if dataset not in names:
            raise HTTPException(400, f"unknown dataset {dataset!r}")
        return {dataset: bytes(body)}

    @app.post("/v1/submissions", status_code=202)
    async def submit(request: Request, method_name: str, dataset: str | None = None):
        if not method_name.strip():
            raise HTTPException(400, "method_name must not be empty")
        raw = await read_payloads(request, dataset)
        texts = {}
        for name, data in raw.items():
            try:
                text = data.decode("utf-8")
            except UnicodeDecodeError as exc:
                return JSONResponse({"message": f"payload is not UTF-8: {exc}", "line": None, "path": name}, 400)
            try:
                parse_estimates(text, path=name)
            except ParseError as exc:
                return JSONResponse(_parse_error_body(exc, name), 400)
            texts[name] = text
        sub = store.add(method_name, texts)
        scorer.queue.put(sub.id)
        return {"id": sub.id, "status": sub.status}

    @app.get("/v1/submissions/{sid}")
    def get_status(sid: str):
        sub = store.get(sid)
        if sub is None:
            raise HTTPException(404, f"unknown submission {sid!r}")
        return sub.to_dict()

    @app.get("/v1/leaderboard")
    def leaderboard(dataset: str | None = None):
        entries = []
        for rank, sub in enumerate(store.leaderboard(dataset), start=1):
            entries.append(
                {"rank": rank, "id": sub.id, "method_name": sub.method_name, "received_at": sub.received_at,
                 "overall": sub.report.overall, "per_dataset": sub.report.per_dataset}
            )  # fmt: skip
        return {"entries": entries}

    return app
