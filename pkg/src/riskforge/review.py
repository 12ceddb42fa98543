"""Human-in-the-loop review service.

State lives in a manifest plus an append-only decision log; the current
qc_state of every sample is a materialized view of that log, so replaying
the log onto a fresh manifest reproduces states exactly.  Decision writes
are serialized through a single lock; reads are unrestricted.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, replace

from fastapi import FastAPI
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import RiskforgeError, ValidationError
from .pipeline import (
    QC_APPROVED,
    QC_PENDING,
    QC_REJECTED,
    DatasetRecord,
    read_manifest,
    record_to_dict,
    write_manifest,
)

DECISIONS_SUFFIX = ".decisions.jsonl"
DEFAULT_PAGE_SIZE = 20


class NotFound(RiskforgeError):
    pass


class Conflict(RiskforgeError):
    def __init__(self, sample_id: str, current_state: str):
        super().__init__(f"{sample_id}: already {current_state}; pass force=true to override")
        self.current_state = current_state


@dataclass(frozen=True)
class Decision:
    sequence_no: int
    sample_id: str
    decision: str  # "approve" | "reject"
    reason: str
    reviewer: str


def apply_decision(record: DatasetRecord, decision: Decision) -> DatasetRecord:
    state = QC_APPROVED if decision.decision == "approve" else QC_REJECTED
    return replace(record, qc_state=state, qc_reason=decision.reason or None)


def replay_decisions(records: list[DatasetRecord], decisions: list[Decision]) -> list[DatasetRecord]:
    """Fold a decision log over manifest records (idempotent per sequence_no)."""
    by_id = {r.sample_id: r for r in records}
    seen: set[int] = set()
    for decision in sorted(decisions, key=lambda d: d.sequence_no):
        if decision.sequence_no in seen:
            continue
        seen.add(decision.sequence_no)
        record = by_id.get(decision.sample_id)
        if record is not None:
            by_id[decision.sample_id] = apply_decision(record, decision)
    return [by_id[r.sample_id] for r in records]


class ReviewStore:
    """Manifest + decision log with a single-writer state machine."""

    def __init__(self, manifest_path: str, decisions_path: str | None = None):
        self.manifest_path = str(manifest_path)
        self.decisions_path = decisions_path or self.manifest_path + DECISIONS_SUFFIX
        self._lock = threading.Lock()
        manifest = read_manifest(self.manifest_path)
        self._footer_config = manifest.config
        self.decisions = self._load_decisions()
        self.records = replay_decisions(manifest.records, self.decisions)
        self._index = {r.sample_id: i for i, r in enumerate(self.records)}

    def _load_decisions(self) -> list[Decision]:
        if not os.path.exists(self.decisions_path):
            return []
        out = []
        with open(self.decisions_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                out.append(Decision(int(doc["sequence_no"]), doc["sample_id"],
                                    doc["decision"], doc.get("reason", ""),
                                    doc.get("reviewer", "")))
        return out

    def get(self, sample_id: str) -> DatasetRecord:
        i = self._index.get(sample_id)
        if i is None:
            raise NotFound(sample_id)
        return self.records[i]

    def list(self, state: str | None = None, kind: str | None = None,
             page: int = 1, page_size: int = DEFAULT_PAGE_SIZE):
        matches = [
            r for r in self.records
            if (state is None or r.qc_state == state)
            and (kind is None or r.intended_kind == kind)
        ]
        start = (page - 1) * page_size
        return matches[start:start + page_size], len(matches)

    def decide(self, sample_id: str, action: str, reason: str = "",
               reviewer: str = "", force: bool = False) -> DatasetRecord:
        if action not in ("approve", "reject"):
            raise ValidationError(f"decision: unknown action {action!r}")
        if not reviewer.strip():
            raise ValidationError("decision: reviewer must not be empty")
        with self._lock:
            record = self.get(sample_id)
            if record.qc_state != QC_PENDING and not force:
                raise Conflict(sample_id, record.qc_state)
            decision = Decision(len(self.decisions) + 1, sample_id, action, reason, reviewer)
            updated = apply_decision(record, decision)
            # log first, then materialize; a crash in between replays cleanly
            with open(self.decisions_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({
                    "sequence_no": decision.sequence_no,
                    "sample_id": decision.sample_id,
                    "decision": decision.decision,
                    "reason": decision.reason,
                    "reviewer": decision.reviewer,
                }, sort_keys=True) + "\n")
            self.decisions.append(decision)
            self.records[self._index[sample_id]] = updated
            write_manifest(self.manifest_path, self.records, self._footer_config)
            return updated


# ----------------------------------------------------------------------------
# HTTP API


class DecisionBody(BaseModel):
    action: str
    reason: str = ""
    reviewer: str = ""
    force: bool = False


def _summary(record: DatasetRecord) -> dict:
    primary = record.risk_label.primary.value if record.risk_label and record.risk_label.primary else "safe"
    return {
        "sample_id": record.sample_id,
        "scene_id": record.scene_id,
        "intended_kind": record.intended_kind,
        "primary": primary,
        "qc_state": record.qc_state,
        "qc_reason": record.qc_reason,
        "visibility_ratio": record.visibility_ratio,
        "images": {
            "front": f"/api/samples/{record.sample_id}/images/front",
            "bev": f"/api/samples/{record.sample_id}/images/bev",
        },
    }


def create_app(store: ReviewStore, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="riskforge review")

    @app.exception_handler(NotFound)
    async def _not_found(_, exc):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(Conflict)
    async def _conflict(_, exc):
        return JSONResponse(status_code=409,
                            content={"detail": str(exc), "current_state": exc.current_state})

    @app.exception_handler(ValidationError)
    async def _invalid(_, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/api/samples")
    def list_samples(state: str | None = None, kind: str | None = None,
                     page: int = 1, page_size: int = DEFAULT_PAGE_SIZE):
        page_records, total = store.list(state, kind, page, page_size)
        return {
            "samples": [_summary(r) for r in page_records],
            "page": page,
            "page_size": page_size,
            "total": total,
        }

    @app.get("/api/samples/{sample_id}")
    def get_sample(sample_id: str):
        record = store.get(sample_id)
        doc = record_to_dict(record)
        doc["images"] = _summary(record)["images"]
        return doc

    @app.get("/api/samples/{sample_id}/images/{which}")
    def get_image(sample_id: str, which: str):
        record = store.get(sample_id)
        key = {"front": "front_overlay", "bev": "bev"}.get(which)
        if key is None or not record.image_paths.get(key):
            raise NotFound(f"{sample_id}: no image {which!r}")
        path = record.image_paths[key]
        if not os.path.exists(path):
            raise NotFound(f"{sample_id}: image file missing: {path}")
        return FileResponse(path, media_type="image/png")

    @app.post("/api/samples/{sample_id}/decision")
    def post_decision(sample_id: str, body: DecisionBody):
        record = store.decide(sample_id, body.action, body.reason, body.reviewer, body.force)
        return {
            "sample_id": record.sample_id,
            "qc_state": record.qc_state,
            "sequence_no": store.decisions[-1].sequence_no,
        }

    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def serve(manifest_path: str, port: int = 8008, ui_dir: str | None = None,
          host: str = "127.0.0.1") -> None:
    import uvicorn

    store = ReviewStore(manifest_path)
    app = create_app(store, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
