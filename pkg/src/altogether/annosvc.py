"""HTTP service for multi-round re-alignment annotation: projects,
vendor-swapped round assignment, checklist-gated submission, and live
statistics.

State lives in memory behind a single-writer lock and is made durable by an
append-only JSONL event log replayed at startup, so stored captions are
immutable and every accepted submission can be re-audited.
"""

# note: no postponed annotations here; FastAPI needs the endpoint body models
# (defined inside create_app) resolvable at runtime

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .corpus import Corpus, RoundStats, _parse_item
from .errors import (
    AltogetherError,
    NotFoundError,
    ParseError,
    StateError,
    ValidationError,
)
from .textproc import STARTING_PROMPTS, starting_prompt_check

CHECKLIST_KEYS = (
    "copy-previous",
    "starting-prompt",
    "alt-usage",
    "hallucination-removal",
    "theme-removal",
    "people-policy",
    "missing-details",
    "structure-check",
)

CHECKLIST_LABELS = {
    "copy-previous": "Started from the previous caption",
    "starting-prompt": "Caption begins with a recommended concise prompt",
    "alt-usage": "Concrete alt-text concepts carried over where appropriate",
    "hallucination-removal": "Removed or fixed content not present in the image",
    "theme-removal": "Removed theme/feeling or imaginative sentences",
    "people-policy": "No protected personal attributes or identifying details",
    "missing-details": "Added visible missing details, transcribed readable text",
    "structure-check": "Checked deductive structure, object order and length",
}


@dataclass
class Assignment:
    id: str
    project_id: str
    round_no: int
    item_id: str
    vendor: str
    state: str = "open"  # open | submitted

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "project_id": self.project_id,
            "round_no": self.round_no,
            "item_id": self.item_id,
            "vendor": self.vendor,
            "state": self.state,
        }


@dataclass
class Project:
    id: str
    name: str
    vendors: list[str]
    corpus: Corpus
    current_round: int = 1

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "vendors": self.vendors,
            "current_round": self.current_round,
            "n_items": len(self.corpus),
        }


class AnnotationStore:
    """All mutable annotation state; every mutation appends one event."""

    def __init__(self, log_path: str | Path | None = None):
        self._lock = threading.Lock()
        self._projects: dict[str, Project] = {}
        self._assignments: dict[str, Assignment] = {}
        self._by_project_round: dict[tuple[str, int], list[str]] = {}
        self._next_project = 1
        self._next_assignment = 1
        self._log_path = Path(log_path) if log_path else None
        self._replaying = False
        if self._log_path and self._log_path.exists():
            self._replay()

    # -- event log -----------------------------------------------------------

    def _append_event(self, event: str, data: dict) -> None:
        if self._replaying or self._log_path is None:
            return
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"event": event, "data": data}, ensure_ascii=False) + "\n")
            fh.flush()

    def _replay(self) -> None:
        self._replaying = True
        try:
            with open(self._log_path, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise ParseError(f"invalid event log JSON: {exc.msg}", line_no) from None
                    data = entry["data"]
                    if entry["event"] == "project_created":
                        self._create_project(
                            data["name"], data["items"], data["vendors"], project_id=data["id"]
                        )
                    elif entry["event"] == "round_opened":
                        self.open_round(data["project_id"], data["round_no"])
                    elif entry["event"] == "task_submitted":
                        self.submit_task(
                            data["assignment_id"],
                            data["caption"],
                            data["checklist"],
                            data["annotator"],
                            timestamp=data.get("ts"),
                        )
                    else:
                        raise ParseError(f"unknown event type {entry['event']!r}", line_no)
        finally:
            self._replaying = False

    # -- projects ------------------------------------------------------------

    def _create_project(
        self,
        name: str,
        items: list[dict],
        vendors: list[str],
        project_id: str | None = None,
    ) -> Project:
        if not items:
            raise ValidationError("cannot create a project with zero items")
        if not vendors:
            raise ValidationError("project requires at least one vendor")
        if len(set(vendors)) != len(vendors):
            raise ValidationError("vendor names must be distinct")
        for project in self._projects.values():
            if project.name == name:
                raise StateError(f"project named {name!r} already exists")
        corpus = Corpus()
        with corpus._lock:
            for line_no, obj in enumerate(items, start=1):
                corpus._add_item(_parse_item(obj, line_no), line_no)
        if project_id is None:
            project_id = f"p{self._next_project:03d}"
        self._next_project = max(self._next_project + 1, int(project_id[1:]) + 1)
        project = Project(id=project_id, name=name, vendors=list(vendors), corpus=corpus)
        self._projects[project_id] = project
        self._append_event(
            "project_created",
            {"id": project_id, "name": name, "vendors": list(vendors), "items": items},
        )
        return project

    def create_project(
        self, name: str, items: list[dict], vendors: list[str]
    ) -> Project:
        with self._lock:
            return self._create_project(name, items, vendors)

    def create_project_from_file(self, name: str, items_path: str | Path, vendors: list[str]) -> Project:
        items = []
        with open(items_path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
                items.append(obj)
        return self.create_project(name, items, vendors)

    def project(self, project_id: str) -> Project:
        try:
            return self._projects[project_id]
        except KeyError:
            raise NotFoundError(f"unknown project {project_id!r}") from None

    # -- rounds & assignments --------------------------------------------------

    def _vendor_for(self, project: Project, item_idx: int, round_no: int) -> str:
        # round 2 splits items across vendors; each later round rotates, so a
        # 2-vendor project swaps and a k-vendor project round-robins
        return project.vendors[(item_idx + round_no - 2) % len(project.vendors)]

    def open_round(self, project_id: str, round_no: int | None = None) -> list[Assignment]:
        with self._lock:
            project = self.project(project_id)
            expected = project.current_round + 1
            if round_no is None:
                round_no = expected
            if round_no != expected:
                raise ValidationError(
                    f"next round for project {project_id!r} is {expected}, got {round_no}"
                )
            if project.current_round >= 2:
                pending = [
                    self._assignments[aid].item_id
                    for aid in self._by_project_round.get((project_id, project.current_round), [])
                    if self._assignments[aid].state == "open"
                ]
                if pending:
                    raise StateError(
                        f"round {project.current_round} incomplete; pending items: "
                        + ", ".join(sorted(pending))
                    )
            created = []
            ids = self._by_project_round.setdefault((project_id, round_no), [])
            for idx, item_id in enumerate(project.corpus.item_ids()):
                assignment = Assignment(
                    id=f"a{self._next_assignment:06d}",
                    project_id=project_id,
                    round_no=round_no,
                    item_id=item_id,
                    vendor=self._vendor_for(project, idx, round_no),
                )
                self._next_assignment += 1
                self._assignments[assignment.id] = assignment
                ids.append(assignment.id)
                created.append(assignment)
            project.current_round = round_no
            self._append_event("round_opened", {"project_id": project_id, "round_no": round_no})
            return created

    def next_task(self, project_id: str, annotator: str) -> dict | None:
        project = self.project(project_id)
        for (pid, _), ids in sorted(self._by_project_round.items()):
            if pid != project_id:
                continue
            for aid in ids:
                assignment = self._assignments[aid]
                if assignment.state == "open" and assignment.vendor == annotator:
                    return self._task_view(project, assignment)
        return None

    def _task_view(self, project: Project, assignment: Assignment) -> dict:
        item = project.corpus.item(assignment.item_id)
        rounds = project.corpus.rounds_for(assignment.item_id)
        previous = rounds[assignment.round_no - 2].caption
        return {
            "assignment_id": assignment.id,
            "project_id": project.id,
            "item_id": item.id,
            "image_ref": item.image_ref,
            "alt_text": item.alt_text,
            "previous_caption": previous,
            "round_no": assignment.round_no,
            "checklist": [
                {"key": key, "label": CHECKLIST_LABELS[key]} for key in CHECKLIST_KEYS
            ],
            "starting_prompts": list(STARTING_PROMPTS),
        }

    def submit_task(
        self,
        assignment_id: str,
        caption: str,
        checklist: dict[str, Any],
        annotator: str,
        timestamp: float | None = None,
    ) -> dict:
        with self._lock:
            try:
                assignment = self._assignments[assignment_id]
            except KeyError:
                raise NotFoundError(f"unknown assignment {assignment_id!r}") from None
            if assignment.state != "open":
                raise StateError(f"assignment {assignment_id!r} already submitted")
            unmet = sorted(
                key for key in CHECKLIST_KEYS if checklist.get(key) is not True
            )
            if unmet:
                raise ValidationError("checklist incomplete: " + ", ".join(unmet))
            match = starting_prompt_check(caption)
            if not match.accepted:
                raise ValidationError(
                    "caption must begin with a recommended starting prompt "
                    f"(e.g. {STARTING_PROMPTS[0]!r})"
                )
            project = self.project(assignment.project_id)
            record = project.corpus.record_round(
                assignment.item_id,
                assignment.round_no,
                caption,
                annotator,
                timestamp=timestamp,
            )
            assignment.state = "submitted"
            self._append_event(
                "task_submitted",
                {
                    "assignment_id": assignment_id,
                    "caption": caption,
                    "checklist": {k: bool(checklist.get(k)) for k in CHECKLIST_KEYS},
                    "annotator": annotator,
                    "ts": record.timestamp,
                },
            )
            return {
                "assignment_id": assignment_id,
                "item_id": record.item_id,
                "round_no": record.round_no,
                "caption": record.caption,
                "annotator": record.annotator,
                "edit_distance_to_prev": record.edit_distance_to_prev,
                "length_words": record.length_words,
                "matched_prompt": match.prompt,
            }

    def project_stats(self, project_id: str) -> list[RoundStats]:
        project = self.project(project_id)
        return [project.corpus.round_stats(r) for r in project.corpus.recorded_rounds()]

    def audit(self) -> int:
        """Re-validate every stored submission against the gates; returns the
        number audited. Raises if any stored caption violates them."""
        checked = 0
        for assignment in self._assignments.values():
            if assignment.state != "submitted":
                continue
            project = self._projects[assignment.project_id]
            rounds = project.corpus.rounds_for(assignment.item_id)
            record = rounds[assignment.round_no - 1]
            if not starting_prompt_check(record.caption).accepted:
                raise ValidationError(
                    f"stored caption for {assignment.id} fails the starting-prompt gate"
                )
            checked += 1
        return checked


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------


def create_app(store: AnnotationStore):
    """Build the FastAPI app over a store. Imported lazily by the CLI so the
    library core has no hard HTTP dependency at import time."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    app = FastAPI(title="altogether annotation service")

    def error_response(status: int, code: str, detail: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": {"code": code, "detail": detail}})

    @app.exception_handler(AltogetherError)
    async def domain_error_handler(_: Request, exc: AltogetherError):
        if isinstance(exc, NotFoundError):
            return error_response(404, "not_found", str(exc))
        if isinstance(exc, StateError):
            return error_response(409, "conflict", str(exc))
        return error_response(400, "validation", str(exc))

    @app.exception_handler(RequestValidationError)
    async def body_error_handler(_: Request, exc: RequestValidationError):
        return error_response(400, "validation", str(exc))

    class ProjectCreate(BaseModel):
        name: str
        vendors: list[str]
        items: list[dict] | None = None
        items_path: str | None = None

    class RoundOpen(BaseModel):
        round_no: int | None = None

    class Submission(BaseModel):
        caption: str
        checklist: dict[str, bool]
        annotator: str

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/projects", status_code=201)
    def create_project(body: ProjectCreate):
        if body.items is not None:
            project = store.create_project(body.name, body.items, body.vendors)
        elif body.items_path:
            project = store.create_project_from_file(body.name, body.items_path, body.vendors)
        else:
            raise ValidationError("provide either items or items_path")
        return project.to_dict()

    @app.post("/projects/{project_id}/rounds")
    def open_round(project_id: str, body: RoundOpen | None = None):
        assignments = store.open_round(project_id, body.round_no if body else None)
        return {
            "round_no": assignments[0].round_no if assignments else None,
            "assignments": [a.to_dict() for a in assignments],
        }

    @app.get("/projects/{project_id}/tasks/next")
    def next_task(project_id: str, annotator: str):
        return {"task": store.next_task(project_id, annotator)}

    @app.post("/assignments/{assignment_id}/submit")
    def submit(assignment_id: str, body: Submission):
        return store.submit_task(assignment_id, body.caption, body.checklist, body.annotator)

    @app.get("/projects/{project_id}/stats")
    def stats(project_id: str):
        return {"rounds": [s.to_dict() for s in store.project_stats(project_id)]}

    return app


def serve(log_path: str | Path | None, host: str = "127.0.0.1", port: int = 8787) -> None:
    import uvicorn

    store = AnnotationStore(log_path)
    uvicorn.run(create_app(store), host=host, port=port, log_level="warning")
