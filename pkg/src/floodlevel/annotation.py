"""Pairwise annotation service: serve image pairs, collect votes, export labels.

Human annotators answer one question per task: which of two images shows
the higher water level. Votes land in an append-only JSONL log (the
serialization point for concurrent writers); task state is derived from
the log, so a restart reconstructs everything. Majority-filtered exports
produce the same pair-label files as the dataset module.
"""

import json
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .manifest import DatasetManifest, PairLabel

CHOICES = ("a_higher", "b_higher", "equal", "unsure")

DEFAULT_MIN_VOTES = 3
DEFAULT_MIN_AGREEMENT = 0.66
DEFAULT_VOTES_PER_TASK = 3  # votes after which a task stops being served


class UnknownTaskError(KeyError):
    pass


class DuplicateVoteError(Exception):
    def __init__(self, ack: dict):
        super().__init__(f"duplicate vote on task {ack['task_id']}")
        self.ack = ack


@dataclass
class AnnotationTask:
    task_id: str
    id_a: str
    id_b: str

    def to_json(self):
        return {"task_id": self.task_id, "id_a": self.id_a, "id_b": self.id_b}


@dataclass
class Vote:
    task_id: str
    annotator_id: str
    choice: str
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if self.choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}, got {self.choice!r}")

    def to_json(self):
        return {
            "task_id": self.task_id,
            "annotator_id": self.annotator_id,
            "choice": self.choice,
            "timestamp": self.timestamp,
        }


def sample_task_pairs(
    manifest: DatasetManifest, count: int, seed: int = 0, strategy: str = "uniform"
) -> list[tuple[str, str]]:
    """Draw distinct unordered id pairs to annotate.

    ``uniform`` samples pairs uniformly; ``level_balanced`` draws the two
    endpoints from uniformly chosen levels first, spreading coverage across
    the scale.
    """
    rng = np.random.default_rng(seed)
    ids = [rec.id for rec in manifest.records]
    if len(ids) < 2:
        raise ValueError("need at least two records to form pairs")
    max_pairs = len(ids) * (len(ids) - 1) // 2
    if count > max_pairs:
        raise ValueError(f"asked for {count} pairs but only {max_pairs} exist")

    chosen: set[frozenset] = set()
    pairs: list[tuple[str, str]] = []
    if strategy == "uniform":
        while len(pairs) < count:
            a, b = rng.choice(len(ids), size=2, replace=False)
            key = frozenset((ids[a], ids[b]))
            if key not in chosen:
                chosen.add(key)
                pairs.append((ids[int(a)], ids[int(b)]))
    elif strategy == "level_balanced":
        by_level: dict[int, list[str]] = {}
        for rec in manifest.records:
            by_level.setdefault(rec.effective_level(), []).append(rec.id)
        levels = sorted(by_level)
        while len(pairs) < count:
            la, lb = rng.choice(levels, size=2, replace=True)
            a = by_level[la][int(rng.integers(len(by_level[la])))]
            b = by_level[lb][int(rng.integers(len(by_level[lb])))]
            if a == b:
                continue
            key = frozenset((a, b))
            if key not in chosen:
                chosen.add(key)
                pairs.append((a, b))
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    return pairs


class VoteStore:
    """Task and vote persistence: JSONL files plus in-memory indexes.

    A single lock serializes writes; the vote log is append-only, so the
    store state is always reconstructable from disk.
    """

    def __init__(self, data_dir: str | Path, votes_per_task: int = DEFAULT_VOTES_PER_TASK):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.tasks_path = self.data_dir / "tasks.jsonl"
        self.votes_path = self.data_dir / "votes.jsonl"
        self.votes_per_task = votes_per_task
        self._lock = threading.Lock()
        self.tasks: dict[str, AnnotationTask] = {}
        self.votes: dict[str, dict[str, Vote]] = {}
        self._load()

    def _load(self):
        if self.tasks_path.exists():
            for line in self.tasks_path.read_text().splitlines():
                if line.strip():
                    raw = json.loads(line)
                    task = AnnotationTask(raw["task_id"], raw["id_a"], raw["id_b"])
                    self.tasks[task.task_id] = task
                    self.votes.setdefault(task.task_id, {})
        if self.votes_path.exists():
            for line in self.votes_path.read_text().splitlines():
                if line.strip():
                    raw = json.loads(line)
                    vote = Vote(raw["task_id"], raw["annotator_id"], raw["choice"],
                                raw["timestamp"])
                    self.votes.setdefault(vote.task_id, {})[vote.annotator_id] = vote

    def create_tasks(self, pairs: list[tuple[str, str]]) -> list[AnnotationTask]:
        """Register one open task per unordered pair; repeats are rejected."""
        with self._lock:
            seen = {frozenset((t.id_a, t.id_b)) for t in self.tasks.values()}
            created = []
            with self.tasks_path.open("a") as fh:
                for id_a, id_b in pairs:
                    if id_a == id_b:
                        raise ValueError(f"pair references the same image {id_a!r} twice")
                    key = frozenset((id_a, id_b))
                    if key in seen:
                        raise ValueError(f"pair ({id_a}, {id_b}) already has a task")
                    seen.add(key)
                    task = AnnotationTask(f"t{len(self.tasks):06d}", id_a, id_b)
                    self.tasks[task.task_id] = task
                    self.votes.setdefault(task.task_id, {})
                    fh.write(json.dumps(task.to_json()) + "\n")
                    created.append(task)
            return created

    def vote_count(self, task_id: str) -> int:
        return len(self.votes.get(task_id, {}))

    def task_status(self, task_id: str) -> str:
        return "done" if self.vote_count(task_id) >= self.votes_per_task else "open"

    def next_task(self, annotator_id: str) -> AnnotationTask | None:
        """The open task with the fewest votes (ties by id) that this
        annotator has not voted on; None when drained."""
        with self._lock:
            candidates = [
                (self.vote_count(t.task_id), t.task_id)
                for t in self.tasks.values()
                if self.task_status(t.task_id) == "open"
                and annotator_id not in self.votes[t.task_id]
            ]
            if not candidates:
                return None
            _, task_id = min(candidates)
            return self.tasks[task_id]

    def _ack(self, vote: Vote) -> dict:
        return {
            "task_id": vote.task_id,
            "annotator_id": vote.annotator_id,
            "choice": vote.choice,
            "accepted": True,
            "task_vote_count": self.vote_count(vote.task_id),
        }

    def submit_vote(self, task_id: str, annotator_id: str, choice: str) -> dict:
        """Persist one vote atomically; a repeat returns the original ack."""
        vote = Vote(task_id, annotator_id, choice)
        with self._lock:
            if task_id not in self.tasks:
                raise UnknownTaskError(task_id)
            existing = self.votes[task_id].get(annotator_id)
            if existing is not None:
                raise DuplicateVoteError(self._ack(existing))
            with self.votes_path.open("a") as fh:
                fh.write(json.dumps(vote.to_json()) + "\n")
                fh.flush()
            self.votes[task_id][annotator_id] = vote
            return self._ack(vote)

    def total_votes(self) -> int:
        return sum(len(v) for v in self.votes.values())

    def stats(self) -> dict:
        with self._lock:
            by_choice = Counter(v.choice for votes in self.votes.values()
                                for v in votes.values())
            statuses = Counter(self.task_status(tid) for tid in self.tasks)
            return {
                "tasks": len(self.tasks),
                "open_tasks": statuses.get("open", 0),
                "done_tasks": statuses.get("done", 0),
                "votes": self.total_votes(),
                "votes_by_choice": {c: by_choice.get(c, 0) for c in CHOICES},
            }

    def export_labels(
        self,
        min_votes: int = DEFAULT_MIN_VOTES,
        min_agreement: float = DEFAULT_MIN_AGREEMENT,
    ) -> list[PairLabel]:
        """Majority-filtered pair labels, a pure function of store contents.

        A task is emitted when it has at least ``min_votes`` votes, its
        plurality choice is directional (not equal/unsure, no tie), and the
        plurality fraction reaches ``min_agreement``.
        """
        labels = []
        for task_id in sorted(self.tasks):
            votes = self.votes.get(task_id, {})
            total = len(votes)
            if total < min_votes or total == 0:
                continue
            counts = Counter(v.choice for v in votes.values())
            top_choice, top_count = counts.most_common(1)[0]
            if sum(1 for c in counts.values() if c == top_count) > 1:
                continue  # tied plurality carries no signal
            if top_choice not in ("a_higher", "b_higher"):
                continue
            fraction = top_count / total
            if fraction < min_agreement:
                continue
            task = self.tasks[task_id]
            sign = +1 if top_choice == "a_higher" else -1
            confidence = fraction if fraction > 0.5 else None
            labels.append(PairLabel(task.id_a, task.id_b, sign, confidence=confidence))
        return labels


def create_app(store: VoteStore, manifest: DatasetManifest | None = None,
               images_root: str | Path | None = None, ui_dir: str | Path | None = None):
    """Build the HTTP API around a store.

    Image bytes are served from the manifest's uris under ``images_root``.
    When ``ui_dir`` is given, the annotation front-end is served at ``/``.
    """
    from fastapi import FastAPI, HTTPException, Query
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import FileResponse, JSONResponse
    from pydantic import BaseModel

    app = FastAPI(title="water-level pair annotation")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    uri_by_id = {rec.id: rec.image_uri for rec in manifest.records} if manifest else {}
    images_root = Path(images_root) if images_root else None

    class VoteBody(BaseModel):
        task_id: str
        annotator_id: str
        choice: str

    def task_payload(task: AnnotationTask) -> dict:
        return {
            **task.to_json(),
            "image_url_a": f"/api/images/{task.id_a}",
            "image_url_b": f"/api/images/{task.id_b}",
            "status": store.task_status(task.task_id),
            "vote_count": store.vote_count(task.task_id),
        }

    @app.get("/api/tasks/next")
    def next_task(annotator: str = Query(..., min_length=1)):
        task = store.next_task(annotator)
        if task is None:
            return {"status": "drained", "task": None}
        return {"status": "ok", "task": task_payload(task)}

    @app.post("/api/votes")
    def submit_vote(body: VoteBody):
        if body.choice not in CHOICES:
            raise HTTPException(400, detail={"error": f"unknown choice {body.choice!r}"})
        try:
            return store.submit_vote(body.task_id, body.annotator_id, body.choice)
        except UnknownTaskError:
            raise HTTPException(404, detail={"error": f"unknown task {body.task_id!r}"})
        except DuplicateVoteError as dup:
            return JSONResponse(status_code=409, content={
                "error": "duplicate vote", "ack": dup.ack,
            })

    @app.get("/api/export")
    def export(min_votes: int = DEFAULT_MIN_VOTES,
               min_agreement: float = DEFAULT_MIN_AGREEMENT):
        labels = store.export_labels(min_votes=min_votes, min_agreement=min_agreement)
        return {
            "count": len(labels),
            "labels": [
                {"id_a": l.id_a, "id_b": l.id_b, "sign": l.sign, "confidence": l.confidence}
                for l in labels
            ],
        }

    @app.get("/api/stats")
    def stats():
        return store.stats()

    @app.get("/api/images/{image_id}")
    def image(image_id: str):
        if image_id not in uri_by_id or images_root is None:
            raise HTTPException(404, detail={"error": f"unknown image {image_id!r}"})
        path = Path(uri_by_id[image_id])
        if not path.is_absolute():
            path = images_root / path
        if not path.exists():
            raise HTTPException(404, detail={"error": f"missing file for {image_id!r}"})
        return FileResponse(path, media_type="image/png")

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
