"""JSON-over-HTTP service: sequences, frames, annotations, propagation jobs.

Annotations are revision-checked (optimistic concurrency): a PUT must carry
the revision it was based on; mismatches get 409 so a stale browser tab can
never clobber newer work. Every accepted revision is also appended to a
history directory. Propagation jobs run off the request path, serialized per
sequence.
"""

from __future__ import annotations

import io
import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import FileResponse
from PIL import Image

from .annotations import AnnotationError, IncompleteCoverageError, PolygonAnnotation, rasterize_polygons
from .core import CLASS_NAMES, CLASS_COLORS, SegpropError
from .dataset import encode_label_image, index_video, save_label_image
from .flow import DirectoryFlowSource, EstimatingFlowSource, MissingFlowError
from .propagation import PropagationConfig, Propagator

JOB_STATES = ("queued", "running", "done", "failed")


@dataclass
class PropagationJob:
    id: str
    sequence: str
    config: PropagationConfig
    state: str = "queued"
    progress: float = 0.0
    error: str | None = None
    result_dir: str | None = None
    keyframes: list[int] = dc_field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "sequence": self.sequence,
            "state": self.state,
            "progress": round(self.progress, 4),
            "error": self.error,
            "result_dir": self.result_dir,
            "keyframes": self.keyframes,
            "config": self.config.to_dict(),
        }


class AnnotationStore:
    """File-backed polygon annotations with revision checks and history."""

    def __init__(self, sequence_dir: Path):
        self.dir = sequence_dir / "annotations"
        self.history = self.dir / "history"
        self.lock = threading.Lock()

    def _path(self, frame: int) -> Path:
        return self.dir / f"{frame:06d}.json"

    def frames(self) -> list[int]:
        if not self.dir.is_dir():
            return []
        return sorted(
            int(p.stem) for p in self.dir.glob("[0-9]" * 6 + ".json")
        )

    def get(self, frame: int) -> PolygonAnnotation | None:
        path = self._path(frame)
        if not path.exists():
            return None
        return PolygonAnnotation.from_json(path.read_text())

    def put(self, annotation: PolygonAnnotation) -> PolygonAnnotation:
        """Store iff the incoming revision matches the current one; the stored
        copy gets revision + 1."""
        with self.lock:
            current = self.get(annotation.frame_index)
            current_rev = current.revision if current is not None else 0
            if annotation.revision != current_rev:
                raise RevisionConflict(current_rev)
            stored = PolygonAnnotation(
                frame_index=annotation.frame_index,
                revision=current_rev + 1,
                polygons=annotation.polygons,
            )
            self.dir.mkdir(parents=True, exist_ok=True)
            self.history.mkdir(parents=True, exist_ok=True)
            text = stored.to_json()
            self._path(stored.frame_index).write_text(text)
            (self.history / f"{stored.frame_index:06d}_rev{stored.revision:04d}.json").write_text(text)
            return stored


class RevisionConflict(SegpropError):
    def __init__(self, current_revision: int):
        self.current_revision = current_revision
        super().__init__(f"stale revision; current is {current_revision}")


class SequenceRegistry:
    """Sequences under one root directory, each with frames/ and stores."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._stores: dict[str, AnnotationStore] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def names(self) -> list[str]:
        return sorted(
            p.name for p in self.root.iterdir()
            if p.is_dir() and (p / "frames").is_dir()
        )

    def dir_of(self, name: str) -> Path:
        path = self.root / name
        if not (path / "frames").is_dir():
            raise KeyError(name)
        return path

    def store(self, name: str) -> AnnotationStore:
        with self._guard:
            if name not in self._stores:
                self._stores[name] = AnnotationStore(self.dir_of(name))
            return self._stores[name]

    def run_lock(self, name: str) -> threading.Lock:
        with self._guard:
            if name not in self._locks:
                self._locks[name] = threading.Lock()
            return self._locks[name]


def _frame_paths(seq_dir: Path) -> list[Path]:
    frames = sorted((seq_dir / "frames").glob("*.png"))
    frames += sorted((seq_dir / "frames").glob("*.jpg"))
    return frames


def _resolution(seq_dir: Path) -> tuple[int, int]:
    frames = _frame_paths(seq_dir)
    if not frames:
        raise SegpropError(f"{seq_dir}: no frames")
    with Image.open(frames[0]) as im:
        return im.size


def run_propagation_job(seq_dir: Path, store: AnnotationStore,
                        config: PropagationConfig,
                        progress=None) -> Path:
    """Rasterize all annotated keyframes, propagate, write label images.

    This is the single source of truth used by both the HTTP job runner and
    tests that need engine parity.
    """
    frames = _frame_paths(seq_dir)
    width, height = _resolution(seq_dir)
    annotated = store.frames()
    if len(annotated) < 2:
        raise SegpropError(f"need at least 2 annotated keyframes, have {len(annotated)}")
    keyframe_labels = []
    for k in annotated:
        ann = store.get(k)
        keyframe_labels.append(rasterize_polygons(ann, width, height))

    flow_dir = seq_dir / "flow"
    if flow_dir.is_dir() and any(flow_dir.glob("*.flo")):
        flows = DirectoryFlowSource(flow_dir)
    else:
        images = [np.asarray(Image.open(p).convert("L"), dtype=np.float64) / 255.0
                  for p in frames]
        flows = EstimatingFlowSource(images)

    prop = Propagator(config=config)
    dense = prop.run(keyframe_labels, flows, len(frames), progress=progress)

    out_dir = seq_dir / "propagated"
    out_dir.mkdir(exist_ok=True)
    for lm in dense:
        save_label_image(lm, out_dir / f"{lm.frame_index:06d}.png")
    (out_dir / "report.json").write_text(json.dumps(prop.report, indent=2, default=str))
    return out_dir


class JobManager:
    def __init__(self, registry: SequenceRegistry, workers: int = 2):
        self.registry = registry
        self.jobs: dict[str, PropagationJob] = {}
        self.executor = ThreadPoolExecutor(max_workers=workers)
        self.lock = threading.Lock()

    def submit(self, sequence: str, config: PropagationConfig) -> PropagationJob:
        job = PropagationJob(id=uuid.uuid4().hex[:12], sequence=sequence, config=config,
                             keyframes=self.registry.store(sequence).frames())
        with self.lock:
            self.jobs[job.id] = job
        self.executor.submit(self._run, job)
        return job

    def get(self, job_id: str) -> PropagationJob:
        with self.lock:
            if job_id not in self.jobs:
                raise KeyError(job_id)
            return self.jobs[job_id]

    def _run(self, job: PropagationJob) -> None:
        run_lock = self.registry.run_lock(job.sequence)
        with run_lock:  # at most one running job per sequence
            job.state = "running"
            try:
                seq_dir = self.registry.dir_of(job.sequence)
                store = self.registry.store(job.sequence)

                def tick(frac: float):
                    job.progress = max(job.progress, min(frac, 1.0))

                out_dir = run_propagation_job(seq_dir, store, job.config, progress=tick)
                job.result_dir = str(out_dir)
                job.progress = 1.0
                job.state = "done"
            except Exception as e:  # failure is a terminal job state, not a crash
                job.error = f"{type(e).__name__}: {e}"
                job.state = "failed"

    def shutdown(self):
        self.executor.shutdown(wait=True)


def _config_from_payload(payload: dict | None) -> PropagationConfig:
    payload = payload or {}
    allowed = set(PropagationConfig().__dict__)
    unknown = set(payload) - allowed
    if unknown:
        raise AnnotationError(f"unknown config fields: {sorted(unknown)}")
    try:
        return PropagationConfig(**payload)
    except (TypeError, ValueError) as e:
        raise AnnotationError(f"invalid config: {e}") from e


def create_app(root, workers: int = 2, ui_dir=None) -> FastAPI:
    """Build the service over a root directory of sequence folders."""
    registry = SequenceRegistry(Path(root))
    jobs = JobManager(registry, workers=workers)
    app = FastAPI(title="segprop annotation service")
    app.state.registry = registry
    app.state.jobs = jobs

    @app.get("/api/palette")
    def palette():
        return [
            {"id": i, "name": name, "color": list(color)}
            for i, (name, color) in enumerate(zip(CLASS_NAMES, CLASS_COLORS))
        ]

    @app.get("/api/sequences")
    def list_sequences():
        out = []
        for name in registry.names():
            seq_dir = registry.dir_of(name)
            store = registry.store(name)
            out.append({
                "name": name,
                "frame_count": len(_frame_paths(seq_dir)),
                "annotated_frames": store.frames(),
            })
        return out

    def _seq_dir_or_404(name: str) -> Path:
        try:
            return registry.dir_of(name)
        except KeyError:
            raise HTTPException(404, f"unknown sequence {name!r}")

    @app.get("/api/sequences/{name}")
    def sequence_detail(name: str):
        seq_dir = _seq_dir_or_404(name)
        store = registry.store(name)
        width, height = _resolution(seq_dir)
        propagated = sorted(
            int(p.stem) for p in (seq_dir / "propagated").glob("*.png")
        ) if (seq_dir / "propagated").is_dir() else []
        revisions = {}
        for k in store.frames():
            ann = store.get(k)
            revisions[str(k)] = ann.revision if ann else 0
        return {
            "name": name,
            "frame_count": len(_frame_paths(seq_dir)),
            "resolution": [width, height],
            "annotated_frames": store.frames(),
            "revisions": revisions,
            "propagated_frames": propagated,
        }

    @app.get("/api/sequences/{name}/frames/{index}")
    def frame_image(name: str, index: int):
        seq_dir = _seq_dir_or_404(name)
        frames = _frame_paths(seq_dir)
        if not 0 <= index < len(frames):
            raise HTTPException(404, f"frame {index} out of range")
        return FileResponse(frames[index])

    @app.get("/api/sequences/{name}/annotations/{index}")
    def get_annotation(name: str, index: int):
        _seq_dir_or_404(name)
        ann = registry.store(name).get(index)
        if ann is None:
            raise HTTPException(404, f"no annotation for frame {index}")
        return ann.to_dict()

    @app.put("/api/sequences/{name}/annotations/{index}")
    def put_annotation(name: str, index: int, payload: dict):
        _seq_dir_or_404(name)
        payload = dict(payload)
        payload["frame"] = index
        try:
            ann = PolygonAnnotation.from_dict(payload)
        except AnnotationError as e:
            raise HTTPException(422, str(e))
        try:
            stored = registry.store(name).put(ann)
        except RevisionConflict as e:
            raise HTTPException(409, detail={
                "message": str(e), "current_revision": e.current_revision,
            })
        return stored.to_dict()

    @app.post("/api/sequences/{name}/jobs", status_code=202)
    def post_job(name: str, payload: dict | None = None):
        seq_dir = _seq_dir_or_404(name)
        store = registry.store(name)
        annotated = store.frames()
        if len(annotated) < 2:
            raise HTTPException(422, f"need at least 2 annotated keyframes, have {len(annotated)}")
        width, height = _resolution(seq_dir)
        for k in annotated:  # surface rasterization problems before queueing
            try:
                rasterize_polygons(store.get(k), width, height)
            except IncompleteCoverageError as e:
                raise HTTPException(422, f"frame {k}: {e}")
        try:
            config = _config_from_payload(payload)
        except AnnotationError as e:
            raise HTTPException(422, str(e))
        job = jobs.submit(name, config)
        return job.to_dict()

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        try:
            return jobs.get(job_id).to_dict()
        except KeyError:
            raise HTTPException(404, f"unknown job {job_id!r}")

    @app.get("/api/sequences/{name}/labels/{index}")
    def propagated_label(name: str, index: int):
        seq_dir = _seq_dir_or_404(name)
        path = seq_dir / "propagated" / f"{index:06d}.png"
        if not path.exists():
            raise HTTPException(404, f"no propagated label for frame {index}")
        return FileResponse(path, media_type="image/png")

    @app.get("/api/sequences/{name}/keyframe_labels/{index}")
    def rasterized_keyframe(name: str, index: int):
        """Rasterization of the stored annotation, for overlay preview."""
        seq_dir = _seq_dir_or_404(name)
        ann = registry.store(name).get(index)
        if ann is None:
            raise HTTPException(404, f"no annotation for frame {index}")
        width, height = _resolution(seq_dir)
        try:
            lm = rasterize_polygons(ann, width, height)
        except IncompleteCoverageError as e:
            raise HTTPException(422, str(e))
        buf = io.BytesIO()
        Image.fromarray(encode_label_image(lm)).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
