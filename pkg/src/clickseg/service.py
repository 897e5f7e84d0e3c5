"""Stateful HTTP session API for the annotation loop.

One session wraps one image: clicks accumulate, the engine runs per click
with the edge prior carried between rounds, undo replays the whole chain
from a zero prior (guaranteed deterministic), finishing an object yields
editable polygons. Sequences expose reference-frame propagation as an
asynchronous job with a polling status resource.

Binary masks travel as row-major run-length payloads
``{"counts": [...], "size": [h, w], "start_value": 0}``; multi-label masks
add a parallel ``values`` array.
"""

import base64
import binascii
import threading
from contextlib import asynccontextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import engines, geometry, sequence
from . import io as cio
from .core import POSITIVE, Category, ClickSet, LabelMask

DEFAULT_CATEGORY = Category(id=1, comment="object", color=(128, 0, 0))


# ---------------------------------------------------------------------------
# wire format
# ---------------------------------------------------------------------------

def rle_encode(mask):
    """Row-major RLE starting from value 0; counts sum to the pixel count."""
    arr = np.asarray(mask)
    h, w = arr.shape
    flat = arr.ravel()
    if np.issubdtype(flat.dtype, np.bool_) or flat.max(initial=0) <= 1:
        flat = flat.astype(np.uint8)
        changes = np.nonzero(np.diff(flat))[0] + 1
        bounds = np.concatenate([[0], changes, [flat.size]])
        counts = np.diff(bounds).tolist()
        if flat.size and flat[0] == 1:
            counts = [0] + counts
        return {"counts": counts, "size": [h, w], "start_value": 0}
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    values = flat[bounds[:-1]].tolist()
    return {"counts": counts, "values": values, "size": [h, w], "start_value": 0}


def rle_decode(payload):
    h, w = payload["size"]
    counts = payload["counts"]
    if "values" in payload:
        values = payload["values"]
    else:
        start = payload.get("start_value", 0)
        values = [(start + i) % 2 for i in range(len(counts))]
    flat = np.zeros(h * w, np.uint16)
    pos = 0
    for count, value in zip(counts, values):
        flat[pos:pos + count] = value
        pos += count
    if pos != h * w:
        raise ValueError(f"RLE covers {pos} of {h * w} pixels")
    return flat.reshape(h, w)


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class AnnotationSession:
    session_id: str
    image: object
    params: engines.EngineParams
    clicks: ClickSet = field(default_factory=ClickSet)
    prior: Optional[np.ndarray] = None
    output: Optional[engines.EngineOutput] = None
    polygons: dict = field(default_factory=dict)  # pid -> (object_id, Polygon)
    categories: list = field(default_factory=lambda: [DEFAULT_CATEGORY])
    next_polygon_id: int = 1
    next_object_id: int = 1
    grid: Optional[cio.GridLayout] = None
    source_name: str = "upload"
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class SequenceState:
    sequence_id: str
    frames: sequence.FrameSequence
    references: dict = field(default_factory=dict)  # frame index -> labels array
    results: Optional[list] = None
    epoch: int = 0
    status: str = "idle"  # idle | running | done | error
    error: Optional[str] = None
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class ServiceConfig:
    engine_id: str = "graphcut"
    save_dir: str = "."
    workers: int = 2
    autosave: bool = False


class Store:
    def __init__(self, config):
        self.config = config
        self.sessions = {}
        self.sequences = {}
        self._counter = 0
        self._lock = threading.Lock()
        self.pool = ThreadPoolExecutor(max_workers=config.workers)

    def next_id(self, prefix):
        with self._lock:
            self._counter += 1
            return f"{prefix}{self._counter:06d}"

    def flush_autosave(self):
        """Write pending annotation masks before shutdown."""
        if not self.config.autosave:
            return []
        written = []
        for session in list(self.sessions.values()):
            with session.lock:
                if session.polygons:
                    written.extend(_save_session(session, self.config.save_dir,
                                                 ["grayscale"]))
        return written

    def shutdown(self):
        self.pool.shutdown(wait=False)


# ---------------------------------------------------------------------------
# request models
# ---------------------------------------------------------------------------

class CreateSession(BaseModel):
    image_path: Optional[str] = None
    image_b64: Optional[str] = None
    image_name: Optional[str] = None
    engine: Optional[dict] = None


class ClickBody(BaseModel):
    x: int
    y: int
    polarity: str = Field(pattern="^(positive|negative)$")


class FinishBody(BaseModel):
    category_id: int = 1
    epsilon: float = geometry.DEFAULT_EPSILON


class PolygonPatch(BaseModel):
    op: str = Field(pattern="^(move|delete|insert)$")
    index: Optional[int] = None
    edge_index: Optional[int] = None
    to: Optional[list] = None


class CategoryBody(BaseModel):
    id: int
    comment: str = ""
    color: list = [128, 0, 0]


class SaveBody(BaseModel):
    formats: list = ["grayscale"]
    directory: Optional[str] = None


class CreateSequence(BaseModel):
    frames_dir: Optional[str] = None
    volume_path: Optional[str] = None
    axis: int = 0


class ReferenceBody(BaseModel):
    frame: int
    mask_path: Optional[str] = None
    counts: Optional[list] = None
    values: Optional[list] = None
    size: Optional[list] = None
    start_value: int = 0


class PropagateBody(BaseModel):
    grid_stride: int = 4
    patch_size: int = 7
    search_window: int = 48
    knn: int = 5
    tau: float = 10.0
    refine_with_graphcut: bool = False


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _engine_params(config, overrides):
    kwargs = {"engine_id": config.engine_id}
    if overrides:
        kwargs.update(overrides)
    try:
        return engines.EngineParams(**kwargs)
    except (TypeError, ValueError) as exc:
        raise HTTPException(400, f"bad engine parameters: {exc}")


def _mask_payload(session):
    out = session.output
    mask = out.mask if out is not None else np.zeros(
        (session.image.height, session.image.width), bool
    )
    payload = {
        "mask": rle_encode(mask),
        "click_count": len(session.clicks),
    }
    if out is not None:
        payload["confidence"] = {
            "mean": float(out.confidence.mean()),
            "min": float(out.confidence.min()),
            "max": float(out.confidence.max()),
            "foreground_pixels": int(mask.sum()),
        }
    return payload


def _replay(session):
    """Recompute the mask chain from a zero prior over the current clicks."""
    session.prior = None
    session.output = None
    for k in range(1, len(session.clicks) + 1):
        session.output = engines.segment(
            session.params, session.image, session.clicks[:k], session.prior
        )
        session.prior = session.output.edge


def _polygon_json(pid, object_id, polygon):
    return {
        "id": pid,
        "object_id": object_id,
        "vertices": [[x, y] for x, y in polygon.vertices],
        "category_id": polygon.category_id,
        "hole": polygon.hole,
    }


def _save_session(session, directory, formats):
    stem = Path(session.source_name).stem or "annotation"
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    polys = [p for _, p in session.polygons.values()]
    mask = geometry.rasterize(polys, session.image.width, session.image.height)
    written = []
    for fmt in formats:
        if fmt == "grayscale":
            path = directory / f"{stem}.png"
            cio.write_mask(mask, "grayscale", path)
        elif fmt == "pseudocolor":
            path = directory / f"{stem}_pseudo.png"
            cio.write_mask(mask, "pseudocolor", path)
        elif fmt == "coco":
            project = cio.ProjectState()
            project.add_image(session.source_name, session.image.width,
                              session.image.height)
            project.categories = list(session.categories)
            project.polygons[session.source_name] = polys
            path = directory / f"{stem}.json"
            path.write_text(cio.coco_dumps(cio.export_coco(project)), encoding="utf-8")
        else:
            raise HTTPException(400, f"unknown save format {fmt!r}")
        written.append(str(path))
    return written


def _run_propagation(state, params, epoch):
    try:
        results = sequence.propagate(state.frames, dict(state.references), params)
    except Exception as exc:  # report, don't kill the worker
        with state.lock:
            if state.epoch == epoch:
                state.status = "error"
                state.error = str(exc)
        return
    with state.lock:
        if state.epoch == epoch:  # stale runs are discarded
            state.results = results
            state.status = "done"


# ---------------------------------------------------------------------------
# app
# ---------------------------------------------------------------------------

def create_app(config=None):
    config = config or ServiceConfig()
    store = Store(config)

    @asynccontextmanager
    async def lifespan(app):
        yield
        store.flush_autosave()  # in-flight annotations land on disk
        store.shutdown()

    app = FastAPI(title="clickseg annotation service", lifespan=lifespan)
    app.state.store = store

    def session_or_404(sid):
        session = store.sessions.get(sid)
        if session is None:
            raise HTTPException(404, f"no session {sid}")
        return session

    def sequence_or_404(qid):
        state = store.sequences.get(qid)
        if state is None:
            raise HTTPException(404, f"no sequence {qid}")
        return state

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSession):
        if bool(body.image_path) == bool(body.image_b64):
            raise HTTPException(400, "provide exactly one of image_path, image_b64")
        if body.image_path:
            try:
                image = cio.load_image(body.image_path)
            except FileNotFoundError as exc:
                raise HTTPException(400, str(exc))
            except cio.UnsupportedFormat as exc:
                raise HTTPException(415, str(exc))
            except cio.CorruptFile as exc:
                raise HTTPException(400, str(exc))
            source_name = Path(body.image_path).name
        else:
            name = body.image_name or "upload.png"
            if Path(name).suffix.lower() not in (".png", ".ppm", ".pgm"):
                raise HTTPException(415, f"unsupported upload format {name!r}")
            try:
                raw = base64.b64decode(body.image_b64, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise HTTPException(400, f"bad base64 image payload: {exc}")
            tmp = Path(store.config.save_dir) / f".upload_{store.next_id('u')}{Path(name).suffix}"
            tmp.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_bytes(raw)
            try:
                image = cio.load_image(tmp)
            except (cio.CorruptFile, cio.UnsupportedFormat) as exc:
                raise HTTPException(400, f"undecodable upload: {exc}")
            finally:
                tmp.unlink(missing_ok=True)
            source_name = name

        sid = store.next_id("s")
        session = AnnotationSession(
            session_id=sid,
            image=image,
            params=_engine_params(config, body.engine),
            source_name=source_name,
        )
        if max(image.width, image.height) > cio.GRID_THRESHOLD:
            session.grid = cio.grid_layout_for(image.width, image.height)
        store.sessions[sid] = session
        response = {
            "session_id": sid,
            "width": image.width,
            "height": image.height,
            "channels": image.channels,
            "bit_depth": image.bit_depth,
        }
        if session.grid is not None:
            response["grid"] = {
                "patch_size": session.grid.patch_size,
                "overlap": session.grid.overlap,
                "origins": [list(o) for o in session.grid.origins],
            }
        return response

    @app.post("/sessions/{sid}/clicks")
    def add_click(sid: str, body: ClickBody):
        session = session_or_404(sid)
        with session.lock:
            if not (0 <= body.x < session.image.width
                    and 0 <= body.y < session.image.height):
                raise HTTPException(422, "click outside image bounds")
            if len(session.clicks) == 0 and body.polarity != POSITIVE:
                raise HTTPException(409, "first click must be positive")
            session.clicks.add(body.x, body.y, body.polarity)
            try:
                session.output = engines.segment(
                    session.params, session.image, session.clicks, session.prior
                )
            except engines.SolverNonconvergence as exc:
                session.clicks.undo()
                raise HTTPException(500, str(exc))
            session.prior = session.output.edge
            return _mask_payload(session)

    @app.post("/sessions/{sid}/undo")
    def undo_click(sid: str):
        session = session_or_404(sid)
        with session.lock:
            if len(session.clicks) == 0:
                raise HTTPException(409, "nothing to undo")
            session.clicks.undo()
            _replay(session)
            return _mask_payload(session)

    @app.post("/sessions/{sid}/finish")
    def finish_object(sid: str, body: FinishBody):
        session = session_or_404(sid)
        with session.lock:
            if session.output is None or not session.output.mask.any():
                raise HTTPException(409, "current mask is empty")
            if body.category_id not in {c.id for c in session.categories if not c.deleted}:
                raise HTTPException(422, f"unknown category {body.category_id}")
            polys = geometry.extract_polygons(
                session.output.mask, body.epsilon, category_id=body.category_id
            )
            object_id = session.next_object_id
            session.next_object_id += 1
            payload = []
            for poly in polys:
                pid = session.next_polygon_id
                session.next_polygon_id += 1
                session.polygons[pid] = (object_id, poly)
                payload.append(_polygon_json(pid, object_id, poly))
            session.clicks = ClickSet()
            session.prior = None
            session.output = None
            return {"object_id": object_id, "polygons": payload}

    @app.patch("/sessions/{sid}/polygons/{pid}")
    def edit_polygon(sid: str, pid: int, body: PolygonPatch):
        session = session_or_404(sid)
        with session.lock:
            if pid not in session.polygons:
                raise HTTPException(404, f"no polygon {pid}")
            object_id, poly = session.polygons[pid]
            bounds = (session.image.width, session.image.height)
            try:
                if body.op == "move":
                    if body.index is None or body.to is None:
                        raise HTTPException(422, "move needs index and to")
                    poly = geometry.move_vertex(poly, body.index, tuple(body.to), bounds)
                elif body.op == "delete":
                    if body.index is None:
                        raise HTTPException(422, "delete needs index")
                    poly = geometry.delete_vertex(poly, body.index)
                else:
                    if body.edge_index is None or body.to is None:
                        raise HTTPException(422, "insert needs edge_index and to")
                    poly = geometry.insert_vertex_on_edge(
                        poly, body.edge_index, tuple(body.to), bounds
                    )
            except (ValueError, IndexError) as exc:
                raise HTTPException(422, str(exc))
            session.polygons[pid] = (object_id, poly)
            return _polygon_json(pid, object_id, poly)

    @app.get("/sessions/{sid}/categories")
    def list_categories(sid: str):
        session = session_or_404(sid)
        return [
            {"id": c.id, "comment": c.comment, "color": list(c.color),
             "deleted": c.deleted}
            for c in session.categories
        ]

    @app.post("/sessions/{sid}/categories", status_code=201)
    def add_category(sid: str, body: CategoryBody):
        session = session_or_404(sid)
        with session.lock:
            if any(c.id == body.id for c in session.categories):
                raise HTTPException(409, f"category id {body.id} exists")
            try:
                cat = Category(id=body.id, comment=body.comment,
                               color=tuple(body.color))
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            session.categories.append(cat)
            return {"id": cat.id, "comment": cat.comment, "color": list(cat.color)}

    @app.post("/sessions/{sid}/save")
    def save_session(sid: str, body: SaveBody):
        session = session_or_404(sid)
        with session.lock:
            if not session.polygons and (
                session.output is None or not session.output.mask.any()
            ):
                raise HTTPException(409, "nothing to save")
            directory = body.directory or config.save_dir
            try:
                written = _save_session(session, directory, body.formats)
            except OSError as exc:
                raise HTTPException(507, f"cannot write annotation files: {exc}")
            return {"paths": written}

    # ---- sequences -----------------------------------------------------

    @app.post("/sequences", status_code=201)
    def create_sequence(body: CreateSequence):
        if bool(body.frames_dir) == bool(body.volume_path):
            raise HTTPException(400, "provide exactly one of frames_dir, volume_path")
        try:
            if body.frames_dir:
                frame_paths = sorted(
                    p for ext in ("*.png", "*.ppm", "*.pgm")
                    for p in Path(body.frames_dir).glob(ext)
                )
                if not frame_paths:
                    raise HTTPException(400, f"no frames under {body.frames_dir}")
                frames = sequence.FrameSequence(
                    frames=tuple(cio.load_image(p) for p in frame_paths)
                )
            else:
                volume, spacing = sequence.read_volume(body.volume_path)
                frames = sequence.volume_to_frames(volume, body.axis, spacing)
        except HTTPException:
            raise
        except (OSError, ValueError, cio.CorruptFile, cio.UnsupportedFormat) as exc:
            raise HTTPException(400, str(exc))
        qid = store.next_id("q")
        store.sequences[qid] = SequenceState(sequence_id=qid, frames=frames)
        f0 = frames.frames[0]
        return {"sequence_id": qid, "frame_count": len(frames),
                "width": f0.width, "height": f0.height}

    @app.post("/sequences/{qid}/references", status_code=201)
    def add_reference(qid: str, body: ReferenceBody):
        state = sequence_or_404(qid)
        if not 0 <= body.frame < len(state.frames):
            raise HTTPException(404, f"frame {body.frame} out of range")
        f0 = state.frames.frames[0]
        if body.mask_path:
            try:
                labels = cio.read_mask(body.mask_path).labels
            except (OSError, cio.CorruptFile) as exc:
                raise HTTPException(400, str(exc))
        elif body.counts is not None and body.size is not None:
            payload = {"counts": body.counts, "size": body.size,
                       "start_value": body.start_value}
            if body.values is not None:
                payload["values"] = body.values
            try:
                labels = rle_decode(payload)
            except ValueError as exc:
                raise HTTPException(422, str(exc))
        else:
            raise HTTPException(400, "provide mask_path or counts+size")
        if labels.shape != (f0.height, f0.width):
            raise HTTPException(422, "reference mask does not match frame size")
        with state.lock:
            state.references[body.frame] = labels
        return {"frame": body.frame, "references": sorted(state.references)}

    @app.post("/sequences/{qid}/propagate", status_code=202)
    def start_propagation(qid: str, body: PropagateBody):
        state = sequence_or_404(qid)
        with state.lock:
            if not state.references:
                raise HTTPException(409, "no reference frames")
            try:
                params = sequence.PropagationParams(**body.model_dump())
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            state.epoch += 1
            state.status = "running"
            state.error = None
            state.results = None
            epoch = state.epoch
        store.pool.submit(_run_propagation, state, params, epoch)
        return {"epoch": epoch, "status_url": f"/sequences/{qid}/propagate/status"}

    @app.get("/sequences/{qid}/propagate/status")
    def propagation_status(qid: str):
        state = sequence_or_404(qid)
        with state.lock:
            return {"epoch": state.epoch, "state": state.status,
                    "error": state.error}

    @app.get("/sequences/{qid}/frames/{k}/mask")
    def frame_mask(qid: str, k: int):
        state = sequence_or_404(qid)
        with state.lock:
            if not 0 <= k < len(state.frames):
                raise HTTPException(404, f"frame {k} out of range")
            if state.status != "done" or state.results is None:
                raise HTTPException(409, f"propagation not finished (state={state.status})")
            res = state.results[k]
            payload = rle_encode(res.mask.labels)
            payload["source_reference"] = res.source_reference
            payload["mean_confidence"] = float(res.confidence.mean())
            return payload

    return app
