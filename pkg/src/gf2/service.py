"""HTTP session service for interactive per-object scene editing.

Sessions are in-memory (LRU, cap 32) and fully replayable: the scene is a
pure function of (checkpoint, seed, edit log).  Structure edits regenerate
one segment conditioned on the others and re-render; style edits remap one
style latent and re-render, leaving the layout bytes untouched.  Renders
within a session reuse one labeled noise stream, so identical state always
yields the identical image.
"""
from __future__ import annotations

import base64
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, Field

from . import tensor as T
from .compositor import Layout
from .ppm import ppm_bytes
from .rng import Rng
from .trainer import Models, load_models
from .visuals import depth_image, layout_image, segments_summary

MAX_SESSIONS = 32


class EditRequest(BaseModel):
    which: str = Field(pattern="^(structure|style)$")
    mode: str = Field(default="interpolate", pattern="^(interpolate|resample)$")
    t: float = 0.0
    seed: int = 0
    revision: int


class AddRequest(BaseModel):
    seed: int = 0
    revision: int


class CreateRequest(BaseModel):
    checkpoint: str
    seed: int


@dataclass
class Session:
    id: str
    checkpoint: str
    seed: int
    revision: int
    layout: Layout
    style_z: np.ndarray
    image: np.ndarray
    edit_log: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


SCENE_SCHEMA = {
    "$id": "scene", "type": "object",
    "required": ["session_id", "revision", "segments", "image",
                 "layout_png_like", "depth_png_like"],
    "properties": {
        "session_id": {"type": "string"},
        "revision": {"type": "integer", "minimum": 0},
        "segments": {"type": "array", "items": {
            "type": "object",
            "required": ["index", "class", "mean_depth", "bbox", "birth_step"],
            "properties": {
                "index": {"type": "integer"},
                "class": {"type": "integer"},
                "mean_depth": {"type": "number"},
                "bbox": {"type": "array", "items": {"type": "integer"},
                         "minItems": 4, "maxItems": 4},
                "birth_step": {"type": "integer"},
            },
        }},
        "image": {"type": "string", "contentEncoding": "base64"},
        "layout_png_like": {"type": "string", "contentEncoding": "base64"},
        "depth_png_like": {"type": "string", "contentEncoding": "base64"},
    },
}
EDIT_SCHEMA = {
    "$id": "edit", "type": "object",
    "required": ["which", "revision"],
    "properties": {
        "which": {"enum": ["structure", "style"]},
        "mode": {"enum": ["interpolate", "resample"]},
        "t": {"type": "number", "minimum": 0.0, "maximum": 1.0},
        "seed": {"type": "integer"},
        "revision": {"type": "integer"},
    },
}
SCHEMAS = {"scene": SCENE_SCHEMA, "edit": EDIT_SCHEMA}


class SessionStore:
    def __init__(self):
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, session: Session):
        with self._lock:
            self._sessions[session.id] = session
            self._sessions.move_to_end(session.id)
            while len(self._sessions) > MAX_SESSIONS:
                self._sessions.popitem(last=False)

    def get(self, sid: str) -> Session:
        with self._lock:
            if sid not in self._sessions:
                raise HTTPException(404, f"unknown session {sid}")
            self._sessions.move_to_end(sid)
            return self._sessions[sid]


class Engine:
    """Pure scene operations on top of immutable model parameters."""

    def __init__(self, models: Models, checkpoint_name: str):
        self.models = models
        self.name = checkpoint_name

    def _render(self, session_seed: int, layout: Layout, style_z: np.ndarray) -> np.ndarray:
        m = self.models
        with T.no_grad(), m.ema_g2.applied(m.executor.net.parameters()):
            styles = m.executor.map_style_latents(layout, style_z)
            img = m.executor.execute(layout, styles, Rng(session_seed).child("render"))
        return img.data

    def create(self, seed: int):
        m = self.models
        rng = Rng(seed).child("session")
        with T.no_grad(), m.ema_g1.applied(m.planner.net.parameters()):
            layout = m.planner.plan_scene(rng.child("plan"))
        style_z = rng.child("style").normal((layout.k, m.cfg.model.d_z))
        return layout, style_z, self._render(seed, layout, style_z)

    def apply(self, session: Session, op: dict):
        """Apply one edit-log entry in place (no logging here)."""
        m = self.models
        kind = op["op"]
        if kind == "edit":
            i = op["segment"]
            if not 0 <= i < session.layout.k:
                raise HTTPException(404, f"no segment {i}")
            erng = Rng(op["seed"]).child(f"edit{op['n']}")
            if op["which"] == "style":
                z = session.style_z.copy()
                if op["mode"] == "resample":
                    z[i] = erng.child("target").normal(z[i].shape)
                else:
                    t = op["t"]
                    if t == 0.0:
                        return  # identity edit: state unchanged by definition
                    tgt = erng.child("target").normal(z[i].shape)
                    z[i] = (1.0 - t) * z[i] + t * tgt
                session.style_z = z
            else:
                z_old = session.layout.segments[i].z
                if op["mode"] == "resample":
                    z_new = erng.child("target").normal(z_old.shape)
                else:
                    t = op["t"]
                    if t == 0.0:
                        return
                    tgt = erng.child("target").normal(z_old.shape)
                    z_new = (1.0 - t) * z_old + t * tgt
                with T.no_grad(), m.ema_g1.applied(m.planner.net.parameters()):
                    session.layout = m.planner.regenerate_segment(
                        session.layout, i, z_new, erng.child("regen"))
        elif kind == "add":
            erng = Rng(op["seed"]).child(f"add{op['n']}")
            with T.no_grad(), m.ema_g1.applied(m.planner.net.parameters()):
                new_layout = m.planner.add_segments(session.layout, erng)
            grown = new_layout.k - session.layout.k
            if grown > 0:
                extra = erng.child("style").normal((grown, m.cfg.model.d_z))
                session.style_z = np.concatenate([session.style_z, extra])
            session.layout = new_layout
        elif kind == "delete":
            i = op["segment"]
            if not 0 <= i < session.layout.k:
                raise HTTPException(404, f"no segment {i}")
            if session.layout.k == 1:
                raise HTTPException(422, "cannot delete the last segment")
            from .compositor import composite

            survivors = [s for j, s in enumerate(session.layout.segments) if j != i]
            session.layout = composite(survivors, session.layout.k_max)
            session.style_z = np.delete(session.style_z, i, axis=0)
        else:
            raise HTTPException(422, f"unknown op {kind}")
        session.image = self._render(session.seed, session.layout, session.style_z)

    def replay(self, seed: int, edit_log: list):
        layout, style_z, image = self.create(seed)
        ghost = Session(id="replay", checkpoint=self.name, seed=seed, revision=0,
                        layout=layout, style_z=style_z, image=image)
        for op in edit_log:
            self.apply(ghost, op)
        return ghost


def scene_payload(session: Session) -> dict:
    return {
        "session_id": session.id,
        "revision": session.revision,
        "segments": segments_summary(session.layout),
        "image": base64.b64encode(ppm_bytes(session.image)).decode("ascii"),
        "layout_png_like": base64.b64encode(
            ppm_bytes(layout_image(session.layout))).decode("ascii"),
        "depth_png_like": base64.b64encode(
            ppm_bytes(depth_image(session.layout))).decode("ascii"),
        "edit_log": session.edit_log,
    }


def create_app(checkpoint_path, ui_dir=None) -> FastAPI:
    models = load_models(checkpoint_path)
    name = Path(checkpoint_path).name
    engine = Engine(models, name)
    store = SessionStore()
    app = FastAPI(title="gf2 scene editor service")
    app.state.engine = engine
    app.state.store = store

    def _locked(sid: str):
        session = store.get(sid)
        if not session.lock.acquire(blocking=False):
            raise HTTPException(409, "a render is in flight for this session")
        return session

    @app.get("/health")
    def health():
        return {"status": "ok", "checkpoint": name}

    @app.get("/schema")
    def schema_index():
        return {"schemas": sorted(SCHEMAS)}

    @app.get("/schema/{sname}")
    def schema_one(sname: str):
        if sname not in SCHEMAS:
            raise HTTPException(404, f"unknown schema {sname}")
        return SCHEMAS[sname]

    @app.post("/sessions")
    def create_session(req: CreateRequest):
        if req.checkpoint not in (name, str(checkpoint_path)):
            raise HTTPException(404, f"unknown checkpoint {req.checkpoint!r}")
        layout, style_z, image = engine.create(req.seed)
        session = Session(id=uuid.uuid4().hex[:12], checkpoint=req.checkpoint,
                          seed=req.seed, revision=0, layout=layout,
                          style_z=style_z, image=image)
        store.put(session)
        return scene_payload(session)

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return scene_payload(store.get(sid))

    @app.post("/sessions/{sid}/segments/{i}/edit")
    def edit_segment(sid: str, i: int, req: EditRequest):
        session = _locked(sid)
        try:
            if req.revision != session.revision:
                raise HTTPException(409, f"stale revision {req.revision}, "
                                         f"session is at {session.revision}")
            op = {"op": "edit", "segment": i, "which": req.which, "mode": req.mode,
                  "t": req.t, "seed": req.seed, "n": len(session.edit_log)}
            engine.apply(session, op)
            session.edit_log.append(op)
            session.revision += 1
            return scene_payload(session)
        finally:
            session.lock.release()

    @app.post("/sessions/{sid}/segments")
    def add_segments(sid: str, req: AddRequest):
        session = _locked(sid)
        try:
            if req.revision != session.revision:
                raise HTTPException(409, "stale revision")
            op = {"op": "add", "seed": req.seed, "n": len(session.edit_log)}
            engine.apply(session, op)
            session.edit_log.append(op)
            session.revision += 1
            return scene_payload(session)
        finally:
            session.lock.release()

    @app.delete("/sessions/{sid}/segments/{i}")
    def delete_segment(sid: str, i: int, revision: int):
        session = _locked(sid)
        try:
            if revision != session.revision:
                raise HTTPException(409, "stale revision")
            op = {"op": "delete", "segment": i, "n": len(session.edit_log)}
            engine.apply(session, op)
            session.edit_log.append(op)
            session.revision += 1
            return scene_payload(session)
        finally:
            session.lock.release()

    @app.post("/sessions/{sid}/replay")
    def replay_session(sid: str):
        """Server-side replay of the edit log; returns the replayed scene."""
        session = store.get(sid)
        ghost = engine.replay(session.seed, session.edit_log)
        ghost.id = session.id
        ghost.revision = session.revision
        return scene_payload(ghost)

    ui_path = Path(ui_dir) if ui_dir else Path(__file__).resolve().parents[2] / "frontend" / "dist"

    @app.get("/ui")
    @app.get("/ui/{fname:path}")
    def ui(fname: str = "index.html"):
        target = (ui_path / (fname or "index.html")).resolve()
        if not str(target).startswith(str(ui_path.resolve())) or not target.is_file():
            raise HTTPException(404, "no such asset (is the frontend built?)")
        return FileResponse(target)

    return app
