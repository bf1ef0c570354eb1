"""HTTP facade: scene creation and interactive generation for the editor UI.

Scenes are cached in memory (bounded, least-recently-used eviction) and are
immutable once created. Generation is pure given (scene, request), so
identical requests return identical payloads. Frames travel as base64 PNG;
instance masks as row-major run-length encodings so the client can hit-test
clicks without extra round trips.
"""

from __future__ import annotations

import base64
import dataclasses
import threading
import time
import uuid
from collections import OrderedDict
from typing import Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .config import SceneConfig
from .errors import SamplingExhaustedError
from .evaluate import nde, track_object
from .model import SceneShiftModel, infer
from .scene_io import frame_to_png_bytes
from .scenes import InstanceScene, MotionSpec, generate_scene, gt_displacement


def mask_rle(inst_map: np.ndarray, instance_id: int) -> Dict:
    """Row-major RLE: alternating run lengths, starting with background."""
    flat = (inst_map.reshape(-1) == instance_id).astype(np.int8)
    changes = np.nonzero(np.diff(flat))[0] + 1
    boundaries = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(boundaries).tolist()
    if flat[0] == 1:  # encoding starts with a background run by convention
        runs = [0] + runs
    return {"size": [int(inst_map.shape[0]), int(inst_map.shape[1])], "counts": runs}


@dataclasses.dataclass
class SceneHandle:
    scene_id: str
    scene: InstanceScene
    created_at: float


class SceneCache:
    """Bounded scene store; least-recently-used entries are evicted."""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._lock = threading.Lock()
        self._entries: "OrderedDict[str, SceneHandle]" = OrderedDict()

    def put(self, handle: SceneHandle) -> None:
        with self._lock:
            if self.capacity < 1:
                raise MemoryError("scene cache has no capacity")
            while len(self._entries) >= self.capacity:
                self._entries.popitem(last=False)
            self._entries[handle.scene_id] = handle

    def get(self, scene_id: str) -> Optional[SceneHandle]:
        with self._lock:
            handle = self._entries.get(scene_id)
            if handle is not None:
                self._entries.move_to_end(scene_id)
            return handle

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class SceneRequest(BaseModel):
    seed: int = 0
    n_objects: int = 3
    height: int = 64
    width: int = 64
    T: int = 5


class MotionEntry(BaseModel):
    instance_id: int
    dx: float
    dy: float


class GenerateRequest(BaseModel):
    motions: List[MotionEntry] = Field(default_factory=list)
    seed: int = 0
    return_metrics: bool = False


def _b64png(frame: np.ndarray) -> str:
    return base64.b64encode(frame_to_png_bytes(frame)).decode("ascii")


def scene_payload(handle: SceneHandle, max_disp: float) -> Dict:
    scene = handle.scene
    instances = []
    for i, inst in enumerate(scene.instance_ids):
        ys, xs = np.nonzero(scene.inst_map[0] == inst)
        instances.append(
            {
                "id": int(inst),
                "class": int(scene.objects[i].class_id),
                "barycenter": [float(v) for v in scene.barycenters[i, 0]],
                "bbox": [
                    int(xs.min()),
                    int(ys.min()),
                    int(xs.max() - xs.min() + 1),
                    int(ys.max() - ys.min() + 1),
                ],
                "mask": mask_rle(scene.inst_map[0], int(inst)),
            }
        )
    return {
        "scene_id": handle.scene_id,
        "frame0": _b64png(scene.frames[0]),
        "height": scene.height,
        "width": scene.width,
        "T": scene.T,
        "max_disp": max_disp,
        "instances": instances,
    }


def create_app(
    model: Optional[SceneShiftModel] = None,
    checkpoint_step: int = 0,
    max_scenes: int = 64,
    static_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="sceneshift")
    cache = SceneCache(capacity=max_scenes)
    app.state.cache = cache
    app.state.model = model
    app.state.checkpoint_step = checkpoint_step

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "checkpoint_step": app.state.checkpoint_step if app.state.model else None,
        }

    @app.post("/api/scenes")
    def make_scene(req: SceneRequest):
        try:
            config = SceneConfig(
                height=req.height, width=req.width, n_objects=req.n_objects, T=req.T
            )
            config.validate()
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        try:
            scene = generate_scene(config, seed=req.seed)
        except SamplingExhaustedError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        handle = SceneHandle(
            scene_id=uuid.uuid4().hex, scene=scene, created_at=time.time()
        )
        try:
            cache.put(handle)
        except MemoryError as exc:
            raise HTTPException(status_code=507, detail=str(exc))
        if app.state.model is not None:
            max_disp = app.state.model.max_disp
        else:
            from .config import ModelConfig

            max_disp = ModelConfig().max_disp(scene.height, scene.width)
        return scene_payload(handle, max_disp)

    @app.post("/api/scenes/{scene_id}/generate")
    def generate(scene_id: str, req: GenerateRequest):
        handle = cache.get(scene_id)
        if handle is None:
            raise HTTPException(status_code=404, detail=f"unknown scene {scene_id}")
        if app.state.model is None:
            raise HTTPException(status_code=409, detail="no checkpoint loaded")
        scene = handle.scene
        mdl: SceneShiftModel = app.state.model
        present = set(int(i) for i in scene.instance_ids)
        for m in req.motions:
            if m.instance_id not in present:
                raise HTTPException(
                    status_code=400, detail=f"unknown instance id {m.instance_id}"
                )
            if abs(m.dx) > mdl.max_disp or abs(m.dy) > mdl.max_disp:
                raise HTTPException(
                    status_code=400,
                    detail=f"displacement exceeds max_disp={mdl.max_disp:g}",
                )
        ids = [m.instance_id for m in req.motions]
        if len(ids) != len(set(ids)):
            raise HTTPException(status_code=400, detail="duplicate instance ids")
        spec = MotionSpec(
            entries=tuple((m.instance_id, (m.dx, m.dy)) for m in req.motions)
        )
        result = infer(mdl, scene, spec, seed=req.seed)

        payload = {
            "frames": [_b64png(f) for f in result.frames],
            "predicted_displacements": [
                {
                    "id": inst,
                    "dx": result.displacements[inst][0],
                    "dy": result.displacements[inst][1],
                    "known": result.known[inst],
                }
                for inst in result.graph.ids
            ],
        }
        if req.return_metrics:
            metrics = {}
            for inst, delta in spec.entries:
                idx = scene.index_of(inst)
                start = scene.barycenters[idx, 0]
                end_gt = start + gt_displacement(scene, inst)
                track = track_object(
                    result.frames[-1], scene.frames[0], scene.inst_map[0], inst
                )
                if track.found and np.linalg.norm(end_gt - start) > 0:
                    metrics[str(inst)] = nde(
                        track, start, start + np.asarray(delta), end_gt
                    )
                else:
                    metrics[str(inst)] = None
            payload["metrics"] = {"nde": metrics}
        return payload

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
