"""On-disk scene format: PNG frames/maps, C2MF flow rasters, JSON manifest.

A scene directory contains::

    manifest.json            ids, barycenters, velocities, config, seed
    frame_00.png ...         8-bit RGB frames
    inst_00.png ...          16-bit grayscale instance maps
    class_00.png ...         16-bit grayscale class maps
    flow_fwd_01.c2mf ...     per-timestep flow rasters (t = 01..T)
    flow_bwd_01.c2mf ...
    occ_fwd_01.png ...       binary occlusion maps (8-bit, 0/255)
    occ_bwd_01.png ...

C2MF rasters are an 8-byte header -- magic ``C2MF``, u16 height, u16 width,
little-endian -- followed by H*W*2 little-endian f32 values, row-major,
channels (dx, dy) interleaved.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from .config import N_CLASSES, SceneConfig
from .errors import CheckpointCorruptError, CheckpointFormatError
from .scenes import InstanceScene, ObjectSpec

FLOW_MAGIC = b"C2MF"


def write_flow(path, flow: np.ndarray) -> None:
    """Write an (H, W, 2) float32 flow raster in C2MF format."""
    h, w, c = flow.shape
    if c != 2:
        raise ValueError("flow must have 2 channels")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHH", FLOW_MAGIC, h, w))
        fh.write(flow.astype("<f4").tobytes())


def read_flow(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise CheckpointCorruptError(f"{path}: truncated header")
        magic, h, w = struct.unpack("<4sHH", header)
        if magic != FLOW_MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
        payload = fh.read(h * w * 2 * 4)
        if len(payload) != h * w * 2 * 4:
            raise CheckpointCorruptError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, 2).copy()


def _save_u16(path, arr: np.ndarray) -> None:
    Image.fromarray(arr.astype(np.uint16)).save(path)


def _load_u16(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int32)


def frame_to_png_bytes(frame: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.round(frame * 255.0).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def save_scene(scene: InstanceScene, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    T = scene.T
    for t in range(T + 1):
        Image.fromarray(np.round(scene.frames[t] * 255.0).astype(np.uint8)).save(
            d / f"frame_{t:02d}.png"
        )
        _save_u16(d / f"inst_{t:02d}.png", scene.inst_map[t])
        _save_u16(d / f"class_{t:02d}.png", scene.class_map[t])
    for t in range(1, T + 1):
        write_flow(d / f"flow_fwd_{t:02d}.c2mf", scene.flows_fwd[t - 1])
        write_flow(d / f"flow_bwd_{t:02d}.c2mf", scene.flows_bwd[t - 1])
        Image.fromarray((scene.occ_fwd[t - 1] * 255).astype(np.uint8)).save(
            d / f"occ_fwd_{t:02d}.png"
        )
        Image.fromarray((scene.occ_bwd[t - 1] * 255).astype(np.uint8)).save(
            d / f"occ_bwd_{t:02d}.png"
        )

    manifest = {
        "format": "sceneshift-scene/1",
        "height": scene.height,
        "width": scene.width,
        "T": T,
        "seed": scene.seed,
        "ego_motion": scene.ego_motion.tolist(),
        "config": dataclasses.asdict(scene.config),
        "instances": [
            {
                "id": int(scene.instance_ids[i]),
                "class": int(scene.objects[i].class_id),
                "shape": scene.objects[i].shape,
                "size": list(scene.objects[i].size),
                "pos0": list(scene.objects[i].pos0),
                "color": list(scene.objects[i].color),
                "velocity": scene.object_velocities[i].tolist(),
                "barycenters": scene.barycenters[i].tolist(),
            }
            for i in range(scene.n_instances)
        ],
    }
    with open(d / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return d


def load_scene(directory) -> InstanceScene:
    d = Path(directory)
    with open(d / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "sceneshift-scene/1":
        raise CheckpointFormatError(f"{d}: not a scene directory")
    T = manifest["T"]
    h, w = manifest["height"], manifest["width"]

    frames = np.zeros((T + 1, h, w, 3), dtype=np.float32)
    inst_map = np.zeros((T + 1, h, w), dtype=np.int32)
    class_map = np.zeros((T + 1, h, w), dtype=np.int32)
    for t in range(T + 1):
        frames[t] = np.asarray(Image.open(d / f"frame_{t:02d}.png"), dtype=np.float32) / 255.0
        inst_map[t] = _load_u16(d / f"inst_{t:02d}.png")
        class_map[t] = _load_u16(d / f"class_{t:02d}.png")
    flows_fwd = np.zeros((T, h, w, 2), dtype=np.float32)
    flows_bwd = np.zeros((T, h, w, 2), dtype=np.float32)
    occ_fwd = np.zeros((T, h, w), dtype=np.float32)
    occ_bwd = np.zeros((T, h, w), dtype=np.float32)
    for t in range(1, T + 1):
        flows_fwd[t - 1] = read_flow(d / f"flow_fwd_{t:02d}.c2mf")
        flows_bwd[t - 1] = read_flow(d / f"flow_bwd_{t:02d}.c2mf")
        occ_fwd[t - 1] = np.asarray(Image.open(d / f"occ_fwd_{t:02d}.png")) / 255.0
        occ_bwd[t - 1] = np.asarray(Image.open(d / f"occ_bwd_{t:02d}.png")) / 255.0

    seg = np.zeros((T + 1, h, w, N_CLASSES), dtype=np.uint8)
    for c in range(1, N_CLASSES + 1):
        seg[..., c - 1] = (class_map == c).astype(np.uint8)

    cfg_dict = dict(manifest["config"])
    for key in ("shapes", "size_range", "velocity_range", "ego_range"):
        if key in cfg_dict and isinstance(cfg_dict[key], list):
            cfg_dict[key] = tuple(cfg_dict[key])
    config = SceneConfig(**cfg_dict)

    insts = manifest["instances"]
    objects = tuple(
        ObjectSpec(
            instance_id=m["id"],
            shape=m["shape"],
            size=tuple(m["size"]),
            pos0=tuple(m["pos0"]),
            velocity=tuple(m["velocity"]),
            color=tuple(m["color"]),
        )
        for m in insts
    )
    return InstanceScene(
        frames=frames,
        seg=seg,
        class_map=class_map,
        inst_map=inst_map,
        flows_fwd=flows_fwd,
        flows_bwd=flows_bwd,
        occ_fwd=occ_fwd,
        occ_bwd=occ_bwd,
        barycenters=np.array([m["barycenters"] for m in insts], dtype=np.float64),
        instance_ids=np.array([m["id"] for m in insts], dtype=np.int32),
        object_velocities=np.array([m["velocity"] for m in insts], dtype=np.int32),
        ego_motion=np.array(manifest["ego_motion"], dtype=np.int32),
        config=config,
        seed=manifest["seed"],
        objects=objects,
    )


def save_corpus(scenes, directory) -> List[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, scene in enumerate(scenes):
        paths.append(save_scene(scene, d / f"scene_{i:05d}"))
    return paths


def corpus_paths(directory) -> List[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if (p / "manifest.json").exists())
