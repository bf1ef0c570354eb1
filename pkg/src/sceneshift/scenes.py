"""Synthetic multi-object scenes with exact segmentation and analytic flow.

A scene is a T+1 frame video of solid rectangles/circles translating with
constant integer per-frame velocities over a smooth noise background that
itself translates with a global integer ego-motion. Because every motion is
an integer rigid translation, instance masks translate pixel-exactly and the
optical flow / occlusion maps can be written down in closed form, so they can
serve as exact supervision and as an oracle in tests.

Conventions: x = column, y = row, origin top-left, pixel centers at integer
coordinates. Flows are stored as (dx, dy). Backward flow at pixel p of frame
t points to p's source in frame 0 (value = source - p); forward flow is the
symmetric map from frame 0 to frame t. When objects overlap, the higher
instance id occludes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .config import N_CLASSES, SceneConfig
from .errors import MissingInstanceError, SamplingExhaustedError

CLASS_BACKGROUND = 1
CLASS_RECT = 2
CLASS_CIRCLE = 3

_SHAPE_CLASS = {"rect": CLASS_RECT, "circle": CLASS_CIRCLE}
_BORDER_SCALE = 0.55


@dataclass(frozen=True)
class ObjectSpec:
    """Geometry and appearance of one object, before rendering."""

    instance_id: int
    shape: str                    # "rect" | "circle"
    size: Tuple[int, int]         # (width, height); circles use width as diameter
    pos0: Tuple[int, int]         # top-left (x, y) at t=0
    velocity: Tuple[int, int]     # object's own velocity (px/frame), ego excluded
    color: Tuple[float, float, float]

    @property
    def class_id(self) -> int:
        return _SHAPE_CLASS[self.shape]


@dataclass(frozen=True)
class MotionSpec:
    """User input: per-instance 2D displacements from t=0 to t=T."""

    entries: Tuple[Tuple[int, Tuple[float, float]], ...]

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("instance ids must be unique within a MotionSpec")

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(i for i, _ in self.entries)

    def delta(self, instance_id: int) -> Tuple[float, float]:
        for i, d in self.entries:
            if i == instance_id:
                return d
        raise KeyError(instance_id)

    def validate_against(self, scene: "InstanceScene") -> None:
        present = set(scene.instance_ids.tolist())
        for i, _ in self.entries:
            if i not in present:
                raise MissingInstanceError(f"instance {i} not in scene")


@dataclass
class InstanceScene:
    """A rendered scene video with exact per-frame annotations.

    Arrays are indexed [t] with t in 0..T for frames/maps and t-1 for the
    per-timestep flow/occlusion stacks (timestep t relates frame 0 and
    frame t).
    """

    frames: np.ndarray            # (T+1, H, W, 3) float32 in [0, 1]
    seg: np.ndarray               # (T+1, H, W, C) uint8 one-hot
    class_map: np.ndarray         # (T+1, H, W) int32 in {1..C}
    inst_map: np.ndarray          # (T+1, H, W) int32 in {0..N}
    flows_fwd: np.ndarray         # (T, H, W, 2) float32
    flows_bwd: np.ndarray         # (T, H, W, 2) float32
    occ_fwd: np.ndarray           # (T, H, W) float32 in {0, 1}
    occ_bwd: np.ndarray           # (T, H, W) float32 in {0, 1}
    barycenters: np.ndarray       # (N, T+1, 2) float64, (x, y)
    instance_ids: np.ndarray      # (N,) int32, ascending
    object_velocities: np.ndarray  # (N, 2) int32, own velocity per object
    ego_motion: np.ndarray        # (2,) int32
    config: SceneConfig
    seed: Optional[int]
    objects: Tuple[ObjectSpec, ...]

    @property
    def T(self) -> int:
        return self.frames.shape[0] - 1

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def n_instances(self) -> int:
        return len(self.instance_ids)

    def index_of(self, instance_id: int) -> int:
        hits = np.nonzero(self.instance_ids == instance_id)[0]
        if len(hits) == 0:
            raise MissingInstanceError(f"instance {instance_id} not in scene")
        return int(hits[0])

    def total_velocity(self, instance_id: int) -> np.ndarray:
        """Apparent velocity (object + ego) in px/frame."""
        return self.object_velocities[self.index_of(instance_id)] + self.ego_motion


def barycenter(inst_map: np.ndarray, instance_id: int) -> np.ndarray:
    """Mean (x, y) coordinate of the pixels labelled ``instance_id``."""
    ys, xs = np.nonzero(inst_map == instance_id)
    if len(xs) == 0:
        raise MissingInstanceError(f"instance {instance_id} absent from map")
    return np.array([xs.mean(), ys.mean()], dtype=np.float64)


def gt_displacement(scene: InstanceScene, instance_id: int) -> np.ndarray:
    """Barycenter displacement of an instance between frame 0 and frame T."""
    b0 = barycenter(scene.inst_map[0], instance_id)
    bT = barycenter(scene.inst_map[scene.T], instance_id)
    return bT - b0


def _entity_velocities(scene: InstanceScene) -> Dict[int, np.ndarray]:
    vel = {0: scene.ego_motion.astype(np.int64)}
    for idx, inst in enumerate(scene.instance_ids):
        vel[int(inst)] = (scene.object_velocities[idx] + scene.ego_motion).astype(np.int64)
    return vel


def analytic_flow(scene: InstanceScene, t: int):
    """Exact forward/backward flow and occlusion maps for timestep t.

    Returns (fwd, bwd, occ_fwd, occ_bwd). A pixel is marked occluded (0)
    when its correspondent lies outside the frame or shows a different
    entity (it was covered or newly revealed).
    """
    if not 1 <= t <= scene.T:
        raise ValueError(f"t must be in 1..{scene.T}, got {t}")
    h, w = scene.height, scene.width
    vel = _entity_velocities(scene)

    fwd = np.zeros((h, w, 2), dtype=np.float32)
    bwd = np.zeros((h, w, 2), dtype=np.float32)
    occ_f = np.zeros((h, w), dtype=np.float32)
    occ_b = np.zeros((h, w), dtype=np.float32)

    inst0 = scene.inst_map[0]
    instt = scene.inst_map[t]
    for ent, v in vel.items():
        disp = t * v  # integer displacement over t frames
        # forward: frame-0 pixels of this entity map to frame t
        ys, xs = np.nonzero(inst0 == ent)
        if len(xs):
            fwd[ys, xs] = disp.astype(np.float32)
            qx, qy = xs + disp[0], ys + disp[1]
            inb = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
            vis = np.zeros(len(xs), dtype=bool)
            vis[inb] = instt[qy[inb], qx[inb]] == ent
            occ_f[ys, xs] = vis.astype(np.float32)
        # backward: frame-t pixels of this entity point back into frame 0
        ys, xs = np.nonzero(instt == ent)
        if len(xs):
            bwd[ys, xs] = (-disp).astype(np.float32)
            qx, qy = xs - disp[0], ys - disp[1]
            inb = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
            vis = np.zeros(len(xs), dtype=bool)
            vis[inb] = inst0[qy[inb], qx[inb]] == ent
            occ_b[ys, xs] = vis.astype(np.float32)
    return fwd, bwd, occ_f, occ_b


def sample_motion_spec(
    scene: InstanceScene, n_controlled: int, lam: float, seed: int
) -> MotionSpec:
    """Pick ``n_controlled`` random instances and scale their GT displacement.

    lam=1 reproduces the oracle protocol (ground-truth displacements);
    lam=1.5 with all objects controlled reproduces the all-objects custom
    protocol.
    """
    n = scene.n_instances
    if not 1 <= n_controlled <= n:
        raise ValueError(f"n_controlled must be in 1..{n}, got {n_controlled}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(scene.instance_ids, size=n_controlled, replace=False)
    entries = []
    for inst in sorted(int(i) for i in chosen):
        d = lam * gt_displacement(scene, inst)
        entries.append((inst, (float(d[0]), float(d[1]))))
    return MotionSpec(entries=tuple(entries))


# ---------------------------------------------------------------------------
# rendering


def _shape_masks(spec: ObjectSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Local boolean (fill, border) masks for an object."""
    w, h = spec.size
    if spec.shape == "rect":
        mask = np.ones((h, w), dtype=bool)
    elif spec.shape == "circle":
        r = (w - 1) / 2.0
        yy, xx = np.mgrid[0:h, 0:w]
        mask = (xx - r) ** 2 + (yy - (h - 1) / 2.0) ** 2 <= r * r + 1e-9
    else:
        raise ValueError(f"unknown shape {spec.shape!r}")
    interior = ndimage.binary_erosion(mask, structure=np.ones((3, 3)), border_value=0)
    border = mask & ~interior
    return mask, border


def _background_texture(size_y: int, size_x: int, seed: int) -> np.ndarray:
    """Smooth mid-tone RGB noise; bicubic upsampling of a coarse grid."""
    factor = 8
    cy = -(-size_y // factor)
    cx = -(-size_x // factor)
    rng = np.random.default_rng(seed)
    coarse = rng.random((cy, cx, 3))
    tex = ndimage.zoom(coarse, (factor, factor, 1), order=3, mode="reflect")
    tex = tex[:size_y, :size_x]
    lo, hi = tex.min(), tex.max()
    tex = (tex - lo) / max(hi - lo, 1e-9)
    return (0.25 + 0.5 * tex).astype(np.float32)


def build_scene(
    config: SceneConfig,
    objects: Sequence[ObjectSpec],
    ego: Tuple[int, int],
    texture_seed: int,
    seed: Optional[int] = None,
) -> InstanceScene:
    """Render a scene from explicit object specs (no sampling).

    Raises ValueError if any object leaves the frame during [0, T].
    """
    h, w, T = config.height, config.width, config.T
    ego_v = np.array(ego, dtype=np.int64)

    for spec in objects:
        ow, oh = spec.size
        vx, vy = spec.velocity[0] + ego[0], spec.velocity[1] + ego[1]
        for t in (0, T):
            x0, y0 = spec.pos0[0] + t * vx, spec.pos0[1] + t * vy
            if x0 < 0 or y0 < 0 or x0 + ow > w or y0 + oh > h:
                raise ValueError(
                    f"instance {spec.instance_id} leaves the frame at t={t}"
                )

    pad = T * max(abs(ego[0]), abs(ego[1]))
    tex = _background_texture(h + 2 * pad, w + 2 * pad, texture_seed)

    order = sorted(objects, key=lambda s: s.instance_id)
    masks = {s.instance_id: _shape_masks(s) for s in order}

    frames = np.zeros((T + 1, h, w, 3), dtype=np.float32)
    inst_map = np.zeros((T + 1, h, w), dtype=np.int32)
    class_map = np.full((T + 1, h, w), CLASS_BACKGROUND, dtype=np.int32)
    for t in range(T + 1):
        oy, ox = pad - t * ego[1], pad - t * ego[0]
        frames[t] = tex[oy : oy + h, ox : ox + w]
        for spec in order:
            vx, vy = spec.velocity[0] + ego[0], spec.velocity[1] + ego[1]
            x0, y0 = spec.pos0[0] + t * vx, spec.pos0[1] + t * vy
            fill, border = masks[spec.instance_id]
            oh, ow = fill.shape
            region = (slice(y0, y0 + oh), slice(x0, x0 + ow))
            color = np.array(spec.color, dtype=np.float32)
            frames[t][region][fill] = color
            frames[t][region][border] = _BORDER_SCALE * color
            inst_map[t][region][fill] = spec.instance_id
            class_map[t][region][fill] = spec.class_id

    seg = np.zeros((T + 1, h, w, N_CLASSES), dtype=np.uint8)
    for c in range(1, N_CLASSES + 1):
        seg[..., c - 1] = (class_map == c).astype(np.uint8)

    ids = np.array([s.instance_id for s in order], dtype=np.int32)
    vels = np.array([s.velocity for s in order], dtype=np.int32)
    bary = np.zeros((len(order), T + 1, 2), dtype=np.float64)
    for i, spec in enumerate(order):
        for t in range(T + 1):
            bary[i, t] = barycenter(inst_map[t], spec.instance_id)

    scene = InstanceScene(
        frames=frames,
        seg=seg,
        class_map=class_map,
        inst_map=inst_map,
        flows_fwd=np.zeros((T, h, w, 2), dtype=np.float32),
        flows_bwd=np.zeros((T, h, w, 2), dtype=np.float32),
        occ_fwd=np.zeros((T, h, w), dtype=np.float32),
        occ_bwd=np.zeros((T, h, w), dtype=np.float32),
        barycenters=bary,
        instance_ids=ids,
        object_velocities=vels,
        ego_motion=np.array(ego, dtype=np.int32),
        config=config,
        seed=seed,
        objects=tuple(order),
    )
    for t in range(1, T + 1):
        fwd, bwd, occ_f, occ_b = analytic_flow(scene, t)
        scene.flows_fwd[t - 1] = fwd
        scene.flows_bwd[t - 1] = bwd
        scene.occ_fwd[t - 1] = occ_f
        scene.occ_bwd[t - 1] = occ_b
    return scene


def _visible_ok(scene_inst: np.ndarray, objects: Sequence[ObjectSpec],
                areas: Dict[int, int], frac: float) -> bool:
    for spec in objects:
        need = max(16.0, frac * areas[spec.instance_id])
        for t in range(scene_inst.shape[0]):
            if np.count_nonzero(scene_inst[t] == spec.instance_id) < need:
                return False
    # every instance must survive 4x nearest-neighbour downsampling at t=0
    coarse = scene_inst[0][::4, ::4]
    present = set(np.unique(coarse).tolist())
    return all(spec.instance_id in present for spec in objects)


def generate_scene(config: SceneConfig, seed: int) -> InstanceScene:
    """Sample and render a scene; deterministic for fixed (config, seed)."""
    config.validate()
    rng = np.random.default_rng(seed)
    h, w, T = config.height, config.width, config.T
    tex_seed = config.texture_seed
    if tex_seed is None:
        tex_seed = int(rng.integers(0, 2**31 - 1))

    for _ in range(config.max_retries):
        ego = (
            int(rng.integers(config.ego_range[0], config.ego_range[1] + 1)),
            int(rng.integers(config.ego_range[0], config.ego_range[1] + 1)),
        )
        group = rng.integers(config.velocity_range[0], config.velocity_range[1] + 1, size=2)
        objects: List[ObjectSpec] = []
        feasible = True
        for i in range(config.n_objects):
            inst = i + 1
            shape = str(rng.choice(config.shapes))
            size = int(rng.integers(config.size_range[0], config.size_range[1] + 1))
            if shape == "circle" and size % 2 == 0:
                size += 1  # odd diameter keeps the circle symmetric
            ow = oh = size
            if shape == "rect":
                oh = int(rng.integers(config.size_range[0], config.size_range[1] + 1))
            # jitter around the group velocity, capped so the total apparent
            # displacement stays representable by the flow decoder
            vel = None
            for _ in range(32):
                j = rng.integers(-config.velocity_jitter, config.velocity_jitter + 1, size=2)
                cand = group + j
                if np.all(np.abs(T * (cand + np.array(ego))) <= config.max_total_disp):
                    vel = cand
                    break
            if vel is None:
                feasible = False
                break
            wx, wy = int(vel[0]) + ego[0], int(vel[1]) + ego[1]
            x_lo, x_hi = max(0, -T * wx), w - ow - max(0, T * wx)
            y_lo, y_hi = max(0, -T * wy), h - oh - max(0, T * wy)
            if x_lo > x_hi or y_lo > y_hi:
                feasible = False
                break
            pos = (int(rng.integers(x_lo, x_hi + 1)), int(rng.integers(y_lo, y_hi + 1)))
            color = tuple(float(c) for c in rng.uniform(0.35, 1.0, size=3))
            objects.append(
                ObjectSpec(
                    instance_id=inst,
                    shape=shape,
                    size=(ow, oh),
                    pos0=pos,
                    velocity=(int(vel[0]), int(vel[1])),
                    color=color,
                )
            )
        if not feasible:
            continue

        try:
            scene = build_scene(config, objects, ego, texture_seed=tex_seed, seed=seed)
        except MissingInstanceError:
            # an object was completely covered at some timestep
            continue
        areas = {
            s.instance_id: int(_shape_masks(s)[0].sum()) for s in objects
        }
        if _visible_ok(scene.inst_map, objects, areas, config.min_visible_frac):
            return scene

    raise SamplingExhaustedError(
        f"could not sample a valid scene in {config.max_retries} attempts "
        f"(config={config})"
    )
