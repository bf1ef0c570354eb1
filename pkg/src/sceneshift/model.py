"""Full model: appearance + motion + generation, and the inference path."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import torch
from torch import nn

from .config import N_CLASSES, ModelConfig, SceneConfig
from .generator import (
    AppearanceCode,
    AppearanceEncoder,
    FrameSynthesizer,
    PatchDiscriminator,
    instance_channels,
)
from .graph import GraphVae, ObjectGraph, build_graph
from .motion import (
    FlowDecoder,
    FlowVolume,
    MotionContextEncoder,
    TrajectoryEncoder,
    location_map_stack,
)
from .scenes import InstanceScene, MotionSpec

COARSE_FACTOR = 4  # appearance map lives at H/4; instance maps downsample by this

# Parameter groups: the motion side trains at lr_motion, the generation side
# (appearance encoder included) at lr_generation, the discriminator separately.
MOTION_MODULES = ("graph_vae", "traj_encoder", "context_encoder", "flow_decoder")
GENERATION_MODULES = ("appearance", "synthesizer")
DISC_MODULES = ("discriminator",)


class SceneShiftModel(nn.Module):
    def __init__(self, model_cfg: ModelConfig, scene_cfg: SceneConfig):
        super().__init__()
        self.model_cfg = model_cfg
        self.scene_cfg = scene_cfg
        self.max_disp = model_cfg.max_disp(scene_cfg.height, scene_cfg.width)
        T = scene_cfg.T
        self.context_in_channels = 3 * (T + 1) + N_CLASSES + 2 + 2 * T

        self.appearance = AppearanceEncoder(model_cfg.feat_dim, model_cfg.gen_dim)
        self.graph_vae = GraphVae(
            model_cfg.feat_dim, model_cfg.latent_dim, model_cfg.gcn_iters
        )
        self.traj_encoder = TrajectoryEncoder(model_cfg.traj_dims)
        self.context_encoder = MotionContextEncoder(
            self.context_in_channels, model_cfg.context_dim
        )
        self.flow_decoder = FlowDecoder(
            model_cfg.feat_dim,
            model_cfg.context_dim,
            traj_dims=model_cfg.traj_dims,
            dec_dims=model_cfg.dec_dims,
        )
        self.synthesizer = FrameSynthesizer(model_cfg.gen_dim, model_cfg.refiner_blocks)
        self.discriminator = PatchDiscriminator(model_cfg.disc_dim)

    def named_group_parameters(self, modules: Tuple[str, ...]):
        for mod_name in modules:
            for name, p in getattr(self, mod_name).named_parameters():
                yield f"{mod_name}.{name}", p


# ---------------------------------------------------------------------------
# scene -> tensor helpers


def frame0_input(scene: InstanceScene) -> np.ndarray:
    """(3+C+2, H, W) conditioning stack: RGB, one-hot classes, instance channels."""
    rgb = scene.frames[0].transpose(2, 0, 1)
    seg = scene.seg[0].transpose(2, 0, 1).astype(np.float32)
    inst = instance_channels(scene.inst_map[0], scene.n_instances)
    return np.concatenate([rgb, seg, inst], axis=0)


def video_tensor(scene: InstanceScene) -> np.ndarray:
    return scene.frames.transpose(0, 3, 1, 2)  # (T+1, 3, H, W)


def gt_flow_tensors(scene: InstanceScene):
    fwd = scene.flows_fwd.transpose(0, 3, 1, 2)       # (T, 2, H, W)
    bwd = scene.flows_bwd.transpose(0, 3, 1, 2)
    occ_f = scene.occ_fwd[:, None]                    # (T, 1, H, W)
    occ_b = scene.occ_bwd[:, None]
    return fwd, bwd, occ_f, occ_b


def context_input(scene: InstanceScene) -> np.ndarray:
    """Input stack for the motion-context encoder (training path)."""
    T = scene.T
    frames = video_tensor(scene).reshape(3 * (T + 1), scene.height, scene.width)
    seg = scene.seg[0].transpose(2, 0, 1).astype(np.float32)
    inst = instance_channels(scene.inst_map[0], scene.n_instances)
    flows = scene.flows_fwd.transpose(0, 3, 1, 2).reshape(2 * T, scene.height, scene.width)
    return np.concatenate([frames, seg, inst, flows], axis=0)


def coarse_inst_map(scene: InstanceScene) -> np.ndarray:
    return scene.inst_map[0][::COARSE_FACTOR, ::COARSE_FACTOR]


def per_frame_gt_offsets(scene: InstanceScene) -> np.ndarray:
    """(T+1, N, 2) barycenter displacement of every object since frame 0."""
    return scene.barycenters.transpose(1, 0, 2) - scene.barycenters[:, 0][None]


def gt_displacement_tensor(scene: InstanceScene) -> torch.Tensor:
    d = scene.barycenters[:, scene.T] - scene.barycenters[:, 0]
    return torch.from_numpy(d.astype(np.float32))


# ---------------------------------------------------------------------------
# inference


@dataclass
class InferenceResult:
    frames: np.ndarray                     # (T, H, W, 3) float32 in [0, 1]
    displacements: Dict[int, Tuple[float, float]]
    known: Dict[int, bool]
    volume: FlowVolume
    graph: ObjectGraph


@torch.no_grad()
def infer(
    model: SceneShiftModel,
    scene: InstanceScene,
    spec: MotionSpec,
    seed: int,
    variant: str = "full",
) -> InferenceResult:
    """Generate T frames from frame 0 and the user's sparse displacements.

    ``variant`` selects ablations: "full" (default), "edgeless" (graph edges
    removed, every unknown motion decoded from its latent alone) or "no_gcn"
    (motion inference skipped entirely; only user-controlled objects appear
    in the location maps).
    """
    if variant not in ("full", "edgeless", "no_gcn"):
        raise ValueError(f"unknown variant {variant!r}")
    spec.validate_against(scene)
    T = scene.T
    gen = torch.Generator().manual_seed(seed)

    x0 = torch.from_numpy(frame0_input(scene)).unsqueeze(0)
    code = model.appearance(x0)

    graph = build_graph(
        code.app_map[0], coarse_inst_map(scene), spec, expected_ids=scene.instance_ids
    )

    if variant == "no_gcn":
        controlled = set(spec.ids)
        inst0 = scene.inst_map[0]
        kept = np.where(np.isin(inst0, sorted(controlled)), inst0, 0)
        disp = np.array([spec.delta(i) for i in sorted(controlled)], dtype=np.float64)
        if controlled:
            maps = location_map_stack(kept, disp, T)
        else:
            maps = np.zeros((T + 1, scene.height, scene.width), dtype=np.float32)
        d_hat = torch.zeros(graph.n_nodes, 2)
    else:
        d_hat = model.graph_vae.sample(graph, gen, edgeless=(variant == "edgeless"))
        maps = location_map_stack(scene.inst_map[0], d_hat.numpy().astype(np.float64), T)

    traj = model.traj_encoder(torch.from_numpy(maps).unsqueeze(0).unsqueeze(0))
    z_m = torch.randn((1, model.model_cfg.context_dim), generator=gen)
    vol = model.flow_decoder(code.app_map, traj, z_m, model.max_disp)

    frames = []
    for t in range(T):
        frame = model.synthesizer(code.gen_features, vol.flow_bwd[:, t], vol.occ_bwd[:, t])
        frames.append(frame[0].permute(1, 2, 0).numpy())

    displacements: Dict[int, Tuple[float, float]] = {}
    known: Dict[int, bool] = {}
    for idx, inst in enumerate(graph.ids):
        if bool(graph.known[idx]):
            # echo the request exactly for user-controlled objects
            displacements[inst] = tuple(spec.delta(inst))
            known[inst] = True
        else:
            displacements[inst] = (float(d_hat[idx, 0]), float(d_hat[idx, 1]))
            known[inst] = False
    return InferenceResult(
        frames=np.stack(frames, axis=0),
        displacements=displacements,
        known=known,
        volume=vol,
        graph=graph,
    )
