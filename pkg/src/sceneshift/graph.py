"""Object graph over detected instances and constrained motion propagation.

Nodes are objects; the graph is complete (no self loops). Each node carries a
pooled appearance feature, a 2D motion vector, and a flag saying whether the
motion was provided by the user. Message passing updates features residually
for every node but only touches the motion of nodes whose motion is unknown;
user-provided motions pass through bit-identical.

The propagation is wrapped in a per-node VAE so unknown motions can be
sampled at test time: an encoder GCN compresses ground-truth motions into
per-node Gaussians, a decoder GCN reconstructs motions from latents (unknown
nodes) and user displacements (known nodes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .errors import LostInstanceError, NumericOverflowError
from .scenes import MotionSpec


@dataclass
class ObjectGraph:
    ids: Tuple[int, ...]          # ascending instance ids, one node each
    features: torch.Tensor        # (N, feat_dim)
    motion: torch.Tensor          # (N, 2) pixels
    known: torch.Tensor           # (N,) bool

    @property
    def n_nodes(self) -> int:
        return len(self.ids)

    def with_motion(self, motion: torch.Tensor) -> "ObjectGraph":
        return replace(self, motion=motion)


@dataclass
class MotionLatent:
    mu: torch.Tensor       # (n_unknown, latent_dim)
    log_var: torch.Tensor  # (n_unknown, latent_dim)
    samples: torch.Tensor  # (n_unknown, latent_dim)


def build_graph(
    app_map: torch.Tensor,
    inst_map_coarse: np.ndarray,
    user: MotionSpec,
    expected_ids: Optional[Sequence[int]] = None,
) -> ObjectGraph:
    """One node per instance in the coarse map; features by region pooling.

    ``app_map`` is (feat_dim, h, w) and must match the coarse map's spatial
    size. ``expected_ids`` (usually the scene's full-resolution id list)
    turns silently vanished instances into a LostInstanceError.
    """
    if app_map.shape[1:] != inst_map_coarse.shape:
        raise ValueError(
            f"appearance map {tuple(app_map.shape[1:])} does not match "
            f"coarse instance map {inst_map_coarse.shape}"
        )
    present = [int(i) for i in np.unique(inst_map_coarse) if i > 0]
    if expected_ids is not None:
        lost = sorted(set(int(i) for i in expected_ids) - set(present))
        if lost:
            raise LostInstanceError(f"instances {lost} vanished under downsampling")
    for i in user.ids:
        if i not in present:
            raise LostInstanceError(f"controlled instance {i} not in coarse map")

    mask_t = torch.from_numpy(np.ascontiguousarray(inst_map_coarse))
    feats = []
    for inst in present:
        sel = (mask_t == inst)
        feats.append(app_map[:, sel].mean(dim=1))
    features = torch.stack(feats, dim=0)

    motion = torch.zeros(len(present), 2, dtype=app_map.dtype)
    known = torch.zeros(len(present), dtype=torch.bool)
    for entry_id, delta in user.entries:
        idx = present.index(entry_id)
        known[idx] = True
        motion[idx, 0] = float(delta[0])
        motion[idx, 1] = float(delta[1])
    return ObjectGraph(ids=tuple(present), features=features, motion=motion, known=known)


class MotionPropagator(nn.Module):
    """K iterations of residual message passing with untied weights.

    Messages from neighbor j are linear in f_j ++ d_j and scaled by
    1/sqrt(deg(n) + deg(j)) = 1/sqrt(2(N-1)) on the complete graph. Feature
    updates apply to every node; motion updates only where the motion is not
    user-fixed.
    """

    def __init__(self, feat_dim: int, iters: int):
        super().__init__()
        self.feat_dim = feat_dim
        self.iters = iters
        self.msg_feat = nn.ModuleList(
            nn.Linear(feat_dim + 2, feat_dim, bias=False) for _ in range(iters)
        )
        self.msg_motion = nn.ModuleList(
            nn.Linear(feat_dim + 2, 2, bias=False) for _ in range(iters)
        )

    def forward(
        self,
        features: torch.Tensor,
        motion: torch.Tensor,
        known: torch.Tensor,
        edgeless: bool = False,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        n = features.shape[0]
        if n == 1 or edgeless:
            # empty neighborhoods: the residual update is the identity
            return features, motion
        scale = 1.0 / math.sqrt(2.0 * (n - 1))
        for k in range(self.iters):
            state = torch.cat([features, motion], dim=1)
            per_source_f = self.msg_feat[k](state)
            per_source_d = self.msg_motion[k](state)
            # sum over neighbors j != n as (sum over all) - (self term)
            agg_f = (per_source_f.sum(dim=0, keepdim=True) - per_source_f) * scale
            agg_d = (per_source_d.sum(dim=0, keepdim=True) - per_source_d) * scale
            features = features + agg_f
            motion = torch.where(known.unsqueeze(1), motion, motion + agg_d)
        if not torch.isfinite(features).all():
            raise NumericOverflowError("propagator features")
        if not torch.isfinite(motion).all():
            raise NumericOverflowError("propagator motion")
        return features, motion


def propagate(graph: ObjectGraph, propagator: MotionPropagator,
              edgeless: bool = False) -> ObjectGraph:
    f, d = propagator(graph.features, graph.motion, graph.known, edgeless=edgeless)
    return replace(graph, features=f, motion=d)


class GraphVae(nn.Module):
    """Motion VAE over the object graph.

    Encoder: a propagator run with every node treated as unknown (features
    and motions both mix), followed by linear heads to (mu, log_var) for the
    nodes whose motion must be inferred. Decoder: a second propagator whose
    initial motions are FC(z) for unknown nodes and the user displacement for
    known nodes.
    """

    def __init__(self, feat_dim: int, latent_dim: int, iters: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.encoder = MotionPropagator(feat_dim, iters)
        self.head_mu = nn.Linear(feat_dim, latent_dim)
        self.head_log_var = nn.Linear(feat_dim, latent_dim)
        self.decoder = MotionPropagator(feat_dim, iters)
        self.from_latent = nn.Linear(latent_dim, 2)

    def encode(
        self,
        graph: ObjectGraph,
        gt_motion: torch.Tensor,
        generator: Optional[torch.Generator] = None,
        eps: Optional[torch.Tensor] = None,
    ) -> MotionLatent:
        all_unknown = torch.zeros_like(graph.known)
        f, _ = self.encoder(graph.features, gt_motion, all_unknown)
        unknown = ~graph.known
        mu = self.head_mu(f[unknown])
        log_var = self.head_log_var(f[unknown])
        if eps is None:
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        samples = mu + torch.exp(0.5 * log_var) * eps
        return MotionLatent(mu=mu, log_var=log_var, samples=samples)

    def decode(
        self,
        graph: ObjectGraph,
        samples: torch.Tensor,
        edgeless: bool = False,
    ) -> torch.Tensor:
        unknown = ~graph.known
        n_unknown = int(unknown.sum())
        if samples.shape[0] != n_unknown:
            raise ValueError(
                f"got {samples.shape[0]} latents for {n_unknown} unknown nodes"
            )
        init = graph.motion.clone()
        if n_unknown:
            init[unknown] = self.from_latent(samples)
        _, motion = self.decoder(graph.features, init, graph.known, edgeless=edgeless)
        return motion

    def sample(
        self,
        graph: ObjectGraph,
        generator: Optional[torch.Generator] = None,
        edgeless: bool = False,
    ) -> torch.Tensor:
        """Prior-sample unknown motions; consumes no randomness if all known."""
        n_unknown = int((~graph.known).sum())
        if n_unknown == 0:
            return graph.motion.clone()
        z = torch.randn(
            (n_unknown, self.latent_dim), generator=generator, dtype=graph.features.dtype
        )
        return self.decode(graph, z, edgeless=edgeless)


def loss_vae(
    gt_motion: torch.Tensor,
    pred_motion: torch.Tensor,
    latent: MotionLatent,
    beta: float = 1.0,
):
    """Per-node L1 reconstruction plus Gaussian KL to the unit prior."""
    if gt_motion.shape != pred_motion.shape:
        raise ValueError("motion shapes disagree")
    recon = (gt_motion - pred_motion).abs().sum(dim=1).mean()
    if latent.mu.numel():
        kl = 0.5 * (
            latent.mu.pow(2) + latent.log_var.exp() - 1.0 - latent.log_var
        ).sum()
    else:
        kl = torch.zeros((), dtype=gt_motion.dtype)
    total = recon + beta * kl
    return total, {"recon": recon, "kl": kl}
