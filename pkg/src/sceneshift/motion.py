"""Dense motion: location maps, warping, flow decoding, flow losses.

The pipeline turns per-object displacements into per-pixel flow in three
steps: binary object-location maps are rigidly translated per object and per
timestep (bilinear splat), a spatio-temporal encoder summarizes the stack, and
a decoder emits forward/backward flow plus occlusion maps for every timestep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

# ---------------------------------------------------------------------------
# object-location maps


def object_location_map(inst_map: np.ndarray) -> np.ndarray:
    """Binary foreground indicator: 1 where any instance covers the pixel."""
    return (inst_map > 0).astype(np.float64)


def splat_translated_masks(
    inst_map: np.ndarray, offsets: Sequence[Tuple[float, float]]
) -> np.ndarray:
    """Translate each instance's mask by its (dx, dy) offset, bilinearly.

    ``offsets`` is aligned with the ascending instance ids of ``inst_map``.
    Per-object mass is deposited on the four neighbouring pixels; the result
    is the per-pixel maximum over objects, clamped to [0, 1]. Mass pushed
    outside the frame is dropped.
    """
    h, w = inst_map.shape
    ids = [int(i) for i in np.unique(inst_map) if i > 0]
    if len(ids) != len(offsets):
        raise ValueError(f"{len(offsets)} offsets for {len(ids)} instances")
    out = np.zeros((h, w), dtype=np.float64)
    for inst, (dx, dy) in zip(ids, offsets):
        ys, xs = np.nonzero(inst_map == inst)
        tx = xs + float(dx)
        ty = ys + float(dy)
        x0 = np.floor(tx).astype(np.int64)
        y0 = np.floor(ty).astype(np.int64)
        fx = tx - x0
        fy = ty - y0
        canvas = np.zeros((h, w), dtype=np.float64)
        for ix, wx_ in ((x0, 1.0 - fx), (x0 + 1, fx)):
            for iy, wy_ in ((y0, 1.0 - fy), (y0 + 1, fy)):
                weight = wx_ * wy_
                valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h) & (weight > 0)
                np.add.at(canvas, (iy[valid], ix[valid]), weight[valid])
        np.maximum(out, canvas, out=out)
    return np.clip(out, 0.0, 1.0)


def warp_location_map(
    inst_map_0: np.ndarray,
    displacements: np.ndarray,
    t: int,
    T: int,
) -> np.ndarray:
    """Location map at timestep t: each object translated by (t/T) * d_n.

    ``displacements`` is (N, 2), row-aligned with ascending instance ids.
    """
    if not 1 <= t <= T:
        raise ValueError(f"t must be in 1..{T}, got {t}")
    frac = t / T
    offsets = [(frac * float(d[0]), frac * float(d[1])) for d in displacements]
    return splat_translated_masks(inst_map_0, offsets)


def location_map_stack(
    inst_map_0: np.ndarray, displacements: np.ndarray, T: int
) -> np.ndarray:
    """(T+1, H, W) float32 stack: B_0 from the map, B_t by rigid warping."""
    maps = [object_location_map(inst_map_0)]
    for t in range(1, T + 1):
        maps.append(warp_location_map(inst_map_0, displacements, t, T))
    return np.stack(maps, axis=0).astype(np.float32)


def location_map_stack_from_offsets(
    inst_map_0: np.ndarray, per_frame_offsets: np.ndarray
) -> np.ndarray:
    """Teacher-forced stack from explicit (T+1, N, 2) per-frame offsets."""
    T = per_frame_offsets.shape[0] - 1
    maps = [object_location_map(inst_map_0)]
    for t in range(1, T + 1):
        maps.append(splat_translated_masks(inst_map_0, per_frame_offsets[t]))
    return np.stack(maps, axis=0).astype(np.float32)


# ---------------------------------------------------------------------------
# warping


def backward_warp(source: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Sample ``source`` at p + flow(p), bilinear, border-clamped.

    source: (B, C, H, W); flow: (B, 2, H, W) in pixels, channels (dx, dy).
    Differentiable in both arguments. Zero flow reproduces the source
    bit-exactly; integer flows reduce to index shifts with border clamp.
    """
    b, c, h, w = source.shape
    dtype = flow.dtype
    gy = torch.arange(h, dtype=dtype).view(1, h, 1)
    gx = torch.arange(w, dtype=dtype).view(1, 1, w)
    x = gx + flow[:, 0]
    y = gy + flow[:, 1]
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    fx = (x - x0).unsqueeze(1)
    fy = (y - y0).unsqueeze(1)
    x0l = x0.long().clamp(0, w - 1)
    x1l = (x0.long() + 1).clamp(0, w - 1)
    y0l = y0.long().clamp(0, h - 1)
    y1l = (y0.long() + 1).clamp(0, h - 1)

    flat = source.reshape(b, c, h * w)

    def gather(yy, xx):
        idx = (yy * w + xx).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    v00 = gather(y0l, x0l)
    v01 = gather(y0l, x1l)
    v10 = gather(y1l, x0l)
    v11 = gather(y1l, x1l)
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


# ---------------------------------------------------------------------------
# encoders / decoder


@dataclass
class FlowVolume:
    """Per-timestep bidirectional flow and occlusion, (B, T, C, H, W)."""

    flow_fwd: torch.Tensor   # (B, T, 2, H, W)
    flow_bwd: torch.Tensor   # (B, T, 2, H, W)
    occ_fwd: torch.Tensor    # (B, T, 1, H, W)
    occ_bwd: torch.Tensor    # (B, T, 1, H, W)

    @property
    def horizon(self) -> int:
        return self.flow_fwd.shape[1]


def _conv3d_block(c_in, c_out, stride):
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, kernel_size=3, stride=(1, stride, stride), padding=1),
        nn.InstanceNorm3d(c_out),
        nn.LeakyReLU(0.2),
    )


class TrajectoryEncoder(nn.Module):
    """Spatio-temporal encoder of the location-map stack.

    Three 3D-conv blocks, spatial stride 2 each, temporal kernel 3 with
    stride 1; input (B, 1, T+1, H, W) yields features at H/2, H/4 and H/8.
    """

    def __init__(self, dims: Tuple[int, int, int] = (32, 64, 128)):
        super().__init__()
        self.block1 = _conv3d_block(1, dims[0], 2)
        self.block2 = _conv3d_block(dims[0], dims[1], 2)
        self.block3 = _conv3d_block(dims[1], dims[2], 2)

    def forward(self, maps: torch.Tensor) -> List[torch.Tensor]:
        f1 = self.block1(maps)
        f2 = self.block2(f1)
        f3 = self.block3(f2)
        return [f1, f2, f3]


class MotionContextEncoder(nn.Module):
    """Video-level residual-motion encoder (training only).

    Sees everything the flows cannot be computed from at test time: all
    frames, the t=0 segmentation/instance maps and the per-timestep flows.
    Emits a Gaussian over a small context vector.
    """

    def __init__(self, in_channels: int, context_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, 32, 3, stride=2, padding=1),
            nn.InstanceNorm2d(32),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.InstanceNorm2d(64),
            nn.LeakyReLU(0.2),
            nn.Conv2d(64, 128, 3, stride=2, padding=1),
            nn.InstanceNorm2d(128),
            nn.LeakyReLU(0.2),
        )
        self.head = nn.Linear(128, 2 * context_dim)
        self.context_dim = context_dim

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        feat = self.net(x).mean(dim=(2, 3))
        out = self.head(feat)
        return out[:, : self.context_dim], out[:, self.context_dim :]


def reparameterize(
    mu: torch.Tensor,
    log_var: torch.Tensor,
    generator: Optional[torch.Generator] = None,
    eps: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + torch.exp(0.5 * log_var) * eps


def _conv2d_block(c_in, c_out, kernel=3):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, padding=kernel // 2),
        nn.InstanceNorm2d(c_out),
        nn.LeakyReLU(0.2),
    )


def _coord_grid(h: int, w: int, dtype) -> torch.Tensor:
    """(1, 2, h, w) x/y coordinate channels in [-1, 1]."""
    ys = torch.linspace(-1.0, 1.0, h, dtype=dtype)
    xs = torch.linspace(-1.0, 1.0, w, dtype=dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=0).unsqueeze(0)


def correlation_volume(feat: torch.Tensor, reference: torch.Tensor,
                       max_offset: int) -> torch.Tensor:
    """Dot-product matching of ``feat`` against shifted ``reference``.

    Returns (B, (2*max_offset+1)^2, h, w): channel k holds the mean-channel
    inner product with the reference displaced by offset k. Gives the
    decoder direct evidence of where each blob came from instead of making
    it learn matched filters from scratch.
    """
    b, c, h, w = feat.shape
    pad = max_offset
    ref = F.pad(reference, (pad, pad, pad, pad))
    rows = []
    for dy in range(2 * max_offset + 1):
        for dx in range(2 * max_offset + 1):
            window = ref[:, :, dy : dy + h, dx : dx + w]
            rows.append((feat * window).mean(dim=1))
    return torch.stack(rows, dim=1)


class _TemporalMix(nn.Module):
    """Temporal-only 3D conv over a (B*T, C, H, W) batch of per-frame maps."""

    def __init__(self, channels, kernel: int = 3):
        super().__init__()
        self.conv = nn.Conv3d(
            channels, channels, kernel_size=(kernel, 1, 1), padding=(kernel // 2, 0, 0)
        )
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor, batch: int) -> torch.Tensor:
        bt, c, h, w = x.shape
        t = bt // batch
        y = x.reshape(batch, t, c, h, w).permute(0, 2, 1, 3, 4)
        y = self.act(self.conv(y))
        return y.permute(0, 2, 1, 3, 4).reshape(bt, c, h, w)


class FlowDecoder(nn.Module):
    """Decodes appearance + trajectory + context codes into a FlowVolume.

    Per-timestep 2D stages with skip connections from the trajectory encoder,
    interleaved with temporal mixing layers. Flow head is tanh scaled by
    ``max_disp``; occlusion head is a sigmoid.
    """

    def __init__(
        self,
        feat_dim: int,
        context_dim: int,
        traj_dims: Tuple[int, int, int] = (32, 64, 128),
        dec_dims: Tuple[int, int, int, int] = (96, 48, 32, 16),
    ):
        super().__init__()
        d0, d1, d2, d3 = dec_dims
        self.corr_offset = 2
        corr_ch = (2 * self.corr_offset + 1) ** 2
        # trajectory features of slice t are matched against slice 0 by an
        # explicit correlation volume; the offsets span the representable
        # displacement range at this resolution. Coordinate channels make
        # positions linearly readable.
        self.pre = _conv2d_block(
            traj_dims[2] + feat_dim + context_dim + corr_ch + 2, d0
        )
        self.coarse = nn.Sequential(
            _conv2d_block(d0, d0),
            _conv2d_block(d0, d0),
        )
        self.mix_coarse = _TemporalMix(d0, kernel=5)
        self.post_coarse = _conv2d_block(d0, d0)
        self.bottleneck = _conv2d_block(2 * d0, d0)
        self.mix0 = _TemporalMix(d0)
        self.up1 = nn.Sequential(
            _conv2d_block(d0 + traj_dims[1], d1),
            _conv2d_block(d1, d1),
        )
        self.mix1 = _TemporalMix(d1)
        self.up2 = _conv2d_block(d1 + traj_dims[0], d2)
        self.up3 = _conv2d_block(d2, d3)
        self.flow_head = nn.Conv2d(d3, 4, 5, padding=2)
        self.occ_head = nn.Conv2d(d3, 2, 5, padding=2)

    def forward(
        self,
        app_map: torch.Tensor,          # (B, feat_dim, H/4, W/4)
        traj_feats: List[torch.Tensor],  # from TrajectoryEncoder, t axis = T+1
        context: torch.Tensor,           # (B, context_dim)
        max_disp: float,
    ) -> FlowVolume:
        b = app_map.shape[0]
        T = traj_feats[2].shape[2] - 1
        h8, w8 = traj_feats[2].shape[3], traj_feats[2].shape[4]

        app8 = F.avg_pool2d(app_map, 2)
        zm = context[:, :, None, None].expand(b, context.shape[1], h8, w8)

        def frames_of(feat):  # (B, C, T+1, h, w) -> (B*T, C, h, w), t = 1..T
            x = feat[:, :, 1:].permute(0, 2, 1, 3, 4)
            return x.reshape(b * T, *x.shape[2:])

        zs = frames_of(traj_feats[2])
        skip2 = frames_of(traj_feats[1])
        skip1 = frames_of(traj_feats[0])
        app8r = app8.unsqueeze(1).expand(b, T, *app8.shape[1:]).reshape(b * T, *app8.shape[1:])
        zmr = zm.unsqueeze(1).expand(b, T, *zm.shape[1:]).reshape(b * T, *zm.shape[1:])

        zs0 = traj_feats[2][:, :, 0]  # t = 0 slice: the source configuration
        zs0r = zs0.unsqueeze(1).expand(b, T, *zs0.shape[1:]).reshape(b * T, *zs0.shape[1:])
        corr = correlation_volume(zs, zs0r, self.corr_offset)
        coords = _coord_grid(h8, w8, app_map.dtype).expand(b * T, 2, h8, w8)
        x = self.pre(torch.cat([zs, app8r, zmr, corr, coords], dim=1))
        c = F.avg_pool2d(x, 2)
        c = self.coarse(c)
        c = self.mix_coarse(c, b)
        c = self.post_coarse(c)
        c = F.interpolate(c, scale_factor=2, mode="nearest")
        x = self.bottleneck(torch.cat([x, c], dim=1))
        x = self.mix0(x, b)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.up1(torch.cat([x, skip2], dim=1))
        x = self.mix1(x, b)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.up2(torch.cat([x, skip1], dim=1))
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.up3(x)

        flows = torch.tanh(self.flow_head(x)) * max_disp
        occs = torch.sigmoid(self.occ_head(x))
        h, w = flows.shape[2], flows.shape[3]
        flows = flows.reshape(b, T, 4, h, w)
        occs = occs.reshape(b, T, 2, h, w)
        return FlowVolume(
            flow_fwd=flows[:, :, 0:2],
            flow_bwd=flows[:, :, 2:4],
            occ_fwd=occs[:, :, 0:1],
            occ_bwd=occs[:, :, 1:2],
        )


# ---------------------------------------------------------------------------
# losses


def loss_fb_consistency(vol: FlowVolume, detach_occlusion: bool = True) -> torch.Tensor:
    """Cycle residual between forward and backward flow at visible pixels.

    A consistent pair satisfies F_fwd(p) = -F_bwd(p + F_fwd(p)); the loss is
    the occlusion-masked L1 norm of the sum, both directions, averaged over
    pixels and timesteps. Occlusion maps are detached by default so the
    decoder cannot silence the residual by predicting full occlusion.
    """
    b, t = vol.flow_fwd.shape[:2]
    h, w = vol.flow_fwd.shape[3:]
    ff = vol.flow_fwd.reshape(b * t, 2, h, w)
    fb = vol.flow_bwd.reshape(b * t, 2, h, w)
    of = vol.occ_fwd.reshape(b * t, 1, h, w)
    ob = vol.occ_bwd.reshape(b * t, 1, h, w)
    if detach_occlusion:
        of = of.detach()
        ob = ob.detach()
    res_f = (ff + backward_warp(fb, ff)).abs().sum(dim=1, keepdim=True)
    res_b = (fb + backward_warp(ff, fb)).abs().sum(dim=1, keepdim=True)
    total = (of * res_f + ob * res_b).sum()
    return total / (b * t * h * w)


def loss_smoothness(vol: FlowVolume, frame0: torch.Tensor, alpha: float = 10.0) -> torch.Tensor:
    """Edge-aware first-order flow smoothness.

    Flow gradients are discounted where the conditioning frame has strong
    gradients of its own; forward differences in both spatial directions,
    averaged over both flow directions and all timesteps.
    """
    b, t = vol.flow_fwd.shape[:2]
    h, w = vol.flow_fwd.shape[3:]
    flows = torch.cat([vol.flow_fwd, vol.flow_bwd], dim=2).reshape(b * t, 4, h, w)
    img = frame0.unsqueeze(1).expand(b, t, *frame0.shape[1:]).reshape(b * t, *frame0.shape[1:])

    gx_img = (img[:, :, :, 1:] - img[:, :, :, :-1]).abs().sum(dim=1, keepdim=True)
    gy_img = (img[:, :, 1:, :] - img[:, :, :-1, :]).abs().sum(dim=1, keepdim=True)
    gx_flow = (flows[:, :, :, 1:] - flows[:, :, :, :-1]).abs()
    gy_flow = (flows[:, :, 1:, :] - flows[:, :, :-1, :]).abs()
    term_x = (gx_flow * torch.exp(-alpha * gx_img)).mean()
    term_y = (gy_flow * torch.exp(-alpha * gy_img)).mean()
    return 0.5 * (term_x + term_y)


def loss_flow_supervised(
    vol: FlowVolume,
    gt_fwd: torch.Tensor,
    gt_bwd: torch.Tensor,
    gt_occ_fwd: torch.Tensor,
    gt_occ_bwd: torch.Tensor,
    eps: float = 1e-6,
):
    """Mean L1 to the reference flows plus BCE on the occlusion maps."""
    l1_fwd = (vol.flow_fwd - gt_fwd).abs().mean()
    l1_bwd = (vol.flow_bwd - gt_bwd).abs().mean()

    def bce(pred, target):
        p = pred.clamp(eps, 1.0 - eps)
        return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()

    bce_fwd = bce(vol.occ_fwd, gt_occ_fwd)
    bce_bwd = bce(vol.occ_bwd, gt_occ_bwd)
    total = 0.5 * (l1_fwd + l1_bwd) + 0.5 * (bce_fwd + bce_bwd)
    return total, {
        "l1_fwd": l1_fwd,
        "l1_bwd": l1_bwd,
        "bce_fwd": bce_fwd,
        "bce_bwd": bce_bwd,
    }


def loss_motion_kl(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mu, exp(log_var)) || N(0, I)), summed over dims."""
    kl = 0.5 * (mu.pow(2) + log_var.exp() - 1.0 - log_var).sum(dim=-1)
    return kl.mean()
