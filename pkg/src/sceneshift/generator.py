"""Appearance encoding, flow-based frame synthesis and GAN objectives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import N_CLASSES
from .motion import backward_warp


def instance_channels(inst_map: np.ndarray, n_instances: int) -> np.ndarray:
    """(2, H, W) encoding of an instance map: normalized index + foreground.

    Keeps the network input arity independent of the number of objects.
    """
    norm = inst_map.astype(np.float32) / max(n_instances, 1)
    fg = (inst_map > 0).astype(np.float32)
    return np.stack([norm, fg], axis=0)


@dataclass
class AppearanceCode:
    app_map: torch.Tensor       # (B, feat_dim, H/4, W/4), feeds graph + flow decoder
    gen_features: torch.Tensor  # (B, gen_dim, H/4, W/4), feeds the synthesizer


class AppearanceEncoder(nn.Module):
    """Two stride-2 blocks on frame ++ one-hot classes ++ instance channels."""

    def __init__(self, feat_dim: int, gen_dim: int, n_classes: int = N_CLASSES):
        super().__init__()
        in_ch = 3 + n_classes + 2
        self.in_channels = in_ch
        self.trunk = nn.Sequential(
            nn.Conv2d(in_ch, 32, 3, stride=2, padding=1),
            nn.InstanceNorm2d(32),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.InstanceNorm2d(64),
            nn.LeakyReLU(0.2),
        )
        self.head_app = nn.Conv2d(64, feat_dim, 1)
        self.head_gen = nn.Conv2d(64, gen_dim, 1)

    def forward(self, x: torch.Tensor) -> AppearanceCode:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        h = self.trunk(x)
        return AppearanceCode(app_map=self.head_app(h), gen_features=self.head_gen(h))


class _ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(ch)
        self.norm2 = nn.InstanceNorm2d(ch)

    def forward(self, x):
        h = F.leaky_relu(self.norm1(self.conv1(x)), 0.2)
        h = self.norm2(self.conv2(h))
        return F.leaky_relu(x + h, 0.2)


class FrameSynthesizer(nn.Module):
    """Warp features by the backward flow, mask by occlusion, refine to RGB.

    Frames are synthesized independently per timestep; the occlusion mask
    multiplies the warped features, so fully occluded regions reach the
    refiner as exact zeros.
    """

    def __init__(self, gen_dim: int, n_blocks: int = 4):
        super().__init__()
        self.blocks = nn.Sequential(*[_ResBlock(gen_dim) for _ in range(n_blocks)])
        self.up1 = nn.Sequential(
            nn.Conv2d(gen_dim, gen_dim // 2, 3, padding=1),
            nn.InstanceNorm2d(gen_dim // 2),
            nn.LeakyReLU(0.2),
        )
        self.up2 = nn.Sequential(
            nn.Conv2d(gen_dim // 2, gen_dim // 4, 3, padding=1),
            nn.InstanceNorm2d(gen_dim // 4),
            nn.LeakyReLU(0.2),
        )
        self.to_rgb = nn.Conv2d(gen_dim // 4, 3, 3, padding=1)

    def forward(
        self, gen_features: torch.Tensor, flow_bwd: torch.Tensor, occ_bwd: torch.Tensor
    ) -> torch.Tensor:
        """gen_features (B, C, H/4, W/4); flow/occ at full resolution."""
        factor = flow_bwd.shape[-1] // gen_features.shape[-1]
        small = gen_features.shape[2:]
        flow_s = F.interpolate(flow_bwd, size=small, mode="bilinear", align_corners=False)
        flow_s = flow_s / factor
        occ_s = F.interpolate(occ_bwd, size=small, mode="bilinear", align_corners=False)
        warped = backward_warp(gen_features, flow_s)
        masked = warped * occ_s
        h = self.blocks(masked)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.up1(h)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.up2(h)
        return torch.sigmoid(self.to_rgb(h))


@dataclass
class DiscOutput:
    scores: List[torch.Tensor]            # per-scale patch score grids
    features: List[List[torch.Tensor]]    # per-scale intermediate maps


class _PatchScale(nn.Module):
    def __init__(self, in_ch, base):
        super().__init__()
        chs = [base, base * 2, base * 4, base * 8]
        layers = [nn.Sequential(nn.Conv2d(in_ch, chs[0], 4, stride=2, padding=1),
                                nn.LeakyReLU(0.2))]
        for a, b in zip(chs, chs[1:]):
            layers.append(
                nn.Sequential(
                    nn.Conv2d(a, b, 4, stride=2, padding=1),
                    # GroupNorm stays valid on 1x1 grids (coarsest scale)
                    nn.GroupNorm(1, b),
                    nn.LeakyReLU(0.2),
                )
            )
        self.layers = nn.ModuleList(layers)
        self.score = nn.Conv2d(chs[-1], 1, 1)

    def forward(self, x):
        feats = []
        h = x
        for layer in self.layers:
            h = layer(h)
            feats.append(h)
        return self.score(h), feats


class PatchDiscriminator(nn.Module):
    """Two-scale PatchGAN conditioned on the initial frame."""

    def __init__(self, base: int = 24, n_scales: int = 2):
        super().__init__()
        self.scales = nn.ModuleList(_PatchScale(6, base) for _ in range(n_scales))

    def forward(self, frame0: torch.Tensor, frame_t: torch.Tensor) -> DiscOutput:
        x = torch.cat([frame0, frame_t], dim=1)
        scores, features = [], []
        for i, scale in enumerate(self.scales):
            s, f = scale(x)
            scores.append(s)
            features.append(f)
            if i + 1 < len(self.scales):
                x = F.avg_pool2d(x, 2)
        return DiscOutput(scores=scores, features=features)


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_kernel(window: int, sigma: float, dtype) -> torch.Tensor:
    coords = torch.arange(window, dtype=dtype) - (window - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(
    x: torch.Tensor,
    y: torch.Tensor,
    window: int = 11,
    sigma: float = 1.5,
    data_range: float = 1.0,
) -> torch.Tensor:
    """Mean structural similarity with a Gaussian window (valid padding)."""
    if x.shape != y.shape:
        raise ValueError("ssim inputs must have the same shape")
    c = x.shape[1]
    kernel = _gaussian_kernel(window, sigma, x.dtype).expand(c, 1, window, window)
    k1, k2 = 0.01, 0.03
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    mu_x = F.conv2d(x, kernel, groups=c)
    mu_y = F.conv2d(y, kernel, groups=c)
    xx = F.conv2d(x * x, kernel, groups=c) - mu_x * mu_x
    yy = F.conv2d(y * y, kernel, groups=c) - mu_y * mu_y
    xy = F.conv2d(x * y, kernel, groups=c) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return (num / den).mean()


# ---------------------------------------------------------------------------
# losses


def pyramid_l1(real: torch.Tensor, fake: torch.Tensor, levels: int = 3) -> torch.Tensor:
    """L1 averaged over a downsampling pyramid (stands in for a perceptual loss)."""
    total = (real - fake).abs().mean()
    r, f = real, fake
    for _ in range(levels - 1):
        r = F.avg_pool2d(r, 2)
        f = F.avg_pool2d(f, 2)
        total = total + (r - f).abs().mean()
    return total / levels


def feature_matching(real_out: DiscOutput, fake_out: DiscOutput) -> torch.Tensor:
    total = 0.0
    count = 0
    for fr, ff in zip(real_out.features, fake_out.features):
        for a, b in zip(fr, ff):
            total = total + (a.detach() - b).abs().mean()
            count += 1
    return total / max(count, 1)


def generator_losses(
    real: torch.Tensor,
    fake: torch.Tensor,
    disc_real: DiscOutput,
    disc_fake: DiscOutput,
):
    """Least-squares adversarial term plus reconstruction terms.

    Returns a dict of unweighted components; the caller applies weights.
    """
    adv = sum(((s - 1.0) ** 2).mean() for s in disc_fake.scores) / len(disc_fake.scores)
    l1 = pyramid_l1(real, fake)
    ssim_term = 1.0 - ssim(real, fake)
    fm = feature_matching(disc_real, disc_fake)
    return {"adv": adv, "l1": l1, "ssim": ssim_term, "fm": fm}


def discriminator_loss(disc_real: DiscOutput, disc_fake: DiscOutput) -> torch.Tensor:
    total = 0.0
    for sr, sf in zip(disc_real.scores, disc_fake.scores):
        total = total + 0.5 * (((sr - 1.0) ** 2).mean() + (sf**2).mean())
    return total / len(disc_real.scores)
