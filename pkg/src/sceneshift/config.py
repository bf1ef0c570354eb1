"""Dataclass configs and the key=value config-file format.

Every tunable of the pipeline lives in one of three dataclasses:

* ``SceneConfig``   -- synthetic scene sampling,
* ``ModelConfig``   -- network sizes,
* ``TrainConfig``   -- optimization, loss weights, corpus.

``TrainConfig`` nests the other two. Config files are flat key=value text;
nested fields use dotted keys (``scene.height=64``, ``model.latent_dim=16``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Tuple

N_CLASSES = 3  # 1=background, 2=rectangle, 3=circle


@dataclass(frozen=True)
class SceneConfig:
    """Sampling parameters for one synthetic scene.

    Objects are solid rectangles/circles with a 1-px darker border moving
    with constant integer per-frame velocity over a smooth noise background
    that translates with the (integer) ego-motion. Integer velocities keep
    instance masks rigidly translating, which makes the analytic flows and
    occlusion maps exact.
    """

    height: int = 64
    width: int = 64
    n_objects: int = 3
    T: int = 5
    shapes: Tuple[str, ...] = ("rect", "circle")
    size_range: Tuple[int, int] = (6, 13)
    # Per-axis bound for the scene-wide group velocity (px/frame). Each
    # object moves with group velocity + per-object jitter, so motions are
    # correlated within a scene and the motion of one object is informative
    # about the others.
    velocity_range: Tuple[int, int] = (-2, 2)
    velocity_jitter: int = 1
    ego_range: Tuple[int, int] = (-1, 1)
    # Cap on |T * (velocity + ego)| per axis so displacements stay within
    # the flow decoder's representable range.
    max_total_disp: float = 15.0
    min_visible_frac: float = 0.6
    texture_seed: Optional[int] = None
    max_retries: int = 80

    def validate(self) -> None:
        if self.height < 16 or self.width < 16:
            raise ValueError("height and width must be >= 16")
        if self.height % 4 or self.width % 4:
            raise ValueError("height and width must be divisible by 4")
        if self.n_objects < 1:
            raise ValueError("n_objects must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.size_range[0] < 5:
            raise ValueError("minimum object size is 5 px (area >= 16)")
        if not all(s in ("rect", "circle") for s in self.shapes):
            raise ValueError(f"unknown shape in palette: {self.shapes}")


@dataclass(frozen=True)
class ModelConfig:
    """Network sizes for the desk-scale model."""

    feat_dim: int = 128        # per-object feature width (= appearance-map channels)
    latent_dim: int = 16       # per-object VAE latent width
    context_dim: int = 64      # global motion-context latent width
    gcn_iters: int = 3         # message-passing iterations (weights untied)
    gen_dim: int = 32          # generator feature channels at H/4
    refiner_blocks: int = 4
    disc_dim: int = 24         # discriminator base channels
    traj_dims: Tuple[int, int, int] = (32, 64, 128)   # trajectory encoder channels
    dec_dims: Tuple[int, int, int, int] = (64, 40, 24, 12)  # flow decoder, coarse->fine
    max_disp_factor: float = 0.25  # tanh flow range = factor * max(H, W)

    def max_disp(self, height: int, width: int) -> float:
        return self.max_disp_factor * max(height, width)


@dataclass(frozen=True)
class LossWeights:
    l1: float = 10.0
    ssim: float = 1.0
    feature_matching: float = 10.0
    adversarial: float = 1.0
    flow_supervised: float = 10.0
    flow_consistency: float = 1.0
    smoothness: float = 0.1
    motion_vae: float = 1.0
    vae_beta: float = 1.0        # KL weight inside the object-motion VAE loss
    context_kl: float = 0.02     # KL weight for the global motion context
    smoothness_alpha: float = 10.0


@dataclass(frozen=True)
class TrainConfig:
    lr_generation: float = 2e-4
    lr_motion: float = 1e-4
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 2
    steps: int = 20000
    grad_clip: float = 10.0
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 1000
    n_objects_range: Tuple[int, int] = (2, 4)
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)


def _coerce(value: str, typ, current):
    """Parse a key=value string into the declared field type."""
    origin = getattr(typ, "__origin__", None)
    if typ is Optional[int]:
        return None if value.lower() in ("none", "") else int(value)
    if origin is tuple:
        parts = [p.strip() for p in value.split(",") if p.strip()]
        args = typ.__args__
        elem = args[0] if args[-1] is not Ellipsis else args[0]
        if elem is str:
            return tuple(parts)
        return tuple(elem(p) for p in parts)
    if typ is bool:
        return value.lower() in ("1", "true", "yes")
    return typ(value)


def _flatten(cfg, prefix: str = ""):
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from _flatten(value, key + ".")
        else:
            yield key, f, value


def dump_config(cfg: TrainConfig) -> str:
    """Serialize a TrainConfig (with all defaults applied) to key=value text."""
    lines = []
    for key, _, value in _flatten(cfg):
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _apply(cfg, dotted: str, value: str):
    head, _, rest = dotted.partition(".")
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    if head not in fields:
        raise KeyError(f"unknown config key: {dotted}")
    current = getattr(cfg, head)
    if rest:
        if not dataclasses.is_dataclass(current):
            raise KeyError(f"{head} is not a section (at {dotted})")
        return dataclasses.replace(cfg, **{head: _apply(current, rest, value)})
    typ = fields[head].type
    if isinstance(typ, str):  # from __future__ annotations
        typ = eval(typ)  # noqa: S307 - types come from this module only
    return dataclasses.replace(cfg, **{head: _coerce(value, typ, current)})


def parse_config(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Parse key=value lines into a TrainConfig, starting from defaults.

    Blank lines and lines starting with '#' are ignored.
    """
    cfg = base or TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        cfg = _apply(cfg, key.strip(), value.strip())
    return cfg


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
