"""Sparse-motion-controlled video generation on synthetic scenes."""

__version__ = "0.1.0"

from .config import LossWeights, ModelConfig, SceneConfig, TrainConfig  # noqa: F401
from .model import SceneShiftModel, infer  # noqa: F401
from .scenes import (  # noqa: F401
    InstanceScene,
    MotionSpec,
    ObjectSpec,
    analytic_flow,
    barycenter,
    build_scene,
    generate_scene,
    gt_displacement,
    sample_motion_spec,
)
