"""End-to-end optimization: batching, the train step, checkpoints, resume.

Every source of randomness in a step is derived from (seed, step), so a run
is a pure function of its config and can be resumed bit-exactly from a
checkpoint holding only parameters, optimizer state and the step counter.
"""

from __future__ import annotations

import dataclasses
import struct
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .checkpoint import read_checkpoint, write_checkpoint
from .config import TrainConfig
from .errors import NumericOverflowError
from .generator import discriminator_loss, generator_losses
from .graph import build_graph, loss_vae
from .model import (
    DISC_MODULES,
    GENERATION_MODULES,
    MOTION_MODULES,
    SceneShiftModel,
    coarse_inst_map,
    context_input,
    frame0_input,
    gt_displacement_tensor,
    per_frame_gt_offsets,
    video_tensor,
)
from .motion import (
    location_map_stack_from_offsets,
    loss_fb_consistency,
    loss_flow_supervised,
    loss_motion_kl,
    loss_smoothness,
    reparameterize,
)
from .scenes import InstanceScene, MotionSpec, generate_scene, sample_motion_spec


def derive_seed(*parts: int) -> int:
    """Stable scalar seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class TrainState:
    model: SceneShiftModel
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    config: TrainConfig
    step: int
    names_g: List[str]
    names_d: List[str]

    def trainable_parameters(self):
        return [p for group in self.opt_g.param_groups for p in group["params"]]


def build_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(derive_seed(config.seed, 0xA11CE))
    model = SceneShiftModel(config.model, config.scene)
    motion_named = list(model.named_group_parameters(MOTION_MODULES))
    gen_named = list(model.named_group_parameters(GENERATION_MODULES))
    disc_named = list(model.named_group_parameters(DISC_MODULES))
    opt_g = torch.optim.Adam(
        [
            {"params": [p for _, p in motion_named], "lr": config.lr_motion},
            {"params": [p for _, p in gen_named], "lr": config.lr_generation},
        ],
        betas=config.adam_betas,
        eps=config.adam_eps,
    )
    opt_d = torch.optim.Adam(
        [p for _, p in disc_named],
        lr=config.lr_generation,
        betas=config.adam_betas,
        eps=config.adam_eps,
    )
    return TrainState(
        model=model,
        opt_g=opt_g,
        opt_d=opt_d,
        config=config,
        step=0,
        names_g=[n for n, _ in motion_named] + [n for n, _ in gen_named],
        names_d=[n for n, _ in disc_named],
    )


# ---------------------------------------------------------------------------
# data sampling


def sample_training_scene(config: TrainConfig, step: int, index: int,
                          stream: int = 0) -> Tuple[InstanceScene, MotionSpec]:
    """Deterministic (scene, motion-spec) pair for one batch slot."""
    seed = derive_seed(config.seed, stream, step, index)
    rng = np.random.default_rng(seed)
    lo, hi = config.n_objects_range
    n_objects = int(rng.integers(lo, hi + 1))
    scene_cfg = dataclasses.replace(config.scene, n_objects=n_objects)
    scene = generate_scene(scene_cfg, seed=derive_seed(seed, 1))
    n_controlled = int(rng.integers(1, scene.n_instances + 1))
    spec = sample_motion_spec(scene, n_controlled, lam=1.0, seed=derive_seed(seed, 2))
    return scene, spec


def sample_batch(config: TrainConfig, step: int) -> List[Tuple[InstanceScene, MotionSpec]]:
    return [
        sample_training_scene(config, step, i) for i in range(config.batch_size)
    ]


def heldout_scene(config: TrainConfig, index: int) -> InstanceScene:
    """Evaluation scenes live in a seed stream disjoint from training."""
    seed = derive_seed(config.seed, 0xE7A1, index)
    rng = np.random.default_rng(seed)
    lo, hi = config.n_objects_range
    n_objects = int(rng.integers(lo, hi + 1))
    scene_cfg = dataclasses.replace(config.scene, n_objects=n_objects)
    return generate_scene(scene_cfg, seed=derive_seed(seed, 1))


# ---------------------------------------------------------------------------
# the train step


def _check_finite(components: Dict[str, torch.Tensor]) -> None:
    for name, value in components.items():
        if not torch.isfinite(value).all():
            raise NumericOverflowError(name)


def forward_losses(
    model: SceneShiftModel,
    batch: Sequence[Tuple[InstanceScene, MotionSpec]],
    config: TrainConfig,
    torch_gen: torch.Generator,
):
    """All differentiable losses for one batch, plus the frame tensors.

    Returns (components, fake_frames, real_frames, frame0_rep). The VAE
    teacher path conditions the graph on ground-truth motions; location maps
    are teacher-forced from per-frame barycenter displacements.
    """
    w = config.weights
    T = batch[0][0].T

    x0 = torch.from_numpy(np.stack([frame0_input(s) for s, _ in batch]))
    code = model.appearance(x0)

    vae_recon = torch.zeros(())
    vae_kl = torch.zeros(())
    for b, (scene, spec) in enumerate(batch):
        graph = build_graph(
            code.app_map[b], coarse_inst_map(scene), spec,
            expected_ids=scene.instance_ids,
        )
        d_gt = gt_displacement_tensor(scene)
        latent = model.graph_vae.encode(graph, d_gt, generator=torch_gen)
        d_hat = model.graph_vae.decode(graph, latent.samples)
        _, parts = loss_vae(d_gt, d_hat, latent, beta=w.vae_beta)
        vae_recon = vae_recon + parts["recon"] / len(batch)
        vae_kl = vae_kl + parts["kl"] / len(batch)

    maps = np.stack(
        [
            location_map_stack_from_offsets(s.inst_map[0], per_frame_gt_offsets(s))
            for s, _ in batch
        ]
    )
    traj = model.traj_encoder(torch.from_numpy(maps).unsqueeze(1))

    ctx_in = torch.from_numpy(np.stack([context_input(s) for s, _ in batch]))
    mu_m, log_var_m = model.context_encoder(ctx_in)
    z_m = reparameterize(mu_m, log_var_m, generator=torch_gen)
    context_kl = loss_motion_kl(mu_m, log_var_m)

    vol = model.flow_decoder(code.app_map, traj, z_m, model.max_disp)

    gt_fwd = torch.from_numpy(np.stack([s.flows_fwd.transpose(0, 3, 1, 2) for s, _ in batch]))
    gt_bwd = torch.from_numpy(np.stack([s.flows_bwd.transpose(0, 3, 1, 2) for s, _ in batch]))
    gt_of = torch.from_numpy(np.stack([s.occ_fwd[:, None] for s, _ in batch]))
    gt_ob = torch.from_numpy(np.stack([s.occ_bwd[:, None] for s, _ in batch]))
    flow_sup, flow_parts = loss_flow_supervised(vol, gt_fwd, gt_bwd, gt_of, gt_ob)
    fb = loss_fb_consistency(vol)
    frame0 = x0[:, :3]
    smooth = loss_smoothness(vol, frame0, w.smoothness_alpha)

    bsz = len(batch)
    h, wd = batch[0][0].height, batch[0][0].width
    flows_b = vol.flow_bwd.reshape(bsz * T, 2, h, wd)
    occs_b = vol.occ_bwd.reshape(bsz * T, 1, h, wd)
    gen_rep = (
        code.gen_features.unsqueeze(1)
        .expand(bsz, T, *code.gen_features.shape[1:])
        .reshape(bsz * T, *code.gen_features.shape[1:])
    )
    fake = model.synthesizer(gen_rep, flows_b, occs_b)

    video = torch.from_numpy(np.stack([video_tensor(s) for s, _ in batch]))
    real = video[:, 1:].reshape(bsz * T, 3, h, wd)
    frame0_rep = (
        frame0.unsqueeze(1).expand(bsz, T, 3, h, wd).reshape(bsz * T, 3, h, wd)
    )

    components = {
        "vae_recon": vae_recon,
        "vae_kl": vae_kl,
        "flow_sup": flow_sup,
        "flow_l1_fwd": flow_parts["l1_fwd"],
        "flow_l1_bwd": flow_parts["l1_bwd"],
        "fb": fb,
        "smooth": smooth,
        "context_kl": context_kl,
    }
    return components, fake, real, frame0_rep


def train_step(state: TrainState) -> Dict[str, float]:
    """One optimization step: discriminator update, then generator side."""
    config = state.config
    w = config.weights
    model = state.model
    batch = sample_batch(config, state.step)
    torch_gen = torch.Generator().manual_seed(derive_seed(config.seed, 0x57E9, state.step))

    components, fake, real, frame0_rep = forward_losses(model, batch, config, torch_gen)

    if w.adversarial > 0:
        state.opt_d.zero_grad(set_to_none=True)
        d_real = model.discriminator(frame0_rep, real)
        d_fake = model.discriminator(frame0_rep, fake.detach())
        d_loss = discriminator_loss(d_real, d_fake)
        if not torch.isfinite(d_loss):
            raise NumericOverflowError("d_loss")
        d_loss.backward()
        nn.utils.clip_grad_norm_(
            [p for g in state.opt_d.param_groups for p in g["params"]], config.grad_clip
        )
        state.opt_d.step()
        components["d_loss"] = d_loss.detach()

    if w.adversarial > 0 or w.feature_matching > 0:
        with torch.no_grad():
            d_real_ref = model.discriminator(frame0_rep, real)
        d_fake_for_g = model.discriminator(frame0_rep, fake)
        gen_parts = generator_losses(real, fake, d_real_ref, d_fake_for_g)
    else:
        from .generator import pyramid_l1, ssim

        gen_parts = {
            "adv": torch.zeros(()),
            "fm": torch.zeros(()),
            "l1": pyramid_l1(real, fake),
            "ssim": 1.0 - ssim(real, fake),
        }
    components.update(gen_parts)
    _check_finite(components)

    total = (
        w.motion_vae * (components["vae_recon"] + w.vae_beta * components["vae_kl"])
        + w.flow_supervised * components["flow_sup"]
        + w.flow_consistency * components["fb"]
        + w.smoothness * components["smooth"]
        + w.context_kl * components["context_kl"]
        + w.l1 * components["l1"]
        + w.ssim * components["ssim"]
        + w.feature_matching * components["fm"]
        + w.adversarial * components["adv"]
    )
    if not torch.isfinite(total):
        raise NumericOverflowError("total")

    state.opt_g.zero_grad(set_to_none=True)
    # discriminator grads from the adversarial term are discarded, not applied
    state.opt_d.zero_grad(set_to_none=True)
    total.backward()
    nn.utils.clip_grad_norm_(state.trainable_parameters(), config.grad_clip)
    state.opt_g.step()

    state.step += 1
    report = {k: float(v.detach()) for k, v in components.items()}
    report["total"] = float(total.detach())
    return report


# ---------------------------------------------------------------------------
# checkpointing


def _optimizer_tensors(opt: torch.optim.Adam, names: List[str], prefix: str):
    tensors = {}
    params = [p for group in opt.param_groups for p in group["params"]]
    if len(params) != len(names):
        raise ValueError("optimizer/param-name mismatch")
    for name, p in zip(names, params):
        st = opt.state.get(p)
        if not st:
            continue
        tensors[f"{prefix}/{name}/exp_avg"] = st["exp_avg"]
        tensors[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"]
        step_t = st["step"]
        if not isinstance(step_t, torch.Tensor):
            step_t = torch.tensor(float(step_t))
        tensors[f"{prefix}/{name}/step"] = step_t
    return tensors


def save_state(state: TrainState, path) -> None:
    tensors = {f"model/{k}": v for k, v in state.model.state_dict().items()}
    tensors.update(_optimizer_tensors(state.opt_g, state.names_g, "optg"))
    tensors.update(_optimizer_tensors(state.opt_d, state.names_d, "optd"))
    rng_blob = struct.pack("<q", state.config.seed)
    write_checkpoint(path, state.config, state.step, tensors, rng_blob)


def _restore_optimizer(opt: torch.optim.Adam, names: List[str],
                       tensors: Dict[str, torch.Tensor], prefix: str):
    params = [p for group in opt.param_groups for p in group["params"]]
    for name, p in zip(names, params):
        key = f"{prefix}/{name}/exp_avg"
        if key not in tensors:
            continue
        opt.state[p] = {
            "step": tensors[f"{prefix}/{name}/step"].clone(),
            "exp_avg": tensors[key].clone(),
            "exp_avg_sq": tensors[f"{prefix}/{name}/exp_avg_sq"].clone(),
        }


def load_state(path) -> TrainState:
    config, step, tensors, _ = read_checkpoint(path)
    state = build_state(config)
    model_sd = {
        k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")
    }
    state.model.load_state_dict(model_sd)
    _restore_optimizer(state.opt_g, state.names_g, tensors, "optg")
    _restore_optimizer(state.opt_d, state.names_d, tensors, "optd")
    state.step = step
    return state


def load_model(path) -> Tuple[SceneShiftModel, TrainConfig, int]:
    """Load just the model for inference/evaluation."""
    config, step, tensors, _ = read_checkpoint(path)
    torch.manual_seed(derive_seed(config.seed, 0xA11CE))
    model = SceneShiftModel(config.model, config.scene)
    model_sd = {
        k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")
    }
    model.load_state_dict(model_sd)
    model.eval()
    return model, config, step


# ---------------------------------------------------------------------------
# the loop


def train(
    config: TrainConfig,
    checkpoint_path=None,
    resume_from=None,
    log: Optional[Callable[[str], None]] = print,
    on_step: Optional[Callable[[int, Dict[str, float]], None]] = None,
) -> TrainState:
    if resume_from is not None:
        state = load_state(resume_from)
    else:
        state = build_state(config)
    t0 = time.monotonic()
    while state.step < config.steps:
        report = train_step(state)
        step = state.step
        if on_step is not None:
            on_step(step, report)
        if log is not None and (step % config.log_every == 0 or step == config.steps):
            parts = " ".join(
                f"{k}={report[k]:.4f}"
                for k in ("total", "flow_sup", "vae_recon", "l1", "adv")
                if k in report
            )
            log(f"step={step} {parts} elapsed={time.monotonic() - t0:.0f}s")
        if (
            checkpoint_path is not None
            and config.checkpoint_every > 0
            and step % config.checkpoint_every == 0
        ):
            save_state(state, checkpoint_path)
    if checkpoint_path is not None:
        save_state(state, checkpoint_path)
    return state
