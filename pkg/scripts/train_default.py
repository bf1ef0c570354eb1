"""Trains the default desk-scale model and tracks controllability metrics.

Writes the checkpoint to --out, logs loss lines to stdout and, every
--eval-every steps, scores the current model on a small held-out slice
(oracle setting) so convergence is visible while training runs.

Typical run:
    python3 scripts/train_default.py --out runs/default.c2m --steps 4000
"""

import argparse
import sys
import time

import torch

from sceneshift.config import TrainConfig
from sceneshift.evaluate import evaluate_setting
from sceneshift.training import build_state, heldout_scene, save_state, train_step


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, default=4000)
    parser.add_argument("--batch-size", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eval-every", type=int, default=500)
    parser.add_argument("--eval-scenes", type=int, default=20)
    args = parser.parse_args()

    torch.set_num_threads(torch.get_num_threads())
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, seed=args.seed)
    state = build_state(cfg)
    eval_scenes = [heldout_scene(cfg, 10_000 + i) for i in range(args.eval_scenes)]

    t0 = time.monotonic()
    while state.step < cfg.steps:
        report = train_step(state)
        step = state.step
        if step % 100 == 0:
            parts = " ".join(
                f"{k}={report[k]:.4f}" for k in ("total", "flow_sup", "vae_recon", "l1")
            )
            print(f"step={step} {parts} elapsed={time.monotonic() - t0:.0f}s", flush=True)
        if step % args.eval_every == 0 or step == cfg.steps:
            save_state(state, args.out)
            state.model.eval()
            rep = evaluate_setting(state.model, eval_scenes, "oracle", seed=1)
            state.model.train()
            print(
                f"eval step={step} nde={rep.mean_nde:.3f} acc={rep.accuracy:.3f} "
                f"final_l1={rep.mean_final_l1:.4f}",
                flush=True,
            )
    save_state(state, args.out)
    print(f"done: {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
