"""Controllability study on a trained checkpoint.

Reproduces the evaluation protocol end to end: oracle / custom / custom-all
settings, the no-GCN and edgeless ablations, and the lambda response sweep.

    python3 scripts/run_ablations.py --checkpoint runs/default.c2m --scenes 100
"""

import argparse
import dataclasses
import sys

import torch

from sceneshift.evaluate import evaluate_setting, lambda_response
from sceneshift.scenes import generate_scene
from sceneshift.training import derive_seed, heldout_scene, load_model


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--scenes", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    torch.set_num_threads(torch.get_num_threads())
    model, cfg, step = load_model(args.checkpoint)
    print(f"checkpoint at step {step}")
    scenes = [heldout_scene(cfg, i) for i in range(args.scenes)]

    rows = []
    for setting, variant in [
        ("oracle", "full"),
        ("oracle", "no_gcn"),
        ("oracle", "edgeless"),
        ("custom", "full"),
        ("custom-all", "full"),
    ]:
        rep = evaluate_setting(model, scenes, setting, seed=args.seed, variant=variant)
        rows.append(rep)
        label = setting if variant == "full" else f"{setting}/{variant}"
        print(
            f"{label:<20} NDE {rep.mean_nde:6.3f}   Acc {rep.accuracy:5.3f}   "
            f"final L1 {rep.mean_final_l1:7.4f}   tracked {rep.n_tracked}"
        )

    lam_cfg = dataclasses.replace(
        cfg.scene, velocity_range=(-1, 1), ego_range=(-1, 1), max_total_disp=10.0
    )
    lam_scenes = [
        generate_scene(lam_cfg, seed=derive_seed(321, i)) for i in range(max(args.scenes // 2, 10))
    ]
    sweep = lambda_response(model, lam_scenes, lambdas=(0.5, 1.0, 1.5), seed=5)
    print(f"lambda response: Pearson r = {sweep['pearson_r']:.3f} "
          f"({len(sweep['responses'])} samples)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
