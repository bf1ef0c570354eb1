"""Command-line interface: data generation, training, evaluation, serving."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import scene_io
from .config import TrainConfig, dump_config, load_config
from .errors import SceneShiftError
from .scenes import MotionSpec


def _add_gen_data(sub):
    p = sub.add_parser("gen-data", help="write a scene corpus to a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value config file (scene.* keys apply)")
    p.set_defaults(func=cmd_gen_data)


def cmd_gen_data(args) -> int:
    from .training import heldout_scene

    cfg = load_config(args.config) if args.config else TrainConfig()
    cfg = dataclasses.replace(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.num):
        scene = heldout_scene(cfg, i)
        scene_io.save_scene(scene, out / f"scene_{i:05d}")
    print(f"wrote {args.num} scenes to {out}")
    return 0


def _add_train(sub):
    p = sub.add_parser("train", help="train a model end to end")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, help="override config steps")
    p.add_argument("--resume", help="resume from an existing checkpoint")
    p.set_defaults(func=cmd_train)


def cmd_train(args) -> int:
    from .training import train

    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    train(cfg, checkpoint_path=args.out, resume_from=args.resume)
    print(f"checkpoint written to {args.out}")
    return 0


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on a scene corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument(
        "--setting", choices=["oracle", "custom", "custom-all"], default="oracle"
    )
    p.add_argument(
        "--variant", choices=["full", "no-gcn", "edgeless"], default="full"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", dest="json_out", help="write the full report as JSON")
    p.set_defaults(func=cmd_eval)


def cmd_eval(args) -> int:
    from .evaluate import evaluate_setting
    from .training import load_model

    model, _, _ = load_model(args.checkpoint)
    scenes = [scene_io.load_scene(p) for p in scene_io.corpus_paths(args.corpus)]
    report = evaluate_setting(
        model,
        scenes,
        args.setting,
        seed=args.seed,
        variant=args.variant.replace("-", "_"),
    )
    if args.json_out:
        Path(args.json_out).write_text(report.to_json(), encoding="utf-8")
    print(report.table())
    return 0


def _add_generate(sub):
    p = sub.add_parser("generate", help="generate frames for a scene + motion file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True, help="scene directory")
    p.add_argument("--motions", required=True,
                   help='JSON file: [{"instance_id": 1, "dx": 5, "dy": 0}, ...]')
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--gif", action="store_true", help="also write animation.gif")
    p.add_argument("--dump-flows", action="store_true",
                   help="write predicted flows as C2MF rasters")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)


def cmd_generate(args) -> int:
    from PIL import Image

    from .model import infer
    from .training import load_model

    model, _, _ = load_model(args.checkpoint)
    scene = scene_io.load_scene(args.scene)
    entries = json.loads(Path(args.motions).read_text(encoding="utf-8"))
    spec = MotionSpec(
        entries=tuple(
            (int(e["instance_id"]), (float(e["dx"]), float(e["dy"]))) for e in entries
        )
    )
    spec.validate_against(scene)
    result = infer(model, scene, spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = [Image.fromarray(np.round(f * 255).astype(np.uint8)) for f in result.frames]
    for t, img in enumerate(images, start=1):
        img.save(out / f"generated_{t:02d}.png")
    with open(out / "displacements.json", "w", encoding="utf-8") as fh:
        json.dump(
            [
                {"id": i, "dx": d[0], "dy": d[1], "known": result.known[i]}
                for i, d in sorted(result.displacements.items())
            ],
            fh,
            indent=1,
        )
    if args.gif:
        first = Image.fromarray(np.round(scene.frames[0] * 255).astype(np.uint8))
        first.save(
            out / "animation.gif",
            save_all=True,
            append_images=images,
            duration=200,
            loop=0,
        )
    if args.dump_flows:
        vol = result.volume
        for t in range(vol.horizon):
            fwd = vol.flow_fwd[0, t].permute(1, 2, 0).numpy()
            bwd = vol.flow_bwd[0, t].permute(1, 2, 0).numpy()
            scene_io.write_flow(out / f"pred_flow_fwd_{t + 1:02d}.c2mf", fwd)
            scene_io.write_flow(out / f"pred_flow_bwd_{t + 1:02d}.c2mf", bwd)
    print(f"wrote {len(images)} frames to {out}")
    return 0


def _add_grad_check(sub):
    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--ops", nargs="*", help="subset of checks (default: all)")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)


def cmd_grad_check(args) -> int:
    from .gradcheck import run_grad_checks

    results = run_grad_checks(args.ops or None, tolerance=args.tolerance, seed=args.seed)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:<20} max rel err {r.max_rel_err:.3e}")
        failed |= not r.passed
    return 1 if failed else 0


def _add_serve(sub):
    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static-dir", help="directory with the UI bundle")
    p.add_argument("--max-scenes", type=int, default=64)
    p.set_defaults(func=cmd_serve)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    model = None
    step = 0
    if args.checkpoint:
        from .training import load_model

        model, _, step = load_model(args.checkpoint)
    app = create_app(
        model=model,
        checkpoint_step=step,
        max_scenes=args.max_scenes,
        static_dir=args.static_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _add_dump_config(sub):
    p = sub.add_parser("dump-config", help="print the full default config")
    p.add_argument("--config", help="apply overrides from a file first")
    p.set_defaults(func=cmd_dump_config)


def cmd_dump_config(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    sys.stdout.write(dump_config(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sceneshift",
        description="Sparse-motion-controlled video generation on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen_data(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_generate(sub)
    _add_grad_check(sub)
    _add_serve(sub)
    _add_dump_config(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SceneShiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
