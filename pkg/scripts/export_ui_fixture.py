"""Regenerates the frontend test fixture from the service's own payloads.

The fixture bundles a scene payload (exactly as POST /api/scenes returns it)
with the raw t=0 instance map, so the UI tests can verify that client-side
mask hit-testing agrees with a server-side map lookup pixel for pixel.

Usage: python3 scripts/export_ui_fixture.py [out.json]
"""

import json
import sys
import time
from pathlib import Path

from sceneshift.config import ModelConfig, SceneConfig
from sceneshift.scenes import generate_scene
from sceneshift.service import SceneHandle, scene_payload

OUT = Path(__file__).resolve().parent.parent / "frontend" / "test" / "fixtures" / "scene.json"


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else OUT
    config = SceneConfig(n_objects=4)
    scene = generate_scene(config, seed=20240)
    payload = scene_payload(
        SceneHandle(scene_id="fixture", scene=scene, created_at=time.time()),
        max_disp=ModelConfig().max_disp(scene.height, scene.width),
    )
    payload.pop("frame0")  # tests don't need the pixels, keep the file small
    fixture = {
        "payload": payload,
        "inst_map0": scene.inst_map[0].reshape(-1).tolist(),
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(fixture), encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
