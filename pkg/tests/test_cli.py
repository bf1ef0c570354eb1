import json

import pytest

from sceneshift.cli import main
from sceneshift.config import dump_config

from conftest import tiny_train_config


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Tiny corpus + trained-for-3-steps checkpoint shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.txt"
    cfg_path.write_text(dump_config(tiny_train_config(steps=2)), encoding="utf-8")
    assert main(["gen-data", "--out", str(root / "corpus"), "--num", "2",
                 "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(root / "model.c2m"),
                 "--steps", "2"]) == 0
    return root


def test_dump_config(capsys):
    assert main(["dump-config"]) == 0
    out = capsys.readouterr().out
    assert "lr_generation=0.0002" in out
    assert "scene.height=64" in out


def test_gen_data_and_train(workdir):
    assert (workdir / "corpus" / "scene_00001" / "manifest.json").exists()
    assert (workdir / "model.c2m").exists()


def test_eval_cli(workdir, capsys):
    rc = main([
        "eval", "--checkpoint", str(workdir / "model.c2m"),
        "--corpus", str(workdir / "corpus"), "--setting", "oracle",
        "--json", str(workdir / "report.json"),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "NDE" in out
    report = json.loads((workdir / "report.json").read_text())
    assert report["setting"] == "oracle"
    assert report["n_scenes"] == 2


def test_generate_cli(workdir):
    motions = workdir / "motions.json"
    motions.write_text(json.dumps([{"instance_id": 1, "dx": 3.0, "dy": 0.0}]))
    rc = main([
        "generate", "--checkpoint", str(workdir / "model.c2m"),
        "--scene", str(workdir / "corpus" / "scene_00000"),
        "--motions", str(motions), "--out", str(workdir / "gen"),
        "--gif", "--dump-flows",
    ])
    assert rc == 0
    assert (workdir / "gen" / "generated_01.png").exists()
    assert (workdir / "gen" / "animation.gif").exists()
    disp = json.loads((workdir / "gen" / "displacements.json").read_text())
    by_id = {d["id"]: d for d in disp}
    assert by_id[1]["dx"] == 3.0 and by_id[1]["known"]
    from sceneshift.scene_io import read_flow

    flow = read_flow(workdir / "gen" / "pred_flow_bwd_01.c2mf")
    assert flow.shape == (32, 32, 2)


def test_grad_check_cli(capsys):
    rc = main(["grad-check", "--ops", "motion_kl", "ssim"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "PASS motion_kl" in out


def test_missing_file_is_clean_error(capsys):
    rc = main(["eval", "--checkpoint", "/nonexistent.c2m", "--corpus", "/tmp"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
