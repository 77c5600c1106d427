import json

import pytest

from tryon_diffusion.cli import main

TINY = {"height": 32, "width": 32, "codec_factor": 4, "widths": [8, 16], "heads": 2, "groups": 4, "embed_dim": 16,
        "pose_channels": [4, 4, 4, 8], "frames": 2, "ckpt_every": 2, "steps": 3, "window": 4, "stride": 2}


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["synth-data", "--config", str(cfg), "--out", str(tmp_path / "data"),
                 "--records", "2", "--frames", "3"]) == 0
    return tmp_path, cfg


def test_train_infer_eval(workspace, capsys):
    tmp, cfg = workspace
    manifest = str(tmp / "data/manifest.json")
    assert main(["train", "--config", str(cfg), "--manifest", manifest, "--out", str(tmp / "ck"),
                 "--steps", "3"]) == 0
    assert sorted(p.name for p in (tmp / "ck").iterdir()) == [
        "checkpoint_000002.safetensors", "checkpoint_000003.safetensors", "loss.csv"]
    ckpt = str(tmp / "ck/checkpoint_000003.safetensors")
    assert main(["infer", "--checkpoint", ckpt, "--manifest", manifest, "--record", "0001",
                 "--garment", "alt", "--window", "2", "--stride", "1", "--out", str(tmp / "gen")]) == 0
    assert len(list((tmp / "gen").glob("*.png"))) == 3
    assert "sliding-window" in capsys.readouterr().out
    assert main(["eval", "--generated", str(tmp / "gen"), "--reference",
                 str(tmp / "data/records/0001/swapped"), "--report", str(tmp / "r.json")]) == 0
    report = json.loads((tmp / "r.json").read_text())
    assert set(report) >= {"ssim_mean", "ssim_std", "vfid", "clip_counts", "extractor_id"}
    assert report["clip_counts"] == {"generated": 1, "reference": 1}


def test_eval_identical_directories(workspace):
    tmp, _ = workspace
    video = str(tmp / "data/records/0000/video")
    assert main(["eval", "--generated", video, "--reference", video, "--report", str(tmp / "r.json")]) == 0
    report = json.loads((tmp / "r.json").read_text())
    assert report["ssim_mean"] == 1.0 and report["vfid"] <= 1e-6


def test_eval_clip_count_mismatch(workspace, capsys):
    tmp, _ = workspace
    rc = main(["eval", "--generated", str(tmp / "data/records/0000/video"),
               "--reference", str(tmp / "data/records/0000")])
    assert rc == 1


def test_unknown_config_key_fails_before_side_effects(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rate": 1e-3}))
    assert main(["synth-data", "--config", str(bad), "--out", str(tmp_path / "out")]) == 1
    assert not (tmp_path / "out").exists()
    assert "learning_rate" in capsys.readouterr().err


def test_env_config_is_used_and_flags_override(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "env.toml"
    cfg.write_text("lr = 0.5\nframes = 3\n")
    monkeypatch.setenv("TRYON_CONFIG", str(cfg))
    assert main(["inspect", "--seed", "7"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["config"]["lr"] == 0.5 and info["config"]["frames"] == 3 and info["config"]["seed"] == 7


def test_usage_errors_exit_one(workspace, capsys):
    tmp, _ = workspace
    assert main([]) == 1
    assert main(["train"]) == 1
    assert main(["bogus"]) == 1
    manifest = str(tmp / "data/manifest.json")
    assert main(["infer", "--checkpoint", str(tmp / "missing.safetensors"), "--manifest", manifest,
                 "--record", "0", "--out", str(tmp / "o")]) == 1


def test_invalid_window_is_rejected(workspace):
    tmp, cfg = workspace
    manifest = str(tmp / "data/manifest.json")
    assert main(["train", "--config", str(cfg), "--manifest", manifest, "--out", str(tmp / "ck"),
                 "--steps", "1"]) == 0
    ckpt = str(tmp / "ck/checkpoint_000001.safetensors")
    assert main(["infer", "--checkpoint", ckpt, "--manifest", manifest, "--record", "0",
                 "--stride", "9", "--out", str(tmp / "o")]) == 1
    assert main(["infer", "--checkpoint", ckpt, "--manifest", manifest, "--record", "nope",
                 "--out", str(tmp / "o")]) == 1


def test_inspect_checkpoint_and_manifest(workspace, capsys):
    tmp, cfg = workspace
    manifest = str(tmp / "data/manifest.json")
    assert main(["inspect", "--manifest", manifest]) == 0
    assert json.loads(capsys.readouterr().out)["records"] == 2
    assert main(["train", "--config", str(cfg), "--manifest", manifest, "--out", str(tmp / "ck"),
                 "--steps", "1"]) == 0
    capsys.readouterr()
    assert main(["inspect", "--checkpoint", str(tmp / "ck/checkpoint_000001.safetensors")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["unet_in_channels"] == 2 * 48 + 1
    assert info["attention_sites"] == ["down.0", "down.1", "mid", "up.1", "up.0"]


def test_inspect_toy_profile_input_channels(capsys):
    assert main(["inspect", "--profile", "toy"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["unet_in_channels"] == 25
    assert len(info["attention_sites"]) == 5
