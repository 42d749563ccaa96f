import json
import subprocess
import sys

import numpy as np
import pytest

from vidstyle.cli import main
from vidstyle.config import RunConfig
from vidstyle.flow import ZeroFlow
from vidstyle.formats import read_mask_dir, read_tensor, write_mask, write_mask_dir, write_tensor
from vidstyle.pipeline import StageTimer, run_pipeline
from vidstyle.synthetic import first_frame_mask, latent_video, style_latent


@pytest.fixture
def inputs(tmp_path):
    write_tensor(latent_video(4, 4, 16, 16), tmp_path / "video.npy")
    write_tensor(style_latent(4, 16, 16, seed=1), tmp_path / "style.npy")
    write_mask(first_frame_mask(16, 16), tmp_path / "m1.png")
    (tmp_path / "cfg.json").write_text(json.dumps({"T": 8, "k": 5}))
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_pipeline_deterministic_small():
    video = latent_video(3, 4, 16, 16)
    style = style_latent(4, 16, 16, seed=2)
    cfg = RunConfig(T=6, k=5)
    a = run_pipeline(video, style, cfg, first_mask=first_frame_mask(16, 16))
    b = run_pipeline(video, style, cfg, first_mask=first_frame_mask(16, 16))
    assert np.array_equal(a.edited, b.edited)
    assert a.masks.shape == (3, 4, 4) and a.latent_masks.shape == (3, 16, 16)
    inv = run_pipeline(video, style, cfg, masks=a.masks, invert_masks=True, flow_source=ZeroFlow())
    assert np.array_equal(inv.latent_masks, 1 - a.latent_masks)


def test_pipeline_requires_mask():
    with pytest.raises(ValueError):
        run_pipeline(latent_video(2, 4, 8, 8), style_latent(4, 8, 8), RunConfig(T=4))


def test_stage_timer():
    t = StageTimer()
    with t.stage("a"):
        sum(range(10000))
    t.add("a", {"x": 0.5})
    assert set(t.stages) == {"a", "a.x"} and t.top_level_total() == t.stages["a"]


def test_invert_cli(inputs, capsys):
    code, _, err = run(capsys, "invert", "--video", inputs / "video.npy", "--out", inputs / "inv")
    assert code == 0
    manifest = json.loads((inputs / "inv" / "manifest.json").read_text())
    assert manifest["t0"] == 20 and manifest["resolved_steps"]["t0"] == 20
    assert manifest["config"]["T"] == 50 and manifest["seed"] == 0
    assert read_tensor(inputs / "inv" / "trajectory.npy").shape == (51, 4, 4, 16, 16)
    assert read_tensor(inputs / "inv" / "features.npy").shape == (4, 4, 4, 32)
    assert '"event": "invert done"' in err


def test_missing_input_is_usage_error(inputs, capsys):
    code, _, err = run(capsys, "invert", "--video", inputs / "nope.npy", "--out", inputs / "x")
    assert code == 2 and "input not found" in err
    with pytest.raises(SystemExit) as exc:
        main(["stylize"])
    assert exc.value.code == 2


def test_bad_config_and_bad_data(inputs, capsys):
    (inputs / "bad.json").write_text(json.dumps({"tau4": 0.7, "tau5": 0.5}))
    code, _, err = run(capsys, "invert", "--video", inputs / "video.npy", "--out", inputs / "x",
                       "--config", inputs / "bad.json")
    assert code == 2 and "τ4<τ5 violated" in err
    write_tensor(np.zeros((3, 3)), inputs / "flat.npy")
    code, _, _ = run(capsys, "invert", "--video", inputs / "flat.npy", "--out", inputs / "x")
    assert code == 3
    (inputs / "junk.npy").write_bytes(b"junk")
    code, _, _ = run(capsys, "invert", "--video", inputs / "junk.npy", "--out", inputs / "x")
    assert code == 3


def test_env_config(inputs, capsys, monkeypatch):
    monkeypatch.setenv("VIDSTYLE_CONFIG", str(inputs / "cfg.json"))
    code, _, _ = run(capsys, "invert", "--video", inputs / "video.npy", "--out", inputs / "inv",
                     "--no-trajectory")
    assert code == 0
    m = json.loads((inputs / "inv" / "manifest.json").read_text())
    assert m["config"]["T"] == 8 and m["t0"] == 3
    assert not (inputs / "inv" / "trajectory.npy").exists()
    (inputs / "other.json").write_text(json.dumps({"T": 10}))
    run(capsys, "invert", "--video", inputs / "video.npy", "--out", inputs / "inv2", "--config",
        inputs / "other.json")
    assert json.loads((inputs / "inv2" / "manifest.json").read_text())["config"]["T"] == 10


def test_propagate_and_eval(inputs, capsys):
    run(capsys, "invert", "--video", inputs / "video.npy", "--out", inputs / "inv", "--config", inputs / "cfg.json")
    code, out, _ = run(capsys, "propagate-mask", "--features", inputs / "inv" / "features.npy",
                       "--mask", inputs / "m1.png", "--out", inputs / "masks", "--seed", 7, "--k", 3)
    assert code == 0
    doc = json.loads(out)
    assert doc["seed"] == 7 and doc["k"] == 3 and doc["frames"] == 4 and doc["grid"] == [4, 4]
    masks = read_mask_dir(inputs / "masks")
    assert masks.shape == (4, 4, 4)
    # ground truth at full resolution: predictions are upsampled before scoring
    write_mask_dir(np.stack([np.kron(m, np.ones((4, 4), np.uint8)) for m in masks]), inputs / "gt")
    code, out, _ = run(capsys, "eval-mask", "--pred", inputs / "masks", "--gt", inputs / "gt")
    assert code == 0 and json.loads(out) == {"iou": 1.0, "dice": 1.0, "frames": 4}
    write_mask_dir(masks[:2], inputs / "short")
    code, _, _ = run(capsys, "eval-mask", "--pred", inputs / "short", "--gt", inputs / "gt")
    assert code == 3


def test_stylize_and_chain(inputs, capsys):
    write_mask_dir(np.stack([first_frame_mask(16, 16)] * 4), inputs / "masks")
    common = ["--config", inputs / "cfg.json", "--style", inputs / "style.npy", "--masks", inputs / "masks"]
    code, _, err = run(capsys, "stylize", "--video", inputs / "video.npy", "--out", inputs / "e1.npy",
                       "--frames-out", inputs / "frames", *common)
    assert code == 0
    m = json.loads((inputs / "e1.npy.manifest.json").read_text())
    assert m["smooth"] is True and "stylization.smoothing" in m["timings"]
    top = sum(v for k, v in m["timings"].items() if "." not in k)
    assert top >= 0.95 * m["wall_seconds"]
    assert len(list((inputs / "frames").glob("*.png"))) == 4
    # second pass stylizes the region kept by the first, with another style
    write_tensor(style_latent(4, 16, 16, seed=9), inputs / "style2.npy")
    code, _, _ = run(capsys, "stylize", "--video", inputs / "e1.npy", "--out", inputs / "e2.npy",
                     "--invert-masks", "--no-smooth", "--config", inputs / "cfg.json",
                     "--style", inputs / "style2.npy", "--masks", inputs / "masks")
    assert code == 0
    m2 = json.loads((inputs / "e2.npy.manifest.json").read_text())
    assert m2["invert_masks"] is True and m2["smooth"] is False
    assert not any("smoothing" in k for k in m2["timings"])
    e1, e2 = read_tensor(inputs / "e1.npy"), read_tensor(inputs / "e2.npy")
    assert e1.shape == e2.shape == (4, 4, 16, 16)


def test_stylize_replay_is_bitwise(inputs, capsys):
    write_mask_dir(np.stack([first_frame_mask(16, 16)] * 4), inputs / "masks")
    args = ["stylize", "--video", inputs / "video.npy", "--style", inputs / "style.npy",
            "--masks", inputs / "masks", "--config", inputs / "cfg.json", "--quiet"]
    run(capsys, *args, "--out", inputs / "a.npy")
    run(capsys, *args, "--out", inputs / "b.npy")
    assert (inputs / "a.npy").read_bytes() == (inputs / "b.npy").read_bytes()
    ma = json.loads((inputs / "a.npy.manifest.json").read_text())
    mb = json.loads((inputs / "b.npy.manifest.json").read_text())
    assert ma["inputs"] == mb["inputs"]


def test_smooth_cli(inputs, capsys):
    from vidstyle.formats import read_frame_dir, write_frame_dir
    from vidstyle.synthetic import shifted_pattern
    write_frame_dir(shifted_pattern(3, 16, 16), inputs / "frames")
    code, out, _ = run(capsys, "smooth", "--frames", inputs / "frames", "--out", inputs / "sm", "--m", 1,
                       "--iters", 20)
    assert code == 0 and json.loads(out)["m"] == 1
    assert read_frame_dir(inputs / "sm").shape == (3, 16, 16, 3)


def test_console_script_usage_exit():
    proc = subprocess.run([sys.executable, "-m", "vidstyle.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
