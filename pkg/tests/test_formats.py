import json

import numpy as np
import pytest

from vidstyle.config import RunConfig, config_to_dict, dump_config, load_config
from vidstyle.errors import ConfigError, FormatError
from vidstyle.formats import (FlowField, read_flo, read_frame_dir, read_mask, read_mask_dir,
                              read_tensor, write_flo, write_frame_dir, write_mask, write_mask_dir,
                              write_tensor)


def test_tensor_ramp_round_trip(tmp_path):
    t = np.arange(6, dtype=np.float64).reshape(2, 3) / 7
    write_tensor(t, tmp_path / "a.npy")
    back = read_tensor(tmp_path / "a.npy")
    assert back.dtype == t.dtype and back.shape == t.shape
    assert back.tobytes() == t.tobytes()


def test_tensor_float32_widening(tmp_path):
    t = (np.arange(12, dtype=np.float32) / 3).reshape(3, 4)
    write_tensor(t, tmp_path / "a.npy")
    back = read_tensor(tmp_path / "a.npy", np.float64)
    assert back.dtype == np.float64
    assert np.array_equal(back.astype(np.float32), t)


def test_tensor_readable_by_numpy(tmp_path, rng):
    t = rng.standard_normal((2, 3, 4))
    write_tensor(t, tmp_path / "a.npy")
    assert np.array_equal(np.load(tmp_path / "a.npy"), t)
    np.save(tmp_path / "b.npy", t)
    assert np.array_equal(read_tensor(tmp_path / "b.npy"), t)


def test_tensor_big_endian_input(tmp_path):
    t = np.arange(4, dtype=">f8")
    np.save(tmp_path / "be.npy", t)
    assert np.array_equal(read_tensor(tmp_path / "be.npy"), [0, 1, 2, 3])


def test_tensor_truncated(tmp_path):
    write_tensor(np.ones((4, 4)), tmp_path / "a.npy")
    data = (tmp_path / "a.npy").read_bytes()
    (tmp_path / "a.npy").write_bytes(data[:-9])
    with pytest.raises(FormatError, match="payload short"):
        read_tensor(tmp_path / "a.npy")


def test_tensor_rejects_fortran_and_ints(tmp_path):
    np.save(tmp_path / "f.npy", np.asfortranarray(np.ones((3, 2))))
    with pytest.raises(FormatError, match="Fortran"):
        read_tensor(tmp_path / "f.npy")
    np.save(tmp_path / "i.npy", np.ones(3, dtype=np.int32))
    with pytest.raises(FormatError, match="dtype"):
        read_tensor(tmp_path / "i.npy")
    with pytest.raises(FormatError):
        write_tensor(np.ones(3, dtype=np.int64), tmp_path / "x.npy")
    (tmp_path / "junk.npy").write_bytes(b"hello world")
    with pytest.raises(FormatError, match="not an NPY"):
        read_tensor(tmp_path / "junk.npy")


def test_flo_zero_round_trip(tmp_path):
    write_flo(FlowField.zeros(4, 4), tmp_path / "z.flo")
    f = read_flo(tmp_path / "z.flo")
    assert f.shape == (4, 4) and not f.u.any() and not f.v.any()


def test_flo_constant_and_random_round_trip(tmp_path, rng):
    u = rng.standard_normal((5, 7)).astype(np.float32)
    v = np.ones((5, 7), np.float32)
    write_flo(FlowField(u, v), tmp_path / "r.flo")
    f = read_flo(tmp_path / "r.flo")
    assert f.u.tobytes() == u.tobytes() and f.v.tobytes() == v.tobytes()
    raw = (tmp_path / "r.flo").read_bytes()
    assert len(raw) == 12 + 8 * 35
    assert np.frombuffer(raw, "<i4", 2, 4).tolist() == [7, 5]


def test_flo_sentinel_marks_unknown(tmp_path):
    u = np.zeros((2, 2), np.float32)
    u[0, 1] = 1e9
    write_flo(FlowField(u, np.zeros_like(u)), tmp_path / "s.flo")
    assert read_flo(tmp_path / "s.flo").valid().tolist() == [[True, False], [True, True]]


def test_flo_bad_magic(tmp_path):
    write_flo(FlowField.zeros(2, 2), tmp_path / "b.flo")
    raw = bytearray((tmp_path / "b.flo").read_bytes())
    raw[:4] = np.float32(0.0).tobytes()
    (tmp_path / "b.flo").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="not a .flo file"):
        read_flo(tmp_path / "b.flo")


def test_mask_round_trip_and_threshold(tmp_path, rng):
    m = (rng.random((9, 11)) > 0.5).astype(np.uint8)
    write_mask(m, tmp_path / "m.png")
    back = read_mask(tmp_path / "m.png")
    assert back.dtype == np.uint8 and np.array_equal(back, m)
    from PIL import Image
    Image.fromarray(np.array([[0, 127, 128, 255]], np.uint8), mode="L").save(tmp_path / "g.png")
    assert read_mask(tmp_path / "g.png").tolist() == [[0, 0, 1, 1]]


def test_mask_and_frame_dirs(tmp_path, rng):
    masks = (rng.random((3, 4, 5)) > 0.5).astype(np.uint8)
    write_mask_dir(masks, tmp_path / "m")
    assert sorted(p.name for p in (tmp_path / "m").iterdir()) == ["00000.png", "00001.png", "00002.png"]
    assert np.array_equal(read_mask_dir(tmp_path / "m"), masks)
    frames = np.round(rng.random((2, 4, 5, 3)) * 255) / 255
    write_frame_dir(frames, tmp_path / "f")
    np.testing.assert_allclose(read_frame_dir(tmp_path / "f"), frames, atol=1e-12)
    with pytest.raises(FileNotFoundError):
        read_mask_dir(tmp_path / "missing")


def test_config_defaults(tmp_path):
    (tmp_path / "c.json").write_text("{}")
    cfg = load_config(tmp_path / "c.json")
    assert cfg == RunConfig()
    assert (cfg.T, cfg.gamma, cfg.beta_tau2, cfg.beta_tau3) == (50, 0.35, 0.1, 0.9)
    assert (cfg.r, cfg.k, cfg.m, cfg.n) == (0.3, 15, 2, 9)
    assert (cfg.tau0, cfg.tau1, cfg.tau2, cfg.tau3, cfg.tau4, cfg.tau5, cfg.t0) == \
        (0.1, 0.2, 0.4, 1.0, 0.5, 0.6, 0.4)
    assert cfg.latent_shift_window == (5, 10)
    assert cfg.attention_shift_window == (20, 50)
    assert cfg.smoothing_window == (25, 30)
    assert cfg.feature_step == 20


def test_config_rounding_half_up():
    cfg = RunConfig(T=25)
    # 0.1 * 25 = 2.5 -> 3, 0.5 * 25 = 12.5 -> 13
    assert cfg.latent_shift_window == (3, 5)
    assert cfg.smoothing_window == (13, 15)


def test_config_errors(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"tau4": 0.7, "tau5": 0.5}))
    with pytest.raises(ConfigError, match="τ4<τ5 violated"):
        load_config(tmp_path / "a.json")
    (tmp_path / "b.json").write_text(json.dumps({"r": 0}))
    with pytest.raises(ConfigError, match="^r:"):
        load_config(tmp_path / "b.json")
    (tmp_path / "c.json").write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError, match="bogus"):
        load_config(tmp_path / "c.json")
    (tmp_path / "d.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "d.json")
    for bad in ({"k": 0}, {"m": -1}, {"n": -1}, {"gamma": 1.5}, {"tau3": 1.2}, {"T": 2000}):
        with pytest.raises(ConfigError):
            RunConfig(**bad)


def test_config_dump_idempotent(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"T": 20, "gamma": 0.5, "hooked_layers": ["up", "down"],
                                                 "schedule": {"kind": "linear"}}))
    a = load_config(tmp_path / "c.json")
    dump_config(a, tmp_path / "d.json")
    b = load_config(tmp_path / "d.json")
    assert a == b and config_to_dict(a) == config_to_dict(b)
    assert b.hooked_layers == ("up", "down") and b.schedule.kind == "linear"
