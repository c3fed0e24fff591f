import json
import struct

import numpy as np
import pytest

from ambiup.ambi import AmbisonicSignal
from ambiup.audio_io import (CheckpointError, ConfigError, GridFileError, UnsupportedWavFormat,
                             WavError, WavHeaderError, load_checkpoint, load_config, load_grid,
                             read_ambisonic, read_wav, save_checkpoint, save_config, save_grid,
                             write_ambisonic, write_wav)
from ambiup.grids import fibonacci_grid, icosahedral_design
from ambiup.model import ModelConfig, build_model


def test_float_round_trip_16_channels(tmp_path):
    data = np.random.default_rng(0).standard_normal((16, 1000)).astype(np.float32)
    write_wav(tmp_path / "x.wav", 48000, data)
    spec, back = read_wav(tmp_path / "x.wav")
    assert (spec.sample_rate, spec.channels, spec.n_frames) == (48000, 16, 1000)
    assert back.dtype == np.float32
    assert np.array_equal(back, data)


def test_truncated_file_is_a_header_error(tmp_path):
    data = np.ones((4, 100), dtype=np.float32)
    write_wav(tmp_path / "x.wav", 48000, data)
    raw = (tmp_path / "x.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(raw[:-37])
    with pytest.raises(WavHeaderError):
        read_wav(tmp_path / "t.wav")
    (tmp_path / "n.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(WavHeaderError):
        read_wav(tmp_path / "n.wav")


def test_int16_is_scaled(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "i.wav", 8000, np.array([[16384, -32768]], dtype=np.int16))
    spec, data = read_wav(tmp_path / "i.wav")
    assert spec.sample_format == "int16"
    assert data.dtype == np.float32
    np.testing.assert_array_equal(data, [[0.5], [-1.0]])


def test_unsupported_format(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "i.wav", 8000, np.zeros(10, dtype=np.int32))
    with pytest.raises(UnsupportedWavFormat):
        read_wav(tmp_path / "i.wav")


def test_ambisonic_round_trip_and_order_check(tmp_path):
    sig = AmbisonicSignal(np.random.default_rng(1).standard_normal((16, 300)), 3, 44100)
    write_ambisonic(tmp_path / "h.wav", sig)
    back = read_ambisonic(tmp_path / "h.wav")
    assert back.order == 3 and back.sample_rate == 44100
    assert np.array_equal(back.data, sig.data.astype(np.float32))
    with pytest.raises(WavError):
        read_ambisonic(tmp_path / "h.wav", order=1)


def test_grid_file_round_trip(tmp_path):
    grid = icosahedral_design()
    save_grid(tmp_path / "g.txt", grid, comment="60 points")
    back = load_grid(tmp_path / "g.txt")
    assert np.array_equal(back.vectors, grid.vectors)
    assert back.kind == "tdesign-file"


@pytest.mark.parametrize("content,match", [
    ("1 0 0\n0 1\n", "expected 3"),
    ("1 0 0\n0 1 x\n", "non-numeric"),
    ("1 0 0\n0 2 0\n", "not a unit vector"),
    ("# only comments\n", "no points"),
    ("1 0 0\n1 0 0\n", "duplicate"),
])
def test_grid_file_errors(tmp_path, content, match):
    (tmp_path / "g.txt").write_text(content)
    with pytest.raises(GridFileError, match=match):
        load_grid(tmp_path / "g.txt")


def test_grid_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_grid(tmp_path / "nope.txt")


def _checkpoint(tmp_path):
    cfg = ModelConfig(n_enc=8, kernel_len=4, enc_stride=2, n_bottleneck=4, n_conv=8,
                      x_blocks=2)
    model = build_model(cfg, init_seed=2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, {"step": 3})
    return model, path


def _rewrite_manifest(path, edit):
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + hlen])
    edit(manifest)
    header = json.dumps(manifest).encode()
    path.write_bytes(raw[:8] + struct.pack("<Q", len(header)) + header + raw[16 + hlen:])


def test_checkpoint_round_trip(tmp_path):
    model, path = _checkpoint(tmp_path)
    loaded, meta = load_checkpoint(path)
    assert meta == {"step": 3}
    for name, p in model.params.items():
        assert np.array_equal(p.value, loaded.params[name].value)


def test_checkpoint_dangling_offset(tmp_path):
    _, path = _checkpoint(tmp_path)
    _rewrite_manifest(path, lambda m: m["tensors"]["decoder.weight"].update(offset=10 ** 9))
    with pytest.raises(CheckpointError, match="decoder.weight"):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    _, path = _checkpoint(tmp_path)
    _rewrite_manifest(path, lambda m: m.update(version=99))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch(tmp_path):
    _, path = _checkpoint(tmp_path)
    _rewrite_manifest(path, lambda m: m["tensors"]["bottleneck.bias"].update(shape=[5]))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_bad_magic_and_missing(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"garbage" * 4)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_config_round_trip_and_missing_field(tmp_path):
    cfg = ModelConfig(n_enc=64)
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json") == cfg
    data = cfg.to_dict()
    del data["n_bottleneck"]
    (tmp_path / "d.json").write_text(json.dumps(data))
    with pytest.raises(ConfigError, match="n_bottleneck"):
        load_config(tmp_path / "d.json")
    assert load_config(tmp_path / "d.json", defaults=ModelConfig()).n_bottleneck == 256


def test_fibonacci_grid_file_kind(tmp_path):
    save_grid(tmp_path / "f.txt", fibonacci_grid(20))
    assert load_grid(tmp_path / "f.txt", kind="custom").kind == "custom"
