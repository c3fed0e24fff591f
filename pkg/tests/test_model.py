import numpy as np
import pytest

from ambiup.ambi import AmbisonicSignal
from ambiup.audio_io import load_checkpoint, save_checkpoint
from ambiup.model import (REFERENCE_PARAMETER_COUNT, ModelConfig, build_model, parameter_count,
                          parameter_report, parameter_shapes)
from ambiup.training import TrainConfig, train
from oracles import enumerate_parameter_sizes, numerical_gradient, relative_error


def test_init_is_seed_deterministic(tiny_config):
    a = build_model(tiny_config, init_seed=3).state_dict()
    b = build_model(tiny_config, init_seed=3).state_dict()
    c = build_model(tiny_config, init_seed=4).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_count_matches_enumeration(tiny_config):
    model = build_model(tiny_config)
    assert model.parameter_count == parameter_count(tiny_config)
    assert enumerate_parameter_sizes(model) == parameter_count(tiny_config)
    assert parameter_count(tiny_config) == 1137


def test_default_count_vs_reference():
    report = parameter_report(ModelConfig())
    assert report["reference_count"] == REFERENCE_PARAMETER_COUNT
    shapes = parameter_shapes(ModelConfig())
    assert report["parameter_count"] == sum(int(np.prod(s)) for s in shapes.values())


def test_dilation_schedule():
    cfg = ModelConfig(x_blocks=3, repeats=2)
    assert cfg.dilations() == [1, 2, 4, 1, 2, 4]


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(p_kernel=4)
    with pytest.raises(ValueError):
        ModelConfig(enc_stride=100, kernel_len=48)
    with pytest.raises(KeyError, match="n_enc"):
        ModelConfig.from_dict({"kernel_len": 48})
    with pytest.raises(KeyError):
        ModelConfig.from_dict({"bogus": 1}, defaults=ModelConfig())


def test_for_sample_rate_scales_kernel():
    assert ModelConfig.for_sample_rate(16000).kernel_len == 16
    cfg = ModelConfig.for_sample_rate(48000)
    assert (cfg.kernel_len, cfg.enc_stride) == (48, 24)


@pytest.mark.parametrize("T", [48, 97, 1000, 4801])
def test_output_shape_matches_input_length(toy_config, T):
    model = build_model(toy_config)
    x = np.random.default_rng(0).standard_normal((4, T)).astype(np.float32)
    assert model(x).shape == (16, T)
    assert model(x[None]).shape == (1, 16, T)


def test_rejects_wrong_channel_count(tiny_config):
    with pytest.raises(ValueError):
        build_model(tiny_config)(np.zeros((3, 64)))


def test_zero_input_gives_zero_output(toy_config):
    y = build_model(toy_config)(np.zeros((4, 2000), dtype=np.float32))
    assert not np.any(y)


def test_masks_are_bounded(tiny_config):
    model = build_model(tiny_config)
    x = 100 * np.random.default_rng(1).standard_normal((2, 4, 64))
    _, tape = model.forward(x)
    assert np.all(np.abs(tape["masks"]) <= 1.0)


def test_upscale_signal(toy_config):
    model = build_model(toy_config)
    foa = AmbisonicSignal(np.random.default_rng(2).standard_normal((4, 500)), 1)
    hoa = model.upscale(foa)
    assert hoa.order == 3 and hoa.data.shape == (16, 500)
    with pytest.raises(ValueError):
        model.upscale(AmbisonicSignal(np.zeros((16, 500)), 3))


@pytest.mark.parametrize("mask_mode", ["mask", "direct"])
def test_end_to_end_gradient(tiny_config, mask_mode):
    from dataclasses import replace

    cfg = replace(tiny_config, mask_mode=mask_mode)
    model = build_model(cfg, init_seed=1, dtype=np.float64)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 64))
    w = rng.standard_normal((16, 64))

    def objective():
        return float(np.sum(w * model(x)))

    y, tape = model.forward(x)
    model.zero_grad()
    dx = model.backward(w, tape)
    worst = relative_error(dx, numerical_gradient(objective, x))
    for p in model.params.values():
        worst = max(worst, relative_error(p.grad, numerical_gradient(objective, p.value)))
    assert worst < 1e-4


def test_checkpoint_round_trip_is_bit_identical(tmp_path, toy_config):
    model = build_model(toy_config, init_seed=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    assert loaded.config == toy_config
    x = np.random.default_rng(0).standard_normal((4, 1200)).astype(np.float32)
    assert np.array_equal(model(x), loaded(x))


def _pair(T, seed=0):
    from ambiup.ambi import encode_point_source
    from ambiup.grids import Direction
    from ambiup.scene import pink_noise

    s = pink_noise(T / 48000, 48000, seed=seed)
    d = Direction(0.6, 0.2)
    return (encode_point_source(s, d, 1).data.astype(np.float32),
            encode_point_source(s, d, 3).data.astype(np.float32))


def test_zero_learning_rate_gives_constant_trace(tiny_config):
    model = build_model(tiny_config)
    pair = _pair(256)
    result = train(model, [pair], TrainConfig(steps=5, lr=0.0, batch_size=1,
                                              segment_seconds=1.0))
    assert len(set(result.losses)) == 1


def test_training_is_deterministic(tiny_config):
    pairs = [_pair(300, seed=i) for i in range(3)]
    cfg = TrainConfig(steps=10, lr=1e-3, batch_size=2, segment_seconds=0.004, seed=7)
    a = train(build_model(tiny_config), pairs, cfg)
    b = train(build_model(tiny_config), pairs, cfg)
    assert a.losses == b.losses
    assert a.digest() == b.digest()


@pytest.mark.slow
def test_overfits_single_pair(toy_config):
    model = build_model(toy_config)
    pair = _pair(2400)
    result = train(model, [pair], TrainConfig(steps=2000, lr=1e-3, batch_size=1,
                                              segment_seconds=1.0))
    assert result.losses[-1] < 0.1 * result.losses[0]
