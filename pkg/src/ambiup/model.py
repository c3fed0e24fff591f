"""Convolutional FOA -> HOA3 upscaler.

Learned strided conv encoder over the 4 FOA channels, a temporal
convolutional network of dilated depthwise-separable blocks, a tanh output
layer giving one bounded mask per HOA3 channel over the shared encoder
latent, and a shared transposed-conv decoder.
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .ambi import AmbisonicSignal

REFERENCE_PARAMETER_COUNT = 1_428_764
MASK_MODES = ("mask", "direct")


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters.

    ``kernel_len`` defaults to 16 samples at 16 kHz, scaled to
    ``sample_rate``; ``enc_stride`` defaults to half the kernel.
    """

    n_enc: int = 384
    kernel_len: int = 48
    enc_stride: int = 24
    n_bottleneck: int = 256
    n_conv: int = 512
    p_kernel: int = 3
    x_blocks: int = 8
    repeats: int = 1
    in_channels: int = 4
    out_channels: int = 16
    sample_rate: int = 48000
    mask_mode: str = "mask"

    def __post_init__(self):
        ints = ("n_enc", "kernel_len", "enc_stride", "n_bottleneck", "n_conv",
                "p_kernel", "x_blocks", "repeats", "in_channels", "out_channels",
                "sample_rate")
        for name in ints:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.enc_stride > self.kernel_len:
            raise ValueError("enc_stride must not exceed kernel_len")
        if self.p_kernel % 2 == 0:
            raise ValueError("p_kernel must be odd for non-causal padding")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")

    @classmethod
    def for_sample_rate(cls, sample_rate, **overrides):
        """Defaults with the encoder kernel scaled from 16 samples at 16 kHz."""
        L = max(2, int(round(16 * sample_rate / 16000)))
        base = dict(kernel_len=L, enc_stride=max(1, L // 2), sample_rate=sample_rate)
        base.update(overrides)
        if "kernel_len" in overrides and "enc_stride" not in overrides:
            base["enc_stride"] = max(1, base["kernel_len"] // 2)
        return cls(**base)

    def dilations(self):
        return [2 ** (i % self.x_blocks) for i in range(self.x_blocks * self.repeats)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, defaults=None):
        """Build from a mapping; every field is required unless ``defaults``
        supplies it. Unknown keys are rejected."""
        names = [f.name for f in fields(cls)]
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise KeyError(f"unknown config field(s): {', '.join(unknown)}")
        merged = {} if defaults is None else defaults.to_dict()
        merged.update(data)
        for name in names:
            if name not in merged:
                raise KeyError(f"config is missing field '{name}'")
        return cls(**merged)


def parameter_shapes(config):
    """Ordered ``name -> shape`` table of every learned tensor."""
    n, B, H = config.n_enc, config.n_bottleneck, config.n_conv
    L, P = config.kernel_len, config.p_kernel
    shapes = OrderedDict()
    shapes["encoder.weight"] = (n, config.in_channels, L)
    shapes["input_norm.gamma"] = (n,)
    shapes["input_norm.beta"] = (n,)
    shapes["bottleneck.weight"] = (B, n, 1)
    shapes["bottleneck.bias"] = (B,)
    for i in range(config.x_blocks * config.repeats):
        pre = f"blocks.{i}."
        shapes[pre + "in.weight"] = (H, B, 1)
        shapes[pre + "in.bias"] = (H,)
        shapes[pre + "prelu1.alpha"] = (1,)
        shapes[pre + "norm1.gamma"] = (H,)
        shapes[pre + "norm1.beta"] = (H,)
        shapes[pre + "dconv.weight"] = (H, 1, P)
        shapes[pre + "dconv.bias"] = (H,)
        shapes[pre + "prelu2.alpha"] = (1,)
        shapes[pre + "norm2.gamma"] = (H,)
        shapes[pre + "norm2.beta"] = (H,)
        shapes[pre + "out.weight"] = (B, H, 1)
        shapes[pre + "out.bias"] = (B,)
    shapes["output.prelu.alpha"] = (1,)
    shapes["output.weight"] = (config.out_channels * n, B, 1)
    shapes["output.bias"] = (config.out_channels * n,)
    shapes["decoder.weight"] = (n, 1, L)
    return shapes


def parameter_count(config):
    """Closed-form number of learned scalars."""
    n, B, H = config.n_enc, config.n_bottleneck, config.n_conv
    L, P = config.kernel_len, config.p_kernel
    per_block = 2 * H * B + H * P + 6 * H + B + 2
    return (config.in_channels * n * L + 2 * n
            + n * B + B
            + config.x_blocks * config.repeats * per_block
            + 1 + config.out_channels * n * (B + 1)
            + n * L)


def _init_value(name, shape, config, rng, dtype):
    if name.endswith(".alpha"):
        return np.full(shape, 0.25, dtype=dtype)
    if name.endswith(".gamma"):
        return np.ones(shape, dtype=dtype)
    if name.endswith(".beta") or name.endswith(".bias"):
        return np.zeros(shape, dtype=dtype)
    if name == "decoder.weight":
        # each output sample sums n_enc * (L / stride) latent terms
        fan_in = shape[0] * shape[2] / config.enc_stride
    else:
        fan_in = shape[1] * shape[2]
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Model:
    """Upscaler parameters plus forward/backward passes."""

    def __init__(self, config, params, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = OrderedDict()
        shapes = parameter_shapes(config)
        missing = set(shapes) - set(params)
        extra = set(params) - set(shapes)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, shape in shapes.items():
            value = np.array(params[name], dtype=self.dtype)
            if value.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {value.shape}")
            self.params[name] = nn.Param(name, value)

    @property
    def parameter_count(self):
        return sum(p.value.size for p in self.params.values())

    def state_dict(self):
        return OrderedDict((k, p.value.copy()) for k, p in self.params.items())

    def astype(self, dtype):
        return Model(self.config, self.state_dict(), dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _p(self, name):
        return self.params[name].value

    def _padding(self, length):
        L, S = self.config.kernel_len, self.config.enc_stride
        base = length + 2 * S
        extra = (S - (base - L) % S) % S
        return S, S + extra

    def forward(self, x):
        """Map ``[N, 4, T]`` (or ``[4, T]``) to ``[N, 16, T]``; returns ``(y, tape)``."""
        cfg = self.config
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected {cfg.in_channels} input channels, got shape {x.shape}")
        T = x.shape[2]
        if T < cfg.kernel_len:
            raise ValueError(f"input has {T} samples, needs at least {cfg.kernel_len}")
        N, n, S = x.shape[0], cfg.n_enc, cfg.enc_stride
        left, right = self._padding(T)
        xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
        tape = {"T": T, "N": N, "left": left, "squeeze": squeeze}

        pre, tape["enc"] = nn.conv1d(xp, self._p("encoder.weight"), stride=S)
        enc, tape["enc_relu"] = nn.relu(pre)
        h, tape["in_norm"] = nn.global_layer_norm(
            enc, self._p("input_norm.gamma"), self._p("input_norm.beta"))
        h, tape["bottleneck"] = nn.conv1d(h, self._p("bottleneck.weight"),
                                          self._p("bottleneck.bias"))
        blocks = []
        for i, d in enumerate(cfg.dilations()):
            g = f"blocks.{i}."
            c = {}
            a, c["in"] = nn.conv1d(h, self._p(g + "in.weight"), self._p(g + "in.bias"))
            a, c["act1"] = nn.prelu(a, self._p(g + "prelu1.alpha"))
            a, c["norm1"] = nn.global_layer_norm(a, self._p(g + "norm1.gamma"),
                                                 self._p(g + "norm1.beta"))
            a, c["dconv"] = nn.conv1d(a, self._p(g + "dconv.weight"), self._p(g + "dconv.bias"),
                                      dilation=d, padding=d * (cfg.p_kernel - 1) // 2,
                                      groups=cfg.n_conv)
            a, c["act2"] = nn.prelu(a, self._p(g + "prelu2.alpha"))
            a, c["norm2"] = nn.global_layer_norm(a, self._p(g + "norm2.gamma"),
                                                 self._p(g + "norm2.beta"))
            a, c["out"] = nn.conv1d(a, self._p(g + "out.weight"), self._p(g + "out.bias"))
            h = h + a
            blocks.append(c)
        tape["blocks"] = blocks

        o, tape["out_act"] = nn.prelu(h, self._p("output.prelu.alpha"))
        o, tape["out_conv"] = nn.conv1d(o, self._p("output.weight"), self._p("output.bias"))
        masks, tape["tanh"] = nn.tanh(o)
        K = masks.shape[2]
        masks = masks.reshape(N, cfg.out_channels, n, K)
        if cfg.mask_mode == "mask":
            latent = masks * enc[:, None]
            tape["masks"] = masks
            tape["enc_out"] = enc
        else:
            latent = masks
        y, tape["decoder"] = nn.conv_transpose1d(
            latent.reshape(N * cfg.out_channels, n, K), self._p("decoder.weight"), stride=S)
        y = y.reshape(N, cfg.out_channels, -1)[:, :, left:left + T]
        tape["padded_len"] = xp.shape[2]
        return (y[0] if squeeze else y), tape

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, dy, tape):
        """Accumulate parameter gradients for upstream gradient ``dy``; returns
        the gradient with respect to the input."""
        cfg = self.config
        N, n, T, left = tape["N"], cfg.n_enc, tape["T"], tape["left"]
        dy = np.asarray(dy, dtype=self.dtype)
        if tape["squeeze"]:
            dy = dy[None]

        def acc(name, g):
            if g is not None:
                self.params[name].grad += g

        full = np.zeros((N, cfg.out_channels, tape["padded_len"]), dtype=self.dtype)
        full[:, :, left:left + T] = dy
        dlat, dw, _ = nn.conv_transpose1d_backward(
            full.reshape(N * cfg.out_channels, 1, -1), tape["decoder"])
        acc("decoder.weight", dw)
        K = dlat.shape[2]
        dlat = dlat.reshape(N, cfg.out_channels, n, K)
        if cfg.mask_mode == "mask":
            dmasks = dlat * tape["enc_out"][:, None]
            denc = np.sum(dlat * tape["masks"], axis=1)
        else:
            dmasks = dlat
            denc = np.zeros((N, n, K), dtype=self.dtype)
        do = nn.tanh_backward(dmasks.reshape(N, cfg.out_channels * n, K), tape["tanh"])
        do, dw, db = nn.conv1d_backward(do, tape["out_conv"])
        acc("output.weight", dw)
        acc("output.bias", db)
        dh, da = nn.prelu_backward(do, tape["out_act"])
        acc("output.prelu.alpha", da)

        for i in reversed(range(len(tape["blocks"]))):
            g = f"blocks.{i}."
            c = tape["blocks"][i]
            da_, dw, db = nn.conv1d_backward(dh, c["out"])
            acc(g + "out.weight", dw)
            acc(g + "out.bias", db)
            da_, dgm, dbt = nn.global_layer_norm_backward(da_, c["norm2"])
            acc(g + "norm2.gamma", dgm)
            acc(g + "norm2.beta", dbt)
            da_, dal = nn.prelu_backward(da_, c["act2"])
            acc(g + "prelu2.alpha", dal)
            da_, dw, db = nn.conv1d_backward(da_, c["dconv"])
            acc(g + "dconv.weight", dw)
            acc(g + "dconv.bias", db)
            da_, dgm, dbt = nn.global_layer_norm_backward(da_, c["norm1"])
            acc(g + "norm1.gamma", dgm)
            acc(g + "norm1.beta", dbt)
            da_, dal = nn.prelu_backward(da_, c["act1"])
            acc(g + "prelu1.alpha", dal)
            da_, dw, db = nn.conv1d_backward(da_, c["in"])
            acc(g + "in.weight", dw)
            acc(g + "in.bias", db)
            dh = dh + da_

        dh, dw, db = nn.conv1d_backward(dh, tape["bottleneck"])
        acc("bottleneck.weight", dw)
        acc("bottleneck.bias", db)
        dh, dgm, dbt = nn.global_layer_norm_backward(dh, tape["in_norm"])
        acc("input_norm.gamma", dgm)
        acc("input_norm.beta", dbt)
        denc = denc + dh
        dpre = nn.relu_backward(denc, tape["enc_relu"])
        dxp, dw, _ = nn.conv1d_backward(dpre, tape["enc"])
        acc("encoder.weight", dw)
        dx = dxp[:, :, left:left + T]
        return dx[0] if tape["squeeze"] else dx

    def upscale(self, foa):
        """FOA :class:`AmbisonicSignal` in, order-3 signal of equal length out."""
        if foa.order != 1 or foa.n_channels != self.config.in_channels:
            raise ValueError("upscale expects a 4-channel first-order signal")
        y = self(foa.data)
        return AmbisonicSignal(y, 3, foa.sample_rate)


def build_model(config, init_seed=0, dtype=np.float32):
    """Deterministically initialized model (He-uniform convs, PReLU 0.25,
    unit-scale / zero-shift norms, zero biases)."""
    rng = np.random.default_rng(init_seed)
    params = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        params[name] = _init_value(name, shape, config, rng, dtype)
    return Model(config, params, dtype)


def upscale(model, foa):
    return model.upscale(foa)


def parameter_report(config):
    """Count for ``config`` next to the published 1,428,764."""
    count = parameter_count(config)
    return {
        "config": config.to_dict(),
        "parameter_count": count,
        "reference_count": REFERENCE_PARAMETER_COUNT,
        "deviation": count - REFERENCE_PARAMETER_COUNT,
        "relative_deviation": (count - REFERENCE_PARAMETER_COUNT) / REFERENCE_PARAMETER_COUNT,
    }
