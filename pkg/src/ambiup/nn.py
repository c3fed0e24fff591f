"""Dense layer primitives with hand-written backward passes.

Every forward function returns ``(output, cache)``; the matching
``*_backward(grad_output, cache)`` returns the input gradient first,
followed by parameter gradients in argument order. Arrays are shaped
``[batch, channels, time]``; 2-D ``[channels, time]`` inputs are accepted
and treated as a batch of one.
"""

import os
from dataclasses import dataclass, field

import numpy as np

CHECK_FINITE = bool(os.environ.get("AMBIUP_DEBUG"))


class NonFiniteError(FloatingPointError):
    pass


def _check(name, arr):
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values after {name}")
    return arr


def _as3d(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ValueError(f"expected [C, T] or [N, C, T] input, got shape {x.shape}")
    return x, False


def conv_output_length(length, kernel, stride=1, dilation=1, padding=0):
    return (length + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _im2col(xp, kernel, stride, dilation, t_out):
    if kernel == 1 and stride == 1:
        return xp[:, :, None, :t_out]
    cols = np.empty(xp.shape[:2] + (kernel, t_out), dtype=xp.dtype)
    span = stride * (t_out - 1) + 1
    for k in range(kernel):
        s = k * dilation
        cols[:, :, k, :] = xp[:, :, s:s + span:stride]
    return cols


def _col2im(cols, length, stride, dilation):
    n, c, kernel, t_out = cols.shape
    out = np.zeros((n, c, length), dtype=cols.dtype)
    span = stride * (t_out - 1) + 1
    for k in range(kernel):
        s = k * dilation
        out[:, :, s:s + span:stride] += cols[:, :, k, :]
    return out


def _check_conv_args(c_in, weight, groups, stride, dilation, padding):
    if stride < 1 or dilation < 1 or padding < 0 or groups < 1:
        raise ValueError("stride/dilation/groups must be >= 1 and padding >= 0")
    if c_in % groups or weight.shape[0] % groups:
        raise ValueError("channel counts must be divisible by groups")
    if weight.ndim != 3 or weight.shape[1] * groups != c_in:
        raise ValueError(f"weight shape {weight.shape} incompatible with "
                         f"{c_in} input channels and groups={groups}")


def _grouped_matmul(weight, cols, groups):
    # weight [Cout, Cg, K], cols [N, Cin, K, T] -> [N, Cout, T]
    n, c_in, kernel, t = cols.shape
    c_out = weight.shape[0]
    wg = weight.reshape(groups, c_out // groups, -1)
    cg = cols.reshape(n, groups, (c_in // groups) * kernel, t)
    return np.matmul(wg[None], cg).reshape(n, c_out, t)


def _weight_grad(dy, cols, groups, weight_shape):
    n, c_in, kernel, t = cols.shape
    c_out = dy.shape[1]
    dyg = dy.reshape(n, groups, c_out // groups, t)
    cg = cols.reshape(n, groups, (c_in // groups) * kernel, t)
    dw = np.matmul(dyg, cg.transpose(0, 1, 3, 2)).sum(axis=0)
    return dw.reshape(weight_shape)


def _input_cols_grad(dy, weight, groups):
    # adjoint of _grouped_matmul w.r.t. cols
    n, c_out, t = dy.shape
    _, cg_in, kernel = weight.shape
    wg = weight.reshape(groups, c_out // groups, cg_in * kernel)
    dyg = dy.reshape(n, groups, c_out // groups, t)
    dcols = np.matmul(wg.transpose(0, 2, 1)[None], dyg)
    return dcols.reshape(n, groups * cg_in, kernel, t)


def conv1d(x, weight, bias=None, stride=1, dilation=1, padding=0, groups=1):
    """Cross-correlation ``y[o, t] = sum_{c,k} w[o, c, k] x[c, t*stride + k*dilation - padding]``.

    ``weight`` has shape ``[Cout, Cin/groups, K]``.
    """
    x, squeeze = _as3d(x)
    n, c_in, length = x.shape
    _check_conv_args(c_in, weight, groups, stride, dilation, padding)
    kernel = weight.shape[2]
    t_out = conv_output_length(length, kernel, stride, dilation, padding)
    if t_out < 1:
        raise ValueError(f"input of length {length} too short for kernel {kernel} "
                         f"(dilation {dilation}, padding {padding})")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    cols = _im2col(xp, kernel, stride, dilation, t_out)
    y = _grouped_matmul(weight, cols, groups)
    if bias is not None:
        y = y + bias[None, :, None]
    cache = (cols, weight, bias is not None, stride, dilation, padding, groups,
             length, squeeze)
    _check("conv1d", y)
    return (y[0] if squeeze else y), cache


def conv1d_backward(dy, cache):
    """Returns ``(dx, dweight, dbias)``; ``dbias`` is None when no bias was used."""
    cols, weight, has_bias, stride, dilation, padding, groups, length, squeeze = cache
    dy, _ = _as3d(dy)
    dw = _weight_grad(dy, cols, groups, weight.shape)
    db = dy.sum(axis=(0, 2)) if has_bias else None
    dcols = _input_cols_grad(dy, weight, groups)
    dxp = _col2im(dcols, length + 2 * padding, stride, dilation)
    dx = dxp[:, :, padding:padding + length]
    return (dx[0] if squeeze else dx), dw, db


def conv_transpose1d(x, weight, bias=None, stride=1, dilation=1, padding=0, groups=1,
                     output_padding=0):
    """Transposed convolution: the adjoint of :func:`conv1d` with the same weight.

    ``weight`` has shape ``[Cin, Cout/groups, K]``; overlapping frames are
    summed (overlap-add).
    """
    x, squeeze = _as3d(x)
    n, c_in, t_in = x.shape
    if weight.ndim != 3 or weight.shape[0] != c_in:
        raise ValueError(f"weight shape {weight.shape} incompatible with {c_in} channels")
    if not 0 <= output_padding < max(stride, dilation):
        raise ValueError("output_padding must be smaller than stride or dilation")
    kernel = weight.shape[2]
    c_out = weight.shape[1] * groups
    _check_conv_args(c_out, weight, groups, stride, dilation, padding)
    length = (t_in - 1) * stride - 2 * padding + dilation * (kernel - 1) + 1 + output_padding
    if length < 1:
        raise ValueError("transposed convolution output would be empty")
    dcols = _input_cols_grad(x, weight, groups)
    full = _col2im(dcols, length + 2 * padding, stride, dilation)
    y = full[:, :, padding:padding + length]
    if bias is not None:
        y = y + bias[None, :, None]
    cache = (x, weight, bias is not None, stride, dilation, padding, groups, squeeze)
    _check("conv_transpose1d", y)
    return (y[0] if squeeze else y), cache


def conv_transpose1d_backward(dy, cache):
    x, weight, has_bias, stride, dilation, padding, groups, squeeze = cache
    dy, _ = _as3d(dy)
    dyp = np.pad(dy, ((0, 0), (0, 0), (padding, padding))) if padding else dy
    cols = _im2col(dyp, weight.shape[2], stride, dilation, x.shape[2])
    dx = _grouped_matmul(weight, cols, groups)
    # roles of input and output swap relative to conv1d
    dw = _weight_grad(x, cols, groups, weight.shape)
    db = dy.sum(axis=(0, 2)) if has_bias else None
    return (dx[0] if squeeze else dx), dw, db


def relu(x):
    return np.maximum(x, 0), x


def relu_backward(dy, cache):
    return dy * (cache > 0)


def prelu(x, alpha):
    """Parametric ReLU with a single learned slope ``alpha`` (shape ``(1,)``)."""
    y = np.where(x > 0, x, alpha[0] * x)
    return y, (x, alpha)


def prelu_backward(dy, cache):
    x, alpha = cache
    neg = x <= 0
    dx = np.where(neg, alpha[0] * dy, dy)
    dalpha = np.array([np.sum(dy * x * neg)], dtype=alpha.dtype)
    return dx, dalpha


def tanh(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, cache):
    return dy * (1 - cache * cache)


def global_layer_norm(x, gamma, beta, eps=1e-8):
    """Normalize each example over all channels and frames, then apply a
    per-channel affine transform."""
    x3, squeeze = _as3d(x)
    mean = x3.mean(axis=(1, 2), keepdims=True)
    centered = x3 - mean
    var = np.mean(centered * centered, axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    return (y[0] if squeeze else y), (xhat, inv_std, gamma, squeeze)


def global_layer_norm_backward(dy, cache):
    xhat, inv_std, gamma, squeeze = cache
    dy, _ = _as3d(dy)
    dgamma = np.sum(dy * xhat, axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[None, :, None]
    dx = inv_std * (dxhat - dxhat.mean(axis=(1, 2), keepdims=True)
                    - xhat * np.mean(dxhat * xhat, axis=(1, 2), keepdims=True))
    return (dx[0] if squeeze else dx), dgamma, dbeta


def l1_loss(pred, target):
    """Mean absolute error and its (sub)gradient w.r.t. ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad.astype(pred.dtype, copy=False)


@dataclass
class Param:
    """A named parameter tensor and its accumulated gradient."""

    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()
        for p in self.params:
            self.state.m[p.name] = np.zeros_like(p.value)
            self.state.v[p.name] = np.zeros_like(p.value)

    def step(self):
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** st.step
        c2 = 1 - b2 ** st.step
        for p in self.params:
            m = st.m[p.name]
            v = st.v[p.name]
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.value -= update.astype(p.value.dtype, copy=False)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2))
                              for p in params)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total
