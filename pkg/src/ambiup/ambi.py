"""Real spherical harmonics (ACN/SN3D, AmbiX), point-source encoding and
linear decoding onto spherical grids."""

from dataclasses import dataclass
from math import factorial

import numpy as np

from .grids import Direction, GridLayout


def n_channels(order):
    return (order + 1) ** 2


def acn_index(l, m):
    """Ambisonic channel number of degree ``l`` and index ``m``."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid (l, m) = ({l}, {m})")
    return l * l + l + m


def acn_to_lm(acn):
    if acn < 0:
        raise ValueError("ACN must be non-negative")
    l = int(np.floor(np.sqrt(acn)))
    return l, acn - l * l - l


def channel_degrees(order):
    """Degree ``l`` of every ACN channel up to ``order``."""
    return np.concatenate([np.full(2 * l + 1, l) for l in range(order + 1)])


def sn3d_to_n3d(order):
    """Per-channel factor sqrt(2l+1) that converts SN3D to N3D."""
    return np.sqrt(2.0 * channel_degrees(order) + 1.0)


def _sn3d_norm(l, m):
    return np.sqrt((2.0 - (m == 0)) * factorial(l - m) / factorial(l + m))


def sh_matrix(order, azimuth, elevation):
    """Evaluate real SN3D spherical harmonics in ACN order.

    Parameters
    ----------
    order : int
        Maximum degree.
    azimuth, elevation : array_like
        Angles in radians, broadcastable to a common shape ``S``.

    Returns
    -------
    ndarray, shape ``S + ((order+1)**2,)``
        No Condon-Shortley phase; the omnidirectional term is exactly 1.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    az, el = np.broadcast_arrays(np.asarray(azimuth, dtype=float),
                                 np.asarray(elevation, dtype=float))
    x = np.sin(el)
    c = np.cos(el)
    out = np.empty(az.shape + (n_channels(order),))

    # Unnormalized associated Legendre functions P_l^m(x), m >= 0, without
    # the Condon-Shortley phase, by the standard upward recurrences in l.
    pmm = np.ones_like(x)
    for m in range(order + 1):
        if m > 0:
            pmm = pmm * (2 * m - 1) * c
        cos_m = np.cos(m * az)
        sin_m = np.sin(m * az)
        p_prev, p_cur = None, pmm
        for l in range(m, order + 1):
            if l == m + 1:
                p_prev, p_cur = p_cur, x * (2 * m + 1) * p_cur
            elif l > m + 1:
                p_prev, p_cur = p_cur, ((2 * l - 1) * x * p_cur
                                        - (l + m - 1) * p_prev) / (l - m)
            val = _sn3d_norm(l, m) * p_cur
            if m == 0:
                out[..., acn_index(l, 0)] = val
            else:
                out[..., acn_index(l, m)] = val * cos_m
                out[..., acn_index(l, -m)] = val * sin_m
    return out


def real_sh(order, direction):
    """SH coefficient vector of length ``(order+1)**2`` for one direction."""
    return sh_matrix(order, direction.azimuth, direction.elevation)


def grid_sh_matrix(grid, order):
    """``[P, (order+1)**2]`` matrix of SH values at every grid point."""
    az, el = grid.angles
    return sh_matrix(order, az, el)


@dataclass(frozen=True)
class AmbisonicSignal:
    """Time-domain ambisonic signal, channels in ACN order, SN3D scaled."""

    data: np.ndarray
    order: int
    sample_rate: int = 48000

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise ValueError("ambisonic data must be [channels, samples]")
        if d.shape[0] != n_channels(self.order):
            raise ValueError(f"order {self.order} needs {n_channels(self.order)} "
                             f"channels, got {d.shape[0]}")
        object.__setattr__(self, "data", d)

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def n_channels(self):
        return self.data.shape[0]

    def truncate(self, order):
        """Lower-order view (first ``(order+1)**2`` channels)."""
        if order > self.order:
            raise ValueError("cannot truncate to a higher order")
        return AmbisonicSignal(self.data[:n_channels(order)], order, self.sample_rate)


def encode_point_source(mono, direction, order, gain=1.0, sample_rate=48000):
    """Encode a mono signal as a plane-wave point source."""
    mono = np.asarray(mono)
    if mono.ndim != 1 or mono.size == 0:
        raise ValueError("mono must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(mono)):
        raise ValueError("mono contains non-finite samples")
    coeffs = real_sh(order, direction)
    dtype = np.result_type(mono.dtype, np.float32)
    data = (gain * coeffs)[:, None].astype(dtype) * mono[None, :].astype(dtype)
    return AmbisonicSignal(data, order, sample_rate)


@dataclass(frozen=True)
class DecoderMatrix:
    matrix: np.ndarray
    order: int
    kind: str

    def __post_init__(self):
        if self.matrix.shape[1] != n_channels(self.order):
            raise ValueError("decoder columns do not match order")

    @property
    def shape(self):
        return self.matrix.shape


class DecoderError(ValueError):
    """Decoder cannot be built for the requested grid/order."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


def sampling_decoder(grid, order):
    """Sampling (beamforming) decoder.

    Row ``p`` is ``(1/P) * (2l+1) * Y_lm(point_p)``: the SN3D values rescaled
    to N3D twice, so that decoding an encoded plane wave yields the
    order-truncated spherical delta sampled on the grid.
    """
    Y = grid_sh_matrix(grid, order)
    weights = sn3d_to_n3d(order) ** 2
    return DecoderMatrix(Y * weights[None, :] / len(grid), order, "sampling")


def pseudoinverse_decoder(grid, order, max_condition=1e10):
    """Mode-matching decoder ``D = pinv(Y)``.

    On an exact t-design (t >= 2*order) this coincides with
    :func:`sampling_decoder`.
    """
    Y = grid_sh_matrix(grid, order)
    n = n_channels(order)
    if len(grid) < n:
        raise DecoderError(f"{len(grid)} points cannot decode order {order} "
                           f"({n} channels)", np.inf)
    s = np.linalg.svd(Y, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if not cond < max_condition:
        raise DecoderError(f"SH matrix is rank deficient (condition number {cond:.3g})",
                           cond)
    # stored as [P, C] like every decoder; the transpose satisfies D^T Y = I
    return DecoderMatrix(np.linalg.pinv(Y).T, order, "pseudoinverse")


def decode(signal, decoder):
    """Apply ``decoder`` to every sample; returns feeds ``[P, T]``."""
    if decoder.matrix.shape[1] != signal.n_channels:
        raise ValueError(f"decoder expects {decoder.matrix.shape[1]} channels, "
                         f"signal has {signal.n_channels}")
    return decoder.matrix.astype(np.result_type(signal.data, np.float64)) @ signal.data


def sn3d_gram(order):
    """Exact Gram matrix of SN3D harmonics under the uniform sphere average."""
    return np.diag(1.0 / (2.0 * channel_degrees(order) + 1.0))


def quadrature_error(grid, order):
    """Max deviation of the equal-weight SH Gram matrix from its exact value."""
    Y = grid_sh_matrix(grid, order)
    gram = Y.T @ Y / len(grid)
    return float(np.max(np.abs(gram - sn3d_gram(order))))
