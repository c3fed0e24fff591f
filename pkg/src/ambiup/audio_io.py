"""File formats: multichannel WAV, grid point files, model checkpoints and
configuration JSON."""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .ambi import AmbisonicSignal, n_channels
from .grids import GridLayout

CHECKPOINT_VERSION = 1
_CHECKPOINT_MAGIC = b"AMBIUPCK"


class WavError(ValueError):
    pass


class WavHeaderError(WavError):
    pass


class UnsupportedWavFormat(WavError):
    pass


class GridFileError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class ConfigError(KeyError):
    pass


@dataclass(frozen=True)
class WavSpec:
    sample_rate: int
    channels: int
    sample_format: str = "float32"
    n_frames: int = 0


def _walk_riff(raw, path):
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavHeaderError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    chunks = {}
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        end = pos + 8 + size
        if end > len(raw):
            raise WavHeaderError(f"{path}: chunk {cid!r} truncated "
                                 f"({size} bytes declared, {len(raw) - pos - 8} present)")
        chunks.setdefault(cid, (pos + 8, size))
        pos = end + (size & 1)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise WavHeaderError(f"{path}: missing fmt or data chunk")
    return chunks


def read_wav(path):
    """Read a WAV file as ``(WavSpec, data[channels, frames])``.

    32-bit float payloads are returned unchanged; 16-bit PCM is scaled by
    1/32768 to float32.
    """
    path = Path(path)
    raw = path.read_bytes()
    chunks = _walk_riff(raw, path)
    off, size = chunks[b"fmt "]
    if size < 16:
        raise WavHeaderError(f"{path}: fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", raw[off:off + 16])
    if tag == 0xFFFE and size >= 26:
        tag = struct.unpack("<H", raw[off + 24:off + 26])[0]
    if (tag, bits) not in ((3, 32), (1, 16)):
        raise UnsupportedWavFormat(f"{path}: unsupported format tag {tag} / {bits} bits")
    if channels < 1 or block_align != channels * bits // 8:
        raise WavHeaderError(f"{path}: inconsistent channel count / block alignment")
    data_size = chunks[b"data"][1]
    if data_size % block_align:
        raise WavHeaderError(f"{path}: data size is not a whole number of frames")
    try:
        _, data = wavfile.read(path)
    except ValueError as exc:
        raise WavHeaderError(f"{path}: {exc}") from exc
    data = data.reshape(-1, channels).T
    if bits == 16:
        data = data.astype(np.float32) / np.float32(32768.0)
        fmt = "int16"
    else:
        fmt = "float32"
    return WavSpec(rate, channels, fmt, data.shape[1]), np.ascontiguousarray(data)


def write_wav(path, sample_rate, data, sample_format="float32"):
    """Write ``data[channels, frames]``; float32 by default."""
    data = np.asarray(data)
    if data.ndim == 1:
        data = data[None]
    if sample_format == "float32":
        frames = data.T.astype("<f4")
    elif sample_format == "int16":
        frames = np.clip(np.round(data.T * 32768.0), -32768, 32767).astype("<i2")
    else:
        raise UnsupportedWavFormat(f"unsupported sample format {sample_format!r}")
    path = Path(path)
    wavfile.write(path, int(sample_rate), np.ascontiguousarray(frames))
    return WavSpec(int(sample_rate), data.shape[0], sample_format, data.shape[1])


def _tag_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_ambisonic(path, signal):
    """32-bit float WAV plus a sidecar ``<file>.json`` carrying the channel
    order, normalization and ambisonic order."""
    write_wav(path, signal.sample_rate, signal.data, "float32")
    tag = {"order": signal.order, "channel_order": "ACN", "normalization": "SN3D",
           "channels": signal.n_channels, "sample_rate": signal.sample_rate}
    _tag_path(path).write_text(json.dumps(tag), encoding="utf-8")


def read_ambisonic(path, order=None):
    """Read an ambisonic WAV; the order comes from ``order``, the sidecar tag,
    or the channel count, and must be consistent with all of them."""
    spec, data = read_wav(path)
    tag_path = _tag_path(path)
    tagged = None
    if tag_path.exists():
        tag = json.loads(tag_path.read_text(encoding="utf-8"))
        tagged = int(tag["order"])
        if tag.get("normalization", "SN3D") != "SN3D" or tag.get("channel_order", "ACN") != "ACN":
            raise WavError(f"{path}: only ACN/SN3D signals are supported")
    if order is None:
        order = tagged
    if order is None:
        order = int(round(np.sqrt(spec.channels))) - 1
    if tagged is not None and tagged != order:
        raise WavError(f"{path}: tagged order {tagged}, expected {order}")
    if spec.channels != n_channels(order):
        raise WavError(f"{path}: order {order} needs {n_channels(order)} channels, "
                       f"file has {spec.channels}")
    return AmbisonicSignal(data, order, spec.sample_rate)


def load_grid(path, kind="tdesign-file", tolerance=1e-6):
    """Read a grid file: one ``x y z`` unit vector per line, ``#`` comments."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GridFileError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise GridFileError(f"{path}:{lineno}: non-numeric entry") from None
    if not rows:
        raise GridFileError(f"{path}: no points")
    v = np.array(rows)
    norms = np.linalg.norm(v, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tolerance)
    if bad.size:
        raise GridFileError(f"{path}: point {bad[0]} is not a unit vector "
                            f"(norm {norms[bad[0]]:.9f})")
    grid = GridLayout(v, kind=kind, meta={"source": str(path)})
    try:
        grid.validate()
    except ValueError as exc:
        raise GridFileError(f"{path}: {exc}") from None
    return grid


load_tdesign = load_grid


def save_grid(path, grid, comment=None):
    lines = [f"# {comment}"] if comment else []
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in grid.vectors]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_checkpoint(path, model, metadata=None):
    """JSON manifest (version, config, tensor table) after an 8-byte length
    prefix, followed by a little-endian float32 blob."""
    table = {}
    blobs = []
    offset = 0
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        table[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"format": "ambiup-checkpoint", "version": CHECKPOINT_VERSION,
                "config": model.config.to_dict(), "tensors": table,
                "metadata": metadata or {}}
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path, dtype=np.float32):
    """Return ``(model, metadata)``; validates version and the tensor table."""
    from .model import Model, ModelConfig, parameter_shapes

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != _CHECKPOINT_MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {manifest.get('version')} "
                              f"!= supported {CHECKPOINT_VERSION}")
    config = ModelConfig.from_dict(manifest["config"])
    blob = raw[16 + hlen:]
    expected = parameter_shapes(config)
    table = manifest["tensors"]
    if set(table) != set(expected):
        raise CheckpointError(f"{path}: tensor table does not match the config")
    params = {}
    for name, entry in table.items():
        shape = tuple(entry["shape"])
        if shape != expected[name]:
            raise CheckpointError(f"{path}: {name} has shape {shape}, config implies "
                                  f"{expected[name]}")
        start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if nbytes != 4 * int(np.prod(shape)) or start < 0 or start + nbytes > len(blob):
            raise CheckpointError(f"{path}: dangling offset for tensor {name}")
        params[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4,
                                     offset=start).reshape(shape)
    return Model(config, params, dtype), manifest.get("metadata", {})


def load_config(path, defaults=None):
    """Read a model config JSON; a missing field raises :class:`ConfigError`
    naming it unless ``defaults`` supplies the value."""
    from .model import ModelConfig

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return ModelConfig.from_dict(data, defaults)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None


def save_config(path, config):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2), encoding="utf-8")
