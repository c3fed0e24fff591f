"""Synthetic scene generation: test signals, randomized multi-source scenes,
shoebox image-source reflections, and paired FOA / HOA3 rendering."""

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ambi import AmbisonicSignal, encode_point_source
from .grids import Direction

SPEED_OF_SOUND = 343.0
MAX_SOURCES = 12
GAIN_DB_RANGE = (-6.0, 6.0)
SOURCE_DISTANCE = 1.0


def _normalize_rms(x, level_dbfs):
    rms = np.sqrt(np.mean(x * x))
    if rms == 0:
        return x
    return x * (10 ** (level_dbfs / 20) / rms)


def pink_noise(duration, sample_rate=48000, seed=0, level_dbfs=-20.0):
    """Gaussian noise shaped to a 1/f power spectrum, RMS at ``level_dbfs``."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shaping = np.zeros_like(freqs)
    shaping[1:] = 1.0 / np.sqrt(freqs[1:])
    x = np.fft.irfft(spectrum * shaping, n)
    return _normalize_rms(x, level_dbfs)


def tone_complex(duration, sample_rate=48000, seed=0, level_dbfs=-20.0):
    """Sum of 3-6 sinusoids with log-uniform frequencies in [100, 4000] Hz."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    k = rng.integers(3, 7)
    freqs = np.exp(rng.uniform(np.log(100.0), np.log(4000.0), k))
    phases = rng.uniform(0, 2 * np.pi, k)
    amps = rng.uniform(0.3, 1.0, k)
    x = np.sum(amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None]), axis=0)
    return _normalize_rms(x, level_dbfs)


def am_noise_burst(duration, sample_rate=48000, seed=0, level_dbfs=-20.0):
    """Pink noise gated by a raised-sine envelope at 2-8 Hz."""
    rng = np.random.default_rng(seed)
    rate = rng.uniform(2.0, 8.0)
    phase = rng.uniform(0, 2 * np.pi)
    noise = pink_noise(duration, sample_rate, seed=rng.integers(2**63))
    t = np.arange(len(noise)) / sample_rate
    env = (0.5 * (1 + np.sin(2 * np.pi * rate * t + phase))) ** 2
    return _normalize_rms(noise * env, level_dbfs)


GENERATORS = {
    "pink": pink_noise,
    "tones": tone_complex,
    "am-noise": am_noise_burst,
}


@dataclass(frozen=True)
class CatalogItem:
    id: str
    channels: int
    sample_rate: int
    duration: Optional[float] = None
    path: Optional[str] = None
    generator: Optional[str] = None
    seed: int = 0


class Catalog:
    """Signal catalog: builtin generator realizations and/or WAV files.

    Items are fixed signals; scenes choose a segment (and a channel of
    multichannel items). Loaded signals are cached.
    """

    def __init__(self, items):
        self.items = {}
        for item in items:
            if item.id in self.items:
                raise ValueError(f"duplicate catalog id {item.id!r}")
            if (item.path is None) == (item.generator is None):
                raise ValueError(f"item {item.id!r} needs exactly one of path/generator")
            if item.generator is not None and item.generator not in GENERATORS:
                raise ValueError(f"unknown generator {item.generator!r}")
            self.items[item.id] = item
        if not self.items:
            raise ValueError("catalog is empty")
        self._cache = {}

    def __len__(self):
        return len(self.items)

    @property
    def ids(self):
        return list(self.items)

    @classmethod
    def builtin(cls, sample_rate=48000, duration=10.0, variants=4, kinds=None):
        kinds = list(GENERATORS) if kinds is None else list(kinds)
        items = [CatalogItem(f"{kind}-{i}", 1, sample_rate, duration, generator=kind,
                             seed=1000 * j + i)
                 for j, kind in enumerate(kinds) for i in range(variants)]
        return cls(items)

    @classmethod
    def from_manifest(cls, path):
        """Load a JSON list of ``{id, path, channels, sample_rate}`` entries;
        relative paths resolve against the manifest's directory."""
        path = Path(path)
        entries = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(entries, list):
            raise ValueError("catalog manifest must be a JSON list")
        items = []
        for i, e in enumerate(entries):
            for key in ("id", "path", "channels", "sample_rate"):
                if key not in e:
                    raise KeyError(f"catalog entry {i} is missing '{key}'")
            p = Path(e["path"])
            if not p.is_absolute():
                p = path.parent / p
            items.append(CatalogItem(str(e["id"]), int(e["channels"]), int(e["sample_rate"]),
                                     e.get("duration"), path=str(p)))
        return cls(items)

    def item(self, ref):
        try:
            return self.items[ref]
        except KeyError:
            raise KeyError(f"unresolvable signal reference {ref!r}") from None

    def duration(self, ref, sample_rate):
        item = self.item(ref)
        if item.duration is None:
            return self.load(ref, sample_rate).shape[1] / sample_rate
        return item.duration

    def load(self, ref, sample_rate):
        """Return the item's samples as ``[channels, samples]`` at ``sample_rate``."""
        key = (ref, sample_rate)
        if key in self._cache:
            return self._cache[key]
        item = self.item(ref)
        if item.generator is not None:
            data = GENERATORS[item.generator](item.duration, sample_rate, seed=item.seed)[None]
        else:
            from .audio_io import read_wav

            spec, data = read_wav(item.path)
            if spec.channels != item.channels:
                raise ValueError(f"{item.path}: manifest says {item.channels} channels, "
                                 f"file has {spec.channels}")
            data = data.astype(np.float64)
            if spec.sample_rate != sample_rate:
                from math import gcd

                from scipy.signal import resample_poly

                g = gcd(sample_rate, spec.sample_rate)
                data = resample_poly(data, sample_rate // g, spec.sample_rate // g, axis=1)
        self._cache[key] = data
        return data


@dataclass(frozen=True)
class SourceSpec:
    signal_ref: str
    segment_start: float
    direction: Direction
    gain_db: float = 0.0
    distance: float = SOURCE_DISTANCE
    channel: int = 0

    def __post_init__(self):
        lo, hi = GAIN_DB_RANGE
        if not lo <= self.gain_db <= hi:
            raise ValueError(f"gain_db {self.gain_db} outside [{lo}, {hi}]")
        if self.distance != SOURCE_DISTANCE:
            raise ValueError("source distance is fixed at 1 m")
        if self.segment_start < 0:
            raise ValueError("segment_start must be >= 0")

    @property
    def gain(self):
        return 10 ** (self.gain_db / 20)


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple
    absorption: tuple
    max_image_order: int
    listener_position: tuple

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError("room dimensions must be three positive lengths")
        absorption = self.absorption
        if np.isscalar(absorption):
            absorption = (absorption,) * 6
        absorption = tuple(float(a) for a in absorption)
        if len(absorption) != 6 or not all(0 < a <= 1 for a in absorption):
            raise ValueError("absorption needs six coefficients in (0, 1]")
        listener = tuple(float(v) for v in self.listener_position)
        if not _inside(listener, dims):
            raise ValueError("listener must be strictly inside the room")
        if self.max_image_order < 0:
            raise ValueError("max_image_order must be >= 0")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "absorption", absorption)
        object.__setattr__(self, "listener_position", listener)

    @property
    def reflection_coefficients(self):
        """Pressure reflection coefficient per wall, ordered
        (x=0, x=Lx, y=0, y=Ly, z=0, z=Lz)."""
        return tuple(np.sqrt(1.0 - a) for a in self.absorption)


def _inside(pos, dims):
    return all(0 < p < d for p, d in zip(pos, dims))


@dataclass(frozen=True)
class SceneSpec:
    sources: tuple
    room: Optional[RoomSpec] = None
    duration: float = 4.0
    sample_rate: int = 48000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not 1 <= len(self.sources) <= MAX_SOURCES:
            raise ValueError(f"scene needs 1..{MAX_SOURCES} sources")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def n_samples(self):
        return int(round(self.duration * self.sample_rate))

    def to_dict(self):
        """JSON-ready provenance; angles in degrees."""
        def src(s):
            az, el = s.direction.degrees
            return {"signal_ref": s.signal_ref, "segment_start": s.segment_start,
                    "azimuth_deg": az, "elevation_deg": el, "gain_db": s.gain_db,
                    "distance": s.distance, "channel": s.channel}
        return {
            "sources": [src(s) for s in self.sources],
            "room": None if self.room is None else asdict(self.room),
            "duration": self.duration,
            "sample_rate": self.sample_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        sources = [SourceSpec(s["signal_ref"], s["segment_start"],
                              Direction.from_degrees(s["azimuth_deg"], s["elevation_deg"]),
                              s["gain_db"], s.get("distance", SOURCE_DISTANCE),
                              s.get("channel", 0))
                   for s in d["sources"]]
        room = None if d.get("room") is None else RoomSpec(**d["room"])
        return cls(sources, room, d["duration"], d["sample_rate"], d["seed"])


@dataclass(frozen=True)
class SceneConstraints:
    """Overrides for :func:`sample_scene`. Defaults follow the augmentation
    recipe (1-12 sources, +-6 dB, 4 s); room ranges are our own choice."""

    min_sources: int = 1
    max_sources: int = MAX_SOURCES
    duration: float = 4.0
    sample_rate: int = 48000
    gain_db_range: tuple = GAIN_DB_RANGE
    room_probability: float = 0.5
    room_size_range: tuple = ((3.0, 10.0), (3.0, 10.0), (2.5, 4.0))
    absorption_range: tuple = (0.2, 0.9)
    max_image_order: int = 2
    wall_margin: float = 1.1

    def __post_init__(self):
        if not 1 <= self.min_sources <= self.max_sources <= MAX_SOURCES:
            raise ValueError(f"need 1 <= min_sources <= max_sources <= {MAX_SOURCES}")
        lo, hi = self.gain_db_range
        if lo < GAIN_DB_RANGE[0] or hi > GAIN_DB_RANGE[1] or lo > hi:
            raise ValueError("gain range must lie within [-6, 6] dB")
        if self.wall_margin <= SOURCE_DISTANCE:
            raise ValueError("wall_margin must exceed the source distance")


@dataclass
class TrainingPair:
    input: AmbisonicSignal
    target: AmbisonicSignal
    scene: Optional[SceneSpec] = None

    def __post_init__(self):
        if self.input.order != 1 or self.target.order != 3:
            raise ValueError("pair must be (order 1, order 3)")
        if (self.input.n_samples != self.target.n_samples
                or self.input.sample_rate != self.target.sample_rate):
            raise ValueError("input and target must be sample-aligned")


def random_direction(rng):
    """Uniform on the sphere: uniform azimuth, sin-uniform elevation."""
    return Direction(rng.uniform(-np.pi, np.pi), np.arcsin(rng.uniform(-1.0, 1.0)))


def sample_scene(rng_seed, catalog, constraints=None):
    """Draw a random :class:`SceneSpec`; deterministic in ``rng_seed``."""
    if catalog is None or len(catalog) == 0:
        raise ValueError("catalog must be nonempty")
    c = constraints or SceneConstraints()
    rng = np.random.default_rng(rng_seed)
    ids = catalog.ids
    n_src = int(rng.integers(c.min_sources, c.max_sources + 1))
    sources = []
    for _ in range(n_src):
        ref = ids[int(rng.integers(len(ids)))]
        item = catalog.item(ref)
        span = max(0.0, catalog.duration(ref, c.sample_rate) - c.duration)
        start = float(rng.uniform(0.0, span)) if span > 0 else 0.0
        channel = int(rng.integers(item.channels))
        direction = random_direction(rng)
        gain = float(rng.uniform(*c.gain_db_range))
        sources.append(SourceSpec(ref, start, direction, gain, SOURCE_DISTANCE, channel))
    room = None
    if rng.uniform() < c.room_probability:
        dims = tuple(float(rng.uniform(lo, hi)) for lo, hi in c.room_size_range)
        absorption = tuple(float(a) for a in rng.uniform(*c.absorption_range, size=6))
        listener = tuple(float(rng.uniform(c.wall_margin, d - c.wall_margin)) for d in dims)
        room = RoomSpec(dims, absorption, c.max_image_order, listener)
    return SceneSpec(tuple(sources), room, c.duration, c.sample_rate, int(rng_seed))


@dataclass(frozen=True)
class ImageSource:
    delay: float
    amplitude: float
    direction: Direction
    order: int
    position: tuple = field(default=None, compare=False)


def image_source_rir(room, source_pos, order_limit=None):
    """Enumerate shoebox image sources with at most ``order_limit`` reflections.

    Amplitude is the product of wall reflection coefficients over distance;
    delay is distance / 343 m/s. Sorted by delay (direct path first).
    """
    order_limit = room.max_image_order if order_limit is None else order_limit
    src = tuple(float(v) for v in source_pos)
    if len(src) != 3 or not _inside(src, room.dimensions):
        raise ValueError(f"source position {source_pos} is not inside the room")
    listener = np.array(room.listener_position)
    beta = room.reflection_coefficients
    per_axis = []
    for axis in range(3):
        L = room.dimensions[axis]
        b_lo, b_hi = beta[2 * axis], beta[2 * axis + 1]
        options = []
        for n in range(-order_limit, order_limit + 1):
            for q in (0, 1):
                hits_lo, hits_hi = abs(n - q), abs(n)
                count = hits_lo + hits_hi
                if count > order_limit:
                    continue
                coord = (1 - 2 * q) * src[axis] + 2 * n * L
                options.append((coord, count, b_lo ** hits_lo * b_hi ** hits_hi))
        per_axis.append(options)
    images = []
    for (x, cx, gx), (y, cy, gy), (z, cz, gz) in itertools.product(*per_axis):
        order = cx + cy + cz
        if order > order_limit:
            continue
        vec = np.array([x, y, z]) - listener
        dist = float(np.linalg.norm(vec))
        images.append(ImageSource(dist / SPEED_OF_SOUND, float(gx * gy * gz / dist),
                                  Direction.from_vector(vec), order, (x, y, z)))
    images.sort(key=lambda im: (im.delay, im.order))
    return images


def fractional_delay(x, delay_samples):
    """Delay by a non-negative (fractional) number of samples using linear
    interpolation; output keeps the input length."""
    if delay_samples < 0:
        raise ValueError("delay must be non-negative")
    k = int(np.floor(delay_samples))
    f = delay_samples - k
    n = len(x)
    out = np.zeros_like(x)
    if k < n:
        out[k:] += (1 - f) * x[:n - k]
    if k + 1 < n and f > 0:
        out[k + 1:] += f * x[:n - k - 1]
    return out


def _source_signal(src, scene, catalog):
    data = catalog.load(src.signal_ref, scene.sample_rate)
    if not 0 <= src.channel < data.shape[0]:
        raise ValueError(f"{src.signal_ref!r} has no channel {src.channel}")
    n = scene.n_samples
    start = int(round(src.segment_start * scene.sample_rate))
    seg = data[src.channel, start:start + n]
    if len(seg) < n:
        seg = np.pad(seg, (0, n - len(seg)))
    return seg * src.gain


def source_contributions(src, scene, catalog):
    """``(mono, direction)`` pairs reaching the listener for one source."""
    mono = _source_signal(src, scene, catalog)
    if scene.room is None:
        return [(mono, src.direction)]
    listener = np.array(scene.room.listener_position)
    pos = listener + src.distance * src.direction.to_vector()
    images = image_source_rir(scene.room, pos)
    direct = images[0].delay
    out = []
    for im in images:
        if im.amplitude == 0:
            continue
        delayed = fractional_delay(mono, (im.delay - direct) * scene.sample_rate)
        out.append((im.amplitude * delayed, im.direction))
    return out


def render_scene(scene, catalog):
    """Render a scene into a sample-aligned (FOA input, HOA3 target) pair."""
    n = scene.n_samples
    foa = np.zeros((4, n))
    hoa = np.zeros((16, n))
    for src in scene.sources:
        for mono, direction in source_contributions(src, scene, catalog):
            foa += encode_point_source(mono, direction, 1, sample_rate=scene.sample_rate).data
            hoa += encode_point_source(mono, direction, 3, sample_rate=scene.sample_rate).data
    return TrainingPair(AmbisonicSignal(foa, 1, scene.sample_rate),
                        AmbisonicSignal(hoa, 3, scene.sample_rate), scene)


def scene_seeds(seed, count):
    """Independent per-scene 64-bit seeds derived by seed splitting."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def generate_corpus(catalog, count, out_dir, seed=0, constraints=None, threads=1):
    """Write ``<id>_foa.wav``, ``<id>_hoa3.wav`` and ``<id>_scene.json`` for
    ``count`` random scenes. Output is independent of ``threads``."""
    from .audio_io import write_ambisonic

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = scene_seeds(seed, count)

    def work(i):
        sid = f"scene{i:06d}"
        scene = sample_scene(seeds[i], catalog, constraints)
        pair = render_scene(scene, catalog)
        write_ambisonic(out_dir / f"{sid}_foa.wav", pair.input)
        write_ambisonic(out_dir / f"{sid}_hoa3.wav", pair.target)
        (out_dir / f"{sid}_scene.json").write_text(
            json.dumps(scene.to_dict(), indent=2), encoding="utf-8")
        return sid

    # every catalog signal is cached up front so workers only read
    rate = (constraints or SceneConstraints()).sample_rate
    for ref in catalog.ids:
        catalog.load(ref, rate)
    if threads <= 1:
        return [work(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(count)))


def load_corpus(directory):
    """Read every ``<id>_foa.wav`` / ``<id>_hoa3.wav`` pair, sorted by id."""
    from .audio_io import read_ambisonic

    directory = Path(directory)
    pairs = []
    for foa_path in sorted(directory.glob("*_foa.wav")):
        sid = foa_path.name[:-len("_foa.wav")]
        hoa_path = directory / f"{sid}_hoa3.wav"
        if not hoa_path.exists():
            raise FileNotFoundError(f"missing target {hoa_path}")
        scene_path = directory / f"{sid}_scene.json"
        scene = None
        if scene_path.exists():
            scene = SceneSpec.from_dict(json.loads(scene_path.read_text(encoding="utf-8")))
        pairs.append(TrainingPair(read_ambisonic(foa_path, order=1),
                                  read_ambisonic(hoa_path, order=3), scene))
    if not pairs:
        raise FileNotFoundError(f"no *_foa.wav files in {directory}")
    return pairs
