"""Positional error of renderers against an ideal single-loudspeaker source.

For every grid point a mono test signal is encoded at that point, passed
through a renderer (linear FOA, linear HOA3, or FOA upscaled by a model),
decoded to all grid points with the sampling decoder of matching order,
and compared with ground-truth feeds in which only that point plays.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ambi import grid_sh_matrix, sampling_decoder
from .grids import fibonacci_grid
from .scene import pink_noise

ERROR_FLOOR_DB = -120.0
REFERENCE_GRID_SIZE = 16382
# point batch size for model inference; fixed so results do not depend on
# the number of worker threads
POINT_CHUNK = 16


@dataclass(frozen=True)
class Renderer:
    kind: str
    model: object = field(default=None, compare=False, repr=False)
    checkpoint: Optional[str] = None

    KINDS = ("foa-linear", "hoa3-linear", "upscaled")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown renderer {self.kind!r}")
        if self.kind == "upscaled" and self.model is None:
            raise ValueError("upscaled renderer needs a model")

    @property
    def label(self):
        return self.kind

    @property
    def input_order(self):
        return 3 if self.kind == "hoa3-linear" else 1

    @property
    def output_order(self):
        return 1 if self.kind == "foa-linear" else 3


def parse_renderer(text):
    """``foa`` / ``hoa3`` / ``upscaled:<checkpoint>`` (long names accepted)."""
    text = text.strip()
    if text in ("foa", "foa-linear"):
        return Renderer("foa-linear")
    if text in ("hoa3", "hoa3-linear"):
        return Renderer("hoa3-linear")
    if text.startswith("upscaled:"):
        from .audio_io import load_checkpoint

        path = text.split(":", 1)[1]
        try:
            model, _ = load_checkpoint(path)
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise RuntimeError(f"cannot load checkpoint {path}: {exc}") from exc
        return Renderer("upscaled", model, path)
    raise ValueError(f"unknown renderer {text!r}")


def ground_truth_feeds(grid, p, mono):
    """Feeds where grid point ``p`` carries ``mono`` and every other point is silent."""
    if not 0 <= p < len(grid):
        raise IndexError(f"grid point {p} out of range 0..{len(grid) - 1}")
    mono = np.asarray(mono, dtype=float)
    feeds = np.zeros((len(grid), len(mono)))
    feeds[p] = mono
    return feeds


def mse_db(feeds, ground_truth, floor_db=ERROR_FLOOR_DB):
    """Squared error of ``feeds`` relative to ground-truth energy, in dB."""
    err = np.sum((np.asarray(feeds, float) - ground_truth) ** 2)
    ref = np.sum(np.asarray(ground_truth, float) ** 2)
    return _to_db(err / ref, floor_db)


def _to_db(ratio, floor_db):
    if ratio <= 0:
        return floor_db
    return max(floor_db, 10.0 * np.log10(ratio))


class _Decoders:
    """Sampling decoders and their Gram matrices for one grid."""

    def __init__(self, grid):
        self.grid = grid
        self.sh = grid_sh_matrix(grid, 3)
        self.matrix = {}
        self.gram = {}
        for order in (1, 3):
            D = sampling_decoder(grid, order).matrix
            self.matrix[order] = D
            self.gram[order] = D.T @ D

    def error_ratio(self, signal, order, p, mono):
        """``||D s - g||^2 / ||g||^2`` without materializing the feeds:
        expands to ``<D^T D, s s^T> - 2 d_p s m^T + m m^T``."""
        s = np.asarray(signal, dtype=float)
        energy = float(mono @ mono)
        cross = float(self.matrix[order][p] @ (s @ mono))
        quad = float(np.sum(self.gram[order] * (s @ s.T)))
        return (quad - 2.0 * cross + energy) / energy


def positional_error(renderer, grid, mono, p, floor_db=ERROR_FLOOR_DB, decoders=None):
    """Error in dB at grid point ``p`` for one renderer."""
    dec = decoders or _Decoders(grid)
    mono = np.asarray(mono, dtype=float)
    coeffs = dec.sh[p, :(renderer.input_order + 1) ** 2]
    encoded = coeffs[:, None] * mono[None, :]
    if renderer.kind == "upscaled":
        encoded = np.asarray(renderer.model(encoded), dtype=float)
    return _to_db(dec.error_ratio(encoded, renderer.output_order, p, mono), floor_db)


@dataclass
class ErrorMap:
    grid: object
    errors_db: np.ndarray
    renderer: str
    normalization: dict
    metadata: dict = field(default_factory=dict)


@dataclass
class ErrorSummary:
    per_renderer: dict
    deltas: dict

    def to_dict(self):
        return {"renderers": self.per_renderer, "deltas": self.deltas}


def _renderer_errors(renderer, grid, mono, threads, floor_db):
    dec = _Decoders(grid)
    P = len(grid)
    if renderer.kind != "upscaled":
        return np.array([positional_error(renderer, grid, mono, p, floor_db, dec)
                         for p in range(P)])

    def chunk(start):
        idx = range(start, min(start + POINT_CHUNK, P))
        foa = np.stack([dec.sh[p, :4, None] * mono[None, :] for p in idx])
        out = np.asarray(renderer.model(foa), dtype=float)
        try:
            return [_to_db(dec.error_ratio(out[k], 3, p, mono), floor_db)
                    for k, p in enumerate(idx)]
        except Exception as exc:
            raise RuntimeError(f"evaluation failed at grid point {idx[0]}..{idx[-1]}: "
                               f"{exc}") from exc

    starts = range(0, P, POINT_CHUNK)
    if threads <= 1:
        parts = [chunk(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(chunk, starts))
    return np.array([e for part in parts for e in part])


def run_evaluation(renderers, grid, duration=0.25, sample_rate=48000, seed=0,
                   threads=1, offset_db=0.0, floor_db=ERROR_FLOOR_DB, signal=None,
                   metadata=None):
    """Sweep every grid point for each renderer.

    Errors are relative to ground-truth energy per point; ``offset_db`` is an
    extra global shift subtracted from every value and recorded in each map.
    Returns ``(maps, summary)``.
    """
    if not renderers:
        raise ValueError("no renderers given")
    for r in renderers:
        if r.kind == "upscaled" and r.model.config.sample_rate != sample_rate:
            raise ValueError(f"model runs at {r.model.config.sample_rate} Hz, "
                             f"evaluation signal at {sample_rate} Hz")
    if signal is None:
        mono = pink_noise(duration, sample_rate, seed)
        signal_meta = {"kind": "pink", "duration": duration, "sample_rate": sample_rate,
                       "seed": seed}
    else:
        mono = np.asarray(signal, dtype=float)
        signal_meta = {"kind": "custom", "samples": len(mono), "sample_rate": sample_rate}
    meta = {"signal": signal_meta, "grid_kind": grid.kind, "grid_points": len(grid),
            **grid.meta, **(metadata or {})}
    maps = []
    for r in renderers:
        errors = _renderer_errors(r, grid, mono, threads, floor_db) - offset_db
        meta_r = dict(meta)
        if r.checkpoint:
            meta_r["checkpoint"] = r.checkpoint
        maps.append(ErrorMap(grid, errors, r.label,
                             {"reference": "ground-truth energy per point",
                              "offset_db": offset_db}, meta_r))
    return maps, summarize(maps)


def summarize(maps):
    if not maps:
        raise ValueError("no error maps")
    grid = maps[0].grid
    for m in maps[1:]:
        if m.grid is not grid and not np.array_equal(m.grid.vectors, grid.vectors):
            raise ValueError("error maps come from different grids")
    per = {}
    for m in maps:
        e = np.asarray(m.errors_db)
        per[m.renderer] = {"mean_db": float(np.mean(e)), "median_db": float(np.median(e)),
                           "max_db": float(np.max(e)), "min_db": float(np.min(e))}
    deltas = {}
    for i, a in enumerate(maps):
        for b in maps[i + 1:]:
            deltas[f"{a.renderer} - {b.renderer}"] = (per[a.renderer]["mean_db"]
                                                      - per[b.renderer]["mean_db"])
    return ErrorSummary(per, deltas)


def export_csv(maps, path):
    """Columns: point_index, azimuth_deg, elevation_deg, one error column per renderer."""
    summarize(maps)
    grid = maps[0].grid
    az, el = grid.angles
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["point_index", "azimuth_deg", "elevation_deg"]
                   + [m.renderer for m in maps])
        for p in range(len(grid)):
            w.writerow([p, repr(float(np.rad2deg(az[p]))), repr(float(np.rad2deg(el[p])))]
                       + [repr(float(m.errors_db[p])) for m in maps])


def export_summary(summary, path, extra=None):
    payload = summary.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def resolve_grid(spec):
    """Grid from ``fib:N``, ``reference[:path]`` or a grid-file path.

    ``reference`` uses the 16,382-point design file when given and present and
    otherwise substitutes a Fibonacci grid of the same size; the
    substitution is recorded in ``grid.meta``.
    """
    from .audio_io import load_grid

    if spec.startswith("fib:"):
        return fibonacci_grid(int(spec[4:]))
    if spec == "reference" or spec.startswith("reference:"):
        path = spec[10:] if spec.startswith("reference:") else ""
        if path and Path(path).exists():
            return load_grid(path)
        grid = fibonacci_grid(REFERENCE_GRID_SIZE)
        grid.meta["substitution"] = (f"design file {path or '(none)'} unavailable; "
                                     f"Fibonacci grid of {REFERENCE_GRID_SIZE} points used")
        return grid
    if not Path(spec).exists():
        raise FileNotFoundError(f"grid file not found: {spec}")
    return load_grid(spec)
