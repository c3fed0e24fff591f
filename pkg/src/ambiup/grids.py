"""Point sets on the unit sphere used as loudspeaker / evaluation grids."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

GRID_KINDS = ("tdesign-file", "fibonacci", "icosahedral-design", "custom")

# Minimum pairwise angular separation accepted for distinct grid points.
MIN_SEPARATION = 1e-9


def wrap_azimuth(az):
    """Wrap azimuth (radians) into [-pi, pi)."""
    return (np.asarray(az, dtype=float) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Direction:
    """A direction on the unit sphere.

    Azimuth is counterclockwise from the front (+x) toward the left (+y);
    elevation is upward from the horizontal plane. Both in radians.
    """

    azimuth: float
    elevation: float

    def __post_init__(self):
        el = float(self.elevation)
        if not -np.pi / 2 <= el <= np.pi / 2:
            raise ValueError(f"elevation {el} outside [-pi/2, pi/2]")
        az = float(wrap_azimuth(self.azimuth))
        if abs(abs(el) - np.pi / 2) < 1e-12:
            az = 0.0  # azimuth is degenerate at the poles
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)

    @classmethod
    def from_degrees(cls, azimuth, elevation):
        return cls(np.deg2rad(azimuth), np.deg2rad(elevation))

    @classmethod
    def from_vector(cls, v):
        x, y, z = np.asarray(v, dtype=float) / np.linalg.norm(v)
        return cls(np.arctan2(y, x), np.arcsin(np.clip(z, -1.0, 1.0)))

    def to_vector(self):
        ce = np.cos(self.elevation)
        return np.array([ce * np.cos(self.azimuth), ce * np.sin(self.azimuth),
                         np.sin(self.elevation)])

    @property
    def degrees(self):
        return float(np.rad2deg(self.azimuth)), float(np.rad2deg(self.elevation))


def vectors_to_angles(vectors):
    """Return (azimuth, elevation) arrays in radians for unit vectors [P, 3]."""
    v = np.asarray(vectors, dtype=float)
    az = np.arctan2(v[:, 1], v[:, 0])
    el = np.arcsin(np.clip(v[:, 2], -1.0, 1.0))
    az = np.where(np.abs(np.abs(el) - np.pi / 2) < 1e-12, 0.0, wrap_azimuth(az))
    return az, el


def angles_to_vectors(azimuth, elevation):
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


@dataclass(frozen=True)
class GridLayout:
    """An ordered set of unit vectors with optional quadrature weights.

    Weights default to uniform ``1/P``, which is exact for spherical
    t-designs.
    """

    vectors: np.ndarray
    kind: str = "custom"
    weights: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise ValueError("grid needs a nonempty [P, 3] array of vectors")
        if self.kind not in GRID_KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        norms = np.linalg.norm(v, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("grid points must be unit vectors")
        v = v / norms[:, None]
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(v),):
                raise ValueError("weights must have one entry per point")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.vectors)

    @property
    def n_points(self):
        return len(self.vectors)

    @property
    def angles(self):
        return vectors_to_angles(self.vectors)

    @property
    def quadrature_weights(self):
        if self.weights is None:
            return np.full(len(self), 1.0 / len(self))
        return self.weights

    def direction(self, index):
        az, el = vectors_to_angles(self.vectors[index:index + 1])
        return Direction(az[0], el[0])

    def min_separation(self):
        """Smallest pairwise angular distance in radians (O(P^2) memory in chunks)."""
        v = self.vectors
        if len(v) < 2:
            return np.inf
        best = np.inf
        for start in range(0, len(v), 1024):
            block = v[start:start + 1024]
            # chord length is accurate for tiny angles where arccos(dot) is not
            d = np.linalg.norm(block[:, None, :] - v[None, :, :], axis=-1)
            idx = np.arange(start, start + len(block))
            d[np.arange(len(block)), idx] = np.inf
            best = min(best, float(d.min()))
        return 2.0 * np.arcsin(min(best / 2.0, 1.0))

    def validate(self):
        """Raise ValueError if any two points coincide."""
        sep = self.min_separation()
        if sep <= MIN_SEPARATION:
            raise ValueError(f"duplicate grid points (min separation {sep:.3g} rad)")
        return self


def fibonacci_grid(n):
    """Spherical Fibonacci lattice with ``n`` points (deterministic)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    golden = np.pi * (3.0 - np.sqrt(5.0))
    az = golden * np.arange(n)
    r = np.sqrt(1.0 - z * z)
    v = np.stack([r * np.cos(az), r * np.sin(az), z], axis=1)
    return GridLayout(v, kind="fibonacci")


def _icosahedral_rotations():
    from scipy.spatial.transform import Rotation

    return Rotation.create_group("I").as_matrix()


def icosahedral_design():
    """60-point spherical 9-design: the icosahedral orbit of a point chosen so
    that the single degree-6 invariant harmonic vanishes on it.

    Degrees 1..5 and 7..9 carry no icosahedral invariants, so the orbit
    integrates every polynomial up to degree 9 exactly with equal weights.
    """
    from scipy.optimize import brentq
    from scipy.special import eval_legendre

    rot = _icosahedral_rotations()
    phi = (1 + np.sqrt(5)) / 2
    vertex = np.array([0.0, 1.0, phi]) / np.sqrt(1 + phi**2)
    vertices = np.unique(np.round(rot @ vertex, 12), axis=0)
    face = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    start = vertices[np.argmax(vertices @ face)]

    def point(s):
        p = (1 - s) * start + s * face
        return p / np.linalg.norm(p)

    def invariant(s):
        return eval_legendre(6, vertices @ point(s)).sum()

    s0 = brentq(invariant, 0.0, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    return GridLayout(rot @ point(s0), kind="icosahedral-design",
                      meta={"strength": 9})
