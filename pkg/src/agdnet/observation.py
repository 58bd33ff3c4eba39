"""Physical forward model: spectral response, synthetic data, spectral bicubic baseline.

Cubes are plain ``numpy`` arrays, channel first: an HS image is ``[s, h, w]``
and an RGB image is ``[3, h, w]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class SRF:
    """Spectral response function: a nonnegative ``3 x s`` matrix (rows R, G, B)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != 3:
            raise DimensionError(f"SRF matrix must be 3 x s, got {m.shape}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ParameterError("SRF entries must be finite and nonnegative")
        if np.any(m.sum(axis=1) <= 0):
            raise ParameterError("every SRF row must respond to at least one band")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def band_count(self) -> int:
        return self.matrix.shape[1]

    def centroids(self) -> np.ndarray:
        idx = np.arange(self.band_count)
        return (self.matrix * idx).sum(axis=1) / self.matrix.sum(axis=1)


def check_hs(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] < 4 or x.shape[1] < 1 or x.shape[2] < 1:
        raise DimensionError(f"HS cube must be [s>=4, h, w], got {x.shape}")
    return x


def check_rgb(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 3 or y.shape[0] != 3:
        raise DimensionError(f"RGB cube must be [3, h, w], got {y.shape}")
    return y


def apply_srf(x: np.ndarray, c: SRF, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Project an HS cube to RGB, ``y = C x + n`` per pixel; no clipping."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"expected [s, h, w] cube, got {x.shape}")
    s, h, w = x.shape
    if c.band_count != s:
        raise DimensionError(f"SRF has {c.band_count} bands, image has {s}")
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    y = (c.matrix @ x.reshape(s, h * w)).reshape(3, h, w)
    if noise_sigma > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_sigma, size=y.shape)
    return y


def synth_gaussian_srf(s: int, centers, widths) -> SRF:
    """Unit-row-sum Gaussian responses centred at ``centers`` (band units)."""
    if s < 4:
        raise ParameterError("need s >= 4 bands")
    centers = np.asarray(centers, dtype=np.float64)
    widths = np.asarray(widths, dtype=np.float64)
    if centers.shape != (3,) or widths.shape != (3,):
        raise ParameterError("need exactly three centers and three widths")
    if np.any(widths <= 0):
        raise ParameterError("SRF widths must be positive")
    idx = np.arange(s, dtype=np.float64)
    # log domain, so narrow rows degrade to one-hot instead of underflowing to 0
    logits = -((idx[None, :] - centers[:, None]) ** 2) / (2.0 * widths[:, None] ** 2)
    rows = np.exp(logits - logits.max(axis=1, keepdims=True))
    return SRF(rows / rows.sum(axis=1, keepdims=True))


def default_srf(s: int) -> SRF:
    """R, G, B rows peaking at 5s/6, s/2 and s/6 with width s/8."""
    return synth_gaussian_srf(s, [5 * s / 6, s / 2, s / 6], [s / 8] * 3)


def jittered_gaussian_srf(s: int, seed: int) -> SRF:
    """A random camera-like SRF around :func:`default_srf`."""
    rng = np.random.default_rng(seed)
    centers = np.array([5 * s / 6, s / 2, s / 6]) + rng.uniform(-s / 12, s / 12, size=3)
    widths = (s / 8) * rng.uniform(0.7, 1.4, size=3)
    return synth_gaussian_srf(s, centers, widths)


def _blur_matrix(n: int, sigma: float) -> np.ndarray:
    # dense Gaussian smoothing with reflected borders
    radius = max(1, int(np.ceil(3 * sigma)))
    offsets = np.arange(-radius, radius + 1)
    kern = np.exp(-(offsets ** 2) / (2 * sigma ** 2))
    kern /= kern.sum()
    mat = np.zeros((n, n))
    for i in range(n):
        for off, kv in zip(offsets, kern):
            j = i + off
            while j < 0 or j >= n:
                j = -j - 1 if j < 0 else 2 * n - j - 1
            mat[i, j] += kv
    return mat


def _spectral_signature(s: int, rng: np.random.Generator) -> np.ndarray:
    idx = np.arange(s, dtype=np.float64)
    sig = np.zeros(s)
    for _ in range(rng.integers(1, 4)):
        center = rng.uniform(-0.1 * s, 1.1 * s)
        width = rng.uniform(s / 8, s / 3)
        sig += rng.uniform(0.3, 1.0) * np.exp(-((idx - center) ** 2) / (2 * width ** 2))
    return sig


def _spatial_field(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    sigma = rng.uniform(1.5, 4.0)
    field = _blur_matrix(h, sigma) @ rng.normal(size=(h, w)) @ _blur_matrix(w, sigma).T
    # zero out the lower 40% so sums of fields still reach 0 somewhere
    return np.maximum(field - np.quantile(field, 0.4), 0.0)


def material_library(s: int, size: int, seed: int) -> np.ndarray:
    """``size`` random smooth spectral signatures, one per row."""
    if size < 1:
        raise ParameterError("library size must be >= 1")
    rng = np.random.default_rng(seed)
    return np.stack([_spectral_signature(s, rng) for _ in range(size)])


def synth_scene(s: int, h: int, w: int, rank: int, seed: int, library: np.ndarray | None = None) -> np.ndarray:
    """Random nonnegative HS cube whose ``s x hw`` flattening has rank <= ``rank``.

    Built as a sum of ``rank`` outer products of smooth spectral signatures and
    thresholded smooth spatial fields, then scaled so its maximum is 1. With a
    ``library`` (``[n, s]``, see :func:`material_library`) the signatures are
    ``rank`` distinct rows of it, so scenes share materials; otherwise each
    scene draws fresh signatures.
    """
    if s < 4 or h < 1 or w < 1:
        raise ParameterError(f"invalid cube extents ({s}, {h}, {w})")
    if not 1 <= rank <= s:
        raise ParameterError(f"rank must be in [1, {s}], got {rank}")
    rng = np.random.default_rng(seed)
    if library is not None:
        library = np.asarray(library, dtype=np.float64)
        if library.ndim != 2 or library.shape[1] != s:
            raise DimensionError(f"library must be [n, {s}], got {library.shape}")
        if rank > library.shape[0]:
            raise ParameterError(f"rank {rank} exceeds library size {library.shape[0]}")
        signatures = library[rng.choice(library.shape[0], size=rank, replace=False)]
    else:
        signatures = None
    cube = np.zeros((s, h, w))
    for r in range(rank):
        sig = signatures[r] if signatures is not None else _spectral_signature(s, rng)
        cube += sig[:, None, None] * _spatial_field(h, w, rng)[None]
    peak = cube.max()
    if peak <= 0:
        raise ParameterError("degenerate scene; try another seed")
    # pure scaling keeps the rank bound (a shift would add a rank-1 term)
    return cube / peak


class BicubicResult(NamedTuple):
    cube: np.ndarray
    degenerate: bool


def _hermite_weights(knots: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Matrix ``B`` with ``B @ values`` = Catmull-Rom curve through ``(knots, values)``.

    Interior tangents are centred differences, end tangents one-sided; outside
    the knot range the curve holds its end value.
    """
    k = len(knots)
    # tangent_j = T[j] @ values
    tan = np.zeros((k, k))
    tan[0, 0], tan[0, 1] = -1 / (knots[1] - knots[0]), 1 / (knots[1] - knots[0])
    tan[-1, -2], tan[-1, -1] = -1 / (knots[-1] - knots[-2]), 1 / (knots[-1] - knots[-2])
    for j in range(1, k - 1):
        d = knots[j + 1] - knots[j - 1]
        tan[j, j - 1], tan[j, j + 1] = -1 / d, 1 / d
    out = np.zeros((len(positions), k))
    for row, t in enumerate(positions):
        if t <= knots[0]:
            out[row, 0] = 1.0
            continue
        if t >= knots[-1]:
            out[row, -1] = 1.0
            continue
        j = int(np.searchsorted(knots, t, side="right")) - 1
        dt = knots[j + 1] - knots[j]
        u = (t - knots[j]) / dt
        h00 = 2 * u ** 3 - 3 * u ** 2 + 1
        h10 = u ** 3 - 2 * u ** 2 + u
        h01 = -2 * u ** 3 + 3 * u ** 2
        h11 = u ** 3 - u ** 2
        out[row, j] += h00
        out[row, j + 1] += h01
        out[row] += h10 * dt * tan[j] + h11 * dt * tan[j + 1]
    return out


def catmull_rom(knots, values, positions) -> np.ndarray:
    """Evaluate the clamped-end Catmull-Rom curve through the knots at ``positions``."""
    knots = np.asarray(knots, dtype=np.float64)
    order = np.argsort(knots)
    weights = _hermite_weights(knots[order], np.asarray(positions, dtype=np.float64))
    return weights @ np.asarray(values, dtype=np.float64)[order]


def spectral_bicubic(y: np.ndarray, c: SRF, return_status: bool = False):
    """Interpolate each pixel's RGB triple across the spectrum.

    The three channel values are placed at the SRF row centroids. If two
    centroids lie within half a band of each other every band gets the channel
    mean instead; ``return_status=True`` returns a :class:`BicubicResult`
    whose ``degenerate`` flag reports that fallback.
    """
    y = check_rgb(y)
    _, h, w = y.shape
    s = c.band_count
    anchors = c.centroids()
    srt = np.sort(anchors)
    degenerate = bool(np.any(np.diff(srt) < 0.5))
    flat = y.reshape(3, h * w)
    if degenerate:
        x = np.broadcast_to(flat.mean(axis=0), (s, h * w))
    else:
        order = np.argsort(anchors)
        weights = _hermite_weights(anchors[order], np.arange(s, dtype=np.float64))
        x = weights @ flat[order]
    cube = np.clip(x, 0.0, 1.0).reshape(s, h, w)
    if return_status:
        return BicubicResult(cube, degenerate)
    return cube
