"""16-bit thermal to 8-bit conversion (min-max, CLAHE, bilateral) and FFC filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._util import round_half_away
from .errors import ValidationError

NBINS = 256


class Converted(NamedTuple):
    image: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class ThermalConfig:
    tiles: tuple = (8, 8)  # (tiles across x, tiles across y)
    clip_limit: float = 2.0
    radius: int = 4
    sigma_color: float = 25.0
    sigma_space: float = 5.0


@dataclass(frozen=True)
class FfcEvent:
    start_ns: int
    end_ns: int

    def __post_init__(self):
        if not self.start_ns < self.end_ns:
            raise ValidationError(f"FFC event start {self.start_ns} must precede end {self.end_ns}")


def minmax_normalize(frame: np.ndarray) -> Converted:
    """Stretch the frame's own [min, max] onto [0, 255].

    A zero-span frame maps to zeros and is flagged degenerate.
    """
    x = np.asarray(frame)
    lo, hi = int(x.min()), int(x.max())
    if hi == lo:
        return Converted(np.zeros(x.shape, np.uint8), True)
    out = round_half_away(255.0 * (x.astype(np.float64) - lo) / (hi - lo))
    return Converted(out.astype(np.uint8), False)


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.array([(i * n) // tiles for i in range(tiles + 1)])


def _clip_histogram(hist: np.ndarray, limit: int) -> np.ndarray:
    # excess is spread as a uniform integer batch plus a strided residual
    excess = int(np.maximum(hist - limit, 0).sum())
    hist = np.minimum(hist, limit)
    batch, residual = divmod(excess, NBINS)
    hist = hist + batch
    if residual:
        step = max(NBINS // residual, 1)
        hist[::step][:residual] += 1
    return hist


def _tile_luts(img: np.ndarray, tx: int, ty: int, clip_limit: float) -> np.ndarray:
    h, w = img.shape
    xe, ye = _tile_edges(w, tx), _tile_edges(h, ty)
    luts = np.empty((ty, tx, NBINS), np.int64)
    for j in range(ty):
        for i in range(tx):
            tile = img[ye[j]:ye[j + 1], xe[i]:xe[i + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=NBINS).astype(np.int64)
            if math.isfinite(clip_limit):
                hist = _clip_histogram(hist, max(int(clip_limit * n / NBINS), 1))
            cdf = np.cumsum(hist)
            # round(255 * cdf / n) in exact integer arithmetic
            luts[j, i] = (510 * cdf + n) // (2 * n)
    return luts


def _interp_coords(n: int, tiles: int):
    size = n / tiles
    pos = (np.arange(n) + 0.5) / size - 0.5
    lo = np.floor(pos).astype(np.intp)
    frac = pos - lo
    return np.clip(lo, 0, tiles - 1), np.clip(lo + 1, 0, tiles - 1), frac


def clahe(img: np.ndarray, tiles=(8, 8), clip_limit: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalisation of an 8-bit image.

    ``tiles`` is (tiles across x, tiles across y). ``clip_limit`` is relative to
    the mean bin height; ``math.inf`` disables clipping. If the grid is finer
    than the image, a single tile is used.
    """
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValidationError("clahe expects an 8-bit image")
    tx, ty = int(tiles[0]), int(tiles[1])
    if tx < 1 or ty < 1:
        raise ValidationError("tile counts must be >= 1")
    if not clip_limit >= 1:
        raise ValidationError("clip_limit must be >= 1")
    h, w = img.shape
    if tx > w or ty > h:
        tx = ty = 1
    luts = _tile_luts(img, tx, ty, clip_limit)
    x1, x2, wx = _interp_coords(w, tx)
    y1, y2, wy = _interp_coords(h, ty)
    X1, X2, WX = x1[None, :], x2[None, :], wx[None, :]
    Y1, Y2, WY = y1[:, None], y2[:, None], wy[:, None]
    top = (1 - WX) * luts[Y1, X1, img] + WX * luts[Y1, X2, img]
    bot = (1 - WX) * luts[Y2, X1, img] + WX * luts[Y2, X2, img]
    out = (1 - WY) * top + WY * bot
    return np.clip(round_half_away(out), 0, 255).astype(np.uint8)


def range_weights(sigma_color: float) -> np.ndarray:
    """exp(-d^2 / 2 sigma^2) for every |d| an 8-bit image can produce."""
    denom = 2.0 * sigma_color * sigma_color
    return np.array([math.exp(-(d * d) / denom) for d in range(NBINS)])


def spatial_weights(radius: int, sigma_space: float) -> np.ndarray:
    denom = 2.0 * sigma_space * sigma_space
    r = radius
    return np.array([[math.exp(-(dx * dx + dy * dy) / denom) for dx in range(-r, r + 1)]
                     for dy in range(-r, r + 1)])


def bilateral_filter(img: np.ndarray, radius: int = 4, sigma_color: float = 25.0,
                     sigma_space: float = 5.0) -> np.ndarray:
    """Edge-preserving smoothing over a (2r+1)^2 window with replicated borders.

    Window terms are accumulated in row-major offset order, so the result
    does not depend on how pixels are scheduled.
    """
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValidationError("bilateral_filter expects an 8-bit image")
    if radius < 1 or not (sigma_color > 0 and sigma_space > 0):
        raise ValidationError("radius must be >= 1 and sigmas positive")
    r = int(radius)
    h, w = img.shape
    lut = range_weights(sigma_color)
    spatial = spatial_weights(r, sigma_space)
    centre = img.astype(np.intp)
    padded = np.pad(img, r, mode="edge").astype(np.intp)
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            q = padded[dy:dy + h, dx:dx + w]
            wgt = spatial[dy, dx] * lut[np.abs(q - centre)]
            num += wgt * q
            den += wgt
    return np.clip(round_half_away(num / den), 0, 255).astype(np.uint8)


def thermal_to_8bit(frame: np.ndarray, cfg: ThermalConfig = ThermalConfig()) -> Converted:
    """Min-max normalise, then CLAHE, then bilateral filter."""
    norm = minmax_normalize(frame)
    if norm.degenerate:
        return norm
    eq = clahe(norm.image, cfg.tiles, cfg.clip_limit)
    out = bilateral_filter(eq, cfg.radius, cfg.sigma_color, cfg.sigma_space)
    return Converted(out, False)


def validate_ffc_events(events: Sequence[FfcEvent]):
    for a, b in zip(events, events[1:]):
        if b.start_ns <= a.end_ns:
            raise ValidationError(f"FFC events overlap or are unsorted: {a} then {b}")


def filter_ffc(timestamps: Sequence[int], events: Sequence[FfcEvent], guard_ns: int = 100_000_000) -> list:
    """Drop timestamps inside any [start - guard, end + guard]; order is preserved."""
    validate_ffc_events(events)
    if not events:
        return list(timestamps)
    ts = np.asarray(timestamps, dtype=np.int64)
    keep = np.ones(len(ts), bool)
    for ev in events:
        keep &= ~((ts >= ev.start_ns - guard_ns) & (ts <= ev.end_ns + guard_ns))
    return [t for t, k in zip(timestamps, keep) if k]
