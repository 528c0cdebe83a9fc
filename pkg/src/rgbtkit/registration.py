"""Depth-based RGB to thermal registration by forward splatting.

RGB pixels with valid depth are lifted to 3D, moved into the thermal frame and
projected with the thermal intrinsics. A z-buffer keeps the nearest surface per
thermal pixel and bilinear splatting spreads every sample over its four
neighbouring pixels. Pixels no sample reaches stay black with zero weight; no
hole filling is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._util import to_uint8
from .errors import ValidationError
from .geometry import Calibration, CameraModel, RigidTransform, _require_pinhole

# projected coordinates this close to an integer are snapped onto it
SNAP_EPS = 1e-9


@dataclass
class SplatSamples:
    """Struct-of-arrays list of samples in thermal pixel coordinates."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    payload: np.ndarray  # (N, C)
    src_index: Optional[np.ndarray] = None  # flat index of the originating RGB pixel

    def __len__(self):
        return len(self.u)

    def take(self, idx) -> "SplatSamples":
        return SplatSamples(self.u[idx], self.v[idx], self.depth[idx], self.payload[idx],
                            None if self.src_index is None else self.src_index[idx])


@dataclass
class SplatResult:
    payload: np.ndarray  # (H, W, C) float
    mask: np.ndarray  # (H, W) accumulated weight
    depth: np.ndarray  # (H, W) z-buffer depth, 0 where untouched


@dataclass
class RegisteredPair:
    warped: np.ndarray  # (H, W, C) uint8 in the thermal pixel grid
    mask: np.ndarray  # (H, W) float32 weight
    thermal: Optional[np.ndarray] = None


def valid_depth(depth: np.ndarray) -> np.ndarray:
    return np.isfinite(depth) & (depth > 0)


def lift_rgb(depth: np.ndarray, cam_rgb: CameraModel, T_rgb_to_thr: RigidTransform,
             cam_thr: CameraModel, rgb: np.ndarray) -> SplatSamples:
    """Backproject, transform and project every valid-depth RGB pixel.

    Samples behind the thermal camera or farther than one pixel outside the
    thermal image are culled.
    """
    _require_pinhole(cam_rgb)
    _require_pinhole(cam_thr)
    depth = np.asarray(depth, dtype=np.float64)
    rgb = np.asarray(rgb)
    if depth.shape != rgb.shape[:2]:
        raise ValidationError(f"depth {depth.shape} and rgb {rgb.shape[:2]} sizes differ")
    if depth.shape != (cam_rgb.height, cam_rgb.width):
        raise ValidationError("depth map size does not match the RGB camera")
    h, w = depth.shape
    ok = valid_depth(depth)
    vv, uu = np.nonzero(ok)
    d = depth[vv, uu]
    X = (uu - cam_rgb.cx) / cam_rgb.fx * d
    Y = (vv - cam_rgb.cy) / cam_rgb.fy * d
    P = np.stack([X, Y, d], axis=1) @ T_rgb_to_thr.rotation.T + T_rgb_to_thr.translation
    Z = P[:, 2]
    front = Z > 0
    Zs = np.where(front, Z, 1.0)
    u = cam_thr.fx * P[:, 0] / Zs + cam_thr.cx
    v = cam_thr.fy * P[:, 1] / Zs + cam_thr.cy
    u, v = _snap(u), _snap(v)
    keep = front & (u > -1) & (u < cam_thr.width) & (v > -1) & (v < cam_thr.height)
    payload = rgb[vv, uu].astype(np.float64).reshape(len(vv), -1)
    return SplatSamples(u[keep], v[keep], Z[keep], payload[keep], (vv * w + uu)[keep])


def _snap(x):
    r = np.round(x)
    return np.where(np.abs(x - r) <= SNAP_EPS, r, x)


def _neighbours(samples: SplatSamples, width: int, height: int):
    """Flat target index, bilinear weight and sample index for every live splat tap."""
    u, v = _snap(samples.u), _snap(samples.v)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    ax, ay = u - x0, v - y0
    taps = []
    for dx, dy, wgt in ((0, 0, (1 - ax) * (1 - ay)), (1, 0, ax * (1 - ay)),
                        (0, 1, (1 - ax) * ay), (1, 1, ax * ay)):
        x, y = x0 + dx, y0 + dy
        live = (wgt > 0) & (x >= 0) & (x < width) & (y >= 0) & (y < height)
        idx = np.nonzero(live)[0]
        taps.append((y[idx] * width + x[idx], wgt[idx], idx))
    pix = np.concatenate([t[0] for t in taps])
    wgt = np.concatenate([t[1] for t in taps])
    sid = np.concatenate([t[2] for t in taps])
    return pix, wgt, sid


def _canonical_order(samples: SplatSamples) -> np.ndarray:
    keys = [samples.payload[:, c] for c in range(samples.payload.shape[1] - 1, -1, -1)]
    return np.lexsort(keys + [samples.depth, samples.u, samples.v])


def zbuffer_splat(samples: SplatSamples, size, depth_tol: float = 0.01) -> SplatResult:
    """Two-pass z-buffered bilinear splat onto a ``size = (W, H)`` grid.

    Pass 1 records the nearest depth reaching each pixel. Pass 2 lets a sample
    contribute its bilinear weight to a pixel only if its depth is within
    ``depth_tol`` (relative) of that minimum. Samples are put in a canonical
    order first, so the output is independent of input order.
    """
    width, height = int(size[0]), int(size[1])
    if width < 1 or height < 1:
        raise ValidationError("splat target size must be positive")
    if not 0 <= depth_tol < 1:
        raise ValidationError("depth_tol must lie in [0, 1)")
    channels = samples.payload.shape[1] if samples.payload.ndim == 2 else 1
    npix = width * height
    if len(samples) == 0:
        return SplatResult(np.zeros((height, width, channels)), np.zeros((height, width)),
                           np.zeros((height, width)))
    samples = samples.take(_canonical_order(samples))
    pix, wgt, sid = _neighbours(samples, width, height)
    d = samples.depth[sid]

    zbuf = np.full(npix, np.inf)
    np.minimum.at(zbuf, pix, d)

    visible = d <= zbuf[pix] * (1.0 + depth_tol)
    pix, wgt, sid = pix[visible], wgt[visible], sid[visible]
    mask = np.zeros(npix)
    np.add.at(mask, pix, wgt)
    acc = np.zeros((npix, channels))
    np.add.at(acc, pix, wgt[:, None] * samples.payload[sid])
    touched = mask > 0
    payload = np.zeros_like(acc)
    payload[touched] = acc[touched] / mask[touched, None]
    zbuf[~np.isfinite(zbuf)] = 0.0
    return SplatResult(payload.reshape(height, width, channels), mask.reshape(height, width),
                       zbuf.reshape(height, width))


def register_pair(rgb: np.ndarray, depth: np.ndarray, calib: Calibration,
                  thermal8: Optional[np.ndarray] = None, depth_tol: float = 0.01,
                  rgb_camera: str = "rgb", thermal_camera: str = "thermal",
                  transform: str = "rgb_to_thermal") -> RegisteredPair:
    """Warp an RGB image into the thermal pixel grid."""
    cam_rgb = calib.camera(rgb_camera)
    cam_thr = calib.camera(thermal_camera)
    T = calib.transform(transform)
    if thermal8 is not None and np.asarray(thermal8).shape[:2] != (cam_thr.height, cam_thr.width):
        raise ValidationError("thermal frame size does not match the thermal camera")
    samples = lift_rgb(depth, cam_rgb, T, cam_thr, rgb)
    res = zbuffer_splat(samples, (cam_thr.width, cam_thr.height), depth_tol)
    warped = to_uint8(res.payload)
    if np.asarray(rgb).ndim == 2:
        warped = warped[..., 0]
    return RegisteredPair(warped, res.mask.astype(np.float32), thermal8)


def alpha_blend(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """``round((1 - alpha) * a + alpha * b)``; a grey ``a`` is broadcast over b's channels."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[:2] != b.shape[:2]:
        raise ValidationError(f"blend inputs differ in size: {a.shape[:2]} vs {b.shape[:2]}")
    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    if af.ndim == 2 and bf.ndim == 3:
        af = np.repeat(af[..., None], bf.shape[2], axis=2)
    elif bf.ndim == 2 and af.ndim == 3:
        bf = np.repeat(bf[..., None], af.shape[2], axis=2)
    if alpha == 0.0:
        return af.astype(np.uint8)
    if alpha == 1.0:
        return bf.astype(np.uint8)
    return to_uint8((1.0 - alpha) * af + alpha * bf)
