"""Camera models, rigid transforms and fisheye rectification maps.

Conventions: +z forward, +u right, +v down, pixel centres at integer
coordinates. Every function here is pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import round_half_away
from .errors import BehindCameraError, DomainError, UnsupportedModelError, ValidationError

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    # () for a pure pinhole, (k1, k2, k3, k4) for the equidistant fisheye model
    distortion: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "distortion", tuple(float(k) for k in self.distortion))
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValidationError("camera size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(f"principal point ({self.cx}, {self.cy}) outside image")
        if len(self.distortion) not in (0, 4):
            raise UnsupportedModelError(
                f"distortion must be empty or 4 fisheye coefficients, got {len(self.distortion)}")
        if not all(math.isfinite(k) for k in self.distortion):
            raise ValidationError("fisheye coefficients must be finite")

    @property
    def is_fisheye(self) -> bool:
        return len(self.distortion) == 4

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_pinhole(self) -> "CameraModel":
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "distortion": list(self.distortion)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]), tuple(d.get("distortion", ())))
        except KeyError as e:
            raise ValidationError(f"camera entry missing field {e}") from None


@dataclass(frozen=True)
class RigidTransform:
    """x' = R x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValidationError("rotation is not a proper orthonormal matrix")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        try:
            return cls(np.asarray(d["rotation"], float).reshape(3, 3), np.asarray(d["translation"], float))
        except (KeyError, ValueError) as e:
            raise ValidationError(f"bad transform entry: {e}") from None

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation)
                    and np.array_equal(self.translation, other.translation))

    __hash__ = None


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Apply ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


def transform_point(T: RigidTransform, P) -> np.ndarray:
    """Apply ``T`` to one point (shape 3) or many (shape N x 3)."""
    P = np.asarray(P, dtype=np.float64)
    return P @ T.rotation.T + T.translation


def _require_pinhole(cam: CameraModel):
    if cam.is_fisheye:
        raise UnsupportedModelError("operation requires a rectified (pinhole) camera model")


def backproject(u, v, depth, cam: CameraModel) -> np.ndarray:
    """Lift pixel(s) at metric depth to camera-frame point(s).

    Scalars give a 3-vector, arrays of shape S give S x 3.
    """
    _require_pinhole(cam)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise DomainError("depth must be positive")
    return np.stack([(u - cam.cx) / cam.fx * d, (v - cam.cy) / cam.fy * d, d * np.ones_like(u)], axis=-1)


def project(P, cam: CameraModel):
    """Return ``(u, v, z)``. Pixels outside the image are not culled here."""
    _require_pinhole(cam)
    P = np.asarray(P, dtype=np.float64)
    X, Y, Z = P[..., 0], P[..., 1], P[..., 2]
    if np.any(~(Z > 0)):
        raise BehindCameraError("point at or behind the camera plane")
    return cam.fx * X / Z + cam.cx, cam.fy * Y / Z + cam.cy, Z


@dataclass(frozen=True)
class RectificationMap:
    """Destination-to-source lookup; invalid entries hold NaN."""

    u_src: np.ndarray
    v_src: np.ndarray
    src_width: int
    src_height: int

    @property
    def shape(self):
        return self.u_src.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.u_src) & np.isfinite(self.v_src)


def fisheye_distort_angle(theta, k):
    t2 = theta * theta
    return theta * (1.0 + k[0] * t2 + k[1] * t2 ** 2 + k[2] * t2 ** 3 + k[3] * t2 ** 4)


def build_rectification_map(src: CameraModel, dst: CameraModel) -> RectificationMap:
    """Build the lookup that resamples a ``src`` image into the ``dst`` pinhole view.

    A fisheye source goes through the equidistant polynomial; a pinhole source
    short-circuits to a plain intrinsics change (identity when both match).
    """
    _require_pinhole(dst)
    v, u = np.mgrid[0:dst.height, 0:dst.width].astype(np.float64)
    if src == dst:
        return RectificationMap(u, v, src.width, src.height)
    x = (u - dst.cx) / dst.fx
    y = (v - dst.cy) / dst.fy
    if src.is_fisheye:
        r = np.hypot(x, y)
        theta_d = fisheye_distort_angle(np.arctan(r), src.distortion)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, theta_d / r, 1.0)
        x, y = x * scale, y * scale
    us = src.fx * x + src.cx
    vs = src.fy * y + src.cy
    ok = (us >= 0) & (us <= src.width - 1) & (vs >= 0) & (vs <= src.height - 1)
    us[~ok] = np.nan
    vs[~ok] = np.nan
    return RectificationMap(us, vs, src.width, src.height)


# The task's name for the same builder; fisheye is the only distorted model supported.
build_fisheye_rectification_map = build_rectification_map


def remap_bilinear(img: np.ndarray, rmap: RectificationMap):
    """Resample ``img`` through ``rmap``. Returns ``(image, valid_mask)``.

    Integer inputs are rounded back to their dtype; invalid pixels are 0.
    """
    img = np.asarray(img)
    if img.shape[:2] != (rmap.src_height, rmap.src_width):
        raise ValidationError(f"image shape {img.shape[:2]} does not match map source "
                              f"{(rmap.src_height, rmap.src_width)}")
    valid = rmap.valid
    us = np.where(valid, rmap.u_src, 0.0)
    vs = np.where(valid, rmap.v_src, 0.0)
    x0 = np.floor(us).astype(np.intp)
    y0 = np.floor(vs).astype(np.intp)
    ax = us - x0
    ay = vs - y0
    # on the last row/column the far neighbour has zero weight; clamp its index
    x1 = np.minimum(x0 + 1, rmap.src_width - 1)
    y1 = np.minimum(y0 + 1, rmap.src_height - 1)
    src = img.astype(np.float64)
    if src.ndim == 3:
        ax, ay = ax[..., None], ay[..., None]
    out = ((1 - ay) * ((1 - ax) * src[y0, x0] + ax * src[y0, x1])
           + ay * ((1 - ax) * src[y1, x0] + ax * src[y1, x1]))
    m = valid if out.ndim == 2 else valid[..., None]
    out = np.where(m, out, 0.0)
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        out = np.clip(round_half_away(out), info.min, info.max).astype(img.dtype)
    return out, valid


@dataclass(frozen=True)
class Calibration:
    cameras: dict
    transforms: dict

    def camera(self, name: str) -> CameraModel:
        try:
            return self.cameras[name]
        except KeyError:
            raise ValidationError(f"calibration has no camera {name!r}") from None

    def transform(self, name: str) -> RigidTransform:
        try:
            return self.transforms[name]
        except KeyError:
            raise ValidationError(f"calibration has no transform {name!r}") from None

    def to_dict(self) -> dict:
        return {"cameras": {k: c.to_dict() for k, c in self.cameras.items()},
                "transforms": {k: t.to_dict() for k, t in self.transforms.items()}}


def load_calibration(path) -> Calibration:
    with open(path) as f:
        d = json.load(f)
    return Calibration(
        cameras={k: CameraModel.from_dict(v) for k, v in d.get("cameras", {}).items()},
        transforms={k: RigidTransform.from_dict(v) for k, v in d.get("transforms", {}).items()},
    )


def save_calibration(calib: Calibration, path):
    Path(path).write_text(json.dumps(calib.to_dict(), indent=2) + "\n")
