"""Camera geometry: pinhole round trips, rigid transforms and fisheye rectification."""
# %%
import numpy as np

from rgbtkit.geometry import (CameraModel, RigidTransform, backproject, build_rectification_map, compose,
                              invert, project, remap_bilinear, transform_point)
from rgbtkit.synthetic import rotation_from_euler

cam = CameraModel(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)
print("K =\n", cam.K)

# %% Back-project three pixels at known depths and project them again.
u = np.array([0.0, 319.5, 639.0])
v = np.array([0.0, 239.5, 479.0])
d = np.array([1.0, 5.0, 40.0])
P = backproject(u, v, d, cam)
print("points (m):\n", P)
print("reprojected:", project(P, cam))

# %% Rigid transforms compose and invert exactly up to rounding.
T = RigidTransform(rotation_from_euler(0.01, -0.02, 0.005), np.array([0.1, 0.0, 0.02]))
print("T^-1 T P == P:", np.allclose(transform_point(compose(invert(T), T), P), P))

# %% Rectify an equidistant fisheye thermal frame onto a pinhole grid.
fisheye = CameraModel(180.0, 180.0, 159.5, 127.5, 320, 256, distortion=(-0.02, 0.004, 0.0, 0.0))
target = fisheye.as_pinhole()
rmap = build_rectification_map(fisheye, target)
yy, xx = np.mgrid[0:256, 0:320]
checker = (((xx // 20) + (yy // 20)) % 2 * 60000).astype(np.uint16)
rect, valid = remap_bilinear(checker, rmap)
print(f"rectified {rect.shape} {rect.dtype}, valid fraction {valid.mean():.3f}")
