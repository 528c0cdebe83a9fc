"""Warp RGB into the thermal view using depth, with z-buffered forward splatting."""
# %%
import numpy as np

from rgbtkit.geometry import Calibration, CameraModel
from rgbtkit.registration import alpha_blend, lift_rgb, register_pair, zbuffer_splat
from rgbtkit.synthetic import random_rig, two_plane_scene

rng = np.random.default_rng(3)
depth, rgb, plane = two_plane_scene(rng, 64, 64)
cam = CameraModel(70.0, 70.0, 31.5, 31.5, 64, 64)
T = random_rig(rng)
print("rig rotation:\n", T.rotation.round(4), "\ntranslation:", T.translation)

# %% Step by step: lift every valid RGB pixel into the thermal image plane, then splat.
samples = lift_rgb(depth, cam, T, cam, rgb)
splat = zbuffer_splat(samples, (64, 64), depth_tol=0.01)
print(f"{len(samples)} samples, covered pixels {(splat.mask > 0).mean():.3f}")

# %% Or in one call from a calibration.
calib = Calibration({"rgb": cam, "thermal": cam}, {"rgb_to_thermal": T})
pair = register_pair(rgb, depth, calib, depth_tol=0.01)
print("warped:", pair.warped.shape, pair.warped.dtype, "mask mean:", float(pair.mask.mean()))

# %% Overlay for visual inspection.
thermal8 = np.repeat(rng.integers(0, 256, (64, 64, 1), dtype=np.uint8), 3, axis=-1)
overlay = alpha_blend(pair.warped, thermal8, 0.5)
print("overlay:", overlay.shape, overlay.dtype)
