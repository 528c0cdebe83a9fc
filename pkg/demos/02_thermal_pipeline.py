"""16-bit radiometric thermal to 8-bit: min-max stretch, CLAHE, bilateral smoothing."""
# %%
import numpy as np

from rgbtkit.thermalproc import (FfcEvent, ThermalConfig, bilateral_filter, clahe, filter_ffc,
                                 minmax_normalize, thermal_to_8bit)
from rgbtkit.synthetic import thermal_raw_frame

rng = np.random.default_rng(0)
raw = thermal_raw_frame(rng, 128, 160, t=0.0)
print("raw:", raw.dtype, raw.min(), raw.max())

# %% Each stage on its own.
stretched = minmax_normalize(raw).image
equalized = clahe(stretched, tiles=(8, 8), clip_limit=2.0)
smoothed = bilateral_filter(equalized, radius=4, sigma_color=25.0, sigma_space=5.0)
for name, img in (("minmax", stretched), ("clahe", equalized), ("bilateral", smoothed)):
    print(f"{name:>9}: mean {img.mean():6.1f}  std {img.std():5.1f}  unique {len(np.unique(img))}")

# %% The chained call gives the same bytes.
out, degenerate = thermal_to_8bit(raw, ThermalConfig())
print("chain equals stages:", np.array_equal(out, smoothed), "degenerate:", degenerate)

# %% A flat frame (e.g. during a shutter event) is flagged, not divided by zero.
print(thermal_to_8bit(np.full((8, 8), 31000, np.uint16)))

# %% Frames captured during flat-field correction are dropped with a 100 ms guard.
ts = [i * 100_000_000 for i in range(30)]
kept = filter_ffc(ts, [FfcEvent(1_000_000_000, 1_500_000_000)])
print(f"kept {len(kept)}/{len(ts)} frames")
