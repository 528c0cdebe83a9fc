"""Evaluation protocols: cross-modal place recognition, segmentation, depth, scaling tables."""
# %%
import numpy as np

from rgbtkit.evaluate import (depth_metrics, dice_loss, evaluate_vpr, format_scaling_table, miou, one_hot,
                              scaling_report, upsample_nearest, weighted_mean_recall)

rng = np.random.default_rng(0)

# %% Thermal queries against an RGB database along a 1-D route.
n = 60
route = np.stack([np.arange(n) * 5.0, np.zeros(n), np.zeros(n)], axis=1)
scene = rng.standard_normal((n, 16))
db = scene + 0.3 * rng.standard_normal((n, 16))
q = scene + 0.3 * rng.standard_normal((n, 16))
# the paired RGB frame is excluded, so a hit must come from a neighbouring place
out = evaluate_vpr(q, db, route, route, radius=10.0, ks=(1, 5), paired=list(range(n)))
print(out)
print("weighted over two sequences:", weighted_mean_recall([(0.6, 40), (0.9, 10)]))

# %% Segmentation from a coarse patch grid.
coarse = rng.dirichlet(np.ones(4), size=(4, 4))
probs = upsample_nearest(coarse, factor=14)
gt = rng.integers(0, 4, (56, 56))
per_class, mean_iou = miou(probs.argmax(-1), gt, 4)
print("IoU per class:", per_class.round(3), "mIoU:", round(mean_iou, 3))
print("Dice loss:", round(dice_loss(probs, one_hot(gt, 4))[0], 4))

# %% Depth.
gt_depth = rng.uniform(1, 30, (48, 64))
print(depth_metrics(gt_depth * rng.uniform(0.9, 1.1, gt_depth.shape), gt_depth))

# %% Dataset-scaling tables.
runs = [("B", "vpr", 0.41), ("B+V", "vpr", 0.47), ("B+V+F+S+T", "vpr", 0.58), ("B+V+F", "vpr", 0.52)]
print(format_scaling_table(scaling_report(runs)))
