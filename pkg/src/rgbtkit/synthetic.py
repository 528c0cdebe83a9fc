"""Synthetic scenes, rigs and the shipped mini-dataset.

``make_mini_dataset`` regenerates ``rgbtkit/data/mini`` byte for byte from a seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import MINI_DATASET
from .crossmodal import EmbeddingSet
from .dataset import NS_PER_S, DatasetManifest, SequenceRecord, save_manifest
from .geometry import Calibration, CameraModel, RigidTransform, save_calibration
from .io import write_embeddings, write_pfm, write_pnm, write_rgtd
from .thermalproc import FfcEvent

MINI_DIR = MINI_DATASET


def rotation_from_euler(rx, ry, rz):
    cx, sx, cy, sy, cz, sz = np.cos(rx), np.sin(rx), np.cos(ry), np.sin(ry), np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def random_rig(rng, max_angle_deg=3.0, max_offset=0.3) -> RigidTransform:
    """A plausible RGB-to-thermal extrinsic: small rotation, decimetre-scale baseline."""
    ang = np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg, 3))
    return RigidTransform(rotation_from_euler(*ang), rng.uniform(-max_offset, max_offset, 3))


def two_plane_scene(rng, height, width):
    """Depth, colours and plane labels (0 near, 1 far) for a box in front of a wall."""
    depth = np.full((height, width), rng.uniform(6.0, 10.0))
    plane = np.ones((height, width), np.uint8)
    h0, w0 = rng.integers(height // 4, height // 2), rng.integers(width // 4, width // 2)
    y0, x0 = rng.integers(0, height - h0), rng.integers(0, width - w0)
    depth[y0:y0 + h0, x0:x0 + w0] = rng.uniform(1.5, 3.0)
    plane[y0:y0 + h0, x0:x0 + w0] = 0
    rgb = rng.integers(0, 256, (height, width, 3), dtype=np.uint8)
    return depth, rgb, plane


def thermal_raw_frame(rng, height, width, t):
    """Smooth 16-bit radiometric-looking frame with a warm blob and sensor noise."""
    y, x = np.mgrid[0:height, 0:width]
    cx, cy = width * (0.3 + 0.4 * np.sin(t)), height * 0.5
    blob = 4000 * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * (width / 6) ** 2))
    base = 22000 + 800 * y / height + blob + rng.normal(0, 60, (height, width))
    return np.clip(base, 0, 65535).astype(np.uint16)


def place_embeddings(rng, positions, dim=16, noise=0.25, shared=None):
    """Descriptors that vary smoothly with position, plus modality-specific noise."""
    if shared is None:
        shared = rng.standard_normal((dim, positions.shape[1]))
    feats = np.concatenate([np.sin(positions @ shared.T / 4.0), np.cos(positions @ shared.T / 7.0)], axis=1)
    return feats + noise * rng.standard_normal(feats.shape), shared


def make_mini_dataset(out_dir=MINI_DIR, seed=0):
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    W, H = 32, 24
    cam_rgb = CameraModel(30.0, 30.0, 15.5, 11.5, W, H)
    cam_thr = CameraModel(28.0, 28.0, 15.5, 11.5, W, H)
    cam_raw = CameraModel(26.0, 26.0, 15.5, 11.5, W, H, (0.02, -0.004, 0.0005, 0.0))
    T = RigidTransform(rotation_from_euler(0.0, np.deg2rad(0.5), 0.0), [0.0, -0.05, 0.0])
    out.mkdir(parents=True, exist_ok=True)
    save_calibration(Calibration({"rgb": cam_rgb, "thermal": cam_thr, "thermal_raw": cam_raw},
                                 {"rgb_to_thermal": T}), out / "calib.json")

    sequences = []
    hz = 4
    for name, env, n, ffc, kind in (("indoor_a", "indoor", 20, [(2.1, 2.6)], "odometric"),
                                    ("offroad_b", "offroad", 22, [], "none")):
        seq_dir = out / name
        for sub in ("rgb", "thermal", "depth"):
            (seq_dir / sub).mkdir(parents=True, exist_ok=True)
        t0 = 1_000 * NS_PER_S
        rgb_f, thr_f, dep_f = [], [], []
        for i in range(n):
            t = t0 + i * NS_PER_S // hz
            depth = np.where(np.arange(H)[:, None] > H // 2,
                             cam_rgb.fy * 1.2 / np.maximum(np.arange(H)[:, None] - cam_rgb.cy, 0.5),
                             8.0) * np.ones((1, W))
            depth[4:10, 10:18] = 2.5
            rgb = rng.integers(0, 256, (H, W, 3), dtype=np.uint8)
            rgb[4:10, 10:18] = (200, 60, 40)
            p = f"{name}/rgb/{i:04d}.ppm"
            write_pnm(out / p, rgb)
            rgb_f.append((p, t))
            p = f"{name}/depth/{i:04d}.pfm"
            write_pfm(out / p, depth.astype(np.float32))
            dep_f.append((p, t))
            p = f"{name}/thermal/{i:04d}.pgm"
            write_pnm(out / p, thermal_raw_frame(rng, H, W, i / hz))
            # thermal triggered from the RGB clock with a small fixed latency
            thr_f.append((p, t + 2_000_000))
        positions = ([(t0 + i * NS_PER_S // 2, 0.5 * i, 0.0, 0.0) for i in range(2 * n // hz + 2)]
                     if kind != "none" else [])
        sequences.append(SequenceRecord(
            name=name, environment=env, rgb=rgb_f, thermal=thr_f, depth=dep_f,
            ffc=[FfcEvent(t0 + int(a * NS_PER_S), t0 + int(b * NS_PER_S)) for a, b in ffc],
            positions=positions, position_kind=kind, synced=True))
    save_manifest(DatasetManifest("mini", sequences), out / "manifest.json")

    # place-recognition embeddings along a looping trajectory, two sequences
    (out / "vpr").mkdir(exist_ok=True)
    rows_r, rows_t, ids, pos, shared = [], [], [], [], None
    for s, n in (("seqA", 40), ("seqB", 30)):
        ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
        p = np.stack([40 * np.cos(ang), 40 * np.sin(ang), np.zeros(n)], axis=1) + (0 if s == "seqA" else 100)
        r, shared = place_embeddings(rng, p, shared=shared)
        t, _ = place_embeddings(rng, p, shared=shared)
        rows_r.append(r)
        rows_t.append(t)
        pos.append(p)
        ids += [f"{s}:{i:04d}" for i in range(n)]
    pos = np.concatenate(pos)
    write_embeddings(out / "vpr" / "db_rgb.rgte", EmbeddingSet(np.concatenate(rows_r), ids, "rgb", pos))
    write_embeddings(out / "vpr" / "queries_thermal.rgte",
                     EmbeddingSet(np.concatenate(rows_t), ids, "thermal", pos))

    # segmentation label maps (9 classes, 255 = ignore)
    for sub in ("seg/pred", "seg/gt", "depth_eval/pred", "depth_eval/gt", "depth_eval/mask"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i in range(3):
        gt = np.zeros((H, W), np.uint8)
        gt[:, W // 3:] = 1 + i
        gt[H // 2:, :] = 4
        gt[0, 0] = 255
        pred = gt.copy()
        flip = rng.random((H, W)) < 0.1
        pred[flip] = rng.integers(0, 9, flip.sum())
        pred[0, 0] = 0
        write_pnm(out / "seg" / "gt" / f"{i:04d}.pgm", gt)
        write_pnm(out / "seg" / "pred" / f"{i:04d}.pgm", pred)

        gt_d = rng.uniform(2.0, 40.0, (H, W)).astype(np.float32)
        pred_d = (gt_d * rng.uniform(0.85, 1.15, (H, W))).astype(np.float32)
        mask = (rng.random((H, W)) < 0.3).astype(np.uint8) * 255
        write_pfm(out / "depth_eval" / "gt" / f"{i:04d}.pfm", gt_d)
        write_rgtd(out / "depth_eval" / "pred" / f"{i:04d}.rgtd", pred_d)
        write_pnm(out / "depth_eval" / "mask" / f"{i:04d}.pgm", mask)

    runs = []
    for task, base, steps in (("vpr_recall@1", 0.40, (0.15, 0.03, 0.01, -0.005, 0.06)),
                              ("seg_miou", 0.45, (0.02, 0.01, -0.01, 0.0, 0.03))):
        v = base
        for k, combo in enumerate(("B", "B+V", "B+V+F", "B+V+F+S", "B+V+F+S+T")):
            v = v if k == 0 else v + steps[k]
            runs.append({"combo": combo, "task": task, "value": round(v, 6)})
    (out / "runs.json").write_text(json.dumps(runs[::-1], indent=2) + "\n")
    (out / "config.toml").write_text(MINI_CONFIG)
    return out


MINI_CONFIG = """\
# Shared settings for the mini-dataset pipeline; command-line flags override these.
# Relative paths resolve against this file's directory.
[paths]
manifest = "manifest.json"
calib = "calib.json"

[thermal]
tiles = [8, 8]
clip_limit = 2.0
radius = 4
sigma_color = 25.0
sigma_space = 5.0
ffc_guard_ms = 100

[registration]
depth_tol = 0.01
alpha = [0.0, 0.5, 1.0]

[pairing]
tol_ms = 10

[loss]
tau = 0.07
margin = 0.1
radius = 15.0
k_hard = 10
seed = 7

[eval]
k = [1, 5]
radius = 15.0
classes = 9
"""
