"""Command-line front end: every pipeline stage as a subcommand.

Each run prints a single JSON summary line on stdout and writes artifacts only
under ``--out-dir``. Settings come from built-in defaults, then an optional
TOML ``--config`` file, then flags. Exit codes: 0 success, 1 invalid input,
2 runtime failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import SUMMARY_SCHEMA, __version__
from .crossmodal import EmbeddingSet, ToyDistillConfig, mine_triplets, toy_distill
from .dataset import (SCHEMA_VERSION, dataset_stats, default_tol_ns, format_stats_table, load_manifest,
                      pair_by_timestamp, sequence_pairs)
from .errors import ValidationError
from .evaluate import (confusion_matrix, depth_metrics, dumps, evaluate_vpr, format_scaling_table,
                       iou_from_confusion, paired_indices, scaling_report, weighted_mean_recall)
from .geometry import build_rectification_map, load_calibration, remap_bilinear
from .io import RGTE_VERSION, read_depth, read_embeddings, read_pnm, write_pnm, write_rgtd
from .registration import alpha_blend, register_pair
from .thermalproc import ThermalConfig, thermal_to_8bit

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2, 64
WORKERS_ENV = "RGBTKIT_WORKERS"
DEFAULT_OUT_DIR = "rgbtkit-out"

DEFAULTS = {
    "paths": {"calib": None, "manifest": None},
    "thermal": {"tiles": [8, 8], "clip_limit": 2.0, "radius": 4, "sigma_color": 25.0,
                "sigma_space": 5.0, "ffc_guard_ms": 100},
    "registration": {"depth_tol": 0.01, "alpha": [0.0, 0.5, 1.0], "rgb_camera": "rgb",
                     "thermal_camera": "thermal", "transform": "rgb_to_thermal"},
    # tol_ms unset: 10 ms for hardware-synced sequences, 50 ms otherwise
    "pairing": {"tol_ms": None},
    "loss": {"tau": 0.07, "margin": 0.1, "radius": 15.0, "k_hard": 10, "seed": None},
    "distill": {"steps": 2000, "lr": 0.5, "latent_dim": 8, "feature_dim": 32, "n_train": 512,
                "n_val": 256, "noise": 0.01, "eval_every": 100},
    "eval": {"k": [1, 5], "radius": 15.0, "classes": 9, "ignore_label": 255, "metric": "cosine"},
}
PATH_KEYS = {("paths", "calib"), ("paths", "manifest")}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Context:
    """Per-run bookkeeping: output directory, produced files, warnings, worker pool size."""

    def __init__(self, out_dir, workers):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.workers = workers
        self.outputs = []
        self.warnings = []

    def path(self, rel) -> Path:
        if self.out_dir is None:
            raise ValidationError("this command writes artifacts; pass --out-dir")
        p = self.out_dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if str(p) in self.outputs:
            raise ValidationError(f"two inputs map to the same output {p}")
        self.outputs.append(str(p))
        return p

    def write_text(self, rel, text):
        self.path(rel).write_text(text, encoding="utf-8")

    def write_json(self, rel, obj):
        self.write_text(rel, dumps(obj))

    def map(self, fn, items):
        items = list(items)
        if self.workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))


class _WarningCollector(logging.Handler):
    def __init__(self, sink):
        super().__init__(logging.WARNING)
        self.sink = sink

    def emit(self, record):
        self.sink.append(record.getMessage())


# ---- config --------------------------------------------------------------------

def load_config(path) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    path = Path(path)
    with open(path, "rb") as fh:
        user = tomllib.load(fh)
    for section, values in user.items():
        if section not in cfg or not isinstance(values, dict):
            raise ValidationError(f"{path}: unknown config section [{section}]")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ValidationError(f"{path}: unknown key {key!r} in [{section}]")
            if (section, key) in PATH_KEYS:
                value = str(path.parent / value)
            cfg[section][key] = value
    return cfg


def _apply_flags(cfg, args):
    for dest, value in vars(args).items():
        if "." in dest:
            section, key = dest.split(".", 1)
            cfg[section][key] = value
    return cfg


def _int_list(text):
    try:
        return [int(x) for x in text.replace("x", ",").split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _need(cfg, section, key, flag):
    value = cfg[section][key]
    if value is None:
        raise ValidationError(f"{flag} is required (or set {key} in [{section}] of --config)")
    return value


def _thermal_cfg(cfg) -> ThermalConfig:
    t = cfg["thermal"]
    tiles = tuple(int(x) for x in t["tiles"])
    if len(tiles) != 2:
        raise ValidationError("thermal tiles must be two integers")
    return ThermalConfig(tiles, float(t["clip_limit"]), int(t["radius"]), float(t["sigma_color"]),
                         float(t["sigma_space"]))


def _tol_ns(cfg):
    tol = cfg["pairing"]["tol_ms"]
    return None if tol is None else int(round(float(tol) * 1_000_000))


def _guard_ns(cfg):
    return int(round(float(cfg["thermal"]["ffc_guard_ms"]) * 1_000_000))


def _expand(inputs, suffixes):
    """Files as given; directories contribute their matching files, sorted, keeping the dir name."""
    out = []
    for raw in inputs:
        p = Path(raw)
        if p.is_dir():
            files = sorted(f for f in p.rglob("*") if f.is_file() and f.suffix.lower() in suffixes)
            out += [(f, Path(p.name) / f.relative_to(p)) for f in files]
        elif p.is_file():
            out.append((p, Path(p.name)))
        else:
            raise ValidationError(f"input {raw} does not exist")
    if not out:
        raise ValidationError("no input files found")
    return out


def _manifest(cfg, check_files=False):
    return load_manifest(_need(cfg, "paths", "manifest", "--manifest"), check_files=check_files)


def _sequences(manifest, name):
    return [manifest.sequence(name)] if name else list(manifest.sequences)


# ---- commands -------------------------------------------------------------------

def cmd_validate(args, cfg, ctx):
    manifest_path, calib_path = cfg["paths"]["manifest"], cfg["paths"]["calib"]
    if manifest_path is None and calib_path is None:
        raise ValidationError("nothing to validate: pass --manifest and/or --calib")
    out = {}
    if manifest_path is not None:
        m = load_manifest(manifest_path, check_files=not args.no_check_files)
        envs = {}
        for s in m.sequences:
            envs[s.environment] = envs.get(s.environment, 0) + 1
        out.update(manifest=m.name, sequences=len(m.sequences), sequences_per_environment=envs,
                   frames={"rgb": sum(len(s.rgb) for s in m.sequences),
                           "thermal": sum(len(s.thermal) for s in m.sequences),
                           "depth": sum(len(s.depth) for s in m.sequences)})
    if calib_path is not None:
        cal = load_calibration(calib_path)
        out.update(cameras=sorted(cal.cameras), transforms=sorted(cal.transforms))
    return out


def cmd_thermal8(args, cfg, ctx):
    tcfg = _thermal_cfg(cfg)
    items = _expand(args.inputs, {".pgm"})

    def work(item):
        src, rel = item
        frame = read_pnm(src)
        if frame.ndim != 2:
            raise ValidationError(f"{src}: thermal frames must be single-channel")
        return thermal_to_8bit(frame, tcfg)

    results = ctx.map(work, items)
    degenerate = 0
    for (src, rel), res in zip(items, results):
        write_pnm(ctx.path(rel.with_suffix(".pgm")), res.image)
        if res.degenerate:
            degenerate += 1
            ctx.warnings.append(f"{src}: constant frame, written as all zeros")
    return {"frames": len(items), "degenerate": degenerate}


def cmd_rectify(args, cfg, ctx):
    cal = load_calibration(_need(cfg, "paths", "calib", "--calib"))
    src_cam = cal.camera(args.camera)
    dst_cam = cal.camera(args.target) if args.target else src_cam.as_pinhole()
    rmap = build_rectification_map(src_cam, dst_cam)
    items = _expand(args.inputs, {".pgm", ".ppm"})
    results = ctx.map(lambda it: remap_bilinear(read_pnm(it[0]), rmap)[0], items)
    for (_, rel), img in zip(items, results):
        write_pnm(ctx.path(rel), img)
    valid = rmap.valid
    write_pnm(ctx.path("valid_mask.pgm"), valid.astype(np.uint8) * 255)
    return {"frames": len(items), "valid_fraction": float(valid.mean()),
            "source_camera": args.camera, "target_camera": args.target or f"{args.camera} (pinhole)"}


def _as_thermal8(frame, tcfg):
    if frame.dtype == np.uint8:
        return frame, False
    return thermal_to_8bit(frame, tcfg)


def cmd_register(args, cfg, ctx):
    r = cfg["registration"]
    cal = load_calibration(_need(cfg, "paths", "calib", "--calib"))
    tcfg = _thermal_cfg(cfg)
    alphas = [float(a) for a in r["alpha"]]
    jobs = []  # (out prefix, rgb path, depth path, thermal path or None)
    if args.rgb:
        if not args.depth or len(args.depth) != len(args.rgb):
            raise ValidationError("--depth needs one file per --rgb file")
        if args.thermal and len(args.thermal) != len(args.rgb):
            raise ValidationError("--thermal needs one file per --rgb file")
        for i, rgb in enumerate(args.rgb):
            jobs.append((Path(rgb).stem, Path(rgb), Path(args.depth[i]),
                         Path(args.thermal[i]) if args.thermal else None))
    else:
        m = _manifest(cfg)
        root = m.root
        for seq in _sequences(m, args.sequence):
            if len(seq.depth) != len(seq.rgb):
                raise ValidationError(f"sequence {seq.name}: needs one depth map per RGB frame")
            tol = _tol_ns(cfg)
            pairs = pair_by_timestamp(seq.rgb_ts, seq.thermal_ts,
                                      tol if tol is not None else default_tol_ns(seq))
            for p in pairs:
                rgb_rel = seq.rgb[p.rgb_index][0]
                jobs.append((f"{seq.name}/{Path(rgb_rel).stem}", root / rgb_rel,
                             root / seq.depth[p.rgb_index][0], root / seq.thermal[p.thermal_index][0]))
    if not jobs:
        raise ValidationError("no frames to register")

    def work(job):
        _, rgb_p, depth_p, thr_p = job
        rgb = read_pnm(rgb_p)
        thermal8 = _as_thermal8(read_pnm(thr_p), tcfg)[0] if thr_p is not None else None
        pair = register_pair(rgb, read_depth(depth_p), cal, thermal8, float(r["depth_tol"]),
                             r["rgb_camera"], r["thermal_camera"], r["transform"])
        blends = [alpha_blend(thermal8, pair.warped, a) for a in alphas] if thermal8 is not None else []
        return pair, blends

    coverage = []
    for job, (pair, blends) in zip(jobs, ctx.map(work, jobs)):
        prefix = job[0]
        write_pnm(ctx.path(f"warped/{prefix}.ppm"), pair.warped)
        write_rgtd(ctx.path(f"mask/{prefix}.rgtd"), pair.mask)
        for a, img in zip(alphas, blends):
            write_pnm(ctx.path(f"blend/{prefix}_a{a:.2f}.ppm"), img)
        coverage.append(float((pair.mask > 0).mean()))
    return {"frames": len(jobs), "mean_coverage": float(np.mean(coverage))}


def _pair_listing(seq, pairs):
    return [{"rgb": seq.rgb[p.rgb_index][0], "thermal": seq.thermal[p.thermal_index][0],
             "t_rgb_ns": seq.rgb[p.rgb_index][1], "t_thermal_ns": seq.thermal[p.thermal_index][1],
             "dt_ns": p.dt_ns} for p in pairs]


def cmd_pair(args, cfg, ctx):
    m = _manifest(cfg)
    tol = _tol_ns(cfg)
    listing, counts = {}, {}
    for seq in _sequences(m, args.sequence):
        pairs = pair_by_timestamp(seq.rgb_ts, seq.thermal_ts,
                                  tol if tol is not None else default_tol_ns(seq))
        listing[seq.name] = _pair_listing(seq, pairs)
        counts[seq.name] = len(pairs)
    ctx.write_json("pairs.json", {"schema": SCHEMA_VERSION, "manifest": m.name, "pairs": listing})
    return {"pairs": counts, "total": sum(counts.values())}


def cmd_subsample(args, cfg, ctx):
    m = _manifest(cfg)
    tol, guard = _tol_ns(cfg), _guard_ns(cfg)
    listing, counts = {}, {}
    for seq in _sequences(m, args.sequence):
        pairs = sequence_pairs(seq, tol, guard)
        listing[seq.name] = _pair_listing(seq, pairs)
        counts[seq.name] = len(pairs)
    ctx.write_json("subsampled.json", {"schema": SCHEMA_VERSION, "manifest": m.name, "pairs": listing})
    return {"pairs": counts, "total": sum(counts.values())}


def _sequence_table(stats):
    rows = [("sequence", "pairs")] + [(k, str(v)) for k, v in stats["per_sequence"].items()]
    rows.append(("total", str(stats["total"])))
    w0, w1 = (max(len(r[i]) for r in rows) for i in range(2))
    return "\n".join(f"{a:<{w0}}  {b:>{w1}}" for a, b in rows) + "\n"


def cmd_stats(args, cfg, ctx):
    m = _manifest(cfg)
    stats = dataset_stats(m, _tol_ns(cfg), _guard_ns(cfg))
    table = format_stats_table(stats) if args.by_env else _sequence_table(stats)
    ctx.write_json("stats.json", stats)
    ctx.write_text("stats.txt", table)
    sys.stderr.write(table)
    return {"total": stats["total"], "per_environment": stats["per_environment"]}


def _sequence_of(item_id: str) -> str:
    return item_id.split(":", 1)[0] if ":" in item_id else ""


def _groups(emb: EmbeddingSet) -> dict:
    out = {}
    for i, x in enumerate(emb.ids):
        out.setdefault(_sequence_of(x), []).append(i)
    return out


def _subset(emb: EmbeddingSet, rows, positions=None) -> EmbeddingSet:
    pos = positions if positions is not None else emb.positions
    return EmbeddingSet(emb.vectors[rows], [emb.ids[i] for i in rows], emb.modality,
                        None if pos is None else pos[rows])


def _frame_positions(emb: EmbeddingSet) -> np.ndarray:
    if emb.frame_indexed:
        return emb.positions
    try:
        return np.array([float(x.rsplit(":", 1)[-1]) for x in emb.ids])
    except ValueError:
        raise ValidationError("--frame-radius needs frame indices in the file or numeric id suffixes")


def cmd_mine_triplets(args, cfg, ctx):
    loss = cfg["loss"]
    seed = int(_need(cfg, "loss", "seed", "--seed"))
    rgb, thr = read_embeddings(args.rgb), read_embeddings(args.thermal)
    if rgb.modality != "rgb" or thr.modality != "thermal":
        raise ValidationError("--rgb must hold rgb embeddings and --thermal thermal embeddings")
    radius = float(args.frame_radius if args.frame_radius is not None else loss["radius"])
    if args.frame_radius is not None:
        rgb = EmbeddingSet(rgb.vectors, rgb.ids, "rgb", _frame_positions(rgb))
        thr = EmbeddingSet(thr.vectors, thr.ids, "thermal", _frame_positions(thr))
    g_rgb, g_thr = _groups(rgb), _groups(thr)
    lines = ["sequence,anchor_modality,anchor_id,positive_id,negative_id"]
    skipped = total = 0
    for seq in sorted(set(g_rgb) & set(g_thr)):
        r, t = _subset(rgb, g_rgb[seq]), _subset(thr, g_thr[seq])
        res = mine_triplets(r, t, radius, int(loss["k_hard"]), seed, args.anchors)
        skipped += res.skipped
        for tr in res.triplets:
            anc, oth = (r, t) if tr.anchor_modality == "rgb" else (t, r)
            lines.append(f"{seq},{tr.anchor_modality},{anc.ids[tr.anchor]},{oth.ids[tr.positive]},"
                         f"{oth.ids[tr.negative]}")
        total += len(res.triplets)
    for seq in sorted(set(g_rgb) ^ set(g_thr)):
        ctx.warnings.append(f"sequence {seq!r} present in only one modality; skipped")
    ctx.write_text("triplets.csv", "\n".join(lines) + "\n")
    if skipped:
        ctx.warnings.append(f"{skipped} anchors had no positive or negative and were skipped")
    return {"triplets": total, "skipped_anchors": skipped}


def cmd_distill_toy(args, cfg, ctx):
    d = cfg["distill"]
    tc = ToyDistillConfig(latent_dim=int(d["latent_dim"]), feature_dim=int(d["feature_dim"]),
                          n_train=int(d["n_train"]), n_val=int(d["n_val"]), noise=float(d["noise"]),
                          lr=float(d["lr"]), steps=int(d["steps"]), tau=float(cfg["loss"]["tau"]),
                          seed=int(_need(cfg, "loss", "seed", "--seed")), eval_every=int(d["eval_every"]))
    res = toy_distill(tc)
    ctx.write_text("history.csv", res.history_csv())
    out = {"initial_recall_at_1": res.recall[0][1], "final_recall_at_1": res.recall[-1][1],
           "final_loss": res.loss[-1] if res.loss else None, "steps": tc.steps}
    ctx.write_json("result.json", out)
    return out


def cmd_eval_vpr(args, cfg, ctx):
    e = cfg["eval"]
    q, db = read_embeddings(args.queries), read_embeddings(args.db)
    ks = [int(k) for k in e["k"]]
    if args.frame_radius is not None:
        radius = float(args.frame_radius)
        q_pos_all, db_pos_all = _frame_positions(q), _frame_positions(db)
    else:
        radius = float(e["radius"])
        q_pos_all, db_pos_all = q.positions, db.positions
    g_q, g_db = _groups(q), _groups(db)
    per_seq, dropped = {}, 0
    for seq in sorted(g_q):
        qi = g_q[seq]
        di = g_db.get(seq)
        if not di:
            ctx.warnings.append(f"sequence {seq!r} has queries but no database; skipped")
            dropped += len(qi)
            continue
        res = evaluate_vpr(q.vectors[qi], db.vectors[di],
                           None if q_pos_all is None else q_pos_all[qi],
                           None if db_pos_all is None else db_pos_all[di],
                           radius, ks, e["metric"],
                           paired=paired_indices([q.ids[i] for i in qi], [db.ids[j] for j in di]),
                           sequence=seq or "<unnamed>")
        per_seq[seq] = res
        dropped += res["dropped_queries"]
        if res["dropped_queries"]:
            ctx.warnings.append(f"sequence {seq!r}: {res['dropped_queries']} queries without positives")
    usable = {s: r for s, r in per_seq.items() if r["queries"] > 0}
    weighted = {str(k): (weighted_mean_recall([(r["recall"][str(k)], r["queries"]) for r in usable.values()])
                         if usable else None) for k in ks}
    if not usable:
        ctx.warnings.append("no query has a positive; recall undefined")
    out = {"per_seq": per_seq, "weighted_mean": weighted, "dropped_queries": dropped,
           "radius": radius, "radius_kind": "frames" if args.frame_radius is not None else "metres"}
    ctx.write_json("vpr.json", out)
    return {"weighted_mean": weighted, "dropped_queries": dropped}


def _match_dirs(a_dir, b_dir, a_suffixes, b_suffixes, what):
    a_dir, b_dir = Path(a_dir), Path(b_dir)
    for d in (a_dir, b_dir):
        if not d.is_dir():
            raise ValidationError(f"{d} is not a directory")
    a = {f.stem: f for f in sorted(a_dir.iterdir()) if f.suffix.lower() in a_suffixes}
    b = {f.stem: f for f in sorted(b_dir.iterdir()) if f.suffix.lower() in b_suffixes}
    if not a:
        raise ValidationError(f"no {what} files in {a_dir}")
    missing = sorted(set(a) - set(b))
    if missing:
        raise ValidationError(f"no ground truth for {what} {missing[0]!r} (and {len(missing) - 1} more)")
    return [(k, a[k], b[k]) for k in sorted(a)]


def cmd_eval_seg(args, cfg, ctx):
    e = cfg["eval"]
    C, ignore = int(e["classes"]), e["ignore_label"]
    names = None
    if args.names:
        names = json.loads(Path(args.names).read_text())
        if len(names) != C:
            raise ValidationError(f"{args.names}: expected {C} class names")
    cm = np.zeros((C, C), np.int64)
    matched = _match_dirs(args.pred, args.gt, {".pgm"}, {".pgm"}, "prediction")
    for _, pf, gf in matched:
        pred, gt = read_pnm(pf), read_pnm(gf)
        if pred.shape != gt.shape:
            raise ValidationError(f"{pf.name}: prediction and ground truth differ in shape")
        cm += confusion_matrix(pred, gt, C, ignore)
    ious, m = iou_from_confusion(cm)
    per_class = [{"class": c, "name": names[c] if names else None, "iou": float(ious[c])} for c in range(C)]
    out = {"images": len(matched),
           "miou": m, "per_class": per_class, "confusion": cm.tolist()}
    absent = [c for c in range(C) if np.isnan(ious[c])]
    if absent:
        ctx.warnings.append(f"classes {absent} absent from both maps; excluded from the mean")
    ctx.write_json("seg.json", out)
    return {"miou": m, "images": out["images"]}


def cmd_eval_depth(args, cfg, ctx):
    pairs = _match_dirs(args.pred, args.gt, {".pfm", ".rgtd"}, {".pfm", ".rgtd"}, "prediction")
    masks = {}
    if args.mask:
        masks = {f.stem: f for f in Path(args.mask).iterdir() if f.suffix.lower() == ".pgm"}
    per_image = {}
    for name, pf, gf in pairs:
        mask = None
        if args.mask:
            if name not in masks:
                raise ValidationError(f"no mask for {name!r}")
            mask = read_pnm(masks[name]) > 0
        per_image[name] = depth_metrics(read_depth(pf), read_depth(gf), mask)
    keys = ("AbsRel", "SqRel", "RMSE", "RMSElog")
    mean = {k: float(np.mean([m[k] for m in per_image.values()])) for k in keys}
    clamped = sum(m["clamped"] for m in per_image.values())
    if clamped:
        ctx.warnings.append(f"{clamped} predictions below 1 mm floored for the log metric")
    ctx.write_json("depth.json", {"images": len(per_image), "mean": mean, "per_image": per_image})
    return {"images": len(per_image), "mean": mean}


def cmd_scaling_report(args, cfg, ctx):
    raw = json.loads(Path(args.runs).read_text())
    try:
        runs = [(r["combo"], r["task"], r["value"]) for r in raw]
    except (TypeError, KeyError):
        raise ValidationError(f"{args.runs}: expected a list of {{combo, task, value}} objects")
    report = scaling_report(runs)
    ctx.write_json("scaling.json", report)
    ctx.write_text("scaling.txt", format_scaling_table(report))
    return {"tasks": sorted(report), "runs": len(runs)}


# ---- parser -------------------------------------------------------------------------

def _opt(p, flag, dest, **kw):
    p.add_argument(flag, dest=dest, default=argparse.SUPPRESS, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rgbtkit", description="RGB-thermal pipeline toolkit.")
    parser.add_argument("--version", action="version",
                        version=f"rgbtkit {__version__} (summary schema {SUMMARY_SCHEMA}, manifest schema "
                                f"{SCHEMA_VERSION}, RGTE v{RGTE_VERSION})")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML file with shared settings; flags override it")
    common.add_argument("--out-dir", help=f"artifact directory (default: {DEFAULT_OUT_DIR})")
    common.add_argument("--workers", type=int,
                        help=f"worker threads for per-frame commands (default: ${WORKERS_ENV} or CPU count)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=fn)
        return p

    def manifest_opts(p, sequence=True):
        _opt(p, "--manifest", "paths.manifest", help="dataset manifest JSON")
        if sequence:
            p.add_argument("--sequence", help="restrict to one sequence")

    def thermal_opts(p):
        _opt(p, "--tiles", "thermal.tiles", type=_int_list, help="CLAHE tile grid, e.g. 8,8")
        _opt(p, "--clip-limit", "thermal.clip_limit", type=float)
        _opt(p, "--radius", "thermal.radius", type=int, help="bilateral window radius")
        _opt(p, "--sigma-color", "thermal.sigma_color", type=float)
        _opt(p, "--sigma-space", "thermal.sigma_space", type=float)

    def pairing_opts(p, guard=True):
        _opt(p, "--tol-ms", "pairing.tol_ms", type=float, help="pairing tolerance in milliseconds")
        if guard:
            _opt(p, "--guard-ms", "thermal.ffc_guard_ms", type=float, help="FFC guard band in milliseconds")

    p = add("validate", cmd_validate, "Check a manifest and/or calibration file.")
    manifest_opts(p, sequence=False)
    _opt(p, "--calib", "paths.calib", help="calibration JSON")
    p.add_argument("--no-check-files", action="store_true", help="skip checking referenced files exist")

    p = add("thermal8", cmd_thermal8, "Convert 16-bit thermal PGM frames to 8-bit.")
    p.add_argument("inputs", nargs="+", help="PGM files or directories")
    thermal_opts(p)

    p = add("rectify", cmd_rectify, "Undistort frames from a fisheye or pinhole camera.")
    p.add_argument("inputs", nargs="+", help="PGM/PPM files or directories")
    _opt(p, "--calib", "paths.calib", help="calibration JSON")
    p.add_argument("--camera", default="thermal_raw", help="source camera name")
    p.add_argument("--target", help="target camera name (default: source intrinsics, no distortion)")

    p = add("register", cmd_register, "Warp RGB frames into the thermal camera via depth.")
    _opt(p, "--calib", "paths.calib", help="calibration JSON")
    p.add_argument("--rgb", nargs="+", help="RGB PPM files")
    p.add_argument("--depth", nargs="+", help="depth maps (PFM or RGTD), one per RGB file")
    p.add_argument("--thermal", nargs="+", help="thermal PGM files (8- or 16-bit), one per RGB file")
    manifest_opts(p)
    _opt(p, "--alpha", "registration.alpha", type=_float_list, help="blend weights, e.g. 0,0.5,1")
    _opt(p, "--depth-tol", "registration.depth_tol", type=float, help="relative z-buffer tolerance")
    _opt(p, "--rgb-camera", "registration.rgb_camera")
    _opt(p, "--thermal-camera", "registration.thermal_camera")
    _opt(p, "--transform", "registration.transform", help="calibration transform name")
    pairing_opts(p, guard=False)
    thermal_opts(p)

    p = add("pair", cmd_pair, "Pair RGB and thermal frames by timestamp.")
    manifest_opts(p)
    pairing_opts(p, guard=False)

    p = add("subsample", cmd_subsample, "1 Hz thermal subsampling, FFC removal and pairing.")
    manifest_opts(p)
    pairing_opts(p)

    p = add("stats", cmd_stats, "Usable 1 Hz pair counts per sequence or environment.")
    manifest_opts(p, sequence=False)
    pairing_opts(p)
    p.add_argument("--by-env", action="store_true", help="tabulate per environment")

    p = add("mine-triplets", cmd_mine_triplets, "Cross-modal triplets with hard negatives.")
    p.add_argument("--rgb", required=True, help="RGB embeddings (RGTE)")
    p.add_argument("--thermal", required=True, help="thermal embeddings (RGTE)")
    _opt(p, "--radius", "loss.radius", type=float, help="positive radius in metres")
    p.add_argument("--frame-radius", type=float, help="use a frame-index radius instead")
    _opt(p, "--k-hard", "loss.k_hard", type=int)
    _opt(p, "--seed", "loss.seed", type=int)
    p.add_argument("--anchors", default="both", choices=("both", "rgb", "thermal"))

    p = add("distill-toy", cmd_distill_toy, "Linear-student distillation on synthetic paired features.")
    _opt(p, "--seed", "loss.seed", type=int)
    _opt(p, "--steps", "distill.steps", type=int)
    _opt(p, "--lr", "distill.lr", type=float)
    _opt(p, "--tau", "loss.tau", type=float)
    _opt(p, "--latent-dim", "distill.latent_dim", type=int)
    _opt(p, "--feature-dim", "distill.feature_dim", type=int)
    _opt(p, "--n-train", "distill.n_train", type=int)
    _opt(p, "--n-val", "distill.n_val", type=int)
    _opt(p, "--noise", "distill.noise", type=float)
    _opt(p, "--eval-every", "distill.eval_every", type=int)

    p = add("eval-vpr", cmd_eval_vpr, "Cross-modal Recall@K per sequence and weighted mean.")
    p.add_argument("--queries", required=True, help="query embeddings (RGTE)")
    p.add_argument("--db", required=True, help="database embeddings (RGTE)")
    _opt(p, "--radius", "eval.radius", type=float, help="positive radius in metres")
    p.add_argument("--frame-radius", type=float, help="use a frame-index radius instead")
    _opt(p, "--k", "eval.k", type=_int_list, help="comma-separated K values")
    _opt(p, "--metric", "eval.metric", choices=("cosine", "euclidean"))

    p = add("eval-seg", cmd_eval_seg, "Per-class IoU and mIoU over label-map directories.")
    p.add_argument("--pred", required=True, help="directory of predicted label PGMs")
    p.add_argument("--gt", required=True, help="directory of ground-truth label PGMs")
    _opt(p, "--classes", "eval.classes", type=int)
    _opt(p, "--ignore-label", "eval.ignore_label", type=int)
    p.add_argument("--names", help="JSON list of class names")

    p = add("eval-depth", cmd_eval_depth, "AbsRel, SqRel, RMSE and RMSElog over depth-map directories.")
    p.add_argument("--pred", required=True, help="directory of predicted depth maps")
    p.add_argument("--gt", required=True, help="directory of ground-truth depth maps")
    p.add_argument("--mask", help="directory of validity mask PGMs (nonzero = valid)")

    p = add("scaling-report", cmd_scaling_report, "Tabulate metric changes across dataset combinations.")
    p.add_argument("runs", help="JSON list of {combo, task, value}")
    return parser


ARTIFACT_FREE = {"validate"}


def _default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{WORKERS_ENV} must be an integer, got {env!r}")
    return os.cpu_count() or 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        sys.stderr.write("rgbtkit: error: a command is required\n")
        return EXIT_USAGE
    start = time.perf_counter()
    summary = {"command": args.command, "version": __version__, "schema": SUMMARY_SCHEMA,
               "outputs": [], "warnings": []}
    log = logging.getLogger("rgbtkit")
    collector = _WarningCollector(summary["warnings"])
    log.addHandler(collector)
    code = EXIT_OK
    try:
        cfg = _apply_flags(load_config(args.config), args)
        summary["config"] = cfg
        workers = args.workers if args.workers is not None else _default_workers()
        if workers < 1:
            raise ValidationError("--workers must be >= 1")
        out_dir = None
        if args.command not in ARTIFACT_FREE:
            out_dir = args.out_dir or DEFAULT_OUT_DIR
        ctx = Context(out_dir, workers)
        ctx.warnings = summary["warnings"]
        summary.update(args.func(args, cfg, ctx))
        summary["outputs"] = ctx.outputs
    except (ValidationError, FileNotFoundError, IsADirectoryError, NotADirectoryError,
            json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        code = EXIT_INVALID
        summary["error"] = f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # anything else is a runtime failure
        code = EXIT_RUNTIME
        summary["error"] = f"{type(exc).__name__}: {exc}"
    finally:
        log.removeHandler(collector)
    summary["exit_code"] = code
    summary["elapsed_ms"] = round((time.perf_counter() - start) * 1000, 3)
    if "error" in summary:
        sys.stderr.write(f"rgbtkit {args.command}: {summary['error']}\n")
    sys.stdout.write(dumps(summary, indent=None) + "\n")
    sys.stdout.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
