"""Evaluation protocols: cross-modal Recall@K, segmentation mIoU and Dice, depth errors,
and the data-scaling report."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ProtocolError, UndefinedRecallError, ValidationError

log = logging.getLogger(__name__)

METRICS = ("euclidean", "cosine")
DATASET_ALPHABET = ("B", "V", "F", "S", "T")
DEPTH_LOG_FLOOR = 1e-3


@dataclass
class RetrievalResult:
    ranked: list  # per query: db indices, best first
    positives: list = field(default_factory=list)  # per query: set of db indices


def _distances(q: np.ndarray, db: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.sqrt(((q[:, None, :] - db[None, :, :]) ** 2).sum(-1))
    if metric == "cosine":
        qn = np.linalg.norm(q, axis=1, keepdims=True)
        dn = np.linalg.norm(db, axis=1, keepdims=True)
        qs = np.divide(q, qn, out=np.zeros_like(q), where=qn > 0)
        ds = np.divide(db, dn, out=np.zeros_like(db), where=dn > 0)
        return 1.0 - qs @ ds.T
    raise ValidationError(f"unknown metric {metric!r}")


def knn_retrieve(queries: np.ndarray, db: np.ndarray, k: int, metric: str = "cosine",
                 exclude: Optional[Sequence] = None, chunk: int = 256) -> RetrievalResult:
    """Exact top-``k`` database rows per query; ties go to the lower database index.

    ``exclude[i]`` (an index or None) removes one candidate from query i's ranking.
    """
    q = np.asarray(queries, dtype=np.float64)
    d = np.asarray(db, dtype=np.float64)
    if q.ndim != 2 or d.ndim != 2 or q.shape[1] != d.shape[1]:
        raise ValidationError("queries and database must be 2-D with the same dimension")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > len(d):
        log.warning("k=%d exceeds database size %d; clamping", k, len(d))
        k = len(d)
    ranked = []
    for s in range(0, len(q), chunk):
        dist = _distances(q[s:s + chunk], d, metric)
        if exclude is not None:
            for r in range(dist.shape[0]):
                e = exclude[s + r]
                if e is not None and e >= 0:
                    dist[r, e] = np.inf
        order = np.argsort(dist, axis=1, kind="stable")
        for r in range(dist.shape[0]):
            row = order[r]
            if exclude is not None and exclude[s + r] is not None and exclude[s + r] >= 0:
                row = row[row != exclude[s + r]]
            ranked.append(row[:k].tolist())
    return RetrievalResult(ranked)


def positives_from_radius(q_pos: np.ndarray, db_pos: np.ndarray, radius: float,
                          paired: Optional[Sequence] = None, sequence: str = "") -> list:
    """Database indices within ``radius`` (closed ball) of each query, minus its paired frame.

    Positions are N x 3 metres, or 1-D frame indices for a temporal radius.
    """
    if not radius > 0:
        raise ValidationError("radius must be positive")
    if q_pos is None or db_pos is None:
        raise ProtocolError(f"sequence {sequence or '<unnamed>'}: positions are required")
    qp = np.asarray(q_pos, dtype=np.float64)
    dp = np.asarray(db_pos, dtype=np.float64)
    if qp.ndim == 1:
        qp, dp = qp[:, None], dp[:, None]
    out = []
    for i in range(len(qp)):
        dist = np.sqrt(((dp - qp[i]) ** 2).sum(-1))
        pos = set(np.nonzero(dist <= radius)[0].tolist())
        if paired is not None and paired[i] is not None:
            pos.discard(int(paired[i]))
        out.append(pos)
    return out


def recall_at_k(res: RetrievalResult, k: int) -> float:
    """Fraction of queries with a positive in their top ``k``; queries without positives don't count."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    hits = n = 0
    for ranked, pos in zip(res.ranked, res.positives):
        if not pos:
            continue
        n += 1
        hits += any(j in pos for j in ranked[:k])
    if n == 0:
        raise UndefinedRecallError("no query has a positive; recall is undefined")
    return hits / n


def weighted_mean_recall(per_seq: Sequence) -> float:
    """sum(r_i * n_i) / sum(n_i) over ``(recall, n_queries)`` tuples."""
    if not per_seq:
        raise ValidationError("no sequences to average")
    if any(n < 1 for _, n in per_seq):
        raise ValidationError("each sequence needs at least one query")
    return sum(r * n for r, n in per_seq) / sum(n for _, n in per_seq)


def paired_indices(query_ids: Sequence[str], db_ids: Sequence[str]) -> list:
    where = {x: j for j, x in enumerate(db_ids)}
    return [where.get(x) for x in query_ids]


def evaluate_vpr(q_emb, db_emb, q_pos, db_pos, radius: float, ks=(1,), metric: str = "cosine",
                 paired: Optional[Sequence] = None, sequence: str = "") -> dict:
    """Full cross-modal protocol on one database: the paired RGB frame is dropped from
    both the positive set and the candidate ranking."""
    ks = sorted(set(int(k) for k in ks))
    positives = positives_from_radius(q_pos, db_pos, radius, paired, sequence)
    res = knn_retrieve(q_emb, db_emb, max(ks), metric, exclude=paired)
    res.positives = positives
    n_eval = sum(1 for p in positives if p)
    out = {"queries": n_eval, "dropped_queries": len(positives) - n_eval}
    out["recall"] = {str(k): (recall_at_k(res, k) if n_eval else None) for k in ks}
    return out


def confusion_matrix(pred, gt, num_classes: int, ignore_label: Optional[int] = 255) -> np.ndarray:
    pred = np.asarray(pred).ravel().astype(np.int64)
    gt = np.asarray(gt).ravel().astype(np.int64)
    keep = np.ones(gt.shape, bool) if ignore_label is None else (gt != ignore_label) & (pred != ignore_label)
    p, g = pred[keep], gt[keep]
    if p.size and (p.min() < 0 or p.max() >= num_classes or g.min() < 0 or g.max() >= num_classes):
        raise ValidationError("labels must lie in [0, num_classes) or equal the ignore label")
    return np.bincount(g * num_classes + p, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray):
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(0) + cm.sum(1) - tp
    iou = np.full(len(tp), np.nan)
    present = denom > 0
    iou[present] = tp[present] / denom[present]
    return iou, (float(np.nanmean(iou)) if present.any() else float("nan"))


def miou(pred, gt, num_classes: int, ignore_label: Optional[int] = 255):
    """Per-class IoU (NaN for classes absent from both maps) and their mean."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return iou_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_label))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[..., None] == np.arange(num_classes)).astype(np.float64)


def upsample_nearest(probs: np.ndarray, factor: int = 14) -> np.ndarray:
    """Blow a patch-grid (h, w, C) prediction up to pixel resolution."""
    return np.repeat(np.repeat(np.asarray(probs), factor, axis=0), factor, axis=1)


def dice_loss(probs, gt_onehot, eps: float = 1e-6):
    """Soft Dice loss over channel-last inputs, averaged over classes present in ``gt_onehot``.

    Returns ``(loss, d loss / d probs)``.
    """
    p = np.asarray(probs, dtype=np.float64)
    g = np.asarray(gt_onehot, dtype=np.float64)
    if p.shape != g.shape:
        raise ValidationError("probabilities and one-hot targets differ in shape")
    C = p.shape[-1]
    p2, g2 = p.reshape(-1, C), g.reshape(-1, C)
    inter = (p2 * g2).sum(0)
    psum, gsum = p2.sum(0), g2.sum(0)
    num = 2 * inter + eps
    den = psum + gsum + eps
    present = gsum > 0
    n = int(present.sum())
    if n == 0:
        return 0.0, np.zeros_like(p)
    dice = num / den
    loss = 1.0 - dice[present].mean()
    # d dice_c / d p_ic = (2 g_ic * den - num) / den^2
    grad = -(2 * g2 * den - num) / den ** 2 / n
    grad[:, ~present] = 0.0
    return float(loss), grad.reshape(p.shape)


def depth_metrics(pred, gt, mask=None) -> dict:
    """AbsRel, SqRel, RMSE and RMSElog over pixels where ``mask`` is set and gt > 0.

    Predictions are floored at 1 mm for the log term only; the number of
    floored pixels is reported as ``clamped``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError("prediction and ground truth differ in shape")
    valid = np.isfinite(gt) & (gt > 0) & np.isfinite(pred)
    if mask is not None:
        valid &= np.asarray(mask).astype(bool)
    if not valid.any():
        raise ValidationError("no valid depth pixels to evaluate")
    d, p = gt[valid], pred[valid]
    err = p - d
    plog = np.maximum(p, DEPTH_LOG_FLOOR)
    return {
        "AbsRel": float(np.mean(np.abs(err) / d)),
        "SqRel": float(np.mean(err ** 2 / d)),
        "RMSE": float(np.sqrt(np.mean(err ** 2))),
        "RMSElog": float(np.sqrt(np.mean((np.log(plog) - np.log(d)) ** 2))),
        "valid": int(valid.sum()),
        "clamped": int((p < DEPTH_LOG_FLOOR).sum()),
    }


def parse_combo(label: str) -> tuple:
    toks = tuple(t.strip() for t in label.split("+"))
    if not toks or any(t not in DATASET_ALPHABET for t in toks) or len(set(toks)) != len(toks):
        raise ValidationError(f"bad dataset combination {label!r}; use letters from {'/'.join(DATASET_ALPHABET)}")
    return toks


def _combo_key(label):
    toks = parse_combo(label)
    return len(toks), tuple(DATASET_ALPHABET.index(t) for t in toks)


def scaling_report(runs: Sequence) -> dict:
    """Group ``(combo, task, value)`` runs by task, order combos by size then alphabet,
    and attach deltas between consecutive combos."""
    seen = set()
    tasks: dict = {}
    for combo, task, value in runs:
        key = ("+".join(parse_combo(combo)), task)
        if key in seen:
            raise ValidationError(f"duplicate run for combo {key[0]!r}, task {task!r}")
        seen.add(key)
        tasks.setdefault(task, []).append((key[0], float(value)))
    report = {}
    for task in sorted(tasks):
        rows = sorted(tasks[task], key=lambda r: _combo_key(r[0]))
        report[task] = [{"combo": c, "value": v, "delta": None if i == 0 else v - rows[i - 1][1]}
                        for i, (c, v) in enumerate(rows)]
    return report


def format_scaling_table(report: dict) -> str:
    lines = []
    for task, rows in report.items():
        w = max(len("combo"), *(len(r["combo"]) for r in rows))
        lines.append(f"[{task}]")
        lines.append(f"{'combo':<{w}}  {'value':>10}  {'delta':>10}")
        for r in rows:
            delta = "" if r["delta"] is None else f"{r['delta']:+.4f}"
            lines.append(f"{r['combo']:<{w}}  {r['value']:>10.4f}  {delta:>10}")
        lines.append("")
    return "\n".join(lines)


def dumps(obj, indent: Optional[int] = 2) -> str:
    """Stable JSON for artifacts (NaN becomes null); ``indent=None`` gives a single line."""
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, np.generic):
            return clean(x.item())
        return x
    if indent is None:
        return json.dumps(clean(obj), sort_keys=True, separators=(",", ":"))
    return json.dumps(clean(obj), indent=indent, sort_keys=True) + "\n"
