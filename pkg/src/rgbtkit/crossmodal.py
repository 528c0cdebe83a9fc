"""Distillation and place-recognition training maths.

Losses return analytic gradients so they can be checked against finite
differences and used without an autodiff framework. The teacher side of the
contrastive loss is frozen: only student gradients are exposed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import TrainingError, ValidationError
from .evaluate import RetrievalResult, knn_retrieve, recall_at_k

MODALITIES = ("rgb", "thermal")


@dataclass
class EmbeddingSet:
    vectors: np.ndarray  # (N, D)
    ids: list
    modality: str = "thermal"
    # (N, 3) metres, (N,) frame indices, or None
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValidationError("embedding matrix must be 2-D")
        if not np.isfinite(self.vectors).all():
            raise ValidationError("embeddings contain non-finite values")
        if len(self.ids) != len(self.vectors):
            raise ValidationError("one id per embedding row is required")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("embedding ids must be unique")
        if self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=np.float64)
            if len(self.positions) != len(self.vectors):
                raise ValidationError("one position per embedding row is required")

    def __len__(self):
        return len(self.vectors)

    @property
    def frame_indexed(self) -> bool:
        return self.positions is not None and self.positions.ndim == 1


class Normalized(NamedTuple):
    rows: np.ndarray
    zero_rows: np.ndarray  # bool mask of rows that could not be normalised


def l2_normalize(rows) -> Normalized:
    x = np.asarray(rows, dtype=np.float64)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    zero = (n == 0)[..., 0]
    return Normalized(np.divide(x, n, out=np.zeros_like(x), where=n > 0), zero)


def _log_softmax(z, axis):
    m = z.max(axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def infonce_loss(student, teacher, tau: float = 0.07):
    """Symmetric in-batch InfoNCE between paired rows; row i of each side is a positive pair.

    Rows are expected to be L2-normalised already. Returns ``(loss, d loss / d student)``.
    """
    s = np.asarray(student, dtype=np.float64)
    t = np.asarray(teacher, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2:
        raise ValidationError("student and teacher batches must have the same 2-D shape")
    B = s.shape[0]
    if B < 2:
        raise ValidationError("InfoNCE needs at least two pairs for in-batch negatives")
    if not tau > 0:
        raise ValidationError("temperature must be positive")
    S = s @ t.T / tau
    lr = _log_softmax(S, 1)
    lc = _log_softmax(S, 0)
    diag = np.arange(B)
    loss = -0.5 * (lr[diag, diag].mean() + lc[diag, diag].mean())
    eye = np.eye(B)
    dS = 0.5 * ((np.exp(lr) - eye) + (np.exp(lc) - eye)) / B
    return float(loss), dS @ t / tau


def _dist_and_grads(x, y, distance):
    """d(x, y) and its gradients with respect to x and y."""
    if distance == "euclidean":
        diff = x - y
        d = float(np.linalg.norm(diff))
        g = diff / d if d > 0 else np.zeros_like(diff)
        return d, g, -g
    if distance == "cosine":
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx == 0 or ny == 0:
            raise ValidationError("cosine distance undefined for zero vectors")
        c = float(x @ y / (nx * ny))
        gx = -(y / (nx * ny) - c * x / nx ** 2)
        gy = -(x / (nx * ny) - c * y / ny ** 2)
        return 1.0 - c, gx, gy
    raise ValidationError(f"unknown distance {distance!r}")


def triplet_margin_loss(a, p, n, margin: float = 0.1, distance: str = "euclidean"):
    """``max(0, d(a, p) - d(a, n) + margin)``; returns ``(loss, (ga, gp, gn))``.

    At the hinge (value exactly 0) the zero subgradient is used.
    """
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (a, p, n))
    if margin < 0:
        raise ValidationError("margin must be non-negative")
    dap, ga1, gp = _dist_and_grads(a, p, distance)
    dan, ga2, gn = _dist_and_grads(a, n, distance)
    val = dap - dan + margin
    if val <= 0:
        z = np.zeros_like(a)
        return 0.0, (z, z.copy(), z.copy())
    return float(val), (ga1 - ga2, gp, -gn)


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    anchor_modality: str
    other_modality: str


@dataclass
class MiningResult:
    triplets: list
    skipped: int
    anchors: int = 0


def _geo_dist(pos_a, pos_b, i):
    if pos_a.ndim == 1:
        return np.abs(pos_b - pos_a[i])
    return np.sqrt(((pos_b - pos_a[i]) ** 2).sum(-1))


def mine_triplets(rgb: EmbeddingSet, thermal: EmbeddingSet, radius: float, k_hard: int = 10,
                  seed: int = 0, anchors: str = "both") -> MiningResult:
    """Cross-modal triplets with hard negatives.

    For each anchor, positives are rows of the other modality within ``radius``
    (closed ball; metres or frame indices) other than the anchor's own paired
    frame (same id). Negatives lie outside the radius; one is drawn uniformly
    from the ``k_hard`` nearest in embedding space. Every anchor draws from its
    own seeded stream, so results don't depend on iteration order.
    """
    if not radius > 0:
        raise ValidationError("mining radius must be positive")
    if k_hard < 1:
        raise ValidationError("k_hard must be >= 1")
    if anchors not in ("both", "rgb", "thermal"):
        raise ValidationError("anchors must be 'both', 'rgb' or 'thermal'")
    for s in (rgb, thermal):
        if s.positions is None:
            raise ValidationError(f"{s.modality} embeddings carry no positions or frame indices")
    if rgb.frame_indexed != thermal.frame_indexed:
        raise ValidationError("both modalities must use the same kind of position")
    sides = []
    if anchors in ("both", "thermal"):
        sides.append((thermal, rgb))
    if anchors in ("both", "rgb"):
        sides.append((rgb, thermal))
    triplets, skipped, n_anchors = [], 0, 0
    for anc, oth in sides:
        paired = {x: j for j, x in enumerate(oth.ids)}
        for i in range(len(anc)):
            n_anchors += 1
            gd = _geo_dist(anc.positions, oth.positions, i)
            inside = gd <= radius
            pos = np.nonzero(inside)[0]
            own = paired.get(anc.ids[i])
            if own is not None:
                pos = pos[pos != own]
            neg = np.nonzero(~inside)[0]
            if len(pos) == 0 or len(neg) == 0:
                skipped += 1
                continue
            ed = ((oth.vectors[neg] - anc.vectors[i]) ** 2).sum(-1)
            hard = neg[np.argsort(ed, kind="stable")[:k_hard]]
            rng = np.random.default_rng([seed, MODALITIES.index(anc.modality), i])
            triplets.append(Triplet(i, int(rng.choice(pos)), int(rng.choice(hard)),
                                    anc.modality, oth.modality))
    return MiningResult(triplets, skipped, n_anchors)


@dataclass(frozen=True)
class ToyDistillConfig:
    latent_dim: int = 8
    feature_dim: int = 32
    n_train: int = 512
    n_val: int = 256
    noise: float = 0.01
    lr: float = 0.5
    steps: int = 2000
    tau: float = 0.07
    seed: int = 0
    eval_every: int = 100
    batch_size: Optional[int] = None  # None: full batch

    def __post_init__(self):
        for name in ("latent_dim", "feature_dim", "n_train", "n_val"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.steps < 0 or self.eval_every < 1:
            raise ValidationError("steps must be >= 0 and eval_every >= 1")
        if self.lr < 0 or not self.tau > 0:
            raise ValidationError("lr must be >= 0 and tau positive")
        if self.n_train < 2:
            raise ValidationError("need at least two training pairs")


@dataclass
class ToyDistillResult:
    W: np.ndarray
    loss: list = field(default_factory=list)  # one entry per step
    recall: list = field(default_factory=list)  # (step, recall@1) on held-out pairs

    def history_csv(self) -> str:
        lines = ["step,loss,recall_at_1"]
        rec = dict(self.recall)
        for step, l in enumerate(self.loss):
            r = rec.get(step)
            lines.append(f"{step},{l:.17g},{'' if r is None else repr(float(r))}")
        final = len(self.loss)
        if final in rec:
            lines.append(f"{final},,{float(rec[final])!r}")
        return "\n".join(lines) + "\n"


def _synth_pairs(rng, A, B, n, latent, noise):
    z = rng.standard_normal((n, latent))
    teacher = z @ A.T + noise * rng.standard_normal((n, A.shape[0]))
    thermal = z @ B.T + noise * rng.standard_normal((n, B.shape[0]))
    return teacher, thermal


def cross_modal_recall1(student_feats, teacher_feats) -> float:
    """Recall@1 when each student row must retrieve its own teacher row."""
    res: RetrievalResult = knn_retrieve(student_feats, teacher_feats, 1, metric="cosine")
    res.positives = [{i} for i in range(len(student_feats))]
    return recall_at_k(res, 1)


def toy_distill(cfg: ToyDistillConfig) -> ToyDistillResult:
    """Align a linear thermal student with a frozen linear teacher by gradient descent on InfoNCE.

    Latent scene vectors z are observed through two fixed random linear maps
    plus noise; the student ``W`` maps thermal observations into teacher space.
    """
    rng = np.random.default_rng(cfg.seed)
    A = rng.standard_normal((cfg.feature_dim, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    B = rng.standard_normal((cfg.feature_dim, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    t_train, x_train = _synth_pairs(rng, A, B, cfg.n_train, cfg.latent_dim, cfg.noise)
    t_val, x_val = _synth_pairs(rng, A, B, cfg.n_val, cfg.latent_dim, cfg.noise)
    W = rng.standard_normal((cfg.feature_dim, cfg.feature_dim)) / np.sqrt(cfg.feature_dim)
    t_train_n = l2_normalize(t_train).rows
    batch_rng = np.random.default_rng([cfg.seed, 1])

    out = ToyDistillResult(W)
    for step in range(cfg.steps + 1):
        if step % cfg.eval_every == 0 or step == cfg.steps:
            out.recall.append((step, cross_modal_recall1(x_val @ W.T, t_val)))
        if step == cfg.steps:
            break
        if cfg.batch_size:
            idx = batch_rng.choice(cfg.n_train, size=min(cfg.batch_size, cfg.n_train), replace=False)
            x, t = x_train[idx], t_train_n[idx]
        else:
            x, t = x_train, t_train_n
        # blow-ups are reported as TrainingError below, not as numpy warnings
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            y = x @ W.T
            norms = np.linalg.norm(y, axis=1, keepdims=True)
            s = y / norms
            loss, gs = infonce_loss(s, t, cfg.tau)
        if not np.isfinite(loss):
            raise TrainingError("loss became non-finite", step)
        # back through row normalisation, then the linear map
        with np.errstate(over="ignore", invalid="ignore"):
            gy = (gs - s * (gs * s).sum(1, keepdims=True)) / norms
            W = W - cfg.lr * (gy.T @ x)
        if not np.isfinite(W).all():
            raise TrainingError("student weights became non-finite", step)
        out.loss.append(loss)
    out.W = W
    return out
