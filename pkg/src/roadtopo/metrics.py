"""Evaluation metrics and the three stage losses.

Losses are evaluated, never differentiated: they are reference values that
a training framework can be checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .encoding import AffinityAlignment, DenseAffinity, FieldSet, anchor_rows
from .errors import InconsistentIndex, OutOfRange, ShapeMismatch, ValidationError
from .geometry import interp_x_at_rows
from .graph import LaneGraph

BCE_EPS = 1e-7
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    lambda_1: float = 1.0
    lambda_2: float = 1.0
    lambda_conf: float = 1.0
    lambda_coord: float = 5.0

    def __post_init__(self):
        if min(self.lambda_1, self.lambda_2, self.lambda_conf, self.lambda_coord) <= 0:
            raise ValidationError("loss weights must be > 0")


def _same_shape(a: np.ndarray, b: np.ndarray):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"{np.shape(a)} vs {np.shape(b)}")


# --------------------------------------------------------------------------
# field metrics


def mae(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _same_shape(a, b)
    return float(np.abs(a - b).mean())


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _ssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    g = _gaussian_window()

    def blur(img):
        return correlate1d(correlate1d(img, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2))
    pad = (SSIM_WINDOW - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(a, b) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, data range 1).

    Multi-channel ``(H, W, C)`` inputs return the mean over channels.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3 or min(a.shape[:2]) < SSIM_WINDOW:
        raise ValidationError(f"ssim needs (H, W[, C]) images of at least {SSIM_WINDOW} px, got {a.shape}")
    return float(np.mean([_ssim_plane(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def field_metrics(pred: FieldSet, gt: FieldSet) -> dict:
    return {name: {"mae": mae(getattr(pred, name), getattr(gt, name)),
                   "ssim": ssim(getattr(pred, name), getattr(gt, name))}
            for name in ("R", "D", "P")}


# --------------------------------------------------------------------------
# detection counting


def safe_rate(num: int, den: int, other_missing: int) -> float:
    """``num / den``; an empty denominator scores 1 only if nothing was missed either."""
    if den > 0:
        return num / den
    return 1.0 if other_missing == 0 else 0.0


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return safe_rate(self.tp, self.tp + self.fp, self.fn)

    @property
    def recall(self) -> float:
        return safe_rate(self.tp, self.tp + self.fn, self.fp)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def rates(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


def _xy(k) -> tuple[float, float]:
    if hasattr(k, "position"):
        return tuple(map(float, k.position))
    return float(k[0]), float(k[1])


@dataclass(frozen=True)
class KeypointMatching:
    pairs: tuple  # (pred_index, gt_index)
    counts: Counts

    @property
    def pred_to_gt(self) -> dict:
        return dict(self.pairs)


def _greedy_pairs(pred: Sequence, gt: Sequence, tol_px: float) -> tuple[list, dict]:
    P = np.array([_xy(k) for k in pred], dtype=float).reshape(-1, 2)
    G = np.array([_xy(k) for k in gt], dtype=float).reshape(-1, 2)
    cand = []
    for i in range(len(P)):
        for j in range(len(G)):
            d = float(np.hypot(*(P[i] - G[j])))
            if d <= tol_px:
                a, b = tuple(P[i]), tuple(G[j])
                # order-free key so swapping pred and gt gives the same sequence
                cand.append((d, min(a, b), max(a, b), i, j))
    cand.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, _, _, i, j in cand:
        if i not in used_p and j not in used_g:
            pairs.append((i, j))
            used_p.add(i)
            used_g.add(j)
    adj: dict[int, list[int]] = {}
    for _, _, _, i, j in cand:
        adj.setdefault(i, []).append(j)
    return pairs, adj


def match_keypoints(pred: Sequence, gt: Sequence, tol_px: float = 8.0, *, augment: bool = True) -> KeypointMatching:
    """One-to-one keypoint matching within ``tol_px``.

    Pairs are taken greedily in ascending distance. With ``augment`` (the
    default) the greedy matching is then grown along augmenting paths until
    it has maximum cardinality, so TP counts never suffer from greedy order.
    """
    if not tol_px > 0:
        raise ValidationError("tol_px must be > 0")
    pairs, adj = _greedy_pairs(pred, gt, tol_px)
    if augment:
        g_of = {j: i for i, j in pairs}
        p_of = {i: j for i, j in pairs}

        def try_augment(i: int, seen: set) -> bool:
            for j in adj.get(i, ()):
                if j in seen:
                    continue
                seen.add(j)
                if j not in g_of or try_augment(g_of[j], seen):
                    g_of[j] = i
                    p_of[i] = j
                    return True
            return False

        for i in range(len(pred)):
            if i not in p_of:
                try_augment(i, set())
        pairs = sorted((i, j) for j, i in g_of.items())
    tp = len(pairs)
    return KeypointMatching(tuple(pairs), Counts(tp, len(pred) - tp, len(gt) - tp))


# --------------------------------------------------------------------------
# connectivity


@dataclass
class ConnectivityResult:
    counts: Counts
    offset_sum_px: float = 0.0
    offset_edges: int = 0
    resolution: float = 0.26

    @property
    def avg_offset_px(self) -> float | None:
        return self.offset_sum_px / self.offset_edges if self.offset_edges else None

    @property
    def avg_offset_cm(self) -> float | None:
        px = self.avg_offset_px
        return None if px is None else px * self.resolution * 100.0


def eval_connectivity(pred_graph: LaneGraph, gt_graph: LaneGraph, kp_matching: KeypointMatching,
                      *, anchor_step: int = 4) -> ConnectivityResult:
    """Score predicted edges against GT through a node matching.

    ``kp_matching`` indexes ``pred_graph.nodes`` and ``gt_graph.nodes`` by
    position in those tuples. A predicted edge is a true positive when both
    ends are matched and the matched GT edge exists. Its offset is the mean
    ``|x_pred - x_gt|`` over the GT anchor rows that both polylines span.
    """
    p_ids = [n.id for n in pred_graph.nodes]
    g_ids = [n.id for n in gt_graph.nodes]
    to_gt = {p_ids[i]: g_ids[j] for i, j in kp_matching.pairs}
    gt_edges = {e.key: e for e in gt_graph.edges}

    tp = 0
    off_sum, off_n = 0.0, 0
    for e in pred_graph.edges:
        key = (to_gt.get(e.from_id), to_gt.get(e.to_id))
        g = gt_edges.get(key)
        if g is None:
            continue
        tp += 1
        gp, pp = g.points, e.points
        rows = anchor_rows(gp[0, 1], gp[-1, 1], anchor_step)
        lo, hi = pp[:, 1].min(), pp[:, 1].max()
        rows = rows[(rows >= lo) & (rows <= hi)]
        if len(rows):
            off_sum += float(np.abs(interp_x_at_rows(pp, rows) - interp_x_at_rows(gp, rows)).mean())
            off_n += 1
    counts = Counts(tp, len(pred_graph.edges) - tp, len(gt_graph.edges) - tp)
    return ConnectivityResult(counts, off_sum, off_n, gt_graph.grid_spec.resolution)


# --------------------------------------------------------------------------
# losses


def _bce(p_hat: np.ndarray, p: np.ndarray) -> np.ndarray:
    q = np.clip(p_hat, BCE_EPS, 1.0 - BCE_EPS)
    return -(p * np.log(q) + (1.0 - p) * np.log(1.0 - q))


def _field_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    _same_shape(pred, gt)
    gn = np.linalg.norm(gt, axis=-1)
    pn = np.linalg.norm(pred, axis=-1)
    support = gn > 0
    cos_term = 0.0
    if support.any():
        dot = (pred * gt).sum(-1)[support]
        denom = (pn * gn)[support]
        # zero predicted vector scores cosine 0
        cos = np.divide(dot, denom, out=np.zeros_like(dot), where=denom > 0)
        cos_term = float((1.0 - cos).mean())
    return cos_term + float(np.abs(pred - gt).mean())


def loss_stage1(pred: FieldSet, gt: FieldSet, w: LossWeights | None = None) -> float:
    """``l_R + lambda_1 l_D + lambda_2 l_P``, each ``(1 - cosine) + L1``."""
    w = w or LossWeights()
    return (_field_loss(pred.R, gt.R) + w.lambda_1 * _field_loss(pred.D, gt.D)
            + w.lambda_2 * _field_loss(pred.P, gt.P))


def loss_stage2(pred: np.ndarray, gt: np.ndarray, w: LossWeights | None = None) -> float:
    """Cell-wise BCE on confidence plus offset MSE over GT-occupied cells."""
    w = w or LossWeights()
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    _same_shape(pred, gt)
    conf = float(_bce(pred[..., 0], gt[..., 0]).mean())
    occ = gt[..., 0] > 0.5
    n_k = int(occ.sum())
    coord = float(((pred[..., 1:][occ] - gt[..., 1:][occ]) ** 2).sum() / n_k) if n_k else 0.0
    return w.lambda_conf * conf + w.lambda_coord * coord


def loss_stage3(pred: DenseAffinity, gt: DenseAffinity, alignment: AffinityAlignment,
                w: LossWeights | None = None) -> float:
    """Affinity BCE over the aligned keypoint frame plus anchor-x MSE.

    Both matrices are scattered into the union of predicted and GT cells;
    entries a side does not have count as probability 0. The coordinate term
    averages squared errors of the interior anchor xs over the GT connections
    whose two keypoints were predicted.
    """
    w = w or LossWeights()
    if set(pred.kp_index) != set(alignment.pred_cells) or set(gt.kp_index) != set(alignment.gt_cells):
        raise InconsistentIndex("alignment does not describe these affinity matrices")
    if pred.lines.shape[2] != gt.lines.shape[2]:
        raise ShapeMismatch("anchor channel count differs")
    where = {c: i for i, c in enumerate(alignment.cells)}
    n = len(alignment.cells)
    if n == 0:
        return 0.0
    pu = [where[c] for c in pred.kp_index]
    gu = [where[c] for c in gt.kp_index]
    p_hat = np.zeros((n, n))
    p = np.zeros((n, n))
    p_hat[np.ix_(pu, pu)] = pred.conf[:len(pu), :len(pu)]
    p[np.ix_(gu, gu)] = gt.conf[:len(gu), :len(gu)]
    conf = float(_bce(p_hat, p).mean())

    pred_dense = {c: i for i, c in enumerate(pred.kp_index)}
    n_slots = gt.lines.shape[2] - 1
    sq, count = 0.0, 0
    for i, j in zip(*np.nonzero(gt.conf[:len(gu), :len(gu)] > 0.5)):
        ci, cj = gt.kp_index[i], gt.kp_index[j]
        if ci not in pred_dense or cj not in pred_dense:
            continue
        inner = int(round(gt.lines[i, j, 0] * (n_slots + 1))) - 2
        if inner <= 0:
            continue
        a, b = pred_dense[ci], pred_dense[cj]
        sq += float(((pred.lines[a, b, 1:1 + inner] - gt.lines[i, j, 1:1 + inner]) ** 2).sum())
        count += inner
    coord = sq / count if count else 0.0
    return w.lambda_conf * conf + w.lambda_coord * coord


# --------------------------------------------------------------------------
# complexity and reports


class Bucket(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    DIFFICULT = "difficult"


def complexity_bucket(graph_or_count) -> Bucket:
    """Scene difficulty by keypoint count: 1-5 easy, 6-10 medium, 11-15 difficult."""
    n = graph_or_count if isinstance(graph_or_count, int) else len(graph_or_count.nodes)
    if 1 <= n <= 5:
        return Bucket.EASY
    if 6 <= n <= 10:
        return Bucket.MEDIUM
    if 11 <= n <= 15:
        return Bucket.DIFFICULT
    raise OutOfRange(f"{n} keypoints outside 1..15")


@dataclass
class EvalReport:
    kp: Counts = field(default_factory=Counts)
    conn: Counts = field(default_factory=Counts)
    offset_sum_px: float = 0.0
    offset_edges: int = 0
    resolution: float = 0.26
    field_metrics: dict | None = None
    bucket: Bucket | None = None
    frames: int = 1

    @property
    def avg_offset_cm(self) -> float | None:
        if not self.offset_edges:
            return None
        return self.offset_sum_px / self.offset_edges * self.resolution * 100.0

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "complexity_bucket": None if self.bucket is None else self.bucket.value,
            "field_metrics": self.field_metrics,
            "kp_metrics": {**self.kp.rates(), "matched": self.kp.tp},
            "conn_metrics": {**self.conn.rates(), "avg_offset_cm": self.avg_offset_cm},
        }


def evaluate(pred_graph: LaneGraph, gt_graph: LaneGraph, *, tol_px: float = 8.0, anchor_step: int = 4,
             pred_fields: FieldSet | None = None, gt_fields: FieldSet | None = None) -> EvalReport:
    """Full per-frame report: keypoints, connectivity, optional field metrics."""
    m = match_keypoints(pred_graph.nodes, gt_graph.nodes, tol_px)
    c = eval_connectivity(pred_graph, gt_graph, m, anchor_step=anchor_step)
    fm = field_metrics(pred_fields, gt_fields) if pred_fields is not None and gt_fields is not None else None
    try:
        bucket = complexity_bucket(gt_graph)
    except OutOfRange:
        bucket = None
    return EvalReport(m.counts, c.counts, c.offset_sum_px, c.offset_edges, gt_graph.grid_spec.resolution,
                      fm, bucket)


def aggregate(reports: Iterable[EvalReport]) -> EvalReport:
    """Micro-average: counts and offsets summed, field metrics averaged per frame."""
    reports = list(reports)
    out = EvalReport(frames=0)
    fms = [r.field_metrics for r in reports if r.field_metrics]
    for r in reports:
        out.kp = out.kp + r.kp
        out.conn = out.conn + r.conn
        out.offset_sum_px += r.offset_sum_px
        out.offset_edges += r.offset_edges
        out.resolution = r.resolution
        out.frames += r.frames
    buckets = {r.bucket for r in reports}
    out.bucket = buckets.pop() if len(buckets) == 1 else None
    if fms:
        out.field_metrics = {k: {m: float(np.mean([f[k][m] for f in fms])) for m in ("mae", "ssim")}
                             for k in fms[0]}
    return out


def report_by_bucket(reports: Sequence[EvalReport]) -> dict:
    """JSON-ready overall + per-bucket tables."""
    out = {"overall": aggregate(reports).to_dict(), "buckets": {}}
    for b in Bucket:
        sub = [r for r in reports if r.bucket == b]
        if sub:
            out["buckets"][b.value] = aggregate(sub).to_dict()
    out["per_frame"] = [r.to_dict() for r in reports]
    return out
