"""Ground-truth target tensors for the three prediction stages.

Stage 1 targets are dense ``H x W`` fields around every reference line, stage 2
is the coarse keypoint grid, stage 3 the dense affinity matrix between
keypoints together with the row-anchored reference-line samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AnchorOverflow, CellCollision, InconsistentIndex, TooManyEdges, TooManyKeypoints, ValidationError
from .geometry import TWO_PI, interp_x_at_rows, is_row_monotone
from .graph import GridSpec, LaneEdge, LaneGraph


@dataclass(frozen=True)
class EncoderConfig:
    truncation_px: float = 14.0
    anchor_step_px: int = 4
    n_max: int = 16
    n_rmax: int = 30

    def __post_init__(self):
        if min(self.truncation_px, self.anchor_step_px, self.n_max, self.n_rmax) <= 0:
            raise ValidationError("EncoderConfig values must be positive")

    @property
    def max_anchors(self) -> int:
        return self.n_rmax + 2

    def to_dict(self) -> dict:
        return {
            "truncation_px": self.truncation_px,
            "anchor_step_px": self.anchor_step_px,
            "n_max": self.n_max,
            "n_rmax": self.n_rmax,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(float(d["truncation_px"]), int(d["anchor_step_px"]), int(d["n_max"]), int(d["n_rmax"]))


@dataclass(frozen=True)
class FieldSet:
    R: np.ndarray  # (H, W, 1)
    D: np.ndarray  # (H, W, 3)
    P: np.ndarray  # (H, W, 3)
    truncation_px: float = 14.0


# --------------------------------------------------------------------------
# stage 1


def nearest_line(graph: LaneGraph, grid_spec: GridSpec, max_dist: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel distance to the closest polyline and that polyline's heading.

    Pixels farther than ``max_dist`` from every line keep ``inf`` distance and
    a heading of ``nan``. Exact ties keep the earlier edge/segment.
    """
    H, W = grid_spec.shape
    dist = np.full((H, W), np.inf)
    theta = np.full((H, W), np.nan)
    for e in graph.edges:
        pts = e.points
        seg = np.diff(pts, axis=0)
        keep = (seg ** 2).sum(1) > 0
        if not keep.any():
            continue
        a, ab = pts[:-1][keep], seg[keep]
        heads = np.mod(np.arctan2(-ab[:, 1], ab[:, 0]), TWO_PI)
        x0 = max(int(math.floor(pts[:, 0].min() - max_dist)), 0)
        x1 = min(int(math.ceil(pts[:, 0].max() + max_dist)) + 1, W)
        y0 = max(int(math.floor(pts[:, 1].min() - max_dist)), 0)
        y1 = min(int(math.ceil(pts[:, 1].max() + max_dist)) + 1, H)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        p = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(float)
        ap = p[:, None, :] - a[None]
        t = np.clip((ap * ab[None]).sum(-1) / (ab ** 2).sum(1)[None], 0.0, 1.0)
        r = ap - t[..., None] * ab[None]
        d = np.sqrt((r ** 2).sum(-1))
        k = d.argmin(axis=1)
        dmin = d[np.arange(len(p)), k].reshape(yy.shape)
        win_d = dist[y0:y1, x0:x1]
        better = dmin < win_d
        win_d[better] = dmin[better]
        theta[y0:y1, x0:x1][better] = heads[k].reshape(yy.shape)[better]
    return dist, theta


def hsv_to_rgb(h: np.ndarray, s: float = 1.0, v: float = 1.0) -> np.ndarray:
    """Standard hexcone HSV to RGB, vectorised over ``h`` in ``[0, 1)``."""
    h = np.asarray(h, dtype=float)
    h6 = np.mod(h, 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    vv = np.full_like(h, v)
    pp = np.full_like(h, p)
    r = np.choose(i, [vv, q, pp, pp, t, vv])
    g = np.choose(i, [t, vv, vv, q, pp, pp])
    b = np.choose(i, [pp, pp, t, vv, vv, q])
    return np.stack([r, g, b], axis=-1)


def rgb_to_hue(rgb: np.ndarray) -> np.ndarray:
    """Hue in ``[0, 1)`` of fully saturated RGB triples (inverse of :func:`hsv_to_rgb`)."""
    rgb = np.asarray(rgb, dtype=float)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(-1)
    mn = rgb.min(-1)
    c = np.where(mx - mn > 0, mx - mn, 1.0)
    h = np.where(mx == r, np.mod((g - b) / c, 6.0),
                 np.where(mx == g, (b - r) / c + 2.0, (r - g) / c + 4.0))
    return np.mod(h / 6.0, 1.0)


def _angle_image(theta: np.ndarray, on: np.ndarray) -> np.ndarray:
    rgb = np.zeros(theta.shape + (3,))
    rgb[on] = hsv_to_rgb(np.mod(theta[on], TWO_PI) / TWO_PI)
    return rgb.astype(np.float32)


def encode_distance_field(graph: LaneGraph, grid_spec: GridSpec, cfg: EncoderConfig | None = None) -> np.ndarray:
    """Truncated inverse distance transform ``max(0, 1 - d / T)``, shape ``(H, W, 1)``."""
    cfg = cfg or EncoderConfig()
    dist, _ = nearest_line(graph, grid_spec, cfg.truncation_px)
    R = np.clip(1.0 - dist / cfg.truncation_px, 0.0, 1.0)
    return R.astype(np.float32)[..., None]


def encode_direction_field(graph: LaneGraph, grid_spec: GridSpec, cfg: EncoderConfig | None = None) -> np.ndarray:
    cfg = cfg or EncoderConfig()
    dist, theta = nearest_line(graph, grid_spec, cfg.truncation_px)
    return _angle_image(theta, dist < cfg.truncation_px)


def encode_perp_field(graph: LaneGraph, grid_spec: GridSpec, cfg: EncoderConfig | None = None) -> np.ndarray:
    cfg = cfg or EncoderConfig()
    dist, theta = nearest_line(graph, grid_spec, cfg.truncation_px)
    return _angle_image(theta + math.pi / 2, dist < cfg.truncation_px)


def encode_fields(graph: LaneGraph, grid_spec: GridSpec, cfg: EncoderConfig | None = None) -> FieldSet:
    """All three stage-1 fields from a single nearest-line pass."""
    cfg = cfg or EncoderConfig()
    dist, theta = nearest_line(graph, grid_spec, cfg.truncation_px)
    on = dist < cfg.truncation_px
    R = np.zeros(dist.shape)
    R[on] = 1.0 - dist[on] / cfg.truncation_px
    return FieldSet(
        R=R.astype(np.float32)[..., None],
        D=_angle_image(theta, on),
        P=_angle_image(theta + math.pi / 2, on),
        truncation_px=cfg.truncation_px,
    )


# --------------------------------------------------------------------------
# stage 2


def encode_keypoint_grid(graph: LaneGraph, grid_spec: GridSpec, cfg: EncoderConfig | None = None) -> np.ndarray:
    """Keypoint grid ``(H', W', 3)``: confidence, x offset, y offset in the cell.

    Raises:
        CellCollision: two nodes share a cell (the graph was not pruned).
    """
    c = grid_spec.keypoint_cell
    K = np.zeros(grid_spec.kp_shape + (3,))
    for n in graph.nodes:
        if not grid_spec.contains(n.x, n.y):
            raise ValidationError(f"node {n.id} outside grid")
        row, col = grid_spec.cell_of(n.x, n.y)
        if K[row, col, 0] > 0:
            raise CellCollision(f"node {n.id} shares cell ({row}, {col}) with another node")
        K[row, col] = (1.0, (n.x - col * c) / c, (n.y - row * c) / c)
    return K


# --------------------------------------------------------------------------
# stage 3


@dataclass(frozen=True)
class AnchorLine:
    """Reference line sampled at fixed row steps; ``xs`` are normalised by width."""

    from_id: int
    to_id: int
    rows: np.ndarray
    xs: np.ndarray
    step: int
    width: int

    @property
    def xs_px(self) -> np.ndarray:
        return self.xs * self.width

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.xs_px, self.rows], axis=1)


def anchor_rows(from_y: float, to_y: float, step: int) -> np.ndarray:
    """``from_y, from_y - step, ...`` while still below ``to_y``, then ``to_y``."""
    if not from_y > to_y:
        raise ValidationError(f"anchor rows need from_y > to_y, got {from_y} <= {to_y}")
    n_inner = int(math.ceil((from_y - to_y) / step))
    rows = [from_y - k * step for k in range(n_inner)]
    rows.append(to_y)
    return np.asarray(rows, dtype=float)


def resample_reference_line(edge: LaneEdge, cfg: EncoderConfig | None = None,
                            grid_spec: GridSpec | None = None) -> AnchorLine:
    """Sample an edge polyline at the anchor rows between its end points.

    Raises:
        AnchorOverflow: the edge needs more than ``n_rmax + 2`` anchors.
    """
    cfg = cfg or EncoderConfig()
    width = (grid_spec or GridSpec()).width
    pts = edge.points
    if not is_row_monotone(pts):
        raise ValidationError(f"edge {edge.from_id}->{edge.to_id} is not row-monotone")
    rows = anchor_rows(pts[0, 1], pts[-1, 1], cfg.anchor_step_px)
    if len(rows) > cfg.max_anchors:
        raise AnchorOverflow(f"edge {edge.from_id}->{edge.to_id} needs {len(rows)} anchors "
                             f"(max {cfg.max_anchors})")
    xs = interp_x_at_rows(pts, rows)
    return AnchorLine(edge.from_id, edge.to_id, rows, xs / width, cfg.anchor_step_px, width)


@dataclass(frozen=True)
class DenseAffinity:
    """Pairwise connection confidence and anchor-line channels.

    ``lines[i, j, 0]`` holds the anchor count over ``n_rmax + 2``; slots
    ``1..n_rmax`` hold the interior anchor xs (normalised), zero padded.
    ``kp_index[i]`` is the keypoint-grid cell of dense index ``i``.
    """

    conf: np.ndarray
    lines: np.ndarray
    kp_index: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "kp_index", tuple((int(r), int(c)) for r, c in self.kp_index))

    @property
    def n_max(self) -> int:
        return self.conf.shape[0]

    @property
    def n_rmax(self) -> int:
        return self.lines.shape[2] - 1


def occupied_cells(K: np.ndarray, threshold: float = 0.5) -> list[tuple[int, int]]:
    """Cells with confidence >= threshold, row-major."""
    rows, cols = np.nonzero(K[..., 0] >= threshold)
    return list(zip(rows.tolist(), cols.tolist()))


def encode_affinity(graph: LaneGraph, kp_grid: np.ndarray, cfg: EncoderConfig | None = None) -> DenseAffinity:
    """Dense affinity targets for ``graph`` indexed by the occupied cells of ``kp_grid``.

    Raises:
        TooManyKeypoints, TooManyEdges: the scene exceeds ``n_max``.
        InconsistentIndex: a graph node's cell is not occupied in ``kp_grid``.
    """
    cfg = cfg or EncoderConfig()
    spec = graph.grid_spec
    cells = occupied_cells(kp_grid)
    if len(cells) > cfg.n_max:
        raise TooManyKeypoints(f"{len(cells)} keypoints > n_max={cfg.n_max}")
    if len(graph.edges) > cfg.n_max:
        raise TooManyEdges(f"{len(graph.edges)} edges > n_max={cfg.n_max}")
    dense = {cell: i for i, cell in enumerate(cells)}
    idx = {}
    for n in graph.nodes:
        cell = spec.cell_of(n.x, n.y)
        if cell not in dense:
            raise InconsistentIndex(f"node {n.id} cell {cell} not occupied in keypoint grid")
        idx[n.id] = dense[cell]

    conf = np.zeros((cfg.n_max, cfg.n_max))
    lines = np.zeros((cfg.n_max, cfg.n_max, cfg.n_rmax + 1))
    for e in graph.edges:
        line = resample_reference_line(e, cfg, spec)
        i, j = idx[e.from_id], idx[e.to_id]
        conf[i, j] = 1.0
        lines[i, j, 0] = len(line.xs) / cfg.max_anchors
        inner = line.xs[1:-1]
        lines[i, j, 1:1 + len(inner)] = inner
    return DenseAffinity(conf, lines, cells)


@dataclass(frozen=True)
class AffinityAlignment:
    """Common sparse frame for a predicted and a ground-truth affinity.

    ``cells`` is the row-major union of predicted and GT cells; ``pred_pos``
    and ``gt_pos`` map each side's dense index into it. ``gt_to_pred`` gives,
    for each GT keypoint, the predicted dense index in the same cell (or
    ``None``); ``pred_to_gt`` is the reverse.
    """

    cells: tuple
    pred_cells: tuple
    gt_cells: tuple
    pred_pos: tuple
    gt_pos: tuple
    gt_to_pred: tuple
    pred_to_gt: tuple


def _cell_of_kp(kp, spec: GridSpec) -> tuple[int, int]:
    cell = getattr(kp, "cell", None)
    if cell is not None:
        return int(cell[0]), int(cell[1])
    if hasattr(kp, "position"):
        x, y = kp.position
    else:
        x, y = kp
    return spec.cell_of(x, y)


def align_affinity(pred_kps: Sequence, gt_graph: LaneGraph, cfg: EncoderConfig | None = None) -> AffinityAlignment:
    """Index predicted and GT keypoints in one cell-keyed frame.

    Predicted dense indices follow the row-major order of their cells, the same
    convention :func:`encode_affinity` uses for the ground truth.
    """
    spec = gt_graph.grid_spec
    pred_cells = sorted({_cell_of_kp(k, spec) for k in pred_kps})
    gt_cells = sorted({spec.cell_of(n.x, n.y) for n in gt_graph.nodes})
    union = sorted(set(pred_cells) | set(gt_cells))
    where = {c: i for i, c in enumerate(union)}
    pred_at = {c: i for i, c in enumerate(pred_cells)}
    gt_at = {c: i for i, c in enumerate(gt_cells)}
    return AffinityAlignment(
        cells=tuple(union),
        pred_cells=tuple(pred_cells),
        gt_cells=tuple(gt_cells),
        pred_pos=tuple(where[c] for c in pred_cells),
        gt_pos=tuple(where[c] for c in gt_cells),
        gt_to_pred=tuple(pred_at.get(c) for c in gt_cells),
        pred_to_gt=tuple(gt_at.get(c) for c in pred_cells),
    )


@dataclass(frozen=True)
class TargetSet:
    """Every training target for one scene."""

    fields: FieldSet
    K: np.ndarray
    affinity: DenseAffinity


def encode_targets(graph: LaneGraph, cfg: EncoderConfig | None = None) -> TargetSet:
    cfg = cfg or EncoderConfig()
    spec = graph.grid_spec
    K = encode_keypoint_grid(graph, spec, cfg)
    return TargetSet(encode_fields(graph, spec, cfg), K, encode_affinity(graph, K, cfg))
