"""Shortest-path connectivity baseline over a distance-field cost image.

A forward-biased pixel graph is built on the low-cost band around the
reference lines; every keypoint pair that travels up the image is joined
by its cheapest path, and a minimum spanning forest of those candidates
keeps the final connections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .encoding import AnchorLine, anchor_rows
from .errors import ValidationError
from .graph import GridSpec, LaneEdge, LaneGraph, LaneNode, kinds_from_degrees

# (dx, dy): left, top-left, top, top-right, right
STEPS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0))

# path weights are exact integers: quantised cost in the high bits, one
# unit per step in the low bits, so float64 Dijkstra compares them as
# (cost, path length) lexicographically
COST_QUANT = 2 ** 16
STEP_BITS = 17
DEFAULT_DT = 0.6


def to_cost_image(R: np.ndarray) -> np.ndarray:
    """Cost ``1 - R``: zero on the reference lines, one off the band."""
    R = np.asarray(R, dtype=float)
    if R.ndim == 3:
        R = R[..., 0]
    if R.size and (R.min() < 0 or R.max() > 1):
        raise ValidationError("distance field must lie in [0, 1]")
    return 1.0 - R


def build_pixel_graph(cost: np.ndarray, dt: float) -> csr_matrix:
    """Directed pixel graph over ``cost <= dt`` pixels with the five forward steps.

    The weight of ``p1 -> p2`` encodes ``(cost(p2), 1)``.
    """
    H, W = cost.shape
    if H * W >= 2 ** STEP_BITS:
        raise ValidationError(f"grid of {H}x{W} pixels too large for exact path weights")
    ok = cost <= dt
    q = np.rint(cost * COST_QUANT).astype(np.int64)
    rows, cols, data = [], [], []
    yy, xx = np.nonzero(ok)
    for dx, dy in STEPS:
        x2, y2 = xx + dx, yy + dy
        inside = (x2 >= 0) & (x2 < W) & (y2 >= 0) & (y2 < H)
        x1, y1, x2, y2 = xx[inside], yy[inside], x2[inside], y2[inside]
        keep = ok[y2, x2]
        x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
        rows.append(y1 * W + x1)
        cols.append(y2 * W + x2)
        data.append((q[y2, x2] << STEP_BITS) + 1)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data).astype(float)
    return csr_matrix((data, (rows, cols)), shape=(H * W, H * W))


def split_weight(w: float) -> tuple[float, int]:
    """Decode a path weight into (summed cost, number of steps)."""
    w = int(w)
    return (w >> STEP_BITS) / COST_QUANT, w & ((1 << STEP_BITS) - 1)


@dataclass(frozen=True)
class Candidate:
    src: int
    dst: int
    weight: int
    path: tuple  # ((row, col), ...) from src to dst

    @property
    def cost(self) -> float:
        return split_weight(self.weight)[0]

    @property
    def steps(self) -> int:
        return split_weight(self.weight)[1]


@dataclass(frozen=True)
class BaselineResult:
    connections: tuple  # (from_index, to_index), from travels up to to
    lines: tuple  # AnchorLine per connection
    candidates: tuple

    def to_graph(self, keypoints: Sequence, grid_spec: GridSpec) -> LaneGraph:
        pos = [_xy(k) for k in keypoints]
        nodes = [LaneNode(i, x, y) for i, (x, y) in enumerate(pos)]
        edges = []
        for (i, j), line in zip(self.connections, self.lines):
            inner = [(float(x), float(r)) for x, r in zip(line.xs_px[1:-1], line.rows[1:-1])]
            edges.append(LaneEdge(i, j, [pos[i], *inner, pos[j]]))
        return LaneGraph(kinds_from_degrees(nodes, edges), edges, grid_spec)


def _xy(k) -> tuple[float, float]:
    if hasattr(k, "position"):
        x, y = k.position
    else:
        x, y = k
    return float(x), float(y)


def _walk(pred: np.ndarray, src: int, dst: int, W: int) -> tuple:
    out = []
    v = dst
    while v != src:
        out.append((v // W, v % W))
        v = pred[v]
        if v < 0:
            raise RuntimeError("broken predecessor chain")
    out.append((src // W, src % W))
    return tuple(reversed(out))


def path_to_anchor_line(path: Sequence[tuple[int, int]], start: tuple[float, float], end: tuple[float, float],
                        i: int, j: int, step: int, width: int) -> AnchorLine:
    """Sample a pixel path at the anchor rows between two keypoints.

    Interior anchors take the mean column of the path pixels on that row.
    """
    rows = anchor_rows(start[1], end[1], step)
    by_row: dict[int, list[int]] = {}
    for r, c in path:
        by_row.setdefault(r, []).append(c)
    xs = [start[0]]
    for r in rows[1:-1]:
        cs = by_row.get(int(round(r)))
        if cs is None:
            # row skipped (only possible for non-integer keypoint rows)
            near = min(by_row, key=lambda rr: abs(rr - r))
            cs = by_row[near]
        xs.append(float(np.mean(cs)))
    xs.append(end[0])
    return AnchorLine(i, j, rows, np.asarray(xs) / width, step, width)


def minimum_spanning_forest(n: int, candidates: Sequence[Candidate]) -> list[Candidate]:
    """Kruskal on the undirected view; ties broken by (weight, min idx, max idx)."""
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    kept = []
    for c in sorted(candidates, key=lambda c: (c.weight, min(c.src, c.dst), max(c.src, c.dst))):
        ra, rb = find(c.src), find(c.dst)
        if ra != rb:
            parent[ra] = rb
            kept.append(c)
    return kept


def baseline_predict(R: np.ndarray, keypoints: Sequence, dt: float = DEFAULT_DT, *,
                     anchor_step: int = 4) -> BaselineResult:
    """Connect keypoints through the distance field with shortest paths + MST.

    ``keypoints`` are ``(x, y)`` pairs or objects with a ``position``.
    Only pairs with ``y_from > y_to`` are searched; since the pixel steps
    never move down, that is the only direction a path can exist in.
    """
    if not 0 < dt <= 1:
        raise ValidationError("dt must be in (0, 1]")
    cost = to_cost_image(R)
    H, W = cost.shape
    pos = [_xy(k) for k in keypoints]
    for x, y in pos:
        if not (0 <= x < W and 0 <= y < H):
            raise ValidationError(f"keypoint ({x}, {y}) outside grid")
    pix = [int(round(min(max(y, 0), H - 1))) * W + int(round(min(max(x, 0), W - 1))) for x, y in pos]

    candidates = []
    sources = [i for i in range(len(pos)) if any(pos[i][1] > pos[j][1] for j in range(len(pos)))]
    if sources:
        graph = build_pixel_graph(cost, dt)
        dist, pred = dijkstra(graph, directed=True, indices=[pix[i] for i in sources],
                              return_predecessors=True)
        for row, i in enumerate(sources):
            for j in range(len(pos)):
                if not pos[i][1] > pos[j][1] or pix[i] == pix[j]:
                    continue
                d = dist[row, pix[j]]
                if np.isfinite(d):
                    candidates.append(Candidate(i, j, int(d), _walk(pred[row], pix[i], pix[j], W)))

    kept = minimum_spanning_forest(len(pos), candidates)
    kept.sort(key=lambda c: (c.src, c.dst))
    lines = tuple(path_to_anchor_line(c.path, pos[c.src], pos[c.dst], c.src, c.dst, anchor_step, W)
                  for c in kept)
    return BaselineResult(tuple((c.src, c.dst) for c in kept), lines, tuple(candidates))
