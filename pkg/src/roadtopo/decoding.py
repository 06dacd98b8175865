"""Turn keypoint-grid and affinity tensors back into a lane graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoding import DenseAffinity, EncoderConfig, anchor_rows
from .errors import InconsistentIndex
from .graph import GridSpec, LaneEdge, LaneGraph, LaneNode, kinds_from_degrees

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodedKeypoint:
    cell: tuple[int, int]
    position: tuple[float, float]
    confidence: float

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]


def decode_keypoints(K: np.ndarray, conf_threshold: float = 0.5, *, cell_size: int = 8,
                     n_max: int = 16) -> list[DecodedKeypoint]:
    """Keypoints from a ``(H', W', 3)`` grid, best first, at most ``n_max``."""
    conf = K[..., 0]
    rows, cols = np.nonzero(conf >= conf_threshold)
    kps = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        x = c * cell_size + float(K[r, c, 1]) * cell_size
        y = r * cell_size + float(K[r, c, 2]) * cell_size
        kps.append(DecodedKeypoint((r, c), (x, y), float(conf[r, c])))
    # stable sort keeps row-major order among equal confidences
    kps.sort(key=lambda k: -k.confidence)
    return kps[:n_max]


def affinity_index(kps: Sequence[DecodedKeypoint]) -> list[tuple[int, int]]:
    """Row-major dense index for predicted keypoints (the encoder's convention)."""
    return sorted(k.cell for k in kps)


@dataclass(frozen=True)
class DecodeResult:
    graph: LaneGraph
    dropped: tuple  # (i, j) pairs above threshold that violate row order


def decode_graph(kps: Sequence[DecodedKeypoint], aff: DenseAffinity, conf_threshold: float = 0.5,
                 *, grid_spec: GridSpec | None = None, cfg: EncoderConfig | None = None,
                 return_dropped: bool = False):
    """Assemble a lane graph from keypoints and a dense affinity.

    Each pair ``(i, j)`` with confidence at or above the threshold becomes an
    edge ``kp_i -> kp_j`` whose polyline runs through the stored interior
    anchors; the anchor rows are recomputed from the keypoint rows. Pairs that
    do not travel up the image (``y_i <= y_j``) are dropped and logged.

    Node ids follow the order of ``kps``.

    Raises:
        InconsistentIndex: ``aff.kp_index`` names a cell with no keypoint.
    """
    spec = grid_spec or GridSpec()
    cfg = cfg or EncoderConfig(n_max=aff.n_max, n_rmax=aff.n_rmax)
    by_cell = {k.cell: i for i, k in enumerate(kps)}
    dense_to_kp = []
    for cell in aff.kp_index:
        if cell not in by_cell:
            raise InconsistentIndex(f"affinity references cell {cell} with no decoded keypoint")
        dense_to_kp.append(by_cell[cell])

    nodes = [LaneNode(i, k.x, k.y) for i, k in enumerate(kps)]
    edges = []
    dropped = []
    n = len(dense_to_kp)
    ii, jj = np.nonzero(aff.conf[:n, :n] >= conf_threshold)
    for i, j in zip(ii.tolist(), jj.tolist()):
        if i == j:
            continue
        a, b = kps[dense_to_kp[i]], kps[dense_to_kp[j]]
        if not a.y > b.y:
            log.warning("dropping affinity %d->%d: from_y %.2f <= to_y %.2f", i, j, a.y, b.y)
            dropped.append((i, j))
            continue
        rows = anchor_rows(a.y, b.y, cfg.anchor_step_px)
        inner_n = min(len(rows) - 2, aff.n_rmax)
        xs = aff.lines[i, j, 1:1 + inner_n] * spec.width
        poly = [a.position] + [(float(x), float(r)) for x, r in zip(xs, rows[1:1 + inner_n])] + [b.position]
        edges.append(LaneEdge(dense_to_kp[i], dense_to_kp[j], poly))
    graph = LaneGraph(kinds_from_degrees(nodes, edges), edges, spec)
    if return_dropped:
        return DecodeResult(graph, tuple(dropped))
    return graph

