"""Lane-graph data model, ego-scope filtering and keypoint pruning."""

from __future__ import annotations

import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import MergeCollision, NoLaneNearEgo, ValidationError
from .geometry import angdiff, is_row_monotone, mean_tangent, wrap_angle

US_LANE_WIDTH_M = 3.65


class NodeKind(str, Enum):
    START = "start"
    FORK = "fork"
    END = "end"


class MergePolicy(str, Enum):
    FIRST = "first"
    AVERAGE = "average"


@dataclass(frozen=True)
class GridSpec:
    """Raster geometry of the BEV grid and the coarse keypoint grid."""

    height: int = 128
    width: int = 128
    resolution: float = 0.26
    keypoint_cell: int = 8
    ego_row: int | None = None

    def __post_init__(self):
        if self.ego_row is None:
            object.__setattr__(self, "ego_row", int(round(0.75 * self.height)))
        if self.height <= 0 or self.width <= 0 or self.keypoint_cell <= 0:
            raise ValidationError("grid dimensions must be positive")
        if self.height % self.keypoint_cell or self.width % self.keypoint_cell:
            raise ValidationError("grid size must be a multiple of keypoint_cell")
        if not self.resolution > 0:
            raise ValidationError("resolution must be > 0")
        if self.ego_row != int(round(0.75 * self.height)):
            raise ValidationError("ego_row must equal round(0.75 * height)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def kp_shape(self) -> tuple[int, int]:
        return self.height // self.keypoint_cell, self.width // self.keypoint_cell

    @property
    def ego_col(self) -> float:
        return self.width / 2

    def meters_to_px(self, meters: float) -> float:
        return meters / self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        c = self.keypoint_cell
        return int(math.floor(y / c)), int(math.floor(x / c))

    def contains(self, x: float, y: float) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "resolution": self.resolution,
            "keypoint_cell": self.keypoint_cell,
            "ego_row": self.ego_row,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            height=int(d["height"]),
            width=int(d["width"]),
            resolution=float(d["resolution"]),
            keypoint_cell=int(d["keypoint_cell"]),
            ego_row=int(d["ego_row"]),
        )


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    yaw: float = math.pi / 2

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))


@dataclass(frozen=True)
class LaneNode:
    id: int
    x: float
    y: float
    kind: NodeKind = NodeKind.END

    def __post_init__(self):
        object.__setattr__(self, "kind", NodeKind(self.kind))

    @property
    def position(self) -> tuple[float, float]:
        return self.x, self.y


@dataclass(frozen=True)
class LaneEdge:
    from_id: int
    to_id: int
    polyline: tuple = field(compare=True)

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.polyline)
        if len(pts) < 2:
            raise ValidationError(f"edge {self.from_id}->{self.to_id}: polyline needs >= 2 points")
        object.__setattr__(self, "polyline", pts)

    @cached_property
    def points(self) -> np.ndarray:
        pts = np.asarray(self.polyline, dtype=float)
        pts.setflags(write=False)
        return pts

    @property
    def key(self) -> tuple[int, int]:
        return self.from_id, self.to_id


@dataclass(frozen=True)
class LaneGraph:
    nodes: tuple = ()
    edges: tuple = ()
    grid_spec: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @cached_property
    def node_map(self) -> dict[int, LaneNode]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: int) -> LaneNode:
        return self.node_map[node_id]

    @cached_property
    def in_degree(self) -> dict[int, int]:
        deg = {n.id: 0 for n in self.nodes}
        for e in self.edges:
            deg[e.to_id] = deg.get(e.to_id, 0) + 1
        return deg

    @cached_property
    def out_degree(self) -> dict[int, int]:
        deg = {n.id: 0 for n in self.nodes}
        for e in self.edges:
            deg[e.from_id] = deg.get(e.from_id, 0) + 1
        return deg

    @property
    def edge_keys(self) -> set[tuple[int, int]]:
        return {e.key for e in self.edges}

    def __len__(self) -> int:
        return len(self.nodes)


def kinds_from_degrees(nodes: Sequence[LaneNode], edges: Sequence[LaneEdge]) -> list[LaneNode]:
    """Re-derive node kinds: in 0 -> start, out >= 2 -> fork, out 0 -> end.

    Remaining junctions (in >= 1, out == 1) keep ``start`` if they already had
    it and are otherwise labelled ``fork``.
    """
    indeg = {n.id: 0 for n in nodes}
    outdeg = {n.id: 0 for n in nodes}
    for e in edges:
        indeg[e.to_id] += 1
        outdeg[e.from_id] += 1
    out = []
    for n in nodes:
        if indeg[n.id] == 0:
            kind = NodeKind.START
        elif outdeg[n.id] >= 2:
            kind = NodeKind.FORK
        elif outdeg[n.id] == 0:
            kind = NodeKind.END
        else:
            kind = NodeKind.START if n.kind == NodeKind.START else NodeKind.FORK
        out.append(replace(n, kind=kind) if kind != n.kind else n)
    return out


# --------------------------------------------------------------------------
# scope


def _points_to_segments(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distance from each point in ``p`` to the polyline ``q``."""
    a = q[:-1][None, :, :]
    ab = (q[1:] - q[:-1])[None, :, :]
    ap = p[:, None, :] - a
    denom = np.maximum((ab * ab).sum(-1), 1e-300)
    t = np.clip((ap * ab).sum(-1) / denom, 0.0, 1.0)
    d = ap - t[..., None] * ab
    return np.sqrt((d * d).sum(-1)).min(axis=1)


def polyline_gap(p: np.ndarray, q: np.ndarray) -> float:
    """Minimum distance between two polylines (vertex-to-segment, both ways)."""
    return float(min(_points_to_segments(p, q).min(), _points_to_segments(q, p).min()))


def _lateral_neighbors(e: LaneEdge, f: LaneEdge, lane_px: float) -> bool:
    if angdiff(mean_tangent(e.points), mean_tangent(f.points)) >= math.pi / 4:
        return False
    lo = max(e.points[:, 1].min(), f.points[:, 1].min())
    hi = min(e.points[:, 1].max(), f.points[:, 1].max())
    if lo > hi:
        return False
    return polyline_gap(e.points, f.points) <= 1.5 * lane_px


def scope_filter(graph: LaneGraph, ego: Pose2, *, lateral: bool = True) -> LaneGraph:
    """Restrict ``graph`` to the lanes the ego vehicle may drive into.

    The ego lane is the acute-angle edge nearest to the ego point (ties by
    heading difference, then edge order). From it, edges are collected by
    following successors and, when ``lateral`` is set, by stepping into a
    parallel neighbouring lane (a lane change). Only edges whose mean
    tangent is within 90 degrees of the ego yaw are traversed or kept.

    Raises:
        NoLaneNearEgo: no admissible edge within one lane width of the ego.
    """
    spec = graph.grid_spec
    if not graph.edges:
        raise ValidationError("scope_filter needs a non-empty graph")
    if not spec.contains(ego.x, ego.y):
        raise ValidationError(f"ego ({ego.x}, {ego.y}) outside grid")
    lane_px = spec.meters_to_px(US_LANE_WIDTH_M)

    diffs = [angdiff(mean_tangent(e.points), ego.yaw) for e in graph.edges]
    acute = [d < math.pi / 2 for d in diffs]
    ego_pt = np.array([[ego.x, ego.y]])
    best = None
    for i, e in enumerate(graph.edges):
        if not acute[i]:
            continue
        d = float(_points_to_segments(ego_pt, e.points)[0])
        cand = (d, diffs[i], i)
        if best is None or cand < best:
            best = cand
    if best is None or best[0] > lane_px:
        raise NoLaneNearEgo(f"no drivable lane within {lane_px:.2f} px of ego")

    by_source: dict[int, list[int]] = {}
    for i, e in enumerate(graph.edges):
        if acute[i]:
            by_source.setdefault(e.from_id, []).append(i)

    seen = {best[2]}
    queue = deque([best[2]])
    while queue:
        i = queue.popleft()
        e = graph.edges[i]
        nxt = list(by_source.get(e.to_id, ()))
        if lateral:
            nxt += [j for j, f in enumerate(graph.edges)
                    if acute[j] and j not in seen and _lateral_neighbors(e, f, lane_px)]
        for j in nxt:
            if j not in seen:
                seen.add(j)
                queue.append(j)

    edges = [e for i, e in enumerate(graph.edges) if i in seen]
    used = {e.from_id for e in edges} | {e.to_id for e in edges}
    nodes = [n for n in graph.nodes if n.id in used]
    return LaneGraph(nodes, edges, spec)


# --------------------------------------------------------------------------
# pruning


def _retarget(poly: tuple, start: tuple[float, float], end: tuple[float, float]) -> list:
    pts = [start]
    for p in poly[1:-1]:
        if end[1] < p[1] < pts[-1][1]:
            pts.append(p)
    pts.append(end)
    return pts


def prune_graph(graph: LaneGraph, merge_policy: MergePolicy | str = MergePolicy.AVERAGE) -> LaneGraph:
    """Reduce a scoped graph to its learnable keypoint topology.

    Two rules are applied until neither changes the graph:

    1. all nodes in one ``keypoint_cell`` x ``keypoint_cell`` cell collapse
       into one (the first in node order keeps its id; its position is either
       its own or the mean of the group, per ``merge_policy``);
    2. a node with exactly one incoming and one outgoing edge that is not a
       start node is removed, its two polylines concatenated.

    Duplicate ``(from, to)`` edges produced along the way keep the first
    occurrence. Node kinds are re-derived from degrees at the end.

    Raises:
        MergeCollision: merging would create a self-loop.
    """
    policy = MergePolicy(merge_policy)
    spec = graph.grid_spec
    nodes: dict[int, LaneNode] = {n.id: n for n in graph.nodes}

    groups: OrderedDict[tuple[int, int], list[LaneNode]] = OrderedDict()
    for n in graph.nodes:
        groups.setdefault(spec.cell_of(n.x, n.y), []).append(n)
    remap = {}
    for members in groups.values():
        head = members[0]
        if len(members) > 1:
            if policy is MergePolicy.AVERAGE:
                x = sum(m.x for m in members) / len(members)
                y = sum(m.y for m in members) / len(members)
            else:
                x, y = head.x, head.y
            kind = NodeKind.START if any(m.kind == NodeKind.START for m in members) else head.kind
            nodes[head.id] = LaneNode(head.id, x, y, kind)
            for m in members[1:]:
                del nodes[m.id]
        for m in members:
            remap[m.id] = head.id

    edges: list[LaneEdge] = []
    keys = set()
    for e in graph.edges:
        u, v = remap[e.from_id], remap[e.to_id]
        if u == v:
            raise MergeCollision(f"edge {e.from_id}->{e.to_id} collapses onto node {u}")
        if (u, v) in keys:
            continue
        pu, pv = nodes[u].position, nodes[v].position
        poly = e.polyline
        if poly[0] != pu or poly[-1] != pv:
            poly = _retarget(poly, pu, pv)
        edges.append(LaneEdge(u, v, poly))
        keys.add((u, v))

    order = [nid for nid in (n.id for n in graph.nodes) if nid in nodes]
    while True:
        indeg = {nid: 0 for nid in order}
        outdeg = {nid: 0 for nid in order}
        for e in edges:
            indeg[e.to_id] += 1
            outdeg[e.from_id] += 1
        victim = next((nid for nid in order
                       if indeg[nid] == 1 and outdeg[nid] == 1 and nodes[nid].kind != NodeKind.START), None)
        if victim is None:
            break
        i_in = next(i for i, e in enumerate(edges) if e.to_id == victim)
        i_out = next(i for i, e in enumerate(edges) if e.from_id == victim)
        e_in, e_out = edges[i_in], edges[i_out]
        if e_in.from_id == e_out.to_id:
            raise MergeCollision(f"removing node {victim} closes a loop on {e_in.from_id}")
        merged = LaneEdge(e_in.from_id, e_out.to_id, e_in.polyline + e_out.polyline[1:])
        duplicate = any(e.key == merged.key for e in edges)
        edges = [merged if i == i_in else e for i, e in enumerate(edges) if i != i_out]
        if duplicate:
            edges = [e for e in edges if e is not merged]
        order.remove(victim)
        del nodes[victim]

    final_nodes = kinds_from_degrees([nodes[nid] for nid in order], edges)
    return LaneGraph(final_nodes, edges, spec)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    node_id: int | None = None
    edge_index: int | None = None


def validate_graph(graph: LaneGraph, *, tol: float = 1e-6) -> list[Diagnostic]:
    """Check every LaneGraph/LaneEdge invariant; one diagnostic per violation."""
    out: list[Diagnostic] = []
    spec = graph.grid_spec
    seen_ids = set()
    for n in graph.nodes:
        if n.id in seen_ids or n.id < 0:
            out.append(Diagnostic("DuplicateNodeId" if n.id in seen_ids else "BadNodeId",
                                  f"node id {n.id}", node_id=n.id))
        seen_ids.add(n.id)
        if not spec.contains(n.x, n.y):
            out.append(Diagnostic("NodeOutOfBounds", f"node {n.id} at ({n.x}, {n.y})", node_id=n.id))

    nodes = graph.node_map
    keys = set()
    for i, e in enumerate(graph.edges):
        if e.from_id not in nodes or e.to_id not in nodes:
            out.append(Diagnostic("UnknownNode", f"edge {i} references a missing node", edge_index=i))
            continue
        if e.from_id == e.to_id:
            out.append(Diagnostic("SelfLoop", f"edge {i} on node {e.from_id}", edge_index=i))
        if e.key in keys:
            out.append(Diagnostic("DuplicateEdge", f"edge {i} repeats {e.key}", edge_index=i))
        keys.add(e.key)
        pts = e.points
        a, b = nodes[e.from_id], nodes[e.to_id]
        if np.hypot(pts[0, 0] - a.x, pts[0, 1] - a.y) > tol:
            out.append(Diagnostic("EndpointMismatch", f"edge {i} start != node {a.id}", a.id, i))
        if np.hypot(pts[-1, 0] - b.x, pts[-1, 1] - b.y) > tol:
            out.append(Diagnostic("EndpointMismatch", f"edge {i} end != node {b.id}", b.id, i))
        if not is_row_monotone(pts):
            out.append(Diagnostic("NonMonotoneEdge", f"edge {i} is not strictly row-decreasing",
                                  edge_index=i))

    if not _is_acyclic(graph):
        out.append(Diagnostic("Cycle", "graph contains a directed cycle"))
    return out


def _is_acyclic(graph: LaneGraph) -> bool:
    indeg = {n.id: 0 for n in graph.nodes}
    succ: dict[int, list[int]] = {n.id: [] for n in graph.nodes}
    for e in graph.edges:
        if e.from_id in succ and e.to_id in indeg:
            succ[e.from_id].append(e.to_id)
            indeg[e.to_id] += 1
    queue = deque(k for k, v in indeg.items() if v == 0)
    visited = 0
    while queue:
        k = queue.popleft()
        visited += 1
        for v in succ[k]:
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return visited == len(indeg)


def graphs_equivalent(a: LaneGraph, b: LaneGraph, *, tol: float = 0.0) -> bool:
    """Structural equality keyed on node positions rather than ids."""
    if len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    pa = sorted(n.position for n in a.nodes)
    pb = sorted(n.position for n in b.nodes)
    if any(abs(x0 - x1) > tol or abs(y0 - y1) > tol for (x0, y0), (x1, y1) in zip(pa, pb)):
        return False

    def edge_set(g: LaneGraph) -> set:
        m = g.node_map
        return {(m[e.from_id].position, m[e.to_id].position) for e in g.edges}

    if tol == 0.0:
        return edge_set(a) == edge_set(b)
    ea, eb = sorted(edge_set(a)), sorted(edge_set(b))
    return all(np.allclose(np.ravel(x), np.ravel(y), atol=tol) for x, y in zip(ea, eb))
