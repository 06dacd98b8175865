"""Procedural lane-graph scenes and their multi-channel BEV rasterization.

Every scene is a pure function of its :class:`SceneSpec`: geometry draws
from one random stream and sensor noise from another, both seeded by
``spec.seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .encoding import nearest_line
from .errors import TemplateOverflow, TotalConflict, ValidationError
from .graph import GridSpec, LaneEdge, LaneGraph, LaneNode, NodeKind, Pose2, prune_graph, scope_filter

MAX_KEYPOINTS = 15
# longest edge span (rows) that fits n_rmax=30 anchors at a 4 px step
MAX_SPAN = 120
SIDEWALK_M = 2.0
BUILDING_GAP_M = 1.0

CHANNELS = ("occupancy", "road", "sidewalk", "terrain", "markings", "intensity")


class Template(str, Enum):
    STRAIGHT = "straight"
    CURVE = "curve"
    FORK = "fork"
    LANE_SPLIT = "lane_split"
    FOUR_WAY = "four_way"
    U_TURN = "u_turn"


@dataclass(frozen=True)
class NoiseSpec:
    dropout_prob: float = 0.0
    intensity_sigma: float = 0.0
    occlusion_boxes: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValidationError("dropout_prob must be in [0, 1]")
        if self.intensity_sigma < 0 or self.occlusion_boxes < 0:
            raise ValidationError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    template: Template = Template.STRAIGHT
    lanes_per_direction: int = 1
    lane_width: float = 3.65
    curvature: float = 0.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    grid_spec: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        object.__setattr__(self, "template", Template(self.template))
        if not 1 <= self.lanes_per_direction <= 4:
            raise ValidationError("lanes_per_direction must be in 1..4")
        if not self.lane_width > 0:
            raise ValidationError("lane_width must be > 0")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    @property
    def lane_px(self) -> float:
        return self.lane_width / self.grid_spec.resolution

    def geometry_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, 0])

    def noise_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, 1])

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "template": self.template.value,
            "lanes_per_direction": self.lanes_per_direction,
            "lane_width": self.lane_width,
            "curvature": self.curvature,
            "noise": {
                "dropout_prob": self.noise.dropout_prob,
                "intensity_sigma": self.noise.intensity_sigma,
                "occlusion_boxes": self.noise.occlusion_boxes,
            },
            "grid_spec": self.grid_spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            seed=int(d["seed"]),
            template=Template(d["template"]),
            lanes_per_direction=int(d["lanes_per_direction"]),
            lane_width=float(d["lane_width"]),
            curvature=float(d["curvature"]),
            noise=NoiseSpec(**d["noise"]),
            grid_spec=GridSpec.from_dict(d["grid_spec"]),
        )


# --------------------------------------------------------------------------
# scene geometry


class _Builder:
    """Accumulates nodes/edges of a raw (unscoped) road graph."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.nodes: list[LaneNode] = []
        self.edges: list[LaneEdge] = []

    def node(self, x: float, y: float, kind: NodeKind = NodeKind.END) -> int:
        nid = len(self.nodes)
        self.nodes.append(LaneNode(nid, float(round(x)), float(round(y)), kind))
        return nid

    def edge(self, u: int, v: int, pts: Sequence | None = None):
        a, b = self.nodes[u], self.nodes[v]
        inner = [] if pts is None else [tuple(p) for p in pts[1:-1]]
        self.edges.append(LaneEdge(u, v, [a.position, *inner, b.position]))

    def graph(self) -> LaneGraph:
        return LaneGraph(self.nodes, self.edges, self.spec)


def _rows(y_from: float, y_to: float, step: float = 4.0) -> np.ndarray:
    n = max(int(math.ceil(abs(y_from - y_to) / step)), 1)
    return np.linspace(y_from, y_to, n + 1)


def _quarter_turn(x0: float, y0: float, x1: float, y1: float, n: int = 24) -> np.ndarray:
    """Quarter ellipse leaving (x0, y0) heading up and arriving horizontally at (x1, y1)."""
    phi = np.linspace(0.0, math.pi / 2, n)
    pts = np.stack([x1 + (x0 - x1) * np.cos(phi), y0 - (y0 - y1) * np.sin(phi)], axis=1)
    pts[-1] = (x1, y1)
    return pts


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _lane_columns(spec: SceneSpec, rng: np.random.Generator) -> tuple[list[float], int]:
    n = spec.lanes_per_direction
    ego_k = int(rng.integers(0, n))
    cx = spec.grid_spec.ego_col
    return [cx + (k - ego_k) * spec.lane_px for k in range(n)], ego_k


def _vertical_window(spec: GridSpec, rng: np.random.Generator) -> tuple[int, int]:
    y_b = min(spec.height - 3, spec.ego_row + 29) - int(rng.integers(0, 3))
    y_t = max(2, y_b - MAX_SPAN) + int(rng.integers(0, 3))
    return y_b, y_t


def _opposite_lanes(b: _Builder, spec: SceneSpec, left_x: float, y_b: int, y_t: int, shift=None):
    """Opposite-direction lanes left of the road; they never survive scoping."""
    W = spec.grid_spec.width
    for m in range(spec.lanes_per_direction):
        x = left_x - (m + 1) * spec.lane_px
        rows = _rows(y_t, y_b)
        xs = x + (shift(rows) if shift is not None else np.zeros_like(rows))
        if xs.min() < 1 or xs.max() > W - 2:
            continue
        u = b.node(xs[0], y_t, NodeKind.START)
        v = b.node(xs[-1], y_b, NodeKind.END)
        b.edge(u, v, np.stack([xs, rows], axis=1))


def _check_cols(xs, spec: SceneSpec, margin: float = 2.0):
    W = spec.grid_spec.width
    if min(xs) < margin or max(xs) > W - 1 - margin:
        raise TemplateOverflow(f"{spec.template.value} with {spec.lanes_per_direction} lanes does not fit "
                               f"in width {W}")


def _straight(b: _Builder, spec: SceneSpec, rng, cols, y_b, y_t, skip=()):
    for k, x in enumerate(cols):
        if k in skip:
            continue
        u = b.node(x, y_b, NodeKind.START)
        v = b.node(x, y_t, NodeKind.END)
        b.edge(u, v)


def _build_straight(b, spec, rng, cols, y_b, y_t):
    _straight(b, spec, rng, cols, y_b, y_t)
    _opposite_lanes(b, spec, cols[0], y_b, y_t)


def _build_curve(b, spec, rng, cols, y_b, y_t):
    ego_row = spec.grid_spec.ego_row
    kappa = abs(spec.curvature) if spec.curvature else float(rng.uniform(0.004, 0.012))
    sign = (1.0 if spec.curvature > 0 else -1.0) if spec.curvature else float(rng.choice([-1.0, 1.0]))
    kpx = kappa * spec.grid_spec.resolution
    # cap the bend so every lane stays inside the grid
    W = spec.grid_spec.width
    room = (W - 3 - max(cols)) if sign > 0 else (min(cols) - 2)
    reach = max(ego_row - y_t, 1)
    kpx = min(kpx, 2.0 * max(room, 0.0) / reach ** 2)

    def shift(rows):
        ahead = np.maximum(ego_row - rows, 0.0)
        return sign * kpx * ahead ** 2 / 2.0

    for x in cols:
        rows = _rows(y_b, y_t)
        xs = x + shift(rows)
        u = b.node(xs[0], y_b, NodeKind.START)
        v = b.node(xs[-1], y_t, NodeKind.END)
        b.edge(u, v, np.stack([xs, rows], axis=1))
    _opposite_lanes(b, spec, cols[0], y_b, y_t, shift)


def _build_fork(b, spec, rng, cols, y_b, y_t):
    W = spec.grid_spec.width
    ego_row = spec.grid_spec.ego_row
    k = len(cols) - 1
    x = cols[k]
    room = W - 3 - round(x)
    if room < spec.lane_px:
        raise TemplateOverflow("no room for the diverging branch")
    _straight(b, spec, rng, cols, y_b, y_t, skip={k})
    y_f = int(rng.integers(ego_row - 40, ego_row - 19))
    s = b.node(x, y_b, NodeKind.START)
    f = b.node(x, y_f, NodeKind.FORK)
    e1 = b.node(x, y_t, NodeKind.END)
    b.edge(s, f)
    b.edge(f, e1)
    delta = min(float(rng.uniform(2.0, 3.0)) * spec.lane_px, room)
    rows = _rows(y_f, y_t)
    t = (y_f - rows) / (y_f - y_t)
    xs = round(x) + delta * t ** 2
    e2 = b.node(xs[-1], y_t, NodeKind.END)
    b.edge(f, e2, np.stack([xs, rows], axis=1))
    _opposite_lanes(b, spec, cols[0], y_b, y_t)


def _build_lane_split(b, spec, rng, cols, y_b, y_t):
    ego_row = spec.grid_spec.ego_row
    x0 = cols[0]
    pocket = round(x0) - spec.lane_px
    _check_cols([pocket], spec)
    _straight(b, spec, rng, cols, y_b, y_t, skip={0})
    y_s = int(rng.integers(ego_row - 36, ego_row - 15))
    length = float(rng.uniform(1.5, 3.0)) * spec.lane_px
    s = b.node(x0, y_b, NodeKind.START)
    f = b.node(x0, y_s, NodeKind.FORK)
    e1 = b.node(x0, y_t, NodeKind.END)
    b.edge(s, f)
    b.edge(f, e1)
    rows = _rows(y_s, y_t)
    xs = round(x0) - (round(x0) - pocket) * _smoothstep((y_s - rows) / length)
    e2 = b.node(xs[-1], y_t, NodeKind.END)
    b.edge(f, e2, np.stack([xs, rows], axis=1))


def _build_four_way(b, spec, rng, cols, y_b, y_t):
    n = len(cols)
    W = spec.grid_spec.width
    w = spec.lane_px
    ego_row = spec.grid_spec.ego_row
    gap = 3
    lo = y_t + 2 + (n - 0.5) * w
    hi = ego_row - 4 - n * w - gap
    if lo > hi:
        raise TemplateOverflow(f"four_way with {n} lanes does not fit in height {spec.grid_spec.height}")
    y_c = float(rng.uniform(lo, hi))
    y_j = y_c + n * w + gap
    west = [y_c - (m + 0.5) * w for m in range(n)]
    east = [y_c + (m + 0.5) * w for m in range(n)]

    def targets(rows):
        keep = [r for r in rows if rng.random() < 0.75]
        return keep or [rows[int(rng.integers(0, len(rows)))]]

    turns = {0: [], n - 1: []}
    left_targets = targets(west)
    right_targets = targets(east)
    for k, x in enumerate(cols):
        s = b.node(x, y_b, NodeKind.START)
        if k not in turns:
            b.edge(s, b.node(x, y_t, NodeKind.END))
            continue
        j = b.node(x, y_j, NodeKind.FORK)
        b.edge(s, j)
        b.edge(j, b.node(x, y_t, NodeKind.END))
        xj = b.nodes[j].x
        if k == 0:
            for yt in left_targets:
                e = b.node(2, yt, NodeKind.END)
                b.edge(j, e, _quarter_turn(xj, y_j, 2, b.nodes[e].y))
        if k == n - 1:
            for yt in right_targets:
                e = b.node(W - 3, yt, NodeKind.END)
                b.edge(j, e, _quarter_turn(xj, y_j, W - 3, b.nodes[e].y))
    # cross traffic, never in scope
    for y in west:
        u, v = b.node(W - 1, y, NodeKind.START), b.node(0, y, NodeKind.END)
        b.edge(u, v)
    for y in east:
        u, v = b.node(0, y, NodeKind.START), b.node(W - 1, y, NodeKind.END)
        b.edge(u, v)
    _opposite_lanes(b, spec, cols[0], y_b, y_t)


def _build_u_turn(b, spec, rng, cols, y_b, y_t):
    ego_row = spec.grid_spec.ego_row
    w = spec.lane_px
    x0 = round(cols[0])
    _check_cols([x0 - w], spec)
    _straight(b, spec, rng, cols, y_b, y_t, skip={0})
    y_u = int(rng.integers(ego_row - 40, ego_row - 19))
    rise = float(rng.uniform(1.2, 1.8)) * w
    s = b.node(x0, y_b, NodeKind.START)
    f = b.node(x0, y_u, NodeKind.FORK)
    b.edge(s, f)
    b.edge(f, b.node(x0, y_t, NodeKind.END))
    apex = b.node(x0 - w / 2, y_u - rise, NodeKind.END)
    ax, ay = b.nodes[apex].position
    b.edge(f, apex, _quarter_turn(x0, y_u, ax, ay))
    # return leg into the opposite lane: heads down, removed by scoping
    back = b.node(x0 - w, y_u, NodeKind.END)
    bx, by = b.nodes[back].position
    phi = np.linspace(0.0, math.pi / 2, 12)
    leg = np.stack([ax + (bx - ax) * np.sin(phi), by - (by - ay) * np.cos(phi)], axis=1)
    leg[0], leg[-1] = (ax, ay), (bx, by)
    b.edge(apex, back, leg)
    _opposite_lanes(b, spec, cols[0], y_b, y_t)


_BUILDERS = {
    Template.STRAIGHT: _build_straight,
    Template.CURVE: _build_curve,
    Template.FORK: _build_fork,
    Template.LANE_SPLIT: _build_lane_split,
    Template.FOUR_WAY: _build_four_way,
    Template.U_TURN: _build_u_turn,
}


def ego_pose(grid_spec: GridSpec) -> Pose2:
    return Pose2(grid_spec.ego_col, float(grid_spec.ego_row), math.pi / 2)


def generate_raw_scene(spec: SceneSpec) -> tuple[LaneGraph, Pose2]:
    """Full road graph of the template, including lanes the ego cannot reach."""
    rng = spec.geometry_rng()
    b = _Builder(spec.grid_spec)
    cols, _ = _lane_columns(spec, rng)
    _check_cols(cols, spec)
    y_b, y_t = _vertical_window(spec.grid_spec, rng)
    _BUILDERS[spec.template](b, spec, rng, cols, y_b, y_t)
    return b.graph(), ego_pose(spec.grid_spec)


def generate_scene(spec: SceneSpec) -> tuple[LaneGraph, Pose2]:
    """Scoped, pruned ground-truth lane graph of a procedural scene.

    Raises:
        TemplateOverflow: the template does not fit the grid, or the pruned
            graph has more than 15 keypoints.
    """
    raw, ego = generate_raw_scene(spec)
    graph = prune_graph(scope_filter(raw, ego))
    if len(graph.nodes) > MAX_KEYPOINTS:
        raise TemplateOverflow(f"{len(graph.nodes)} keypoints > {MAX_KEYPOINTS}")
    return graph, ego


# --------------------------------------------------------------------------
# Dempster-Shafer occupancy


@dataclass(frozen=True)
class MassFunction:
    """Belief masses over {occupied, free} plus ignorance."""

    occupied: float = 0.0
    free: float = 0.0
    unknown: float = 1.0

    def __post_init__(self):
        vals = (self.occupied, self.free, self.unknown)
        if min(vals) < 0 or max(vals) > 1 or abs(sum(vals) - 1.0) > 1e-9:
            raise ValidationError(f"invalid mass function {vals}")

    @property
    def pignistic(self) -> float:
        return self.occupied + self.unknown / 2

    def as_array(self) -> np.ndarray:
        return np.array([self.occupied, self.free, self.unknown])


VACUOUS = MassFunction(0.0, 0.0, 1.0)


def ds_combine(a: MassFunction, b: MassFunction) -> MassFunction:
    """Dempster's rule of combination on the frame {occupied, free}.

    Raises:
        TotalConflict: the two bodies of evidence fully contradict each other.
    """
    k = a.occupied * b.free + a.free * b.occupied
    if k >= 1.0 - 1e-12:
        raise TotalConflict(f"conflict {k}")
    norm = 1.0 - k
    occ = (a.occupied * b.occupied + a.occupied * b.unknown + a.unknown * b.occupied) / norm
    free = (a.free * b.free + a.free * b.unknown + a.unknown * b.free) / norm
    unk = a.unknown * b.unknown / norm
    # absorb rounding so the triple sums to one
    s = occ + free + unk
    return MassFunction(occ / s, free / s, unk / s)


def ds_combine_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel :func:`ds_combine` over ``(..., 3)`` mass arrays."""
    ao, af, au = a[..., 0], a[..., 1], a[..., 2]
    bo, bf, bu = b[..., 0], b[..., 1], b[..., 2]
    k = ao * bf + af * bo
    if np.any(k >= 1.0 - 1e-12):
        raise TotalConflict("total conflict at one or more pixels")
    norm = 1.0 - k
    out = np.stack([(ao * bo + ao * bu + au * bo) / norm,
                    (af * bf + af * bu + au * bf) / norm,
                    au * bu / norm], axis=-1)
    return out / out.sum(-1, keepdims=True)


def export_occupancy(mass: np.ndarray) -> np.ndarray:
    """Pignistic occupancy; pixels without any evidence export 0."""
    p = mass[..., 0] + mass[..., 2] / 2.0
    return np.where(mass[..., 2] >= 1.0, 0.0, p)


# --------------------------------------------------------------------------
# rasterization


@dataclass(frozen=True)
class BevGrid:
    channels: dict
    grid_spec: GridSpec
    occupancy_mass: np.ndarray | None = None

    def __post_init__(self):
        shapes = {np.shape(v) for v in self.channels.values()}
        if len(shapes) > 1:
            raise ValidationError(f"channel shapes differ: {shapes}")

    def to_array(self) -> np.ndarray:
        """Stack the channels into the ``(H, W, C)`` network input."""
        return np.stack([self.channels[c] for c in CHANNELS], axis=-1).astype(np.float32)


_MASS_ROAD = (0.05, 0.80, 0.15)
_MASS_BUILDING = (0.70, 0.10, 0.20)
_MASS_BOX = (0.90, 0.00, 0.10)


def observation_mask(spec: SceneSpec) -> np.ndarray:
    """Boolean ``(H, W)``: pixels neither dropped out nor under an occluder."""
    return _noise_layers(spec)[0]


def _noise_layers(spec: SceneSpec):
    H, W = spec.grid_spec.shape
    rng = spec.noise_rng()
    boxes = np.zeros((H, W), dtype=bool)
    for _ in range(spec.noise.occlusion_boxes):
        bh, bw = (int(v) for v in rng.integers(6, 21, size=2))
        r0 = int(rng.integers(0, H - bh + 1))
        c0 = int(rng.integers(0, W - bw + 1))
        boxes[r0:r0 + bh, c0:c0 + bw] = True
    dropped = rng.random((H, W)) < spec.noise.dropout_prob if spec.noise.dropout_prob > 0 else np.zeros((H, W), bool)
    noise = rng.normal(0.0, spec.noise.intensity_sigma, (H, W)) if spec.noise.intensity_sigma > 0 else None
    return ~(boxes | dropped), boxes, dropped, noise


def mask_field(field: np.ndarray, spec: SceneSpec) -> np.ndarray:
    """Zero a predicted field wherever the sensors saw nothing (sparse-data surrogate)."""
    mask = observation_mask(spec)
    return field * mask.reshape(mask.shape + (1,) * (field.ndim - 2))


def rasterize_channels(graph: LaneGraph, spec: SceneSpec) -> BevGrid:
    """Rasterize lane corridors, boundaries, occupancy and intensity.

    Channel values are anti-aliased coverages in ``[0, 1]``; a straight lane
    therefore sums to the lane width (in pixels) across each row.
    """
    gs = spec.grid_spec
    half = spec.lane_px / 2.0
    sidewalk = gs.meters_to_px(SIDEWALK_M)
    reach = half + sidewalk + gs.meters_to_px(BUILDING_GAP_M) + 2.0
    if graph.edges:
        dist, _ = nearest_line(graph, gs, reach)
    else:
        dist = np.full(gs.shape, np.inf)

    road = np.clip(half + 0.5 - dist, 0.0, 1.0)
    side = np.clip(np.minimum(dist - half + 0.5, half + sidewalk + 0.5 - dist), 0.0, 1.0)
    terrain = np.clip(dist - (half + sidewalk) + 0.5, 0.0, 1.0)
    markings = np.clip(1.0 - np.abs(dist - half), 0.0, 1.0)
    building = dist > half + sidewalk + gs.meters_to_px(BUILDING_GAP_M)

    observed, boxes, dropped, noise = _noise_layers(spec)
    mass = np.empty(gs.shape + (3,))
    mass[:] = _MASS_ROAD
    mass[building] = _MASS_BUILDING
    mass[boxes] = _MASS_BOX
    mass[dropped] = (0.0, 0.0, 1.0)

    intensity = 0.25 * road + 0.1 * side + 0.05 * terrain + 0.6 * markings
    if noise is not None:
        intensity = intensity + noise
    intensity = np.clip(intensity, 0.0, 1.0)

    channels = {
        "occupancy": export_occupancy(mass),
        "road": road,
        "sidewalk": side,
        "terrain": terrain,
        "markings": markings,
        "intensity": intensity,
    }
    for name in CHANNELS[1:]:
        channels[name] = channels[name] * observed
    channels = {k: np.clip(v, 0.0, 1.0).astype(np.float32) for k, v in channels.items()}
    return BevGrid(channels, gs, mass)


def _warp_indices(spec: GridSpec, motion: Pose2):
    """Source pixel of every target pixel for an ego displacement ``motion``."""
    H, W = spec.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    ex, ey = spec.ego_col, float(spec.ego_row)
    c, s = math.cos(motion.yaw), math.sin(motion.yaw)
    dx, dy = xx - ex, yy - ey
    # screen-CCW rotation in image coordinates (y down)
    sx = ex + motion.x + c * dx + s * dy
    sy = ey + motion.y - s * dx + c * dy
    si = np.rint(sx).astype(int)
    sj = np.rint(sy).astype(int)
    valid = (si >= 0) & (si < W) & (sj >= 0) & (sj < H)
    return np.clip(sj, 0, H - 1), np.clip(si, 0, W - 1), valid


def accumulate_temporal(frames: Sequence[tuple[BevGrid, Pose2]]) -> BevGrid:
    """Fuse frames into the final frame's coordinates.

    ``frames[k][1]`` is the ego displacement from frame ``k`` to the final
    frame, in frame-``k`` pixels (``Pose2(0, 0, 0)`` for the final frame
    itself). Moving the ego forward by ``(0, -10)`` shifts frame-``k`` content
    ten rows down. Occupancy masses combine with Dempster's rule, all other
    channels by per-pixel maximum; resampling is nearest neighbour.
    """
    if not frames:
        raise ValidationError("accumulate_temporal needs at least one frame")
    spec = frames[0][0].grid_spec
    H, W = spec.shape
    mass = np.zeros((H, W, 3))
    mass[..., 2] = 1.0
    fused = {c: np.zeros((H, W), dtype=np.float32) for c in CHANNELS if c != "occupancy"}
    for grid, motion in frames:
        if grid.occupancy_mass is None:
            raise ValidationError("accumulation needs the occupancy mass triples")
        rows, cols, valid = _warp_indices(spec, motion)
        m = grid.occupancy_mass[rows, cols]
        m[~valid] = (0.0, 0.0, 1.0)
        mass = ds_combine_arrays(mass, m)
        for c in fused:
            v = np.where(valid, grid.channels[c][rows, cols], 0.0)
            fused[c] = np.maximum(fused[c], v).astype(np.float32)
    channels = {"occupancy": np.clip(export_occupancy(mass), 0, 1).astype(np.float32), **fused}
    return BevGrid({c: channels[c] for c in CHANNELS}, spec, mass)
