"""Raster previews of scenes, targets and predictions.

Each layer paints an RGB contribution in [0, 1]; the image is the clipped
sum, so layer subsets compose additively.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .encoding import EncoderConfig, FieldSet, resample_reference_line
from .graph import GridSpec, LaneGraph, NodeKind

LAYERS = ("input", "R", "D", "P", "connections", "keypoints")
TOPOLOGY_LAYERS = ("connections", "keypoints")

_PALETTE = np.array([
    (0.90, 0.30, 0.25), (0.25, 0.65, 0.95), (0.35, 0.85, 0.35), (0.95, 0.75, 0.20),
    (0.75, 0.40, 0.90), (0.20, 0.85, 0.80), (0.95, 0.50, 0.70), (0.60, 0.60, 0.60),
])
_KIND_COLOR = {NodeKind.START: (0.2, 1.0, 0.2), NodeKind.FORK: (1.0, 0.9, 0.1), NodeKind.END: (1.0, 0.2, 0.2)}

# input channel -> colour
_CHANNEL_COLOR = {
    "road": (0.30, 0.30, 0.30),
    "sidewalk": (0.10, 0.10, 0.35),
    "terrain": (0.05, 0.25, 0.05),
    "markings": (0.50, 0.50, 0.50),
    "occupancy": (0.40, 0.10, 0.00),
}


def _upscale(img: np.ndarray, scale: int) -> np.ndarray:
    return img if scale == 1 else np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)


def _input_layer(channels: dict, scale: int) -> np.ndarray:
    any_ch = next(iter(channels.values()))
    out = np.zeros((*np.shape(any_ch), 3))
    for name, color in _CHANNEL_COLOR.items():
        if name in channels:
            out += np.asarray(channels[name], dtype=float)[..., None] * np.asarray(color)
    return _upscale(out, scale)


def _draw(size: tuple[int, int], paint) -> np.ndarray:
    im = Image.new("RGB", size)
    paint(ImageDraw.Draw(im))
    return np.asarray(im, dtype=float) / 255.0


def _connections_layer(graph: LaneGraph, scale: int, anchor_step: int | None) -> np.ndarray:
    H, W = graph.grid_spec.shape
    cfg = EncoderConfig(anchor_step_px=anchor_step or 4, n_rmax=max(H, W))

    m = graph.node_map
    # colour and draw order follow geometry, not ids, so equal graphs draw alike
    edges = sorted(graph.edges, key=lambda e: (m[e.from_id].position, m[e.to_id].position))

    def paint(d: ImageDraw.ImageDraw):
        for k, e in enumerate(edges):
            c = tuple(int(v * 255) for v in _PALETTE[k % len(_PALETTE)])
            poly = resample_reference_line(e, cfg, graph.grid_spec).points if anchor_step else e.polyline
            pts = [((x + 0.5) * scale, (y + 0.5) * scale) for x, y in poly]
            d.line(pts, fill=c, width=max(1, scale // 2))

    return _draw((W * scale, H * scale), paint)


def _keypoint_layer(graph: LaneGraph, scale: int) -> np.ndarray:
    H, W = graph.grid_spec.shape
    r = max(1, scale)

    def paint(d: ImageDraw.ImageDraw):
        for n in sorted(graph.nodes, key=lambda n: n.position):
            cx, cy = (n.x + 0.5) * scale, (n.y + 0.5) * scale
            c = tuple(int(v * 255) for v in _KIND_COLOR[n.kind])
            d.ellipse((cx - r, cy - r, cx + r, cy + r), outline=c)

    return _draw((W * scale, H * scale), paint)


def render_scene(grid_spec: GridSpec, *, graph: LaneGraph | None = None, fields: FieldSet | None = None,
                 channels: dict | None = None, layers: Iterable[str] = LAYERS, scale: int = 1,
                 anchor_step: int | None = 4) -> np.ndarray:
    """Composite ``(H*scale, W*scale, 3)`` uint8 image of the requested layers.

    Layers whose source is not supplied are skipped, so an empty call gives a
    black canvas. With ``anchor_step`` set, connections are drawn through
    their row-anchor samples, which is exactly what a decoded graph holds, so
    a graph and its encode/decode round trip draw the same pixels.
    """
    layers = list(layers)
    bad = set(layers) - set(LAYERS)
    if bad:
        raise ValueError(f"unknown layers {sorted(bad)}")
    H, W = grid_spec.shape
    acc = np.zeros((H * scale, W * scale, 3))
    for name in layers:
        if name == "input" and channels:
            acc += _input_layer(channels, scale)
        elif name == "R" and fields is not None:
            acc += _upscale(np.repeat(np.asarray(fields.R, dtype=float)[..., :1], 3, axis=2), scale)
        elif name in ("D", "P") and fields is not None:
            acc += _upscale(np.asarray(getattr(fields, name), dtype=float), scale)
        elif name == "connections" and graph is not None:
            acc += _connections_layer(graph, scale, anchor_step)
        elif name == "keypoints" and graph is not None:
            acc += _keypoint_layer(graph, scale)
    return (np.clip(acc, 0, 1) * 255).round().astype(np.uint8)


def side_by_side(images: Sequence[np.ndarray], gap: int = 4) -> np.ndarray:
    """Place equally tall images left to right with a white separator."""
    h = images[0].shape[0]
    parts = []
    for k, im in enumerate(images):
        if im.shape[0] != h:
            raise ValueError("images must share a height")
        if k:
            parts.append(np.full((h, gap, 3), 255, np.uint8))
        parts.append(im)
    return np.concatenate(parts, axis=1)


def save_png(path, img: np.ndarray) -> None:
    Image.fromarray(img).save(path, format="PNG")
