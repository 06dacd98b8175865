from __future__ import annotations

import colorsys
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadtopo.encoding import (EncoderConfig, align_affinity, anchor_rows, encode_affinity, encode_direction_field,
                               encode_distance_field, encode_fields, encode_keypoint_grid, encode_perp_field,
                               hsv_to_rgb, nearest_line, resample_reference_line, rgb_to_hue)
from roadtopo.errors import AnchorOverflow, InconsistentIndex, TooManyKeypoints
from roadtopo.graph import GridSpec, LaneEdge, LaneGraph, LaneNode

from oracles import hue_to_rgb, seg_dist_dense

SPEC = GridSpec()


def _line(pts, kinds=("start", "end")):
    nodes = [LaneNode(0, *pts[0], kinds[0]), LaneNode(1, *pts[-1], kinds[1])]
    return LaneGraph(nodes, [LaneEdge(0, 1, pts)], SPEC)


VERTICAL = _line([(64, 120), (64, 20)])
HORIZONTAL = _line([(10, 60), (120, 59.999)])  # heading ~0 while still row-decreasing


# --- stage 1 --------------------------------------------------------------


def test_distance_field_values():
    R = encode_distance_field(VERTICAL, SPEC)
    assert R.shape == (128, 128, 1)
    assert R[50, 64, 0] == 1.0
    assert R[50, 71, 0] == pytest.approx(0.5)
    assert R[50, 78, 0] == 0.0 and R[50, 100, 0] == 0.0


def test_nearest_line_matches_dense_oracle():
    pts = [(30, 110), (45, 80), (50, 60), (90, 20)]
    g = _line(pts)
    dist, _ = nearest_line(g, SPEC, 20)
    rng = np.random.default_rng(1)
    for _ in range(40):
        x, y = rng.integers(0, 128, 2)
        ref = seg_dist_dense(x, y, pts)
        if ref < 19:
            assert dist[y, x] == pytest.approx(ref, abs=0.02)


def test_direction_and_perp_colours():
    D = encode_direction_field(VERTICAL, SPEC)
    P = encode_perp_field(VERTICAL, SPEC)
    assert D[50, 64] == pytest.approx([0.5, 1.0, 0.0])
    assert D[50, 64] == pytest.approx(hue_to_rgb(0.25))
    assert P[50, 64] == pytest.approx([0.0, 1.0, 1.0])
    assert D[50, 100].tolist() == [0, 0, 0] and P[50, 100].tolist() == [0, 0, 0]
    Dh = encode_direction_field(HORIZONTAL, SPEC)
    assert Dh[60, 60] == pytest.approx([1.0, 0.0, 0.0], abs=1e-3)


@given(st.floats(0, 1, exclude_max=True))
def test_hsv_matches_colorsys(h):
    assert hsv_to_rgb(np.array([h]))[0] == pytest.approx(colorsys.hsv_to_rgb(h, 1, 1), abs=1e-12)
    back = rgb_to_hue(hsv_to_rgb(np.array([h])))[0]
    assert min(abs(back - h), 1 - abs(back - h)) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.6, 0.6))
def test_rotating_lane_rotates_perp_hue(delta):
    # lane through (64, 64) tilted by delta from vertical
    base = math.pi / 2 + delta
    a = (64 - 40 * math.cos(base), 64 + 40 * math.sin(base))
    b = (64 + 40 * math.cos(base), 64 - 40 * math.sin(base))
    P = encode_perp_field(_line([a, b]), SPEC)
    hue = rgb_to_hue(P[64, 64])
    assert hue == pytest.approx(((base + math.pi / 2) / (2 * math.pi)) % 1.0, abs=1e-6)


def test_field_support_and_hue_offset(corpus):
    for _, g in corpus:
        f = encode_fields(g, g.grid_spec)
        band = f.R[..., 0] > 0
        assert np.array_equal(f.D.any(-1), band) and np.array_equal(f.P.any(-1), band)
        dh = np.mod(rgb_to_hue(f.P[band]) - rgb_to_hue(f.D[band]), 1.0)
        assert np.abs(dh - 0.25).max() < 1e-4 / (2 * math.pi)


# --- stage 2 --------------------------------------------------------------


def test_keypoint_grid_cells():
    g = LaneGraph([LaneNode(0, 100, 36, "start"), LaneNode(1, 0, 0, "end")],
                  [LaneEdge(0, 1, [(100, 36), (0, 0)])], SPEC)
    K = encode_keypoint_grid(g, SPEC)
    assert K.shape == (16, 16, 3)
    assert K[4, 12].tolist() == [1.0, 0.5, 0.5]
    assert K[0, 0].tolist() == [1.0, 0.0, 0.0]
    assert K[..., 0].sum() == 2
    assert not encode_keypoint_grid(LaneGraph((), (), SPEC), SPEC).any()


# --- stage 3 --------------------------------------------------------------


def test_anchor_rows():
    assert anchor_rows(100, 98, 4).tolist() == [100, 98]
    assert anchor_rows(100, 60, 4).tolist() == list(range(100, 59, -4))
    assert len(anchor_rows(100, 60, 4)) == 11


def test_resample_reference_line():
    line = resample_reference_line(LaneEdge(0, 1, [(50, 100), (50, 60)]))
    assert len(line.rows) == 11 and np.allclose(line.xs_px, 50)
    slant = resample_reference_line(LaneEdge(0, 1, [(50, 100), (70, 60)]))
    assert slant.xs_px[list(slant.rows).index(80)] == pytest.approx(60)
    with pytest.raises(AnchorOverflow):
        resample_reference_line(LaneEdge(0, 1, [(50, 127), (50, 0)]), EncoderConfig(n_rmax=10))


def test_affinity_single_edge_and_fork():
    K = encode_keypoint_grid(VERTICAL, SPEC)
    aff = encode_affinity(VERTICAL, K)
    assert np.count_nonzero(aff.conf) == 1
    fork = LaneGraph([LaneNode(0, 64, 120, "start"), LaneNode(1, 64, 80, "fork"), LaneNode(2, 40, 20, "end"),
                      LaneNode(3, 90, 20, "end")],
                     [LaneEdge(0, 1, [(64, 120), (64, 80)]), LaneEdge(1, 2, [(64, 80), (40, 20)]),
                      LaneEdge(1, 3, [(64, 80), (90, 20)])], SPEC)
    aff = encode_affinity(fork, encode_keypoint_grid(fork, SPEC))
    parent = aff.kp_index.index(SPEC.cell_of(64, 80))
    assert aff.conf[parent].sum() == 2


def test_affinity_errors():
    K = encode_keypoint_grid(VERTICAL, SPEC)
    with pytest.raises(InconsistentIndex):
        encode_affinity(VERTICAL, np.zeros_like(K))
    K2 = K.copy()
    K2[:4, :5, 0] = 1
    with pytest.raises(TooManyKeypoints):
        encode_affinity(VERTICAL, K2)


def test_align_affinity():
    cells = [SPEC.cell_of(*n.position) for n in VERTICAL.nodes]
    same = align_affinity([n.position for n in VERTICAL.nodes], VERTICAL)
    assert same.gt_to_pred == (0, 1) and same.pred_to_gt == (0, 1)
    missing = align_affinity([VERTICAL.nodes[0].position], VERTICAL)
    assert None in missing.gt_to_pred
    spurious = align_affinity([n.position for n in VERTICAL.nodes] + [(5, 5)], VERTICAL)
    assert spurious.pred_to_gt.count(None) == 1
    assert set(cells) <= set(spurious.cells)
