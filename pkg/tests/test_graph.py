from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadtopo.errors import MergeCollision, NoLaneNearEgo, ValidationError
from roadtopo.geometry import angdiff, heading, interp_x_at_rows, mean_tangent, wrap_angle
from roadtopo.graph import (GridSpec, LaneEdge, LaneGraph, LaneNode, MergePolicy, NodeKind, Pose2,
                            graphs_equivalent, prune_graph, scope_filter, validate_graph)


EGO = Pose2(64, 96)


def _g(nodes, edges, spec=None):
    return LaneGraph([LaneNode(i, x, y, k) for i, x, y, k in nodes],
                     [LaneEdge(u, v, pts) for u, v, pts in edges], spec or GridSpec())


def _ray(x0, y0, angle, length, n=5):
    """Points leaving (x0, y0) with screen-CCW heading ``angle``."""
    t = np.linspace(0, length, n)
    return [(x0 + s * math.cos(angle), y0 - s * math.sin(angle)) for s in t]


# --- geometry -------------------------------------------------------------


def test_heading_conventions():
    assert heading(1, 0) == pytest.approx(0)
    assert heading(0, -1) == pytest.approx(math.pi / 2)  # up the image
    assert heading(-1, 0) == pytest.approx(math.pi)
    assert mean_tangent(np.array([[5, 10], [5, 0]])) == pytest.approx(math.pi / 2)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_angdiff_is_symmetric_and_bounded(a, b):
    d = angdiff(a, b)
    assert 0 <= d <= math.pi + 1e-12
    assert d == pytest.approx(angdiff(b, a), abs=1e-9)
    assert 0 <= wrap_angle(a) < 2 * math.pi


def test_interp_x_at_rows():
    pts = np.array([[50, 100], [70, 60]], float)
    assert interp_x_at_rows(pts, [80])[0] == pytest.approx(60)


# --- scope filter ---------------------------------------------------------


def test_scope_keeps_aligned_lane():
    g = _g([(0, 64, 120, "start"), (1, 64, 20, "end")], [(0, 1, [(64, 120), (64, 20)])])
    assert scope_filter(g, EGO) == g


def test_scope_removes_opposite_lane():
    g = _g([(0, 64, 120, "start"), (1, 64, 20, "end"), (2, 50, 20, "start"), (3, 50, 120, "end")],
           [(0, 1, [(64, 120), (64, 20)]), (2, 3, [(50, 20), (50, 120)])])
    out = scope_filter(g, EGO)
    assert out.edge_keys == {(0, 1)}
    assert {n.id for n in out.nodes} == {0, 1}


def test_scope_fork_branches_by_angle():
    up = math.pi / 2
    b1, b2, b3 = _ray(64, 80, up + math.radians(30), 30), _ray(64, 80, up - math.radians(30), 30), \
        _ray(64, 80, up + math.radians(120), 30)
    g = _g([(0, 64, 120, "start"), (1, 64, 80, "fork"), (2, *b1[-1], "end"), (3, *b2[-1], "end"),
            (4, *b3[-1], "end")],
           [(0, 1, [(64, 120), (64, 80)]), (1, 2, b1), (1, 3, b2), (1, 4, b3)])
    assert scope_filter(g, EGO).edge_keys == {(0, 1), (1, 2), (1, 3)}


def test_scope_lateral_neighbour_lane_is_reachable():
    lane = 3.65 / 0.26
    g = _g([(0, 64, 120, "start"), (1, 64, 20, "end"), (2, 64 + lane, 120, "start"), (3, 64 + lane, 20, "end"),
            (4, 64 + 4 * lane, 120, "start"), (5, 64 + 4 * lane, 20, "end")],
           [(0, 1, [(64, 120), (64, 20)]), (2, 3, [(64 + lane, 120), (64 + lane, 20)]),
            (4, 5, [(64 + 4 * lane, 120), (64 + 4 * lane, 20)])])
    assert scope_filter(g, EGO).edge_keys == {(0, 1), (2, 3)}
    assert scope_filter(g, EGO, lateral=False).edge_keys == {(0, 1)}


def test_scope_no_lane_near_ego():
    g = _g([(0, 10, 120, "start"), (1, 10, 20, "end")], [(0, 1, [(10, 120), (10, 20)])])
    with pytest.raises(NoLaneNearEgo):
        scope_filter(g, EGO)


# --- pruning --------------------------------------------------------------


def test_prune_removes_pass_through_node():
    g = _g([(0, 64, 120, "start"), (1, 64, 70, "end"), (2, 64, 20, "end")],
           [(0, 1, [(64, 120), (64, 95), (64, 70)]), (1, 2, [(64, 70), (64, 20)])])
    out = prune_graph(g)
    assert out.edge_keys == {(0, 2)}
    assert out.edges[0].polyline == ((64, 120), (64, 95), (64, 70), (64, 20))
    assert [n.kind for n in out.nodes] == [NodeKind.START, NodeKind.END]


def test_prune_merges_cell_average_and_first():
    g = _g([(0, 10, 10, "end"), (1, 12, 12, "end"), (2, 20, 100, "start"), (3, 30, 100, "start")],
           [(2, 0, [(20, 100), (10, 10)]), (3, 1, [(30, 100), (12, 12)])])
    avg = prune_graph(g, MergePolicy.AVERAGE)
    assert avg.node(0).position == (11, 11) and 1 not in avg.node_map
    first = prune_graph(g, "first")
    assert first.node(0).position == (10, 10)
    assert first.edge_keys == {(2, 0), (3, 0)}
    assert first.node(0).kind is NodeKind.END  # two lanes merging into a terminal node
    assert not validate_graph(first)


def test_prune_keeps_fork():
    g = _g([(0, 64, 120, "start"), (1, 64, 80, "fork"), (2, 40, 20, "end"), (3, 90, 20, "end")],
           [(0, 1, [(64, 120), (64, 80)]), (1, 2, [(64, 80), (40, 20)]), (1, 3, [(64, 80), (90, 20)])])
    assert prune_graph(g) == g


def test_prune_idempotent_and_one_node_per_cell(corpus):
    for _, g in corpus:
        again = prune_graph(g)
        assert graphs_equivalent(again, g)
        cells = [g.grid_spec.cell_of(n.x, n.y) for n in g.nodes]
        assert len(cells) == len(set(cells))


# --- validation -----------------------------------------------------------


def test_validate_reports():
    ok = _g([(0, 64, 120, "start"), (1, 64, 20, "end")], [(0, 1, [(64, 120), (64, 20)])])
    assert validate_graph(ok) == []
    bad_end = _g([(0, 64, 120, "start"), (1, 64, 20, "end")], [(0, 1, [(60, 120), (64, 20)])])
    assert [d.code for d in validate_graph(bad_end)] == ["EndpointMismatch"]
    dup = _g([(0, 64, 120, "start"), (1, 64, 20, "end")],
             [(0, 1, [(64, 120), (64, 20)]), (0, 1, [(64, 120), (63, 50), (64, 20)])])
    assert "DuplicateEdge" in [d.code for d in validate_graph(dup)]
    down = _g([(0, 64, 20, "start"), (1, 64, 120, "end")], [(0, 1, [(64, 20), (64, 120)])])
    assert [d.code for d in validate_graph(down)] == ["NonMonotoneEdge"]


def test_gridspec_validation():
    assert GridSpec().ego_row == 96 and GridSpec().ego_col == 64
    assert GridSpec(256, 256).ego_row == 192
    assert GridSpec().cell_of(100, 36) == (4, 12)
    with pytest.raises(ValidationError):
        GridSpec(100, 128)
    with pytest.raises(ValidationError):
        GridSpec(resolution=0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 126), st.integers(1, 126)), min_size=2, max_size=12, unique=True))
def test_prune_random_chains_is_valid_and_idempotent(pts):
    # a single ego-direction chain through random rows, sorted bottom to top
    rows = sorted({y for _, y in pts}, reverse=True)
    if len(rows) < 2:
        return
    xs = [x for x, _ in pts][:len(rows)]
    nodes = [(i, xs[i], rows[i], "start" if i == 0 else "end") for i in range(len(rows))]
    edges = [(i, i + 1, [(xs[i], rows[i]), (xs[i + 1], rows[i + 1])]) for i in range(len(rows) - 1)]
    try:
        out = prune_graph(_g(nodes, edges))
    except MergeCollision:
        # only legal when some edge joins two nodes of one cell
        spec = GridSpec()
        assert any(spec.cell_of(xs[i], rows[i]) == spec.cell_of(xs[j], rows[j])
                   for i in range(len(rows)) for j in range(i + 1, len(rows)))
        return
    assert validate_graph(out) == []
    assert graphs_equivalent(prune_graph(out), out)
    cells = [out.grid_spec.cell_of(n.x, n.y) for n in out.nodes]
    assert len(cells) == len(set(cells))
