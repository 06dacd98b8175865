"""scikit-learn style wrappers over the functional core.

They let the encoder, decoder and baseline sit in a ``Pipeline`` and be
configured with ``set_params``; none of them learns anything in ``fit``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .baseline import DEFAULT_DT, baseline_predict
from .decoding import decode_graph, decode_keypoints
from .encoding import EncoderConfig, TargetSet, encode_targets
from .errors import ShapeMismatch, ValidationError
from .graph import GridSpec, LaneGraph, validate_graph
from .metrics import Counts, eval_connectivity, match_keypoints


def check_graph(g) -> LaneGraph:
    """Return ``g`` if it is a structurally valid lane graph, else raise."""
    if not isinstance(g, LaneGraph):
        raise ValidationError(f"expected LaneGraph, got {type(g).__name__}")
    diags = validate_graph(g)
    if diags:
        raise ValidationError(f"invalid graph: {diags[0].code}: {diags[0].message}")
    return g


def check_graphs(X) -> list[LaneGraph]:
    if isinstance(X, LaneGraph):
        X = [X]
    return [check_graph(g) for g in X]


def check_field(R, grid_spec: GridSpec | None = None) -> np.ndarray:
    """Float ``(H, W)`` view of a distance field in [0, 1]."""
    R = np.asarray(R, dtype=float)
    if R.ndim == 3 and R.shape[2] == 1:
        R = R[..., 0]
    if R.ndim != 2:
        raise ShapeMismatch(f"distance field must be (H, W) or (H, W, 1), got {R.shape}")
    if grid_spec is not None and R.shape != grid_spec.shape:
        raise ShapeMismatch(f"field {R.shape} vs grid {grid_spec.shape}")
    if not np.isfinite(R).all() or R.min(initial=0) < 0 or R.max(initial=0) > 1:
        raise ValidationError("distance field must be finite and in [0, 1]")
    return R


class TopologyEncoder(BaseEstimator, TransformerMixin):
    """Lane graphs -> :class:`TargetSet` per graph."""

    def __init__(self, truncation_px: float = 14.0, anchor_step_px: int = 4, n_max: int = 16, n_rmax: int = 30):
        self.truncation_px = truncation_px
        self.anchor_step_px = anchor_step_px
        self.n_max = n_max
        self.n_rmax = n_rmax

    def fit(self, X=None, y=None):
        self.config_ = EncoderConfig(self.truncation_px, self.anchor_step_px, self.n_max, self.n_rmax)
        return self

    def transform(self, X) -> list[TargetSet]:
        check_is_fitted(self, "config_")
        return [encode_targets(g, self.config_) for g in check_graphs(X)]


class TopologyDecoder(BaseEstimator):
    """:class:`TargetSet` (or any object with ``K`` and ``affinity``) -> lane graph."""

    def __init__(self, conf_threshold: float = 0.5, anchor_step_px: int = 4, n_max: int = 16,
                 grid_spec: GridSpec | None = None):
        self.conf_threshold = conf_threshold
        self.anchor_step_px = anchor_step_px
        self.n_max = n_max
        self.grid_spec = grid_spec

    def fit(self, X=None, y=None):
        if not 0 < self.conf_threshold < 1:
            raise ValidationError("conf_threshold must be in (0, 1)")
        self.grid_spec_ = self.grid_spec or GridSpec()
        return self

    def predict(self, X: Sequence) -> list[LaneGraph]:
        check_is_fitted(self, "grid_spec_")
        out = []
        for t in X:
            aff = t.affinity
            cfg = EncoderConfig(anchor_step_px=self.anchor_step_px, n_max=aff.n_max, n_rmax=aff.n_rmax)
            kps = decode_keypoints(np.asarray(t.K, dtype=float), self.conf_threshold,
                                   cell_size=self.grid_spec_.keypoint_cell, n_max=self.n_max)
            out.append(decode_graph(kps, aff, self.conf_threshold, grid_spec=self.grid_spec_, cfg=cfg))
        return out


class ShortestPathBaseline(BaseEstimator):
    """``(R, keypoints)`` pairs -> lane graphs via shortest paths and a spanning forest."""

    def __init__(self, dt: float = DEFAULT_DT, anchor_step: int = 4, grid_spec: GridSpec | None = None):
        self.dt = dt
        self.anchor_step = anchor_step
        self.grid_spec = grid_spec

    def fit(self, X=None, y=None):
        if not 0 < self.dt <= 1:
            raise ValidationError("dt must be in (0, 1]")
        self.grid_spec_ = self.grid_spec or GridSpec()
        return self

    def predict(self, X: Sequence) -> list[LaneGraph]:
        check_is_fitted(self, "grid_spec_")
        out = []
        for R, kps in X:
            R = check_field(R, self.grid_spec_)
            res = baseline_predict(R, kps, self.dt, anchor_step=self.anchor_step)
            out.append(res.to_graph(kps, self.grid_spec_))
        return out

    def score(self, X: Sequence, y: Sequence[LaneGraph], tol_px: float = 8.0) -> float:
        """Micro connectivity F1 against ground-truth graphs."""
        total = Counts()
        for pred, gt in zip(self.predict(X), check_graphs(y)):
            m = match_keypoints(pred.nodes, gt.nodes, tol_px)
            total = total + eval_connectivity(pred, gt, m, anchor_step=self.anchor_step).counts
        return total.f1
