from __future__ import annotations

import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from roadtopo.encoding import encode_distance_field
from roadtopo.errors import ShapeMismatch, ValidationError
from roadtopo.estimators import (ShortestPathBaseline, TopologyDecoder, TopologyEncoder, check_field,
                                 check_graph)
from roadtopo.graph import graphs_equivalent


def test_params_roundtrip():
    enc = TopologyEncoder(truncation_px=10.0)
    assert enc.get_params()["truncation_px"] == 10.0
    assert clone(enc.set_params(n_max=12)).n_max == 12


def test_encoder_decoder_pipeline(corpus):
    graphs = [g for _, g in corpus[:15]]
    pipe = make_pipeline(TopologyEncoder(), TopologyDecoder())
    out = pipe.fit(graphs).predict(graphs)
    assert all(graphs_equivalent(a, b) for a, b in zip(out, graphs))


def test_not_fitted(corpus):
    with pytest.raises(NotFittedError):
        TopologyEncoder().transform([corpus[0][1]])


def test_baseline_estimator_score(corpus):
    graphs = [g for _, g in corpus if len(g.edges) == 1][:5]
    X = [(encode_distance_field(g, g.grid_spec), [n.position for n in g.nodes]) for g in graphs]
    est = ShortestPathBaseline().fit()
    assert est.score(X, graphs) == 1.0
    with pytest.raises(ValidationError):
        ShortestPathBaseline(dt=0).fit()


def test_validation_helpers(corpus):
    g = corpus[0][1]
    assert check_graph(g) is g
    with pytest.raises(ValidationError):
        check_graph("not a graph")
    with pytest.raises(ShapeMismatch):
        check_field([[0.5]], g.grid_spec)
    with pytest.raises(ValidationError):
        check_field([[2.0]])
