from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from roadtopo.encoding import encode_targets
from roadtopo.errors import BadMagic, DigestMismatch, DuplicateName, SchemaViolation, TruncatedFile
from roadtopo.encoding import EncoderConfig
from roadtopo.graph import GridSpec
from roadtopo.io import (DatasetManifest, ManifestEntry, TensorContainer, container_bytes, container_from_bytes,
                         container_to_targets, graph_from_dict, graph_to_dict, load_container, load_graph_json,
                         save_container, save_graph_json, sha256_file, targets_to_container)

arrays = st.one_of(
    hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
               elements=st.floats(width=32, allow_nan=False)),
    hnp.arrays(np.uint8, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5)),
)


@settings(max_examples=80, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=12), arrays, max_size=4))
def test_container_roundtrip_bit_exact(tensors):
    c = TensorContainer(tensors)
    buf = container_bytes(c)
    back = container_from_bytes(buf)
    assert back == c
    assert container_bytes(back) == buf


def test_container_layout_little_endian():
    c = TensorContainer({"a": np.array([1.0], np.float32)})
    buf = container_bytes(c)
    assert buf[:4] == b"RTK1"
    assert struct.unpack("<I", buf[4:8]) == (1,)
    assert buf[8:10] == b"\x01\x00" and buf[10:11] == b"a"
    assert buf[11:13] == b"\x00\x01" and buf[13:17] == b"\x01\x00\x00\x00"
    assert buf[17:] == np.float32(1.0).tobytes()


def test_container_errors(tmp_path):
    buf = container_bytes(TensorContainer({"x": np.zeros((3, 3), np.float32)}))
    with pytest.raises(BadMagic):
        container_from_bytes(b"NOPE" + buf[4:])
    with pytest.raises(TruncatedFile):
        container_from_bytes(buf[:-5])
    one = buf[8:]
    dup = b"RTK1" + struct.pack("<I", 2) + one + one
    with pytest.raises(DuplicateName):
        container_from_bytes(dup)
    p = tmp_path / "t.rtk"
    save_container(p, TensorContainer({"x": np.ones(2, np.uint8)}))
    assert load_container(p)["x"].tolist() == [1, 1]


def test_targets_container_roundtrip(corpus):
    t = encode_targets(corpus[7][1])
    back = container_to_targets(container_from_bytes(container_bytes(targets_to_container(t))))
    assert np.array_equal(back.K, t.K)
    assert back.affinity.kp_index == t.affinity.kp_index
    assert np.allclose(back.fields.D, t.fields.D)


def test_graph_json_roundtrip(tmp_path, corpus):
    for _, g in corpus[:20]:
        p = tmp_path / "g.json"
        save_graph_json(p, g)
        text = p.read_text()
        back = load_graph_json(p)
        assert [n.position for n in back.nodes] == pytest.approx([n.position for n in g.nodes], abs=1e-6)
        assert back.edge_keys == g.edge_keys and back.grid_spec == g.grid_spec
        for a, b in zip(back.edges, g.edges):
            assert np.allclose(a.points, b.points, atol=1e-6)
        save_graph_json(p, back)
        assert p.read_text() == text  # byte-stable on the second pass


def test_graph_json_schema_errors(corpus):
    d = graph_to_dict(corpus[0][1])
    bad = dict(d)
    del bad["edges"]
    with pytest.raises(SchemaViolation) as e:
        graph_from_dict(bad)
    assert e.value.path == "$.edges"
    bad = json.loads(json.dumps(d))
    bad["edges"][0]["polyline"][1][0] = "x"
    with pytest.raises(SchemaViolation) as e:
        graph_from_dict(bad)
    assert e.value.path == "$.edges[0].polyline[1][0]"
    bad = json.loads(json.dumps(d))
    bad["nodes"][0]["kind"] = "merge"
    with pytest.raises(SchemaViolation, match=r"\$\.nodes\[0\]\.kind"):
        graph_from_dict(bad)


def test_graph_json_unknown_keys_warn(corpus):
    d = graph_to_dict(corpus[0][1])
    d["future"] = 1
    d["nodes"][0]["z"] = 0
    with pytest.warns(UserWarning, match="unknown keys"):
        g = graph_from_dict(d)
    assert len(g.nodes) == len(d["nodes"])


def test_manifest_verify(tmp_path):
    f = tmp_path / "a.bin"
    f.write_bytes(b"hello")
    m = DatasetManifest(GridSpec(), EncoderConfig(),
                        [ManifestEntry(0, {}, "d", {"grid": "a.bin"}, {"grid": sha256_file(f)})])
    m.save(tmp_path / "m.json")
    m2 = DatasetManifest.load(tmp_path / "m.json")
    assert m2.digest == m.digest
    m2.verify(tmp_path)
    f.write_bytes(b"tampered")
    with pytest.raises(DigestMismatch):
        m2.verify(tmp_path)
