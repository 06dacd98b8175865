"""On-disk formats: the RTK1 tensor container, graph JSON and the dataset manifest.

RTK1 layout (all integers little-endian)::

    b"RTK1"  u32 count
    repeat count times:
        u16 name_len  name (UTF-8)  u8 dtype (0=f32, 1=u8)  u8 ndim  ndim x u32 dims  payload
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .encoding import DenseAffinity, EncoderConfig, FieldSet, TargetSet
from .errors import (BadMagic, DigestMismatch, DuplicateName, FormatError, SchemaViolation,
                     TruncatedFile, ValidationError)
from .graph import GridSpec, LaneEdge, LaneGraph, LaneNode, NodeKind

MAGIC = b"RTK1"
MAX_NDIM = 4
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}

FLOAT_DECIMALS = 6
MANIFEST_VERSION = 1


# --------------------------------------------------------------------------
# tensor container


class TensorContainer:
    """Ordered, uniquely named f32/u8 tensors."""

    def __init__(self, tensors: dict | None = None):
        self._t: dict[str, np.ndarray] = {}
        for k, v in (tensors or {}).items():
            self.add(k, v)

    def add(self, name: str, arr) -> None:
        if name in self._t:
            raise DuplicateName(name)
        a = np.asarray(arr)
        dt = a.dtype.newbyteorder("<") if a.dtype.kind == "f" else a.dtype
        if dt not in _CODES:
            raise ValidationError(f"{name}: dtype {a.dtype} not storable (f32 or u8 only)")
        if a.ndim > MAX_NDIM:
            raise ValidationError(f"{name}: {a.ndim} dims > {MAX_NDIM}")
        if len(name.encode("utf-8")) >= 2 ** 16:
            raise ValidationError("tensor name too long")
        self._t[name] = np.ascontiguousarray(a, dtype=dt)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._t[name]

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def items(self):
        return self._t.items()

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorContainer) or list(self) != list(other):
            return False
        return all(a.dtype == other[k].dtype and a.shape == other[k].shape and a.tobytes() == other[k].tobytes()
                   for k, a in self.items())


def container_bytes(c: TensorContainer) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(c))]
    for name, a in c.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", _CODES[a.dtype], a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"wanted {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def container_from_bytes(buf: bytes) -> TensorContainer:
    if buf[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {buf[:4]!r}")
    r = _Reader(buf)
    r.take(4)
    (count,) = r.unpack("<I")
    c = TensorContainer()
    for _ in range(count):
        (n,) = r.unpack("<H")
        try:
            name = r.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"tensor name is not UTF-8: {e}") from None
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"{name}: unknown dtype code {code}")
        if ndim > MAX_NDIM:
            raise FormatError(f"{name}: ndim {ndim} > {MAX_NDIM}")
        shape = r.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        payload = r.take(int(np.prod(shape, dtype=np.int64)) * dt.itemsize)
        if name in c:
            raise DuplicateName(name)
        c.add(name, np.frombuffer(payload, dtype=dt).reshape(shape).copy())
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes")
    return c


def save_container(path, c: TensorContainer) -> None:
    Path(path).write_bytes(container_bytes(c))


def load_container(path) -> TensorContainer:
    return container_from_bytes(Path(path).read_bytes())


# tensors <-> container


def targets_to_container(t: TargetSet) -> TensorContainer:
    aff = t.affinity
    idx = np.asarray(aff.kp_index, dtype=np.uint8).reshape(-1, 2)
    return TensorContainer({
        "R": t.fields.R.astype(np.float32),
        "D": t.fields.D.astype(np.float32),
        "P": t.fields.P.astype(np.float32),
        "K": t.K.astype(np.float32),
        "aff_conf": aff.conf.astype(np.float32),
        "aff_lines": aff.lines.astype(np.float32),
        "aff_index": idx,
    })


def container_to_targets(c: TensorContainer, truncation_px: float = 14.0) -> TargetSet:
    need = ("R", "D", "P", "K", "aff_conf", "aff_lines", "aff_index")
    missing = [k for k in need if k not in c]
    if missing:
        raise FormatError(f"container lacks tensors {missing}")
    f = lambda k: c[k].astype(float)  # noqa: E731
    fields = FieldSet(f("R"), f("D"), f("P"), truncation_px)
    aff = DenseAffinity(f("aff_conf"), f("aff_lines"), tuple(map(tuple, c["aff_index"].tolist())))
    return TargetSet(fields, f("K"), aff)


def affinity_to_container(aff: DenseAffinity, K: np.ndarray | None = None) -> TensorContainer:
    c = TensorContainer({"aff_conf": aff.conf.astype(np.float32), "aff_lines": aff.lines.astype(np.float32),
                         "aff_index": np.asarray(aff.kp_index, dtype=np.uint8).reshape(-1, 2)})
    if K is not None:
        c.add("K", np.asarray(K, dtype=np.float32))
    return c


# --------------------------------------------------------------------------
# graph JSON


def _num(v: float) -> float:
    r = round(float(v), FLOAT_DECIMALS)
    return 0.0 if r == 0 else r  # no "-0.0"


def graph_to_dict(g: LaneGraph) -> dict:
    return {
        "nodes": [{"id": n.id, "x": _num(n.x), "y": _num(n.y), "kind": n.kind.value} for n in g.nodes],
        "edges": [{"from": e.from_id, "to": e.to_id, "polyline": [[_num(x), _num(y)] for x, y in e.polyline]}
                  for e in g.edges],
        "grid_spec": g.grid_spec.to_dict(),
    }


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def save_graph_json(path, g: LaneGraph) -> None:
    Path(path).write_text(dumps_json(graph_to_dict(g)), encoding="utf-8")


def _warn_extra(obj: dict, known: set, path: str):
    extra = sorted(set(obj) - known)
    if extra:
        warnings.warn(f"{path}: ignoring unknown keys {extra}", UserWarning, stacklevel=3)


def _get(obj, key, path: str, kinds):
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "expected an object")
    if key not in obj:
        raise SchemaViolation(f"{path}.{key}", "missing")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, kinds):
        raise SchemaViolation(f"{path}.{key}", f"expected {kinds}, got {type(v).__name__}")
    return v


_NUM = (int, float)


def graph_from_dict(d) -> LaneGraph:
    if not isinstance(d, dict):
        raise SchemaViolation("$", "expected an object")
    _warn_extra(d, {"nodes", "edges", "grid_spec"}, "$")
    nodes_raw = _get(d, "nodes", "$", list)
    edges_raw = _get(d, "edges", "$", list)
    gs = _get(d, "grid_spec", "$", dict)
    try:
        _warn_extra(gs, {"height", "width", "resolution", "keypoint_cell", "ego_row"}, "$.grid_spec")
        spec = GridSpec.from_dict(gs)
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise SchemaViolation("$.grid_spec", str(e)) from None

    nodes = []
    for i, n in enumerate(nodes_raw):
        p = f"$.nodes[{i}]"
        nid = _get(n, "id", p, int)
        x, y = _get(n, "x", p, _NUM), _get(n, "y", p, _NUM)
        kind = _get(n, "kind", p, str)
        if kind not in {k.value for k in NodeKind}:
            raise SchemaViolation(f"{p}.kind", f"unknown kind {kind!r}")
        _warn_extra(n, {"id", "x", "y", "kind"}, p)
        nodes.append(LaneNode(nid, float(x), float(y), NodeKind(kind)))

    edges = []
    for i, e in enumerate(edges_raw):
        p = f"$.edges[{i}]"
        u, v = _get(e, "from", p, int), _get(e, "to", p, int)
        poly = _get(e, "polyline", p, list)
        if len(poly) < 2:
            raise SchemaViolation(f"{p}.polyline", "needs at least 2 points")
        pts = []
        for k, pt in enumerate(poly):
            pp = f"{p}.polyline[{k}]"
            if not isinstance(pt, list) or len(pt) != 2:
                raise SchemaViolation(pp, "expected [x, y]")
            for m, c in enumerate(pt):
                if isinstance(c, bool) or not isinstance(c, _NUM):
                    raise SchemaViolation(f"{pp}[{m}]", "expected a number")
            pts.append((float(pt[0]), float(pt[1])))
        _warn_extra(e, {"from", "to", "polyline"}, p)
        edges.append(LaneEdge(u, v, pts))
    return LaneGraph(nodes, edges, spec)


def load_graph_json(path) -> LaneGraph:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e}") from None
    return graph_from_dict(d)


# --------------------------------------------------------------------------
# manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class ManifestEntry:
    seed: int
    spec: dict
    spec_digest: str
    files: dict  # role -> path relative to the manifest
    digests: dict  # role -> sha256


@dataclass
class DatasetManifest:
    grid_spec: GridSpec
    encoder: EncoderConfig
    entries: list = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "grid_spec": self.grid_spec.to_dict(),
            "encoder": self.encoder.to_dict(),
            "entries": [vars(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            version = int(d["version"])
            if version > MANIFEST_VERSION:
                raise SchemaViolation("$.version", f"unsupported manifest version {version}")
            entries = [ManifestEntry(**e) for e in d["entries"]]
            return cls(GridSpec.from_dict(d["grid_spec"]), EncoderConfig.from_dict(d["encoder"]), entries, version)
        except (KeyError, TypeError) as e:
            raise SchemaViolation("$", f"bad manifest: {e}") from None

    @property
    def digest(self) -> str:
        return canonical_digest(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(dumps_json(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: {e}") from None

    def verify(self, root) -> None:
        """Raise DigestMismatch if any listed file changed on disk."""
        for e in self.entries:
            for role, rel in e.files.items():
                got = sha256_file(os.path.join(root, rel))
                if got != e.digests[role]:
                    raise DigestMismatch(f"{rel}: sha256 {got[:12]}... != {e.digests[role][:12]}...")
