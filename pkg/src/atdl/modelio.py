"""Binary model files (magic ``ATDLNN01``).

Layout, all integers little-endian::

    magic            8 bytes  b"ATDLNN01"
    version          u32      1
    flags            u32      bit 0: weights stored as float32
                              bit 1: a relation set follows the parameters
    kind             u32 length + UTF-8 ("source", "atdl", or a baseline kind)
    loss             u32      index into LOSS_TAGS
    layer count      u32
    per layer        u32 in_dim, u32 out_dim, u8 activation index
    metadata         u32 length + UTF-8 JSON (sorted keys, compact)
    per layer        weights (in_dim*out_dim, row-major), then biases
    relation set     u32 labels, u32 dim, u8 diagonal, u8 has_rule, f64 rule,
                     relations, covariances, epsilons (f64), counts (i64)
    extra arrays     u32 count; each: u32 name length + name, u32 ndim,
                     u64 per dim, f64 payload
    checksum         u64      sum of all preceding bytes mod 2**64

Serialization is a pure function of the model, so save -> load -> save
reproduces the file byte for byte.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .network import ACTIVATIONS, LayerSpec, LossKind, Network

MAGIC = b"ATDLNN01"
VERSION = 1
FLAG_FLOAT32 = 1
FLAG_RELATIONS = 2
LOSS_TAGS = (LossKind.SQUARED_ERROR, LossKind.CROSS_ENTROPY, LossKind.VARIANCE_TO_TARGETS)
SUFFIX = ".atdlnn"


@dataclass
class ModelFile:
    kind: str
    loss: LossKind
    net: Network
    metadata: dict = field(default_factory=dict)
    relation_set: object = None
    extras: dict = field(default_factory=dict)
    float32: bool = False


def _u32(v):
    return struct.pack("<I", v)


def _text(s):
    raw = s.encode()
    return _u32(len(raw)) + raw


def _checksum(raw):
    return int(np.frombuffer(raw, dtype=np.uint8).sum(dtype=np.uint64))


def to_bytes(mf):
    dtype = "<f4" if mf.float32 else "<f8"
    flags = (FLAG_FLOAT32 if mf.float32 else 0) | (FLAG_RELATIONS if mf.relation_set is not None else 0)
    parts = [MAGIC, _u32(VERSION), _u32(flags), _text(mf.kind), _u32(LOSS_TAGS.index(LossKind(mf.loss))),
             _u32(mf.net.depth)]
    for spec in mf.net.layers:
        parts.append(struct.pack("<IIB", spec.in_dim, spec.out_dim, ACTIVATIONS.index(spec.activation)))
    parts.append(_text(json.dumps(mf.metadata, sort_keys=True, separators=(",", ":"))))
    for w, b in zip(mf.net.weights, mf.net.biases):
        parts.append(np.ascontiguousarray(w, dtype=dtype).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=dtype).tobytes())
    rel = mf.relation_set
    if rel is not None:
        rule = rel.epsilon_rule
        parts.append(struct.pack("<IIBBd", rel.n_labels, rel.dim, int(rel.diagonal), int(rule is not None),
                                 0.0 if rule is None else float(rule)))
        for arr in (rel.relations, rel.covariances, rel.epsilons):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(rel.counts, dtype="<i8").tobytes())
    parts.append(_u32(len(mf.extras)))
    for name in sorted(mf.extras):
        arr = np.asarray(mf.extras[name], dtype="<f8")
        parts.append(_text(name) + _u32(arr.ndim) + b"".join(struct.pack("<Q", n) for n in arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", _checksum(body))


class _Reader:
    def __init__(self, raw, name):
        self.raw, self.pos, self.name = raw, 0, name

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise DataFormatError(f"{self.name}: truncated model file")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self):
        (n,) = self.unpack("<I")
        return self.take(n).decode()

    def array(self, dtype, shape):
        count = int(np.prod(shape))
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype).reshape(shape).astype(
            np.int64 if dtype == "<i8" else np.float64)


def from_bytes(raw, name="<model>"):
    from .transfer import RelationSet

    if len(raw) < len(MAGIC) + 16 or raw[:len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{name}: not an {MAGIC.decode()} model file")
    (stored,) = struct.unpack("<Q", raw[-8:])
    if _checksum(raw[:-8]) != stored:
        raise DataFormatError(f"{name}: checksum mismatch")
    r = _Reader(raw[:-8], name)
    r.take(len(MAGIC))
    version, flags = r.unpack("<II")
    if version != VERSION:
        raise DataFormatError(f"{name}: unsupported model version {version}")
    kind = r.text()
    (loss_idx, depth) = r.unpack("<II")
    if loss_idx >= len(LOSS_TAGS):
        raise DataFormatError(f"{name}: unknown loss tag {loss_idx}")
    layers = []
    for _ in range(depth):
        a, b, act = r.unpack("<IIB")
        if act >= len(ACTIVATIONS):
            raise DataFormatError(f"{name}: unknown activation tag {act}")
        layers.append(LayerSpec(a, b, ACTIVATIONS[act]))
    metadata = json.loads(r.text())
    dtype = "<f4" if flags & FLAG_FLOAT32 else "<f8"
    weights, biases = [], []
    for spec in layers:
        weights.append(r.array(dtype, (spec.in_dim, spec.out_dim)))
        biases.append(r.array(dtype, (spec.out_dim,)))
    try:
        net = Network(layers, weights, biases)
    except ValueError as exc:
        raise DataFormatError(f"{name}: {exc}") from None
    rel = None
    if flags & FLAG_RELATIONS:
        n, d, diagonal, has_rule, rule = r.unpack("<IIBBd")
        relations = r.array("<f8", (n, d))
        covs = r.array("<f8", (n, d, d))
        eps = r.array("<f8", (n,))
        counts = r.array("<i8", (n,))
        rel = RelationSet(relations, covs, counts, eps, list(metadata.get("target_labels", [])), bool(diagonal),
                          rule if has_rule else None)
    extras = {}
    (n_extra,) = r.unpack("<I")
    for _ in range(n_extra):
        key = r.text()
        (ndim,) = r.unpack("<I")
        shape = tuple(r.unpack(f"<{ndim}Q")) if ndim else ()
        extras[key] = r.array("<f8", shape)
    if r.pos != len(r.raw):
        raise DataFormatError(f"{name}: {len(r.raw) - r.pos} unexpected trailing bytes")
    return ModelFile(kind, LOSS_TAGS[loss_idx], net, metadata, rel, extras, bool(flags & FLAG_FLOAT32))


def save(mf, path):
    Path(path).write_bytes(to_bytes(mf))


def load(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    return from_bytes(path.read_bytes(), str(path))


# -- conversions between model files and the in-memory model types ---------------------------------


def _trace_summary(trace):
    return [float(v) for v in (trace or [])]


def pack_source(model, float32=False):
    meta = {"label_names": list(model.label_names), "provenance": dict(model.provenance),
            "finetune_trace": _trace_summary(model.traces.get("finetune")),
            "pretrain_traces": [_trace_summary(t) for t in model.traces.get("pretrain", [])]}
    loss = LossKind.SQUARED_ERROR if model.net.output_activation == "linear" else LossKind.CROSS_ENTROPY
    return ModelFile("source", loss, model.net, meta, float32=float32)


def unpack_source(mf):
    from .sda import SourceModel

    if mf.kind != "source":
        raise DataFormatError(f"expected a source model, found kind {mf.kind!r}")
    meta = mf.metadata
    model = SourceModel(mf.net, list(meta.get("label_names", [])), dict(meta.get("provenance", {})))
    model.traces["finetune"] = list(meta.get("finetune_trace", []))
    model.traces["pretrain"] = [list(t) for t in meta.get("pretrain_traces", [])]
    return model


def pack_target(model, float32=False, metadata=None):
    meta = {"source": model.source_provenance, "literal_sigma": bool(model.literal_sigma),
            "target_labels": list(model.relation_set.label_names), "trace": _trace_summary(model.trace)}
    meta.update(metadata or {})
    return ModelFile("atdl", LossKind.VARIANCE_TO_TARGETS, model.net, meta, model.relation_set, float32=float32)


def unpack_target(mf):
    from .transfer import TargetModel

    if mf.kind != "atdl" or mf.relation_set is None:
        raise DataFormatError(f"expected a relation-vector target model, found kind {mf.kind!r}")
    meta = mf.metadata
    return TargetModel(mf.net, mf.relation_set, meta.get("source", ""), list(meta.get("trace", [])),
                       bool(meta.get("literal_sigma", False)))


def pack_classifier(clf, float32=False, metadata=None):
    meta = {"label_names": list(clf.label_names), "trace": _trace_summary(clf.trace), "pca_dims": clf.pca_dims}
    meta.update(metadata or {})
    extras = {}
    if clf.pca is not None:
        extras = {"pca_mean": clf.pca.mean, "pca_components": clf.pca.components[:clf.pca_dims],
                  "pca_explained_variance": clf.pca.explained_variance}
    return ModelFile(clf.kind, LossKind.CROSS_ENTROPY, clf.net, meta, extras=extras, float32=float32)


def unpack_classifier(mf):
    from .baselines import BASELINE_KINDS, Classifier
    from .numerics import PcaModel

    if mf.kind not in BASELINE_KINDS:
        raise DataFormatError(f"expected a baseline classifier, found kind {mf.kind!r}")
    pca = None
    if "pca_components" in mf.extras:
        pca = PcaModel(mf.extras["pca_mean"], mf.extras["pca_components"], mf.extras["pca_explained_variance"])
    meta = mf.metadata
    return Classifier(mf.kind, mf.net, list(meta.get("label_names", [])), pca, int(meta.get("pca_dims", 0)),
                      list(meta.get("trace", [])))


def pack(model, float32=False, metadata=None):
    from .baselines import Classifier
    from .sda import SourceModel
    from .transfer import TargetModel

    if isinstance(model, SourceModel):
        mf = pack_source(model, float32)
        mf.metadata.update(metadata or {})
        return mf
    if isinstance(model, TargetModel):
        return pack_target(model, float32, metadata)
    if isinstance(model, Classifier):
        return pack_classifier(model, float32, metadata)
    raise TypeError(f"cannot serialize {type(model).__name__}")


def unpack(mf):
    if mf.kind == "source":
        return unpack_source(mf)
    if mf.kind == "atdl":
        return unpack_target(mf)
    return unpack_classifier(mf)


def save_model(model, path, float32=False, metadata=None):
    save(pack(model, float32, metadata), path)


def load_model(path):
    return unpack(load(path))
