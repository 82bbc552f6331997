"""Versioned binary model files and a text dump for debugging.

Layout: ``MAGIC`` (8 bytes), format version (uint32 LE), header length
(uint32 LE), UTF-8 JSON header, then for each class and each iteration one
tree record: node count (uint32 LE) followed by the arrays ``feature``
(int32), ``threshold_bin`` (int32), ``threshold`` (float64), ``left``
(int32), ``right`` (int32), ``value`` (float64), ``count`` (int64), all
little-endian. Floats in the header are stored as ``float.hex`` strings.
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..domain import N_CLASSES, SchemaError
from .booster import Ensemble, Hyperparams, Tree

MAGIC = b"TRGBDT\x00\x00"
FORMAT_VERSION = 1

_ARRAYS = (
    ("feature", "<i4"),
    ("threshold_bin", "<i4"),
    ("threshold", "<f8"),
    ("left", "<i4"),
    ("right", "<i4"),
    ("value", "<f8"),
    ("count", "<i8"),
)


def to_bytes(ensemble: Ensemble) -> bytes:
    header = {
        "n_classes": N_CLASSES,
        "n_iterations": ensemble.n_iterations,
        "feature_names": list(ensemble.feature_names),
        "schema_fingerprint": ensemble.schema_fingerprint,
        "hyperparams": ensemble.hyperparams.to_dict(),
        "base_scores": [float(v).hex() for v in ensemble.base_scores],
        "seed": int(ensemble.seed),
        "train_loss": [float(v).hex() for v in ensemble.train_loss],
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hdr)))
    buf.write(hdr)
    for per_class in ensemble.trees:
        for tree in per_class:
            buf.write(struct.pack("<I", len(tree.feature)))
            for name, dtype in _ARRAYS:
                buf.write(np.ascontiguousarray(getattr(tree, name), dtype=dtype).tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> Ensemble:
    if data[:8] != MAGIC:
        raise SchemaError("not a tenderrisk model file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported model format version {version}")
    pos = 16
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    trees = [[] for _ in range(header["n_classes"])]
    for k in range(header["n_classes"]):
        for _ in range(header["n_iterations"]):
            (n_nodes,) = struct.unpack_from("<I", data, pos)
            pos += 4
            arrays = {}
            for name, dtype in _ARRAYS:
                size = np.dtype(dtype).itemsize * n_nodes
                arrays[name] = np.frombuffer(data[pos:pos + size], dtype=dtype).astype(dtype[1:])
                pos += size
            trees[k].append(Tree(**arrays))
    if pos != len(data):
        raise SchemaError("trailing bytes after model payload")
    return Ensemble(
        feature_names=header["feature_names"],
        base_scores=np.array([float.fromhex(v) for v in header["base_scores"]]),
        trees=trees,
        hyperparams=Hyperparams.from_dict(header["hyperparams"]),
        schema_fingerprint=header["schema_fingerprint"],
        seed=header["seed"],
        train_loss=[float.fromhex(v) for v in header["train_loss"]],
    )


def save_model(ensemble: Ensemble, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ensemble))


def load_model(path) -> Ensemble:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def dump_text(ensemble: Ensemble) -> str:
    lines = [
        f"ensemble iterations={ensemble.n_iterations} features={ensemble.n_features} "
        f"fingerprint={ensemble.schema_fingerprint or '-'}",
        "base_scores " + " ".join(f"{v:.6g}" for v in ensemble.base_scores),
    ]
    for k, per_class in enumerate(ensemble.trees):
        for it, tree in enumerate(per_class):
            lines.append(f"tree class={k} iteration={it} nodes={len(tree.feature)}")
            _dump_node(tree, 0, 1, ensemble.feature_names, lines)
    return "\n".join(lines) + "\n"


def _dump_node(tree: Tree, node: int, depth: int, names, lines) -> None:
    pad = "  " * depth
    f = int(tree.feature[node])
    if f < 0:
        lines.append(f"{pad}leaf value={tree.value[node]:.6g} n={tree.count[node]}")
        return
    lines.append(f"{pad}if {names[f]} <= {tree.threshold[node]:.6g} (n={tree.count[node]})")
    _dump_node(tree, int(tree.left[node]), depth + 1, names, lines)
    lines.append(f"{pad}else")
    _dump_node(tree, int(tree.right[node]), depth + 1, names, lines)
