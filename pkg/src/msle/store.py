"""Binary container for selection and embedding results.

Layout of a ``.msle`` file (all integers little-endian)::

    b"MSLE"  u16 version  u16 array_count
    per array: u16 name_len, name (utf-8), u8 ndim, ndim x u64 dims,
               prod(dims) IEEE-754 float64 values (little-endian, C order)

Non-numeric content (selected indices, metadata) lives in a JSON sidecar
with the same stem and a ``.json`` suffix.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .embedding import Embedding
from .errors import ConfigInvalid, DataError, SchemaVersionMismatch
from .optim import SparseWeightMatrix
from .selector import SelectionResult

MAGIC = b"MSLE"
FORMAT_VERSION = 1


def write_container(path, arrays: dict) -> None:
    path = Path(path)
    buf = bytearray(MAGIC)
    buf += struct.pack("<HH", FORMAT_VERSION, len(arrays))
    for name, arr in arrays.items():
        a = np.array(arr, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", a.ndim)
        buf += struct.pack(f"<{a.ndim}Q", *a.shape)
        buf += a.tobytes(order="C")
    path.write_bytes(bytes(buf))


def read_container(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not an MSLE container")
    version, count = struct.unpack_from("<HH", data, 4)
    if version > FORMAT_VERSION:
        raise SchemaVersionMismatch(f"{path}: container version {version}, this build reads <= {FORMAT_VERSION}")
    pos = 8
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        out[name] = arr.astype(float)
    return out


def sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def _dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_json(path, kind: str) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != kind:
        raise DataError(f"{path}: expected a {kind} document, found {doc.get('kind')!r}")
    if int(doc.get("schema_version", 0)) > FORMAT_VERSION:
        raise SchemaVersionMismatch(f"{path}: schema version {doc['schema_version']} is newer than "
                                    f"{FORMAT_VERSION}")
    return doc


def save_selection(result: SelectionResult, path) -> Path:
    """Write ``<stem>.msle`` plus ``<stem>.json``; returns the container path."""
    if result.k < 1 or len(result.selected) == 0:
        raise ConfigInvalid("refusing to save an empty selection")
    path = Path(path).with_suffix(".msle")
    arrays = {
        "scores": result.scores,
        "spectral_basis": result.spectral_basis,
        "eigenvalues": result.eigenvalues,
    }
    for name, comp in sorted(result.component_scores.items()):
        arrays[f"component.{name}"] = comp
    if result.weights is not None:
        arrays["weights.left"] = result.weights.left
        if result.weights.right is not None:
            arrays["weights.right"] = result.weights.right
    write_container(path, arrays)
    doc = {
        "kind": "selection",
        "schema_version": FORMAT_VERSION,
        "k": int(result.k),
        "selected": [int(i) for i in result.selected],
        "metadata": result.metadata,
    }
    if result.weights is not None:
        doc["weights"] = {"per_view_alphas": list(result.weights.per_view_alphas),
                          "residual": result.weights.residual, "l1_weight": result.weights.l1_weight}
    _dump_json(sidecar(path), doc)
    return path


def load_selection(path) -> SelectionResult:
    path = Path(path).with_suffix(".msle")
    doc = _load_json(sidecar(path), "selection")
    arrays = read_container(path)
    comps = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("component.")}
    weights = None
    if "weights.left" in arrays:
        w = doc.get("weights", {})
        weights = SparseWeightMatrix(arrays["weights.left"], arrays.get("weights.right"),
                                     tuple(w.get("per_view_alphas", ())), float(w.get("residual", 0.0)),
                                     float(w.get("l1_weight", 0.0)))
    return SelectionResult(arrays["scores"], np.asarray(doc["selected"], dtype=np.int64), int(doc["k"]),
                           doc["metadata"], arrays["spectral_basis"], arrays["eigenvalues"], comps, weights)


def save_embedding(emb: Embedding, path, metadata: dict | None = None) -> Path:
    path = Path(path).with_suffix(".msle")
    write_container(path, {"Y": emb.Y, "eigenvalues": emb.eigenvalues, "degrees": emb.degrees})
    _dump_json(sidecar(path), {
        "kind": "embedding",
        "schema_version": FORMAT_VERSION,
        "variant": emb.source_variant,
        "problem": emb.problem,
        "dropped_trivial": bool(emb.dropped_trivial),
        "metadata": metadata or {},
    })
    return path


def load_embedding(path) -> Embedding:
    path = Path(path).with_suffix(".msle")
    doc = _load_json(sidecar(path), "embedding")
    a = read_container(path)
    return Embedding(a["Y"], a["eigenvalues"], doc["variant"], bool(doc["dropped_trivial"]),
                     doc["problem"], a["degrees"])


def write_delimited(path, header, rows, sep: str = "\t") -> None:
    """Plain delimited text; floats are written with ``repr`` for exact reloads."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (np.integer,)):
            return str(int(v))
        return str(v)

    lines = [sep.join(header)] if header else []
    lines += [sep.join(fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")
