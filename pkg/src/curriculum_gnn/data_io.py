"""Dataset manifests and atomic result files.

A dataset is a directory with ``meta.json`` declaring dimensions and file
names, ``edges.csv`` (src,dst per line), ``labels.csv`` (node,label), and
features as either CSV rows or a row-major float32 binary whose dtype and
shape the header declares. Every writer goes through a temp-file rename
so a crashed run never leaves a truncated output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .graph import Graph, build_graph

FORMAT_VERSION = 1

# published statistics for the supported public datasets; the converter
# validates its output against these.
DATASET_PROFILES = {
    "cora": {"num_nodes": 2708, "num_edges": 5278, "num_classes": 7, "feature_dim": 1433},
    "citeseer": {"num_nodes": 3327, "num_edges": 4552, "num_classes": 6, "feature_dim": 3703},
    "pubmed": {"num_nodes": 19717, "num_edges": 88648, "num_classes": 3, "feature_dim": 5414},
}


class DataError(ValueError):
    pass


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: Path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, rows: list[dict], fieldnames: list[str]) -> None:
    import io
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames)
    writer.writeheader()
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def save_dataset(graph: Graph, directory: Path, name: str = "dataset",
                 feature_format: str = "csv") -> Path:
    """Serialize a graph as a manifest directory; round-trips exactly.

    CSV features are written with full float64 precision; the binary
    format stores float32 (declared in the header).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": name,
        "num_nodes": graph.num_nodes,
        "num_classes": graph.num_classes,
        "feature_dim": graph.feature_dim,
        "edge_file": "edges.csv",
        "label_file": "labels.csv",
        "format_version": FORMAT_VERSION,
    }
    edge_lines = [f"{u},{v}" for u, v in graph.edges]
    atomic_write_text(directory / "edges.csv", "\n".join(edge_lines) + ("\n" if edge_lines else ""))
    label_lines = [f"{v},{int(y)}" for v, y in enumerate(graph.labels)]
    atomic_write_text(directory / "labels.csv", "\n".join(label_lines) + "\n")

    if feature_format == "csv":
        meta["feature_file"] = "features.csv"
        lines = [",".join(repr(float(x)) for x in row) for row in graph.features]
        atomic_write_text(directory / "features.csv", "\n".join(lines) + "\n")
    elif feature_format == "bin":
        meta["feature_file"] = "features.bin"
        meta["feature_dtype"] = "float32"
        meta["feature_shape"] = [graph.num_nodes, graph.feature_dim]
        atomic_write_bytes(directory / "features.bin",
                           graph.features.astype(np.float32).tobytes())
    else:
        raise DataError(f"unknown feature format {feature_format!r}")
    write_json(directory / "meta.json", meta)
    return directory / "meta.json"


def _parse_int_pair(line: str, path: Path, lineno: int) -> tuple[int, int]:
    parts = line.strip().split(",")
    try:
        a, b = int(parts[0]), int(parts[1])
    except (ValueError, IndexError):
        raise DataError(f"{path}:{lineno}: cannot parse '{line.strip()}'")
    return a, b


def load_dataset(manifest_path: Path) -> Graph:
    """Build a Graph from a manifest; errors carry file and line."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    with open(manifest_path) as f:
        meta = json.load(f)
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"unknown format_version {version!r} in {manifest_path}")
    base = manifest_path.parent
    num_nodes = int(meta["num_nodes"])
    num_classes = int(meta["num_classes"])
    feature_dim = int(meta["feature_dim"])

    edge_path = base / meta["edge_file"]
    edges = []
    with open(edge_path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            edges.append(_parse_int_pair(line, edge_path, lineno))

    label_path = base / meta["label_file"]
    labels = np.full(num_nodes, -1, dtype=np.int64)
    with open(label_path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            node, label = _parse_int_pair(line, label_path, lineno)
            if not 0 <= node < num_nodes:
                raise DataError(f"{label_path}:{lineno}: node {node} out of range")
            if not 0 <= label < num_classes:
                raise DataError(f"{label_path}:{lineno}: label {label} outside "
                                f"[0, {num_classes})")
            labels[node] = label
    if np.any(labels < 0):
        missing = int(np.where(labels < 0)[0][0])
        raise DataError(f"{label_path}: node {missing} has no label")

    feat_path = base / meta["feature_file"]
    if feat_path.suffix == ".bin":
        dtype = np.dtype(meta.get("feature_dtype", "float32"))
        shape = tuple(meta.get("feature_shape", (num_nodes, feature_dim)))
        raw = np.fromfile(feat_path, dtype=dtype)
        if raw.size != shape[0] * shape[1]:
            raise DataError(f"{feat_path}: {raw.size} values, expected "
                            f"{shape[0]}x{shape[1]}")
        features = raw.reshape(shape).astype(np.float64)
    else:
        rows = []
        with open(feat_path) as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rows.append([float(x) for x in line.strip().split(",")])
                except ValueError:
                    raise DataError(f"{feat_path}:{lineno}: cannot parse feature row")
        features = np.asarray(rows, dtype=np.float64)
    if features.shape != (num_nodes, feature_dim):
        raise DataError(f"{feat_path}: feature shape {features.shape} does not match "
                        f"declared ({num_nodes}, {feature_dim})")
    try:
        return build_graph(edges, features, labels, num_classes=num_classes)
    except ValueError as exc:
        raise DataError(f"{manifest_path.parent}: {exc}") from exc


def content_hash(obj) -> str:
    """Stable hash of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
