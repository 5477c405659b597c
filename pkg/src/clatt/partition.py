"""Partition containers, size filtering and CSV round-tripping."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TAGS = ("LA", "BPP", "H1", "KM")


@dataclass
class Clustering:
    """A partition of nodes 0..n-1 into contiguous cluster ids 0..k-1."""

    assignment: np.ndarray
    algorithm_tag: str = "LA"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    @property
    def num_clusters(self) -> int:
        return int(self.assignment.max()) + 1 if self.n else 0

    def clusters(self) -> list[np.ndarray]:
        """Member arrays indexed by cluster id."""
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.num_clusters + 1))
        return [order[bounds[i] : bounds[i + 1]] for i in range(self.num_clusters)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_clusters)

    def validate(self) -> None:
        if self.n == 0:
            raise ValueError("empty clustering")
        if self.assignment.min() < 0:
            raise ValueError("negative cluster id in a full partition")
        if np.any(self.sizes() == 0):
            raise ValueError("empty cluster id")


@dataclass
class FilteredClustering:
    """Retained clusters (contiguously renumbered) plus unassigned nodes.

    ``assignment`` holds -1 for every unassigned node.
    """

    assignment: np.ndarray
    unassigned: np.ndarray
    algorithm_tag: str = "LA"
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    @property
    def num_clusters(self) -> int:
        m = int(self.assignment.max())
        return m + 1 if m >= 0 else 0

    def clusters(self) -> list[np.ndarray]:
        out = []
        for cid in range(self.num_clusters):
            out.append(np.where(self.assignment == cid)[0])
        return out

    def validate(self) -> None:
        mask = self.assignment < 0
        if not np.array_equal(np.where(mask)[0], np.sort(self.unassigned)):
            raise ValueError("unassigned set inconsistent with assignment")
        sizes = np.bincount(self.assignment[~mask], minlength=self.num_clusters)
        if self.num_clusters and sizes.min() == 0:
            raise ValueError("gap in retained cluster ids")


def relabel_by_first_occurrence(assignment: np.ndarray) -> np.ndarray:
    """Renumber cluster ids so they appear in increasing node order."""
    assignment = np.asarray(assignment, dtype=np.int64)
    _, first = np.unique(assignment, return_index=True)
    order = np.argsort(first, kind="stable")
    lut = np.empty(order.shape[0], dtype=np.int64)
    lut[order] = np.arange(order.shape[0])
    dense = np.searchsorted(np.unique(assignment), assignment)
    return lut[dense]


def filter_clusters(c: Clustering, min_size: int = 4, max_size: int = 512) -> FilteredClustering:
    """Drop clusters outside [min_size, max_size]; members become unassigned.

    Retained clusters keep their membership untouched and are renumbered
    contiguously in original-id order.
    """
    sizes = c.sizes()
    keep = (sizes >= min_size) & (sizes <= max_size)
    new_id = np.full(sizes.shape[0], -1, dtype=np.int64)
    new_id[keep] = np.arange(int(keep.sum()))
    assignment = new_id[c.assignment]
    unassigned = np.where(assignment < 0)[0]
    return FilteredClustering(assignment=assignment, unassigned=unassigned,
                              algorithm_tag=c.algorithm_tag,
                              params={**c.params, "min_size": min_size, "max_size": max_size})


def save_clustering(path, c, node_ids: np.ndarray | None = None) -> None:
    """Write ``node_id,cluster_id`` rows plus a .meta.json sidecar.

    Unassigned nodes (FilteredClustering) get cluster id -1.
    """
    path = Path(path)
    ids = np.arange(c.n) if node_ids is None else np.asarray(node_ids)
    if ids.shape[0] != c.n:
        raise ValueError("node_ids length mismatch")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "cluster_id"])
        for nid, cid in zip(ids, c.assignment):
            w.writerow([int(nid), int(cid)])
    meta = {
        "algorithm_tag": c.algorithm_tag,
        "params": _json_safe(c.params),
        "num_clusters": int(c.num_clusters),
        "num_unassigned": int((np.asarray(c.assignment) < 0).sum()),
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_clustering(path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Read a clustering CSV; returns (node_ids, assignment, metadata)."""
    path = Path(path)
    ids, cids = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["node_id", "cluster_id"]:
            raise ValueError(f"{path}: expected header node_id,cluster_id")
        for row in reader:
            if not row:
                continue
            ids.append(int(row[0]))
            cids.append(int(row[1]))
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta = {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    order = np.argsort(np.asarray(ids), kind="stable")
    return (np.asarray(ids, dtype=np.int64)[order],
            np.asarray(cids, dtype=np.int64)[order], meta)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
