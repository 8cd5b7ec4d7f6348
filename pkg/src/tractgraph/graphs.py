"""Cluster neighborhood graphs built from geometry and region overlap.

Three kinds share one representation: WMG links each cluster to its k
geometrically closest peers (directed, per-row top-k), GMG links clusters
whose two most-intersected regions coincide (symmetric), and CMG keeps a
WMG edge only when GMG agrees. All tie-breaks are by lower index or lower
region id so rebuilds are reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

GRAPH_KINDS = ("WMG", "GMG", "CMG")

DEFAULT_K = 30

_PERCENT_SLACK = 1e-6


@dataclass
class RegionOverlapTable:
    """Per cluster, the (region_id, percent) pairs describing which gray or
    white matter regions its streamlines touch.

    Clusters with fewer than two real entries are padded with zero-percent
    sentinel regions. Sentinel ids are negative and unique to their cluster,
    so they can never create an overlap match with any other cluster.
    """

    overlaps: list[list[tuple[int, float]]] = field(default_factory=list)

    def __post_init__(self):
        if not self.overlaps:
            raise InputError("overlap table has no clusters")
        cleaned = []
        for cid, pairs in enumerate(self.overlaps):
            seen = set()
            total = 0.0
            row = []
            for region, percent in pairs:
                region = int(region)
                percent = float(percent)
                if region < 0:
                    raise InputError(f"cluster {cid}: negative region ids are reserved for padding")
                if region in seen:
                    raise InputError(f"cluster {cid}: duplicate region id {region}")
                if not 0.0 <= percent <= 100.0:
                    raise InputError(f"cluster {cid}: percent {percent} outside [0, 100]")
                seen.add(region)
                total += percent
                row.append((region, percent))
            if total > 100.0 + _PERCENT_SLACK:
                raise InputError(f"cluster {cid}: overlap percents sum to {total}")
            while len(row) < 2:
                row.append((-1 - 2 * cid - len(row), 0.0))
            cleaned.append(row)
        self.overlaps = cleaned

    @property
    def n_clusters(self) -> int:
        return len(self.overlaps)


@dataclass
class ClusterGraph:
    """Neighbor lists for one graph kind; order within a list is meaningful."""

    kind: str
    n_nodes: int
    neighbors: list[list[int]]
    k: int | None = None
    metric_tag: str | None = None

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise InputError(f"unknown graph kind {self.kind!r}")
        if self.n_nodes < 2:
            raise InputError(f"graph needs at least 2 nodes, got {self.n_nodes}")
        if len(self.neighbors) != self.n_nodes:
            raise InputError(f"{self.kind}: {len(self.neighbors)} neighbor lists for {self.n_nodes} nodes")
        for i, row in enumerate(self.neighbors):
            for j in row:
                if not 0 <= j < self.n_nodes:
                    raise InputError(f"{self.kind}: neighbor {j} of node {i} out of range")
                if j == i:
                    raise InputError(f"{self.kind}: node {i} lists itself as a neighbor")
            if len(set(row)) != len(row):
                raise InputError(f"{self.kind}: node {i} has duplicate neighbors")
        if self.kind == "WMG":
            want = min(self.k or 0, self.n_nodes - 1)
            for i, row in enumerate(self.neighbors):
                if len(row) != want:
                    raise InputError(f"WMG: node {i} has {len(row)} neighbors, expected {want}")


def _check_distance_matrix(d):
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InputError(f"distance matrix must be square, got shape {d.shape}")
    if d.shape[0] < 2:
        raise InputError("distance matrix needs at least 2 clusters")
    if not np.all(np.isfinite(d)):
        raise InputError("distance matrix contains non-finite entries")
    if np.abs(np.diag(d)).max() > 1e-9:
        raise InputError("distance matrix diagonal is not zero")
    if not np.allclose(d, d.T, rtol=1e-9, atol=1e-9):
        raise InputError("distance matrix is not symmetric")
    return d


def build_wmg(d, k, metric_tag="mdf"):
    """Top-k nearest clusters per row, ascending by distance then index.

    The relation is deliberately directed: each node keeps its own top k and
    no symmetrization is applied.
    """
    d = _check_distance_matrix(d)
    n = d.shape[0]
    if not 1 <= k <= n - 1:
        raise ConfigError(f"k must be in [1, {n - 1}] for {n} clusters, got {k}")
    idx = np.arange(n)
    neighbors = []
    for i in range(n):
        order = np.lexsort((idx, d[i]))
        neighbors.append([int(j) for j in order if j != i][:k])
    return ClusterGraph("WMG", n, neighbors, k=k, metric_tag=metric_tag)


def top_regions(pairs):
    """The two region ids with highest percent; ties favor the lower id."""
    if len(pairs) < 2:
        raise InputError(f"top_regions needs at least 2 entries, got {len(pairs)}")
    ranked = sorted(pairs, key=lambda rp: (-rp[1], rp[0]))
    return {ranked[0][0], ranked[1][0]}


def build_gmg(table):
    """Link clusters whose top-two region sets are equal; symmetric."""
    n = table.n_clusters
    if n < 2:
        raise InputError("GMG needs at least 2 clusters")
    tops = [frozenset(top_regions(pairs)) for pairs in table.overlaps]
    groups = {}
    for i, t in enumerate(tops):
        groups.setdefault(t, []).append(i)
    neighbors = [[] for _ in range(n)]
    for members in groups.values():
        for i in members:
            neighbors[i] = [j for j in members if j != i]
    return ClusterGraph("GMG", n, neighbors)


def build_cmg(wmg, gmg):
    """Keep each WMG edge only if GMG has it too; WMG order is preserved."""
    if wmg.kind != "WMG" or gmg.kind != "GMG":
        raise ConfigError(f"build_cmg takes (WMG, GMG), got ({wmg.kind}, {gmg.kind})")
    if wmg.n_nodes != gmg.n_nodes:
        raise ConfigError(f"node count mismatch: WMG has {wmg.n_nodes}, GMG has {gmg.n_nodes}")
    gsets = [set(row) for row in gmg.neighbors]
    neighbors = [[j for j in wrow if j in gsets[i]] for i, wrow in enumerate(wmg.neighbors)]
    return ClusterGraph("CMG", wmg.n_nodes, neighbors, k=wmg.k, metric_tag=wmg.metric_tag)


# --- persistence -------------------------------------------------------------


def save_graph(graph, path, metadata=None):
    payload = {
        "kind": graph.kind,
        "n_nodes": graph.n_nodes,
        "k": graph.k,
        "metric_tag": graph.metric_tag,
        "neighbors": graph.neighbors,
    }
    if metadata:
        payload["metadata"] = metadata
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_graph(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read graph {path}: {exc}") from exc
    try:
        return ClusterGraph(
            kind=data["kind"],
            n_nodes=int(data["n_nodes"]),
            neighbors=[[int(j) for j in row] for row in data["neighbors"]],
            k=None if data.get("k") is None else int(data["k"]),
            metric_tag=data.get("metric_tag"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"graph {path} is malformed: {exc}") from exc


def save_overlap_csv(table, path):
    """Rows of cluster_id, region_id, percent; padding rows are not written."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", "region_id", "percent"])
        for cid, pairs in enumerate(table.overlaps):
            for region, percent in pairs:
                if region >= 0:
                    writer.writerow([cid, region, repr(percent)])


def load_overlap_csv(path, n_clusters=None):
    """Parse an overlap table; pass n_clusters when trailing clusters may
    have no rows at all (nothing is written for pure-padding clusters)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read overlap table {path}: {exc}") from exc
    if rows and rows[0][:1] == ["cluster_id"]:
        rows = rows[1:]
    if not rows:
        raise InputError(f"overlap table {path} is empty")
    parsed = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise InputError(f"overlap table {path} line {lineno}: expected 3 columns, got {len(row)}")
        try:
            parsed.append((int(row[0]), int(row[1]), float(row[2])))
        except ValueError as exc:
            raise InputError(f"overlap table {path} line {lineno}: {exc}") from exc
    n = max(cid for cid, _, _ in parsed) + 1
    if n_clusters is not None:
        if n > n_clusters:
            raise InputError(f"overlap table {path} references cluster {n - 1}, expected < {n_clusters}")
        n = n_clusters
    overlaps = [[] for _ in range(n)]
    for cid, region, percent in parsed:
        if cid < 0:
            raise InputError(f"overlap table {path}: negative cluster id {cid}")
        overlaps[cid].append((region, percent))
    return RegionOverlapTable(overlaps)
