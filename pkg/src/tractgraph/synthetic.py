"""Synthetic atlas and cohort generator with a planted, recoverable effect.

The atlas is built from quadratic Bezier centroid curves inside a cube;
each cluster's streamlines are jittered copies of its centroid. Region
overlaps come from counting which random region centroid each streamline
endpoint lands nearest to, and clusters are partitioned into tracts by
centroid proximity to tract anchors. The cohort plants an additive class
effect on a chosen cluster set, which a brute-force threshold sweep can
verify independently of any trained model.

Everything is a pure function of the seeds. Subject i draws from
default_rng([cohort_seed, i]), so per-subject generation could run in any
order or in parallel without changing a single bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .features import CHANNELS, assemble_subject, save_cohort_csv
from .geometry import FiberCluster, Streamline, save_atlas
from .graphs import RegionOverlapTable, save_overlap_csv

TRACT_MAP_HEADER = ["cluster_id", "tract_id", "tract_name"]

# File names used by write_dataset; the CLI and tests share them.
ATLAS_FILE = "atlas.json"
OVERLAP_FILE = "overlap.csv"
TRACT_MAP_FILE = "tract_map.csv"
COHORT_FILE = "cohort.csv"
GROUND_TRUTH_FILE = "ground_truth.json"


@dataclass
class SyntheticAtlasConfig:
    n_clusters: int
    streamlines_per_cluster: int = 20
    points_per_streamline: int = 30
    bundle_jitter_mm: float = 2.0
    n_regions: int = 8
    n_tracts: int = 3
    extent_mm: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 2:
            raise ConfigError(f"need at least 2 clusters, got {self.n_clusters}")
        if self.n_regions < 2:
            raise ConfigError(f"need at least 2 regions, got {self.n_regions}")
        if not 1 <= self.n_tracts <= self.n_clusters:
            raise ConfigError(
                f"n_tracts must be in [1, {self.n_clusters}], got {self.n_tracts}")
        if self.streamlines_per_cluster < 1 or self.points_per_streamline < 2:
            raise ConfigError("each cluster needs streamlines of at least 2 points")
        if self.bundle_jitter_mm < 0 or self.extent_mm <= 0:
            raise ConfigError("jitter must be non-negative and extent positive")


@dataclass
class SyntheticCohortConfig:
    n_subjects: int
    planted_clusters: tuple[int, ...]
    fa_delta: float = 0.1
    md_delta: float = 2e-4
    nos_delta: float = 20.0
    fa_noise_sd: float = 0.05
    md_noise_sd: float = 1e-4
    p_absent: float = 0.0
    fa_base: float = 0.5
    md_base: float = 7e-4
    nos_rate: float = 100.0
    seed: int = 0

    def __post_init__(self):
        self.planted_clusters = tuple(sorted(int(c) for c in self.planted_clusters))
        if self.n_subjects < 2:
            raise ConfigError(f"need at least 2 subjects, got {self.n_subjects}")
        if not self.planted_clusters:
            raise ConfigError("planted cluster set must be non-empty")
        if len(set(self.planted_clusters)) != len(self.planted_clusters):
            raise ConfigError("planted clusters contain duplicates")
        if not 0.0 <= self.p_absent < 1.0:
            raise ConfigError(f"p_absent must be in [0, 1), got {self.p_absent}")
        for name in ("fa_delta", "md_delta", "nos_delta"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.fa_noise_sd < 0 or self.md_noise_sd < 0:
            raise ConfigError("noise sds must be non-negative")
        if self.nos_rate <= 0:
            raise ConfigError("nos_rate must be positive")


@dataclass
class AtlasDescriptor:
    clusters: list[FiberCluster]
    overlap: RegionOverlapTable
    tract_ids: np.ndarray
    tract_names: list[str] = field(default_factory=list)
    seed: int = 0

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def _bezier(controls, n_points):
    u = np.linspace(0.0, 1.0, n_points)[:, None]
    p0, p1, p2 = controls
    return (1.0 - u) ** 2 * p0 + 2.0 * u * (1.0 - u) * p1 + u ** 2 * p2


def gen_atlas(config: SyntheticAtlasConfig) -> AtlasDescriptor:
    rng = np.random.default_rng(config.seed)
    n, s, p = config.n_clusters, config.streamlines_per_cluster, config.points_per_streamline
    clusters = []
    centroids = []
    for cid in range(n):
        controls = rng.uniform(0.0, config.extent_mm, size=(3, 3))
        curve = _bezier(controls, p)
        centroids.append(curve)
        lines = []
        for _ in range(s):
            lines.append(Streamline(curve + rng.normal(0.0, config.bundle_jitter_mm, size=(p, 3))))
        clusters.append(FiberCluster(cid, lines))

    region_centroids = rng.uniform(0.0, config.extent_mm, size=(config.n_regions, 3))
    rows = []
    for cid in range(n):
        endpoints = np.concatenate([
            np.stack([line.points[0] for line in clusters[cid].streamlines]),
            np.stack([line.points[-1] for line in clusters[cid].streamlines]),
        ])
        d = np.linalg.norm(endpoints[:, None, :] - region_centroids[None, :, :], axis=2)
        nearest = np.argmin(d, axis=1)
        counts = np.bincount(nearest, minlength=config.n_regions)
        total = counts.sum()
        rows.append([(r, 100.0 * counts[r] / total) for r in range(config.n_regions)])
    overlap = RegionOverlapTable(rows)

    anchors = rng.uniform(0.0, config.extent_mm, size=(config.n_tracts, 3))
    mids = np.stack([c.mean(axis=0) for c in centroids])
    tract_ids = np.argmin(np.linalg.norm(mids[:, None, :] - anchors[None, :, :], axis=2), axis=1)
    names = [f"tract_{t:02d}" for t in range(config.n_tracts)]
    return AtlasDescriptor(clusters, overlap, tract_ids.astype(np.int64), names, config.seed)


def _subject_rows(rng, n, label, config, planted):
    for _ in range(1000):
        absent = rng.random(n) < config.p_absent
        if not absent.all():
            break
    else:
        raise InputError("could not draw a subject with any cluster present")
    shift = np.zeros(n)
    shift[planted] = 1.0
    fa = config.fa_base + label * config.fa_delta * shift + rng.normal(0.0, config.fa_noise_sd, n)
    md = config.md_base + label * config.md_delta * shift + rng.normal(0.0, config.md_noise_sd, n)
    rate = np.maximum(config.nos_rate + label * config.nos_delta * shift, 0.0)
    nos = rng.poisson(rate)
    fa = np.clip(fa, 0.05, 0.95)
    md = np.clip(md, 1e-4, 3e-3)
    return [(c, float(fa[c]), float(md[c]), int(nos[c])) for c in range(n) if not absent[c]]


def gen_cohort(atlas: AtlasDescriptor, config: SyntheticCohortConfig):
    """Returns (subjects, long-format rows, ground truth dict)."""
    n = atlas.n_clusters
    planted = list(config.planted_clusters)
    if planted[0] < 0 or planted[-1] >= n:
        raise ConfigError(f"planted clusters {planted} outside [0, {n})")
    labels = np.array([i % 2 for i in range(config.n_subjects)])
    np.random.default_rng(config.seed).shuffle(labels)
    subjects, rows = [], []
    for i in range(config.n_subjects):
        sid = f"subj{i:03d}"
        label = int(labels[i])
        rng = np.random.default_rng([config.seed, i])
        recs = _subject_rows(rng, n, label, config, planted)
        subjects.append(assemble_subject(recs, n, sid, label))
        rows.extend((sid, label, cid, fa, md, nos) for cid, fa, md, nos in recs)
    truth = {
        "planted_clusters": planted,
        "deltas": {"fa": config.fa_delta, "md": config.md_delta, "nos": config.nos_delta},
        "noise_sd": {"fa": config.fa_noise_sd, "md": config.md_noise_sd},
        "p_absent": config.p_absent,
        "seeds": {"atlas": atlas.seed, "cohort": config.seed},
    }
    return subjects, rows, truth


def threshold_accuracy(subjects, cluster_id, channel):
    """Best accuracy of a one-feature threshold rule, swept by brute force.

    Candidate cuts are midpoints between consecutive sorted values plus the
    two outer extremes; both polarities are tried. Subjects missing the
    cluster are excluded. This is the model-free recoverability check for
    planted effects.
    """
    if isinstance(channel, str):
        if channel not in CHANNELS:
            raise ConfigError(f"unknown channel {channel!r}, expected one of {CHANNELS}")
        channel = CHANNELS.index(channel)
    values, labels = [], []
    for s in subjects:
        if s.present_mask[cluster_id]:
            values.append(s.features[cluster_id, channel])
            labels.append(s.label)
    if not values:
        raise InputError(f"no subject has cluster {cluster_id}")
    values = np.asarray(values)
    labels = np.asarray(labels)
    sv = np.unique(values)
    cuts = np.concatenate([[sv[0] - 1.0], (sv[:-1] + sv[1:]) / 2.0, [sv[-1] + 1.0]])
    best = 0.0
    for cut in cuts:
        above = values > cut
        best = max(best,
                   float(np.mean(above == (labels == 1))),
                   float(np.mean(~above == (labels == 1))))
    return best


def pick_connected_clusters(graph, size, seed=0):
    """Breadth-first pick of `size` clusters forming a connected patch.

    Edges are taken as undirected for connectivity. Useful when the planted
    effect should sit inside one graph neighborhood.
    """
    if not 1 <= size <= graph.n_nodes:
        raise ConfigError(f"size must be in [1, {graph.n_nodes}], got {size}")
    undirected = [set() for _ in range(graph.n_nodes)]
    for i, neigh in enumerate(graph.neighbors):
        for j in neigh:
            undirected[i].add(j)
            undirected[j].add(i)
    start = int(np.random.default_rng(seed).integers(0, graph.n_nodes))
    picked, frontier = [], [start]
    seen = {start}
    while frontier and len(picked) < size:
        node = frontier.pop(0)
        picked.append(node)
        for j in sorted(undirected[node]):
            if j not in seen:
                seen.add(j)
                frontier.append(j)
    if len(picked) < size:
        raise ConfigError(
            f"connected component around cluster {start} has only {len(picked)} nodes")
    return tuple(sorted(picked))


# --- file interfaces ---------------------------------------------------------


def save_tract_map_csv(tract_ids, tract_names, path):
    lines = [",".join(TRACT_MAP_HEADER)]
    for cid, tid in enumerate(tract_ids):
        lines.append(f"{cid},{int(tid)},{tract_names[int(tid)]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_tract_map_csv(path):
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].split(",") != TRACT_MAP_HEADER:
        raise InputError(f"{path}: expected header {','.join(TRACT_MAP_HEADER)}")
    ids, names = [], {}
    for lineno, line in enumerate(text[1:], start=2):
        cid_s, tid_s, name = line.split(",")
        cid, tid = int(cid_s), int(tid_s)
        if cid != len(ids):
            raise InputError(f"{path}:{lineno}: cluster ids must run 0..N-1 in order")
        if names.setdefault(tid, name) != name:
            raise InputError(f"{path}:{lineno}: tract {tid} has conflicting names")
        ids.append(tid)
    tract_names = [names.get(t, f"tract_{t:02d}") for t in range(max(names) + 1)] if names else []
    return np.asarray(ids, dtype=np.int64), tract_names


def save_ground_truth(truth, path):
    Path(path).write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")


def load_ground_truth(path):
    return json.loads(Path(path).read_text())


def write_dataset(out_dir, atlas: AtlasDescriptor, rows, truth):
    """Write the five dataset files; returns their paths keyed by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "atlas": out / ATLAS_FILE,
        "overlap": out / OVERLAP_FILE,
        "tract_map": out / TRACT_MAP_FILE,
        "cohort": out / COHORT_FILE,
        "ground_truth": out / GROUND_TRUTH_FILE,
    }
    save_atlas(atlas.clusters, paths["atlas"])
    save_overlap_csv(atlas.overlap, paths["overlap"])
    save_tract_map_csv(atlas.tract_ids, atlas.tract_names, paths["tract_map"])
    save_cohort_csv(rows, paths["cohort"])
    save_ground_truth(truth, paths["ground_truth"])
    return paths
