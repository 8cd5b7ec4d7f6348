"""Streamline geometry: resampling, bundle distances, atlas and matrix I/O.

Two interchangeable backends compute the distance kernels: a compiled
extension (built from _geomcore.pyx) and a numpy fallback. Every reduction
is pinned to sequential index order in both, so the backends agree bitwise
and either one can be checked against a plain-Python double loop. Set
TGF_GEOM_BACKEND=python or =cython to force one at import time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

DEFAULT_POINTS = 15
METRICS = ("mdf", "mcp")

_METRIC_CODES = {"mdf": 0, "mcp": 1}


def _select_backend():
    forced = os.environ.get("TGF_GEOM_BACKEND", "").strip().lower()
    if forced not in ("", "auto", "python", "cython"):
        raise ConfigError(f"unknown TGF_GEOM_BACKEND value: {forced!r}")
    if forced == "python":
        return None
    try:
        from . import _geomcore
    except ImportError:
        if forced == "cython":
            raise ConfigError("TGF_GEOM_BACKEND=cython but the compiled extension is not available")
        return None
    return _geomcore


_CORE = _select_backend()

GEOMETRY_BACKEND = "python" if _CORE is None else "cython"


@dataclass
class Streamline:
    """One fiber trajectory as an (n, 3) array of xyz positions."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"streamline points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 2:
            raise InputError("streamline needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise InputError("streamline contains non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


@dataclass
class FiberCluster:
    """A bundle of streamlines sharing one atlas cluster id."""

    cluster_id: int
    streamlines: list[Streamline] = field(default_factory=list)

    def __post_init__(self):
        if self.cluster_id < 0:
            raise InputError(f"cluster_id must be non-negative, got {self.cluster_id}")
        if not self.streamlines:
            raise InputError(f"cluster {self.cluster_id} has no streamlines")


def _resample_np(pts, p_out):
    n = pts.shape[0]
    seg = pts[1:] - pts[:-1]
    sq = seg * seg
    cum = np.empty(n, dtype=np.float64)
    cum[0] = 0.0
    np.cumsum(np.sqrt(sq[:, 0] + sq[:, 1] + sq[:, 2]), out=cum[1:])
    total = cum[-1]

    out = np.empty((p_out, 3), dtype=np.float64)
    out[0] = pts[0]
    out[-1] = pts[-1]
    if total == 0.0:
        out[1:-1] = pts[0]
        return out

    target = total * (np.arange(1, p_out - 1, dtype=np.float64) / (p_out - 1))
    idx = np.minimum(np.searchsorted(cum, target, side="right") - 1, n - 2)
    frac = (target - cum[idx]) / (cum[idx + 1] - cum[idx])
    out[1:-1] = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    return out


def _seq_sum(a, axis=-1):
    """Sum with guaranteed left-to-right accumulation order."""
    return np.cumsum(a, axis=axis).take(-1, axis=axis)


def _mdf_block(a, b):
    diff = a[:, None, :, :] - b[None, :, :, :]
    sq = diff * diff
    direct = _seq_sum(np.sqrt(sq[..., 0] + sq[..., 1] + sq[..., 2]))
    diff = a[:, None, :, :] - b[None, :, ::-1, :]
    sq = diff * diff
    flipped = _seq_sum(np.sqrt(sq[..., 0] + sq[..., 1] + sq[..., 2]))
    return np.minimum(direct, flipped) / a.shape[1]


def _mcp_block(a, b):
    diff = a[:, None, :, None, :] - b[None, :, None, :, :]
    sq = diff * diff
    norms = np.sqrt(sq[..., 0] + sq[..., 1] + sq[..., 2])
    fwd = _seq_sum(norms.min(axis=3)) / a.shape[1]
    rev = _seq_sum(norms.min(axis=2)) / b.shape[1]
    return 0.5 * (fwd + rev)


def _pair_np(a, b, metric_code):
    block = _mdf_block(a, b) if metric_code == 0 else _mcp_block(a, b)
    return _seq_sum(block.ravel(), axis=0) / (a.shape[0] * b.shape[0])


def _metric_code(metric):
    try:
        return _METRIC_CODES[metric]
    except KeyError:
        raise ConfigError(f"unknown distance metric {metric!r}, expected one of {METRICS}") from None


def _check_num_points(num_points):
    if num_points < 2:
        raise ConfigError(f"num_points must be at least 2, got {num_points}")


def resample_streamline(streamline, num_points=DEFAULT_POINTS):
    """Return a copy resampled to num_points equally spaced by arc length.

    Sample positions are measured along the original polyline; the first and
    last input points are kept exactly.
    """
    _check_num_points(num_points)
    if _CORE is not None:
        return Streamline(_CORE.resample(streamline.points, num_points))
    return Streamline(_resample_np(streamline.points, num_points))


def _stack(cluster, num_points):
    rows = [resample_streamline(s, num_points).points for s in cluster.streamlines]
    return np.ascontiguousarray(np.stack(rows))


def _single(streamline, num_points):
    return resample_streamline(streamline, num_points).points[None, :, :]


def mdf_distance(a, b, num_points=DEFAULT_POINTS):
    """Minimum-direct-flip distance between two streamlines.

    Both are resampled to num_points, then the mean point-to-point distance
    is taken in the given orientation and with one streamline reversed; the
    smaller of the two is returned.
    """
    sa, sb = _single(a, num_points), _single(b, num_points)
    if _CORE is not None:
        return float(_CORE.pair_distance(sa, sb, 0))
    return float(_pair_np(sa, sb, 0))


def mcp_distance(a, b, num_points=DEFAULT_POINTS):
    """Symmetric mean-closest-point distance between two streamlines."""
    sa, sb = _single(a, num_points), _single(b, num_points)
    if _CORE is not None:
        return float(_CORE.pair_distance(sa, sb, 1))
    return float(_pair_np(sa, sb, 1))


def cluster_pair_distance(a, b, num_points=DEFAULT_POINTS, metric="mdf"):
    """Mean streamline distance over all cross pairs of two bundles."""
    code = _metric_code(metric)
    _check_num_points(num_points)
    sa, sb = _stack(a, num_points), _stack(b, num_points)
    if _CORE is not None:
        return float(_CORE.pair_distance(sa, sb, code))
    return float(_pair_np(sa, sb, code))


def distance_matrix(clusters, num_points=DEFAULT_POINTS, metric="mdf"):
    """Symmetric matrix of pairwise bundle distances, zero on the diagonal."""
    code = _metric_code(metric)
    _check_num_points(num_points)
    if not clusters:
        raise InputError("distance_matrix needs at least one cluster")
    stacks = [_stack(c, num_points) for c in clusters]
    if _CORE is not None:
        offsets = np.zeros(len(stacks) + 1, dtype=np.int64)
        np.cumsum([s.shape[0] for s in stacks], out=offsets[1:])
        data = np.ascontiguousarray(np.concatenate(stacks))
        return _CORE.distance_matrix(data, offsets, code)
    n = len(stacks)
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = _pair_np(stacks[i], stacks[j], code)
            out[i, j] = d
            out[j, i] = d
    return out


def load_atlas(path):
    """Read a cluster atlas from JSON and return clusters ordered by id.

    The ids must be exactly 0..N-1 with no repeats.
    """
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read atlas {path}: {exc}") from exc
    if not isinstance(data, dict) or "clusters" not in data:
        raise InputError(f"atlas {path} is missing the 'clusters' key")
    raw = data["clusters"]
    if not isinstance(raw, list) or not raw:
        raise InputError(f"atlas {path} has no clusters")
    clusters = []
    for entry in raw:
        try:
            cid = int(entry["cluster_id"])
            lines = [Streamline(np.asarray(p, dtype=np.float64)) for p in entry["streamlines"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"atlas {path} has a malformed cluster entry: {exc}") from exc
        clusters.append(FiberCluster(cid, lines))
    clusters.sort(key=lambda c: c.cluster_id)
    ids = [c.cluster_id for c in clusters]
    if ids != list(range(len(ids))):
        raise InputError(f"atlas cluster ids must be exactly 0..{len(ids) - 1}, got {ids}")
    return clusters


def save_atlas(clusters, path):
    payload = {
        "clusters": [
            {
                "cluster_id": c.cluster_id,
                "streamlines": [s.points.tolist() for s in c.streamlines],
            }
            for c in clusters
        ]
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def save_distance_csv(matrix, path):
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"distance matrix must be square, got shape {m.shape}")
    np.savetxt(path, m, delimiter=",", fmt="%.17g")


def load_distance_csv(path):
    """Read a headerless square distance matrix; %.17g output round-trips exactly."""
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read distance matrix {path}: {exc}") from exc
    if m.shape[0] != m.shape[1]:
        raise InputError(f"distance matrix in {path} is not square: {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError(f"distance matrix in {path} contains non-finite values")
    return m
