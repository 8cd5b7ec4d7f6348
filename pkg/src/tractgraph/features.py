"""Per-subject feature matrices and cohort-level min-max normalization.

Each subject contributes an N x 3 matrix (columns FA, MD, PoS). Clusters a
subject is missing get a zero row and a false entry in the presence mask;
those zeros never participate in fitting normalization ranges, only in the
model input. Normalization is fitted on training subjects alone and the
parameters travel with the trained model so held-out subjects are scaled
identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError

CHANNELS = ("fa", "md", "pos")


@dataclass
class SubjectFeatures:
    subject_id: str
    label: int
    features: np.ndarray
    present_mask: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.present_mask = np.asarray(self.present_mask, dtype=bool)
        if self.label not in (0, 1):
            raise InputError(f"subject {self.subject_id}: label must be 0 or 1, got {self.label}")
        if self.features.ndim != 2 or self.features.shape[1] != 3:
            raise InputError(f"subject {self.subject_id}: features must be (N, 3), got {self.features.shape}")
        if self.present_mask.shape != (self.features.shape[0],):
            raise InputError(f"subject {self.subject_id}: mask shape {self.present_mask.shape} mismatch")
        if not np.all(np.isfinite(self.features)):
            raise InputError(f"subject {self.subject_id}: non-finite feature values")
        if np.any(self.features[~self.present_mask] != 0.0):
            raise InputError(f"subject {self.subject_id}: absent clusters must have zero rows")

    @property
    def n_clusters(self) -> int:
        return self.features.shape[0]


@dataclass
class NormalizationParams:
    """Per-channel training min/max; a channel with max == min is degenerate
    and maps to zero on apply."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != (3,) or self.maxs.shape != (3,):
            raise InputError("normalization params need one min and max per channel")
        if np.any(self.maxs < self.mins):
            raise InputError("normalization params have max < min")

    @property
    def degenerate(self) -> np.ndarray:
        return self.maxs == self.mins

    def to_jsonable(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_jsonable(cls, obj) -> "NormalizationParams":
        try:
            return cls(np.asarray(obj["mins"]), np.asarray(obj["maxs"]))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed normalization params: {exc}") from exc


def compute_pos(nos, subject_id="?"):
    """Proportion of streamlines per cluster: counts divided by their total."""
    nos = np.asarray(nos, dtype=np.float64)
    if np.any(nos < 0):
        raise InputError(f"subject {subject_id}: negative streamline count")
    total = nos.sum()
    if total <= 0:
        raise InputError(f"subject {subject_id}: no streamlines in any cluster, cannot form proportions")
    return nos / total


def assemble_subject(records, n_clusters, subject_id, label):
    """Build SubjectFeatures from (cluster_id, fa, md, nos) records.

    Clusters without a record get a zero row; PoS is formed from the counts
    that are present, so it sums to 1 over present clusters.
    """
    feats = np.zeros((n_clusters, 3), dtype=np.float64)
    mask = np.zeros(n_clusters, dtype=bool)
    nos = np.zeros(n_clusters, dtype=np.float64)
    for cid, fa, md, count in records:
        cid = int(cid)
        if not 0 <= cid < n_clusters:
            raise InputError(f"subject {subject_id}: cluster id {cid} outside [0, {n_clusters})")
        if mask[cid]:
            raise InputError(f"subject {subject_id}: duplicate record for cluster {cid}")
        mask[cid] = True
        feats[cid, 0] = fa
        feats[cid, 1] = md
        nos[cid] = count
    pos = compute_pos(nos[mask], subject_id=subject_id)
    feats[mask, 2] = pos
    return SubjectFeatures(subject_id, label, feats, mask)


def fit_minmax(subjects):
    """Per-channel min/max over every present cluster of every subject."""
    if not subjects:
        raise InputError("cannot fit normalization on an empty cohort")
    mins = np.full(3, np.inf)
    maxs = np.full(3, -np.inf)
    any_present = False
    for s in subjects:
        if s.normalized:
            raise InputError(f"subject {s.subject_id} is already normalized")
        rows = s.features[s.present_mask]
        if rows.size == 0:
            continue
        any_present = True
        np.minimum(mins, rows.min(axis=0), out=mins)
        np.maximum(maxs, rows.max(axis=0), out=maxs)
    if not any_present:
        raise InputError("no present clusters anywhere in the training cohort")
    return NormalizationParams(mins, maxs)


def apply_minmax(subject, params):
    """Scale present rows to [0,1] with clamping; absent rows stay zero."""
    span = params.maxs - params.mins
    scaled = np.zeros_like(subject.features)
    safe = np.where(params.degenerate, 1.0, span)
    vals = (subject.features - params.mins) / safe
    vals = np.clip(vals, 0.0, 1.0)
    vals[:, params.degenerate] = 0.0
    scaled[subject.present_mask] = vals[subject.present_mask]
    return SubjectFeatures(subject.subject_id, subject.label, scaled, subject.present_mask.copy(), normalized=True)


# --- cohort file -------------------------------------------------------------

COHORT_HEADER = ["subject_id", "label", "cluster_id", "fa", "md", "nos"]


def save_cohort_csv(rows, path):
    """Write long-format cohort rows (subject_id, label, cluster_id, fa, md, nos)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COHORT_HEADER)
        for sid, label, cid, fa, md, nos in rows:
            writer.writerow([sid, label, cid, repr(float(fa)), repr(float(md)), nos])


def load_cohort_csv(path, n_clusters):
    """Read a cohort file and assemble one SubjectFeatures per subject.

    Subjects keep their order of first appearance. A subject whose rows
    disagree on the label is rejected.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read cohort {path}: {exc}") from exc
    if header != COHORT_HEADER:
        raise InputError(f"cohort {path}: expected header {','.join(COHORT_HEADER)}")
    if not rows:
        raise InputError(f"cohort {path} has no data rows")
    order = []
    by_subject: dict[str, dict] = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 6:
            raise InputError(f"cohort {path} line {lineno}: expected 6 columns, got {len(row)}")
        sid, label_s, cid_s, fa_s, md_s, nos_s = row
        try:
            label = int(label_s)
            cid = int(cid_s)
            fa = float(fa_s)
            md = float(md_s)
            nos = float(nos_s)
        except ValueError as exc:
            raise InputError(f"cohort {path} line {lineno}: {exc}") from exc
        if sid not in by_subject:
            by_subject[sid] = {"label": label, "records": []}
            order.append(sid)
        elif by_subject[sid]["label"] != label:
            raise InputError(f"cohort {path}: subject {sid} has conflicting labels")
        by_subject[sid]["records"].append((cid, fa, md, nos))
    return [
        assemble_subject(by_subject[sid]["records"], n_clusters, sid, by_subject[sid]["label"])
        for sid in order
    ]
