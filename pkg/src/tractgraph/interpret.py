"""Attention aggregation, predictive-cluster selection, and report emission.

Scores are pooled over every fold's test subjects, keeping only subjects
whose class was predicted correctly, then averaged per cluster. The cut
for "highly predictive" is mean + 1.5 sd over clusters by default, with a
top-q percent alternative; the rule that produced a report is embedded in
the report itself so the files are self-describing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError

SELECTION_RULES = ("sigma", "top_q")
DEFAULT_SIGMA_MULTIPLIER = 1.5
DEFAULT_TOP_Q = 5.0


def aggregate_attention(score_vectors, correct_flags):
    """Mean attention per cluster over correctly predicted subjects.

    Returns (means, n_contributing). Pooling across folds is a plain mean
    because each subject is a test subject exactly once.
    """
    vectors = [np.asarray(v, dtype=np.float64) for v in score_vectors]
    flags = list(correct_flags)
    if len(vectors) != len(flags):
        raise InputError(f"{len(vectors)} score vectors but {len(flags)} correctness flags")
    if not vectors:
        raise InputError("no subjects to aggregate")
    n = vectors[0].shape[0]
    for v in vectors:
        if v.shape != (n,):
            raise InputError(f"attention vectors disagree on length: {v.shape} vs ({n},)")
    kept = [v for v, ok in zip(vectors, flags) if ok]
    if not kept:
        raise InputError("no correctly predicted subjects; attention report impossible")
    return np.mean(np.stack(kept), axis=0), len(kept)


def select_predictive(mean_scores, rule="sigma",
                      multiplier=DEFAULT_SIGMA_MULTIPLIER, q=DEFAULT_TOP_Q):
    """Pick predictive clusters; returns (sorted cluster tuple, rule record).

    sigma: clusters strictly above mean + multiplier * sd (population sd);
    a flat score vector selects nothing. top_q: the ceil(N*q/100) best
    clusters, ties broken toward the lower index.
    """
    scores = np.asarray(mean_scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise InputError(f"mean scores must be a non-empty vector, got shape {scores.shape}")
    if rule == "sigma":
        mu = float(scores.mean())
        sd = float(scores.std())
        threshold = mu + multiplier * sd
        chosen = () if sd == 0.0 else tuple(int(i) for i in np.flatnonzero(scores > threshold))
        record = {"rule": "sigma", "name": f"mean+{multiplier:g}sd",
                  "multiplier": multiplier, "threshold": threshold}
        return chosen, record
    if rule == "top_q":
        if not 0.0 < q <= 100.0:
            raise ConfigError(f"q must be in (0, 100], got {q}")
        count = math.ceil(scores.size * q / 100.0)
        order = sorted(range(scores.size), key=lambda i: (-scores[i], i))
        chosen = tuple(sorted(order[:count]))
        record = {"rule": "top_q", "name": f"top{q:g}pct", "q": q, "count": count}
        return chosen, record
    raise ConfigError(f"unknown selection rule {rule!r}, expected one of {SELECTION_RULES}")


def map_to_tracts(clusters, tract_ids, tract_names):
    """Sorted unique names of tracts containing at least one selected cluster."""
    tract_ids = np.asarray(tract_ids)
    names = set()
    for c in clusters:
        if not 0 <= c < tract_ids.shape[0]:
            raise InputError(f"cluster {c} is not in the tract map (size {tract_ids.shape[0]})")
        names.add(tract_names[int(tract_ids[c])])
    return sorted(names)


@dataclass
class AttentionReport:
    mean_attention: np.ndarray
    rule: dict
    predictive_clusters: tuple[int, ...]
    predictive_tracts: list[str]
    n_contributing: int
    fusion_raw: tuple[float, float] | None = None
    fusion_normalized: tuple[float, float] | None = None

    def __post_init__(self):
        self.mean_attention = np.asarray(self.mean_attention, dtype=np.float64)
        if np.any((self.mean_attention < 0.0) | (self.mean_attention > 1.0)):
            raise InputError("mean attention must lie in [0, 1] per cluster")
        n = self.mean_attention.shape[0]
        for c in self.predictive_clusters:
            if not 0 <= c < n:
                raise InputError(f"predictive cluster {c} outside [0, {n})")
        if self.n_contributing < 1:
            raise InputError("a report needs at least one contributing subject")

    def to_jsonable(self) -> dict:
        return {
            "mean_attention": [float(v) for v in self.mean_attention],
            "rule": self.rule,
            "predictive_clusters": list(self.predictive_clusters),
            "predictive_tracts": list(self.predictive_tracts),
            "n_contributing": self.n_contributing,
            "fusion_weights": {
                "raw": None if self.fusion_raw is None else list(self.fusion_raw),
                "normalized": None if self.fusion_normalized is None else list(self.fusion_normalized),
            },
        }


def normalize_fusion_pair(raw):
    if raw is None:
        return None
    w1, w2 = float(raw[0]), float(raw[1])
    total = w1 + w2
    if total == 0.0:
        return (w1, w2)
    return (w1 / total, w2 / total)


def build_report(subject_evals, tract_ids, tract_names, rule="sigma",
                 multiplier=DEFAULT_SIGMA_MULTIPLIER, q=DEFAULT_TOP_Q,
                 fusion_raw=None):
    """Assemble an AttentionReport from pooled per-subject evaluations."""
    vectors, flags = [], []
    for e in subject_evals:
        if e.attention is None:
            raise InputError(f"subject {e.subject_id} carries no attention scores")
        vectors.append(e.attention)
        flags.append(e.correct)
    means, contributing = aggregate_attention(vectors, flags)
    chosen, record = select_predictive(means, rule=rule, multiplier=multiplier, q=q)
    tracts = map_to_tracts(chosen, tract_ids, tract_names)
    return AttentionReport(
        mean_attention=means,
        rule=record,
        predictive_clusters=chosen,
        predictive_tracts=tracts,
        n_contributing=contributing,
        fusion_raw=None if fusion_raw is None else (float(fusion_raw[0]), float(fusion_raw[1])),
        fusion_normalized=normalize_fusion_pair(fusion_raw),
    )


def render_text_table(report: AttentionReport) -> str:
    """Fixed-width table of mean attention per cluster, stable for diffing."""
    lines = ["cluster  mean_attention  selected"]
    selected = set(report.predictive_clusters)
    for c, v in enumerate(report.mean_attention):
        mark = "*" if c in selected else ""
        lines.append(f"{c:7d}  {v:14.6f}  {mark:>8}")
    rule_bits = "  ".join(f"{k}={v}" for k, v in sorted(report.rule.items()))
    lines.append(f"rule: {rule_bits}")
    lines.append(f"contributing subjects: {report.n_contributing}")
    if report.fusion_raw is not None:
        r1, r2 = report.fusion_raw
        n1, n2 = report.fusion_normalized
        lines.append(f"fusion weights raw: {r1:.6f} {r2:.6f}")
        lines.append(f"fusion weights normalized: {n1:.6f} {n2:.6f}")
    if report.predictive_tracts:
        lines.append("predictive tracts: " + ", ".join(report.predictive_tracts))
    else:
        lines.append("predictive tracts: none selected")
    return "\n".join(lines) + "\n"


def emit_report(report: AttentionReport, json_path, text_path):
    """Write the JSON report and the text table; byte-stable per input."""
    Path(json_path).write_text(json.dumps(report.to_jsonable(), indent=2, sort_keys=True) + "\n")
    Path(text_path).write_text(render_text_table(report))
    return Path(json_path), Path(text_path)


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
