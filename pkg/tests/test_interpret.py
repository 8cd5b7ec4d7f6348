"""Attention report tests.

The sigma-rule example is frozen from hand statistics on a 32-vector (one
0.9 among 31 values of 0.1): mean 0.125, population sd sqrt(0.62/32),
threshold about 0.3338. Fusion normalization is checked against the pair
(0.57, 0.35) whose normalized form is (0.57, 0.35)/0.92.
"""

import math

import numpy as np
import pytest

from tractgraph.errors import ConfigError, InputError
from tractgraph.interpret import (
    AttentionReport,
    aggregate_attention,
    build_report,
    emit_report,
    load_report,
    map_to_tracts,
    normalize_fusion_pair,
    render_text_table,
    select_predictive,
)
from tractgraph.training import SubjectEval

SIGMA_VECTOR = np.array([0.9] + [0.1] * 31)
SIGMA_MEAN = 0.125
SIGMA_SD = math.sqrt(0.62 / 32.0)
SIGMA_THRESHOLD = SIGMA_MEAN + 1.5 * SIGMA_SD  # ~0.33379


def make_eval(sid, correct, scores, label=0):
    pred = label if correct else 1 - label
    return SubjectEval(sid, label, pred, correct, np.asarray(scores, dtype=np.float64))


# --- aggregation -------------------------------------------------------------


def test_aggregate_two_correct_subjects():
    means, n = aggregate_attention([[0.2, 0.8], [0.4, 0.6]], [True, True])
    assert np.allclose(means, [0.3, 0.7], atol=1e-15)
    assert n == 2


def test_aggregate_excludes_incorrect():
    means, n = aggregate_attention([[0.2, 0.8], [0.9, 0.9]], [True, False])
    assert np.array_equal(means, np.array([0.2, 0.8]))
    assert n == 1


def test_aggregate_all_true_is_plain_mean():
    rng = np.random.default_rng(0)
    vecs = rng.random((7, 5))
    means, n = aggregate_attention(list(vecs), [True] * 7)
    assert np.allclose(means, vecs.mean(axis=0), atol=1e-15)
    assert n == 7


def test_aggregate_order_invariant():
    rng = np.random.default_rng(1)
    vecs = list(rng.random((9, 4)))
    flags = [True, False, True, True, False, True, True, True, False]
    base, _ = aggregate_attention(vecs, flags)
    perm = rng.permutation(9)
    shuffled, _ = aggregate_attention([vecs[i] for i in perm], [flags[i] for i in perm])
    assert np.allclose(shuffled, base, atol=1e-12)


def test_aggregate_zero_correct_is_error():
    with pytest.raises(InputError, match="no correctly predicted"):
        aggregate_attention([[0.5, 0.5]], [False])


def test_aggregate_shape_mismatch():
    with pytest.raises(InputError):
        aggregate_attention([[0.5, 0.5], [0.1, 0.2, 0.3]], [True, True])
    with pytest.raises(InputError):
        aggregate_attention([[0.5]], [True, False])


# --- selection ---------------------------------------------------------------


def test_sigma_rule_hand_example():
    chosen, record = select_predictive(SIGMA_VECTOR)
    assert chosen == (0,)
    assert record["rule"] == "sigma"
    assert record["threshold"] == pytest.approx(SIGMA_THRESHOLD, rel=1e-12)
    assert record["threshold"] == pytest.approx(0.3338, abs=5e-4)


def test_sigma_rule_flat_scores_empty():
    chosen, _ = select_predictive(np.full(10, 0.4))
    assert chosen == ()


def test_sigma_rule_shift_invariant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        scores = rng.random(16)
        base, _ = select_predictive(scores)
        shifted, _ = select_predictive(scores + rng.uniform(-0.5, 0.5))
        assert shifted == base


def test_top_q_all_when_hundred():
    chosen, record = select_predictive(np.array([0.3, 0.1, 0.2]), rule="top_q", q=100.0)
    assert chosen == (0, 1, 2)
    assert record["count"] == 3


def test_top_q_tie_breaks_to_lower_index():
    chosen, record = select_predictive(np.array([0.5, 0.9, 0.5, 0.1]), rule="top_q", q=50.0)
    assert record["count"] == 2
    assert chosen == (0, 1)


def test_top_q_ceil_count():
    chosen, record = select_predictive(np.arange(10, dtype=float), rule="top_q", q=25.0)
    assert record["count"] == 3
    assert chosen == (7, 8, 9)


def test_selection_validation():
    with pytest.raises(ConfigError):
        select_predictive(np.ones(4), rule="top_q", q=0.0)
    with pytest.raises(ConfigError):
        select_predictive(np.ones(4), rule="top_q", q=101.0)
    with pytest.raises(ConfigError):
        select_predictive(np.ones(4), rule="median")
    with pytest.raises(InputError):
        select_predictive(np.ones((2, 2)))


# --- tract mapping -----------------------------------------------------------

TRACT_IDS = np.array([0, 0, 1, 0, 1, 2])
TRACT_NAMES = ["B", "A", "C"]


def test_map_dedup():
    assert map_to_tracts([0, 3], TRACT_IDS, TRACT_NAMES) == ["B"]


def test_map_empty():
    assert map_to_tracts([], TRACT_IDS, TRACT_NAMES) == []


def test_map_sorted_lexicographically():
    assert map_to_tracts([2, 0], TRACT_IDS, TRACT_NAMES) == ["A", "B"]
    assert map_to_tracts([5, 4, 1], TRACT_IDS, TRACT_NAMES) == ["A", "B", "C"]


def test_map_unmapped_cluster_named():
    with pytest.raises(InputError, match="cluster 9"):
        map_to_tracts([9], TRACT_IDS, TRACT_NAMES)


def test_map_union_property():
    rng = np.random.default_rng(5)
    for _ in range(10):
        s1 = list(rng.choice(6, size=rng.integers(0, 4), replace=False))
        s2 = list(rng.choice(6, size=rng.integers(0, 4), replace=False))
        joint = map_to_tracts(sorted(set(s1) | set(s2)), TRACT_IDS, TRACT_NAMES)
        split = sorted(set(map_to_tracts(s1, TRACT_IDS, TRACT_NAMES))
                       | set(map_to_tracts(s2, TRACT_IDS, TRACT_NAMES)))
        assert joint == split


# --- report assembly and emission --------------------------------------------


def test_build_report_end_to_end():
    evals = [
        make_eval("a", True, [0.9, 0.1, 0.1]),
        make_eval("b", True, [0.7, 0.3, 0.1]),
        make_eval("c", False, [0.0, 1.0, 1.0]),
    ]
    report = build_report(evals, np.array([0, 1, 1]), ["left", "right"],
                          rule="top_q", q=33.0, fusion_raw=(0.57, 0.35))
    assert report.n_contributing == 2
    assert np.allclose(report.mean_attention, [0.8, 0.2, 0.1], atol=1e-15)
    assert report.predictive_clusters == (0,)
    assert report.predictive_tracts == ["left"]
    assert report.fusion_normalized[0] == pytest.approx(0.57 / 0.92, rel=1e-12)
    assert report.fusion_normalized[1] == pytest.approx(0.35 / 0.92, rel=1e-12)
    # Four-decimal values match the normalized pair for (0.57, 0.35).
    assert report.fusion_normalized[0] == pytest.approx(0.6196, abs=5e-5)
    assert report.fusion_normalized[1] == pytest.approx(0.3804, abs=5e-5)


def test_build_report_requires_attention():
    evals = [SubjectEval("a", 0, 0, True, None)]
    with pytest.raises(InputError, match="no attention"):
        build_report(evals, TRACT_IDS, TRACT_NAMES)


def test_normalize_fusion_pair_edge_cases():
    assert normalize_fusion_pair(None) is None
    assert normalize_fusion_pair((0.0, 0.0)) == (0.0, 0.0)
    n1, n2 = normalize_fusion_pair((2.0, 2.0))
    assert (n1, n2) == (0.5, 0.5)


def test_report_validation():
    with pytest.raises(InputError):
        AttentionReport(np.array([0.5, 1.2]), {"rule": "sigma"}, (), [], 1)
    with pytest.raises(InputError):
        AttentionReport(np.array([0.5, 0.5]), {"rule": "sigma"}, (4,), [], 1)
    with pytest.raises(InputError):
        AttentionReport(np.array([0.5, 0.5]), {"rule": "sigma"}, (), [], 0)


def test_emit_deterministic_bytes(tmp_path):
    report = AttentionReport(np.array([0.7, 0.2, 0.1]), {"rule": "sigma", "multiplier": 1.5,
                                                         "threshold": 0.6},
                             (0,), ["left"], 4, (0.57, 0.35),
                             normalize_fusion_pair((0.57, 0.35)))
    j1, t1 = emit_report(report, tmp_path / "r1.json", tmp_path / "r1.txt")
    j2, t2 = emit_report(report, tmp_path / "r2.json", tmp_path / "r2.txt")
    assert j1.read_bytes() == j2.read_bytes()
    assert t1.read_bytes() == t2.read_bytes()
    loaded = load_report(j1)
    assert loaded["predictive_clusters"] == [0]
    assert loaded["fusion_weights"]["raw"] == [0.57, 0.35]
    assert loaded["n_contributing"] == 4


def test_emit_empty_selection_marker(tmp_path):
    report = AttentionReport(np.full(3, 0.5), {"rule": "sigma", "multiplier": 1.5,
                                               "threshold": 0.5},
                             (), [], 2)
    _, txt = emit_report(report, tmp_path / "r.json", tmp_path / "r.txt")
    text = txt.read_text()
    assert "none selected" in text
    assert load_report(tmp_path / "r.json")["predictive_tracts"] == []


def test_text_table_fixed_width_rows():
    report = AttentionReport(np.array([0.123456789, 0.5]), {"rule": "sigma",
                                                            "multiplier": 1.5,
                                                            "threshold": 0.9},
                             (), [], 1)
    rows = render_text_table(report).splitlines()
    assert rows[1] == f"{0:7d}  {0.123456789:14.6f}  {'':>8}"
    assert len(rows[1]) == len(rows[2])
