"""Feature assembly and normalization tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tractgraph.errors import InputError
from tractgraph.features import (
    NormalizationParams,
    SubjectFeatures,
    apply_minmax,
    assemble_subject,
    compute_pos,
    fit_minmax,
    load_cohort_csv,
    save_cohort_csv,
)


def scan_minmax_oracle(subjects):
    vals = [[], [], []]
    for s in subjects:
        for i in range(s.n_clusters):
            if s.present_mask[i]:
                for c in range(3):
                    vals[c].append(float(s.features[i, c]))
    return [min(v) for v in vals], [max(v) for v in vals]


def random_subject(rng, sid, n=6, drop=0):
    cids = list(range(n))
    if drop:
        keep = sorted(rng.choice(n, size=n - drop, replace=False).tolist())
        cids = keep
    records = [(c, float(rng.uniform(0.1, 0.9)), float(rng.uniform(1e-4, 3e-3)), int(rng.integers(1, 200))) for c in cids]
    return assemble_subject(records, n, sid, int(rng.integers(0, 2)))


# --- PoS ---------------------------------------------------------------------


def test_pos_simple_fractions():
    assert compute_pos([10, 30, 60]).tolist() == [0.1, 0.3, 0.6]


def test_pos_degenerate_mass():
    assert compute_pos([5, 0, 0]).tolist() == [1.0, 0.0, 0.0]


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=30).filter(lambda v: sum(v) > 0))
@settings(max_examples=80, deadline=None)
def test_pos_sums_to_one(counts):
    assert compute_pos(counts).sum() == pytest.approx(1.0, abs=1e-12)


def test_pos_rejects_empty_and_negative():
    with pytest.raises(InputError):
        compute_pos([0, 0, 0], subject_id="s1")
    with pytest.raises(InputError):
        compute_pos([5, -1], subject_id="s1")


# --- assembly ----------------------------------------------------------------


def test_assemble_zero_fills_missing_cluster():
    s = assemble_subject([(0, 0.5, 1e-3, 10), (2, 0.6, 2e-3, 30)], 3, "sub0", 1)
    assert s.features[1].tolist() == [0.0, 0.0, 0.0]
    assert s.present_mask.tolist() == [True, False, True]
    assert s.features[0, 2] == 0.25 and s.features[2, 2] == 0.75


def test_assemble_full_mask():
    s = assemble_subject([(i, 0.5, 1e-3, 5) for i in range(4)], 4, "sub1", 0)
    assert s.present_mask.all()


def test_assemble_order_invariance():
    records = [(2, 0.6, 2e-3, 30), (0, 0.5, 1e-3, 10), (1, 0.4, 1.5e-3, 60)]
    a = assemble_subject(records, 3, "s", 1)
    b = assemble_subject(sorted(records), 3, "s", 1)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.present_mask, b.present_mask)


def test_assemble_pos_over_present_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = random_subject(rng, "x", n=8, drop=int(rng.integers(0, 4)))
        assert s.features[s.present_mask, 2].sum() == pytest.approx(1.0, abs=1e-9)


def test_assemble_rejects_duplicates_and_range():
    with pytest.raises(InputError, match="cluster 1"):
        assemble_subject([(1, 0.5, 1e-3, 10), (1, 0.6, 1e-3, 10)], 3, "dup", 0)
    with pytest.raises(InputError):
        assemble_subject([(3, 0.5, 1e-3, 10)], 3, "oob", 0)


def test_subject_validation():
    with pytest.raises(InputError):
        SubjectFeatures("s", 2, np.zeros((3, 3)), np.zeros(3, dtype=bool))
    with pytest.raises(InputError):
        SubjectFeatures("s", 0, np.ones((3, 3)), np.array([True, False, True]))


# --- normalization -----------------------------------------------------------


def test_fit_single_subject_channel_range():
    s = assemble_subject([(0, 0.2, 1e-3, 1), (1, 0.4, 1e-3, 1), (2, 0.6, 1e-3, 1)], 3, "s", 0)
    params = fit_minmax([s])
    assert params.mins[0] == 0.2 and params.maxs[0] == 0.6


def test_fit_constant_channel_is_degenerate():
    s = assemble_subject([(0, 0.5, 1e-3, 1), (1, 0.5, 1e-3, 3)], 2, "s", 0)
    params = fit_minmax([s])
    assert params.degenerate.tolist() == [True, True, False]


def test_fit_matches_brute_force_scan():
    rng = np.random.default_rng(1)
    subjects = [random_subject(rng, f"s{i}", n=7, drop=int(rng.integers(0, 3))) for i in range(12)]
    params = fit_minmax(subjects)
    mins, maxs = scan_minmax_oracle(subjects)
    assert params.mins.tolist() == mins
    assert params.maxs.tolist() == maxs


def test_fit_rejects_empty_cohort():
    with pytest.raises(InputError):
        fit_minmax([])


def test_apply_linear_map_and_clamp():
    params = NormalizationParams([2.0, 0.0, 0.0], [6.0, 1.0, 1.0])
    s = SubjectFeatures("s", 0, [[2.0, 0.5, 0.2], [4.0, 0.5, 0.3], [6.0, 0.5, 0.5]], [True] * 3)
    out = apply_minmax(s, params)
    assert out.features[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert out.normalized
    low = SubjectFeatures("lo", 0, [[1.0, -0.5, 2.0], [0.0, 0.0, 0.0]], [True, False])
    outl = apply_minmax(low, params)
    assert outl.features[0].tolist() == [0.0, 0.0, 1.0]


def test_apply_keeps_absent_rows_zero():
    params = NormalizationParams([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0])
    s = SubjectFeatures("s", 1, [[0.5, 0.5, 1.0], [0.0, 0.0, 0.0]], [True, False])
    out = apply_minmax(s, params)
    # Without clamping/zeroing, an absent row would map to (0 - -1)/2 = 0.5.
    assert out.features[1].tolist() == [0.0, 0.0, 0.0]
    assert not out.present_mask[1]


def test_apply_degenerate_channel_maps_to_zero():
    params = NormalizationParams([0.5, 1e-3, 0.0], [0.5, 1e-3, 1.0])
    s = SubjectFeatures("s", 0, [[0.5, 1e-3, 1.0]], [True])
    out = apply_minmax(s, params)
    assert out.features[0].tolist() == [0.0, 0.0, 1.0]


def test_roundtrip_present_values_in_unit_interval():
    rng = np.random.default_rng(2)
    subjects = [random_subject(rng, f"s{i}", n=9, drop=int(rng.integers(0, 5))) for i in range(10)]
    params = fit_minmax(subjects)
    for s in subjects:
        out = apply_minmax(s, params)
        present = out.features[out.present_mask]
        assert np.all(present >= 0.0) and np.all(present <= 1.0)


def test_absent_and_minimum_distinguished_only_by_mask():
    params = NormalizationParams([0.2, 1e-3, 0.1], [0.8, 2e-3, 0.9])
    s = SubjectFeatures("s", 0, [[0.2, 1e-3, 0.1], [0.0, 0.0, 0.0]], [True, False])
    out = apply_minmax(s, params)
    # The present row sits at the channel minima and lands on zero, the same
    # numbers as the absent row; only the mask tells them apart.
    assert np.array_equal(out.features[0], out.features[1])
    assert out.present_mask.tolist() == [True, False]


def test_fit_refuses_normalized_input():
    s = SubjectFeatures("s", 0, [[0.5, 0.5, 0.5]], [True], normalized=True)
    with pytest.raises(InputError):
        fit_minmax([s])


def test_params_serialization_roundtrip():
    p = NormalizationParams([0.1, 1e-4, 0.0], [0.9, 3e-3, 0.8])
    back = NormalizationParams.from_jsonable(p.to_jsonable())
    assert np.array_equal(back.mins, p.mins) and np.array_equal(back.maxs, p.maxs)
    with pytest.raises(InputError):
        NormalizationParams.from_jsonable({"mins": [0, 0, 0]})
    with pytest.raises(InputError):
        NormalizationParams([0.0, 0.0, 0.0], [-1.0, 0.0, 0.0])


# --- cohort CSV --------------------------------------------------------------


def test_cohort_roundtrip(tmp_path):
    rows = [
        ("subA", 1, 0, 0.5, 1e-3, 10),
        ("subA", 1, 2, 0.62, 2.25e-3, 30),
        ("subB", 0, 0, 0.31, 1.5e-3, 7),
        ("subB", 0, 1, 0.44, 1.1e-3, 13),
        ("subB", 0, 2, 0.52, 0.9e-3, 20),
    ]
    path = tmp_path / "cohort.csv"
    save_cohort_csv(rows, path)
    subjects = load_cohort_csv(path, n_clusters=3)
    assert [s.subject_id for s in subjects] == ["subA", "subB"]
    a = subjects[0]
    assert a.label == 1
    assert a.present_mask.tolist() == [True, False, True]
    assert a.features[0].tolist() == [0.5, 1e-3, 0.25]
    assert subjects[1].present_mask.all()


def test_cohort_rejects_bad_files(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("wrong,header\n")
    with pytest.raises(InputError):
        load_cohort_csv(path, 3)
    path.write_text("subject_id,label,cluster_id,fa,md,nos\n")
    with pytest.raises(InputError):
        load_cohort_csv(path, 3)
    path.write_text("subject_id,label,cluster_id,fa,md,nos\ns1,1,0,0.5,1e-3,10\ns1,0,1,0.5,1e-3,10\n")
    with pytest.raises(InputError):
        load_cohort_csv(path, 3)
    path.write_text("subject_id,label,cluster_id,fa,md,nos\ns1,1,0,bad,1e-3,10\n")
    with pytest.raises(InputError):
        load_cohort_csv(path, 3)
    with pytest.raises(InputError):
        load_cohort_csv(tmp_path / "missing.csv", 3)
