"""Graph construction tests.

WMG rows are checked against a full-sort oracle written with plain sorted()
over (distance, index) tuples; the subset relation tying CMG to its parents
is exercised on randomized inputs.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tractgraph.errors import ConfigError, InputError
from tractgraph.graphs import (
    ClusterGraph,
    RegionOverlapTable,
    build_cmg,
    build_gmg,
    build_wmg,
    load_graph,
    load_overlap_csv,
    save_graph,
    save_overlap_csv,
    top_regions,
)


def wmg_row_oracle(row, i, k):
    order = sorted((d, j) for j, d in enumerate(row) if j != i)
    return [j for _, j in order[:k]]


def random_distance_matrix(rng, n, ties=False):
    base = rng.uniform(1.0, 50.0, size=(n, n))
    if ties:
        base = np.round(base)
    d = np.triu(base, 1)
    d = d + d.T
    return d


def random_table(rng, n):
    overlaps = []
    for _ in range(n):
        n_regions = int(rng.integers(0, 4))
        regions = rng.choice(20, size=n_regions, replace=False)
        percents = rng.uniform(0, 100 / max(n_regions, 1), size=n_regions)
        overlaps.append(list(zip(regions.tolist(), percents.tolist())))
    return RegionOverlapTable(overlaps)


# --- WMG ---------------------------------------------------------------------


def test_wmg_sorted_prefix():
    d = np.array([
        [0.0, 1.0, 2.0, 3.0],
        [1.0, 0.0, 4.0, 5.0],
        [2.0, 4.0, 0.0, 6.0],
        [3.0, 5.0, 6.0, 0.0],
    ])
    g = build_wmg(d, k=2)
    assert g.neighbors[0] == [1, 2]
    assert g.kind == "WMG" and g.k == 2 and g.metric_tag == "mdf"


def test_wmg_index_tie_break():
    d = np.full((4, 4), 7.0)
    np.fill_diagonal(d, 0.0)
    g = build_wmg(d, k=2)
    assert g.neighbors == [[1, 2], [0, 2], [0, 1], [0, 1]]


@given(st.integers(0, 5000), st.booleans())
@settings(max_examples=80, deadline=None)
def test_wmg_matches_full_sort_oracle(seed, ties):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    k = int(rng.integers(1, n))
    d = random_distance_matrix(rng, n, ties=ties)
    g = build_wmg(d, k)
    for i in range(n):
        assert g.neighbors[i] == wmg_row_oracle(d[i], i, k)
        got = d[i][g.neighbors[i]]
        assert np.all(np.diff(got) >= 0.0)
        excluded = [j for j in range(n) if j != i and j not in g.neighbors[i]]
        if excluded and k:
            assert d[i][excluded].min() >= got[-1]


def test_wmg_rejects_bad_k():
    d = random_distance_matrix(np.random.default_rng(0), 4)
    with pytest.raises(ConfigError):
        build_wmg(d, 4)
    with pytest.raises(ConfigError):
        build_wmg(d, 0)


def test_wmg_rejects_bad_matrix():
    with pytest.raises(InputError):
        build_wmg(np.zeros((3, 2)), 1)
    d = random_distance_matrix(np.random.default_rng(1), 3)
    d[0, 1] += 1.0  # break symmetry
    with pytest.raises(InputError):
        build_wmg(d, 1)
    d = random_distance_matrix(np.random.default_rng(1), 3)
    d[1, 1] = 0.5
    with pytest.raises(InputError):
        build_wmg(d, 1)


def test_wmg_invariant_under_monotone_rescaling():
    rng = np.random.default_rng(21)
    d = random_distance_matrix(rng, 8)
    base = build_wmg(d, 3).neighbors
    assert build_wmg(2.5 * d, 3).neighbors == base
    assert build_wmg(d ** 1.5, 3).neighbors == base


# --- top regions and GMG -----------------------------------------------------


def test_top_regions_plain():
    assert top_regions([(1, 40.0), (2, 35.0), (3, 25.0)]) == {1, 2}


def test_top_regions_tie_prefers_lower_id():
    assert top_regions([(5, 50.0), (2, 25.0), (9, 25.0)]) == {5, 2}


def test_top_regions_two_entries_forced():
    assert top_regions([(8, 1.0), (3, 99.0)]) == {8, 3}
    with pytest.raises(InputError):
        top_regions([(8, 1.0)])


def test_gmg_set_logic():
    table = RegionOverlapTable([
        [(1, 60.0), (2, 40.0)],
        [(1, 50.0), (2, 30.0), (7, 20.0)],
        [(1, 60.0), (3, 40.0)],
    ])
    g = build_gmg(table)
    assert g.neighbors == [[1], [0], []]
    assert g.kind == "GMG" and g.k is None


def test_gmg_shared_pair_is_complete():
    table = RegionOverlapTable([[(4, 60.0), (9, 40.0)]] * 4)
    g = build_gmg(table)
    assert g.neighbors == [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]


def test_gmg_disjoint_pairs_all_isolated():
    table = RegionOverlapTable([
        [(0, 60.0), (1, 40.0)],
        [(2, 60.0), (3, 40.0)],
        [(4, 60.0), (5, 40.0)],
    ])
    assert build_gmg(table).neighbors == [[], [], []]


def test_gmg_padding_never_matches_across_clusters():
    # Two clusters that each touch only region 5: the padded sentinel differs
    # per cluster, so their top pairs are not equal.
    table = RegionOverlapTable([[(5, 80.0)], [(5, 90.0)]])
    assert build_gmg(table).neighbors == [[], []]


@given(st.integers(0, 5000))
@settings(max_examples=60, deadline=None)
def test_gmg_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    g = build_gmg(random_table(rng, int(rng.integers(2, 10))))
    for i, row in enumerate(g.neighbors):
        assert i not in row
        for j in row:
            assert i in g.neighbors[j]


# --- CMG ---------------------------------------------------------------------


def test_cmg_intersection():
    wmg = ClusterGraph("WMG", 4, [[1, 2], [0, 2], [0, 1], [0, 1]], k=2, metric_tag="mdf")
    gmg = ClusterGraph("GMG", 4, [[2, 3], [3], [0], [0, 1]])
    cmg = build_cmg(wmg, gmg)
    assert cmg.neighbors[0] == [2]
    assert cmg.kind == "CMG" and cmg.k == 2 and cmg.metric_tag == "mdf"


def test_cmg_isolated_gmg_node_stays_isolated():
    wmg = ClusterGraph("WMG", 3, [[1, 2], [0, 2], [0, 1]], k=2)
    gmg = ClusterGraph("GMG", 3, [[], [2], [1]])
    assert build_cmg(wmg, gmg).neighbors[0] == []


def test_cmg_complete_gmg_reproduces_wmg():
    wmg = ClusterGraph("WMG", 3, [[2, 1], [0, 2], [1, 0]], k=2)
    gmg = ClusterGraph("GMG", 3, [[1, 2], [0, 2], [0, 1]])
    assert build_cmg(wmg, gmg).neighbors == wmg.neighbors


def test_cmg_rejects_mismatches():
    wmg = ClusterGraph("WMG", 3, [[1], [0], [0]], k=1)
    gmg = ClusterGraph("GMG", 4, [[], [], [], []])
    with pytest.raises(ConfigError):
        build_cmg(wmg, gmg)
    with pytest.raises(ConfigError):
        build_cmg(gmg, gmg)


@given(st.integers(0, 5000))
@settings(max_examples=60, deadline=None)
def test_cmg_subset_and_degree_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    k = int(rng.integers(1, n))
    wmg = build_wmg(random_distance_matrix(rng, n), k)
    gmg = build_gmg(random_table(rng, n))
    cmg = build_cmg(wmg, gmg)
    for i in range(n):
        assert i not in cmg.neighbors[i]
        assert set(cmg.neighbors[i]) <= set(wmg.neighbors[i])
        assert set(cmg.neighbors[i]) <= set(gmg.neighbors[i])
        assert len(cmg.neighbors[i]) <= k
        assert len(wmg.neighbors[i]) == min(k, n - 1)


# --- validation and I/O ------------------------------------------------------


def test_table_validation_errors():
    with pytest.raises(InputError):
        RegionOverlapTable([[(3, 40.0), (3, 10.0)]])
    with pytest.raises(InputError):
        RegionOverlapTable([[(3, 140.0)]])
    with pytest.raises(InputError):
        RegionOverlapTable([[(3, 60.0), (4, 60.0)]])
    with pytest.raises(InputError):
        RegionOverlapTable([[(-2, 10.0)]])
    with pytest.raises(InputError):
        RegionOverlapTable([])


def test_table_pads_sparse_clusters():
    table = RegionOverlapTable([[], [(7, 30.0)]])
    assert all(len(pairs) >= 2 for pairs in table.overlaps)
    assert table.overlaps[1][0] == (7, 30.0)
    padded = [r for r, _ in table.overlaps[1] if r < 0]
    assert len(padded) == 1


def test_graph_validation_errors():
    with pytest.raises(InputError):
        ClusterGraph("WMG", 3, [[0], [2], [0]], k=1)  # self loop
    with pytest.raises(InputError):
        ClusterGraph("GMG", 3, [[5], [], []])
    with pytest.raises(InputError):
        ClusterGraph("WMG", 3, [[1], [0, 2], [0]], k=1)  # degree break
    with pytest.raises(InputError):
        ClusterGraph("XMG", 3, [[], [], []])
    with pytest.raises(InputError):
        ClusterGraph("GMG", 3, [[1, 1], [0], []])


def test_graph_json_roundtrip(tmp_path):
    rng = np.random.default_rng(31)
    g = build_wmg(random_distance_matrix(rng, 6), 2, metric_tag="mcp")
    path = tmp_path / "wmg.json"
    save_graph(g, path)
    assert load_graph(path) == g
    gmg = build_gmg(random_table(rng, 6))
    save_graph(gmg, path)
    assert load_graph(path) == gmg


def test_graph_load_rejects_malformed(tmp_path):
    path = tmp_path / "g.json"
    path.write_text("{\"kind\": \"WMG\"}")
    with pytest.raises(InputError):
        load_graph(path)


def test_overlap_csv_roundtrip(tmp_path):
    table = RegionOverlapTable([
        [(1, 60.25), (2, 39.75)],
        [(7, 30.0)],
        [],
    ])
    path = tmp_path / "overlap.csv"
    save_overlap_csv(table, path)
    back = load_overlap_csv(path, n_clusters=3)

    # Sentinel rows are not written; reloading re-pads them per cluster.
    def real_entries(t):
        return [[p for p in pairs if p[0] >= 0] for pairs in t.overlaps]

    assert real_entries(back) == real_entries(table)
    assert back.overlaps[0] == table.overlaps[0]


def test_overlap_csv_rejects_malformed(tmp_path):
    path = tmp_path / "o.csv"
    path.write_text("cluster_id,region_id,percent\n0,1\n")
    with pytest.raises(InputError):
        load_overlap_csv(path)
    path.write_text("cluster_id,region_id,percent\n")
    with pytest.raises(InputError):
        load_overlap_csv(path)
