"""Stratification edges, block assignment, and the block-tree geometry."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aiseval.partition import (
    DegenerateStratificationError,
    PartitionTree,
    assign_blocks,
    build_tree,
    csf_bin_edges,
    grid_block_edges,
    stratify_pool,
    uniform_grid_thresholds,
)
from aiseval.pool import TestPool


def make_pool(raw):
    raw = np.asarray(raw, dtype=np.float64)
    scores = np.stack([1.0 - raw, raw], axis=1)
    return TestPool(item_ids=[f"i{k}" for k in range(len(raw))],
                    scores=scores, raw_scores=raw)


# ---------------------------------------------------------------------------
# Square-root-frequency edges.
# ---------------------------------------------------------------------------

def test_two_cluster_pool_single_edge():
    # 4 items at 0.1 and 4 at 0.9: cumulative sqrt-frequency is {2, 4}, so
    # the K=2 cut lands right after the low cluster.
    scores = np.array([0.1] * 4 + [0.9] * 4)
    edges = csf_bin_edges(scores, K=2)
    assert edges.shape == (1,)
    assert 0.1 < edges[0] < 0.9
    assert assign_blocks(scores, edges).tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_identical_scores_degenerate():
    with pytest.raises(DegenerateStratificationError) as err:
        csf_bin_edges(np.full(10, 0.5), K=2)
    assert "K=1" in str(err.value)  # message reports the achievable count


def test_uniform_scores_near_quartile_edges():
    scores = np.linspace(0.0, 1.0, 2000)
    edges = csf_bin_edges(scores, K=4)
    # within one histogram cell of the exact quartiles
    assert np.allclose(edges, [0.25, 0.50, 0.75], atol=2.0 / 1024)
    sizes = np.bincount(assign_blocks(scores, edges), minlength=4)
    assert sizes.min() > 0.2 * len(scores)


def test_edges_deterministic_and_ascending():
    rng = np.random.default_rng(3)
    scores = rng.beta(2.0, 5.0, size=500)
    e1 = csf_bin_edges(scores, K=8)
    e2 = csf_bin_edges(scores.copy(), K=8)
    assert np.array_equal(e1, e2)
    assert np.all(np.diff(e1) > 0)
    assert e1.shape == (7,)


def test_k_below_two_rejected():
    with pytest.raises(ValueError):
        csf_bin_edges(np.linspace(0, 1, 50), K=1)


# ---------------------------------------------------------------------------
# Block assignment.
# ---------------------------------------------------------------------------

def test_assign_blocks_tie_goes_up():
    edges = np.array([0.5])
    assert assign_blocks(np.array([0.2]), edges)[0] == 0
    assert assign_blocks(np.array([0.7]), edges)[0] == 1
    assert assign_blocks(np.array([0.5]), edges)[0] == 1


def test_assign_blocks_accepts_pool():
    pool = make_pool([0.1, 0.6, 0.9])
    assert assign_blocks(pool, np.array([0.5])).tolist() == [0, 1, 1]


def test_assign_blocks_rejects_descending_edges():
    with pytest.raises(ValueError):
        assign_blocks(np.array([0.3]), np.array([0.7, 0.2]))


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=30),
       st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=5))
@settings(max_examples=80, deadline=None)
def test_assign_blocks_monotone_in_score(scores, edge_list):
    scores = np.asarray(scores)
    edges = np.sort(np.asarray(edge_list))
    blocks = assign_blocks(scores, edges)
    assert blocks.min() >= 0 and blocks.max() <= len(edges)
    order = np.argsort(scores)
    assert np.all(np.diff(blocks[order]) >= 0)


# ---------------------------------------------------------------------------
# Threshold grids for curve measures.
# ---------------------------------------------------------------------------

def test_uniform_grid_spans_scores():
    tau = uniform_grid_thresholds(np.array([0.2, 0.5, 0.8]), L=4)
    assert np.allclose(tau, [0.2, 0.4, 0.6, 0.8])
    with pytest.raises(DegenerateStratificationError):
        uniform_grid_thresholds(np.full(5, 0.3), L=4)


def test_grid_block_edges_merges_bins():
    tau = np.linspace(0, 1, 16)
    edges = grid_block_edges(tau, bins_per_block=4)
    assert np.array_equal(edges, tau[[4, 8, 12]])
    with pytest.raises(ValueError):
        grid_block_edges(np.linspace(0, 1, 10), bins_per_block=4)


# ---------------------------------------------------------------------------
# Tree geometry.
# ---------------------------------------------------------------------------

def test_small_tree_structure():
    # K=4, b=2, D=2: leaves 0..3 grouped {0,1} and {2,3} under two internal
    # nodes; breadth-first ids are root=0, internals 1-2, leaves 3-6.
    tree = build_tree(4, 2, 2, np.array([0, 1, 2, 3]))
    assert tree.n_nodes == 7
    assert tree.leaf_offset == 3
    assert tree.children(0).tolist() == [1, 2]
    assert tree.children(1).tolist() == [3, 4]
    assert tree.children(2).tolist() == [5, 6]
    assert tree.children(5).size == 0
    assert tree.leaf_range(1) == (0, 2)
    assert tree.leaf_range(2) == (2, 4)
    assert tree.leaf_node(2) == 5
    assert tree.leaves_under.tolist() == [4, 2, 2, 1, 1, 1, 1]


def test_flat_tree():
    tree = build_tree(256, 256, 1, np.arange(256) % 256)
    assert tree.n_nodes == 257
    assert tree.level_sizes == [1, 256]
    assert tree.children(0).shape == (256,)


def test_path_nodes_depth3():
    tree = build_tree(8, 2, 3, np.arange(8))
    for block in range(8):
        path = tree.path_nodes(block)
        assert path.shape == (3,)  # one indicator per level below the root
        assert path[-1] == tree.leaf_node(block)
        assert all(tree.path_indicator(int(n), block) for n in path)
        # nodes off the path do not claim the block
        off = [n for n in range(1, tree.n_nodes) if n not in set(path.tolist())]
        assert not any(tree.path_indicator(n, block) for n in off)


def test_path_indicator_equals_leaf_range():
    tree = build_tree(16, 4, 2, np.arange(16))
    for node in range(tree.n_nodes):
        lo, hi = tree.leaf_range(node)
        for block in range(16):
            assert tree.path_indicator(node, block) == (lo <= block < hi)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        build_tree(10, 2, 3, np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        build_tree(4, 2, 2, np.array([0, 5]))


def test_empty_trailing_blocks_allowed():
    # Blocks with no items are legal: they get prior-only treatment upstream.
    tree = build_tree(4, 2, 2, np.array([0, 0, 1]))
    assert tree.block_sizes.tolist() == [2, 1, 0, 0]
    assert tree.block_items(3).size == 0


def test_stratify_pool_end_to_end():
    rng = np.random.default_rng(0)
    pool = make_pool(rng.uniform(size=300))
    tree = stratify_pool(pool, K=4, branching=2, depth=2)
    assert tree.K == 4
    assert tree.block_of.shape == (300,)
    assert tree.block_sizes.sum() == 300
    # single-block degenerate case short-circuits to a depth-0 tree
    flat = stratify_pool(pool, K=1, branching=2, depth=0)
    assert flat.K == 1 and np.all(flat.block_of == 0)


def test_block_of_out_of_range_rejected():
    with pytest.raises(ValueError):
        PartitionTree(branching=2, depth=1, block_of=np.array([0, 2]))
