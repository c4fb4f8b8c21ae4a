"""Hierarchical partitions of a pool: score stratification plus a block tree.

Blocks come from cutting the cumulative square-root-frequency curve of the
scores (the classic survey-sampling stratification) or, for threshold-curve
work, from grouping a uniform threshold grid; the K blocks are then attached
left-to-right, breadth-first, to the leaves of a complete b-ary tree of
depth D.  Internal nodes exist so that the label model can share statistical
strength between nearby blocks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pool import TestPool

__all__ = [
    "PartitionTree",
    "DegenerateStratificationError",
    "csf_bin_edges",
    "assign_blocks",
    "build_tree",
    "uniform_grid_thresholds",
    "grid_block_edges",
]


class DegenerateStratificationError(ValueError):
    """Too few distinct score cells to produce the requested block count."""


def csf_bin_edges(scores: np.ndarray, K: int, hist_bins: int = 1024) -> np.ndarray:
    """Cut points between K strata via cumulative square-root frequency.

    Scores are histogrammed into ``hist_bins`` equal-width cells; the running
    sum of sqrt(cell count) is cut at K-1 equally spaced levels, and each cut
    is placed at the right edge of the cell where the level is first reached.
    Deterministic: same scores in, same edges out.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if K < 2:
        raise ValueError("K must be at least 2 for stratification")
    counts, cell_edges = np.histogram(scores, bins=hist_bins)
    nonempty = int((counts > 0).sum())
    if nonempty < K:
        raise DegenerateStratificationError(
            f"only {nonempty} nonempty score cells; at most K={nonempty} strata achievable"
        )
    cum = np.cumsum(np.sqrt(counts))
    total = cum[-1]
    levels = total * np.arange(1, K) / K
    cells = np.searchsorted(cum, levels)  # first cell with cum >= level
    return cell_edges[cells + 1]


def assign_blocks(pool_or_scores, edges: np.ndarray) -> np.ndarray:
    """Map each item to a block: the count of edges at or below its score.

    Scores exactly equal to an edge go to the higher block (half-open bins).
    """
    if isinstance(pool_or_scores, TestPool):
        scores = pool_or_scores.raw_scores
    else:
        scores = np.asarray(pool_or_scores, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.size and not np.all(np.diff(edges) >= 0):
        raise ValueError("edges must be ascending")
    return np.searchsorted(edges, scores, side="right").astype(np.int64)


def uniform_grid_thresholds(raw_scores: np.ndarray, L: int) -> np.ndarray:
    """L uniformly spaced thresholds from the minimum to the maximum score."""
    raw_scores = np.asarray(raw_scores, dtype=np.float64)
    lo, hi = float(raw_scores.min()), float(raw_scores.max())
    if not hi > lo:
        raise DegenerateStratificationError("all scores identical; no threshold grid")
    return np.linspace(lo, hi, L)


def grid_block_edges(thresholds: np.ndarray, bins_per_block: int = 4) -> np.ndarray:
    """Block edges that merge ``bins_per_block`` neighboring grid bins.

    With L thresholds this yields K = L / bins_per_block blocks, keeping the
    grid-to-block ratio fixed as the grid is refined.
    """
    tau = np.asarray(thresholds, dtype=np.float64)
    L = tau.shape[0]
    if L % bins_per_block != 0:
        raise ValueError(f"grid size {L} not divisible by bins_per_block={bins_per_block}")
    return tau[bins_per_block::bins_per_block]


@dataclass
class PartitionTree:
    """Complete b-ary tree of depth D whose K = b^D leaves are the blocks.

    Nodes are numbered breadth-first with the root at 0; the leaves occupy
    the final level in left-to-right order, so leaf j is node
    ``leaf_offset + j`` and the subtree of any node covers a contiguous leaf
    range.  ``block_of`` maps items to leaf indices in [0, K).
    """

    branching: int
    depth: int
    block_of: np.ndarray

    def __post_init__(self):
        b, D = self.branching, self.depth
        if b < 1 or D < 0:
            raise ValueError("branching must be >= 1 and depth >= 0")
        self.K = b**D
        self.level_sizes = [b**l for l in range(D + 1)]
        self.level_offsets = np.concatenate([[0], np.cumsum(self.level_sizes)]).astype(np.int64)
        self.n_nodes = int(self.level_offsets[-1])
        self.leaf_offset = int(self.level_offsets[D])
        depths = np.concatenate([np.full(s, l, dtype=np.int64)
                                 for l, s in enumerate(self.level_sizes)])
        self.node_depth = depths
        # Number of leaves under each node: b^(D - level).
        self.leaves_under = b ** (D - depths)
        self.block_of = np.asarray(self.block_of, dtype=np.int64)
        if self.block_of.size and (self.block_of.min() < 0 or self.block_of.max() >= self.K):
            raise ValueError("block indices out of range for this tree shape")
        self.block_sizes = np.bincount(self.block_of, minlength=self.K).astype(np.int64)

    # -- structure queries --------------------------------------------------
    def node_id(self, level: int, index: int) -> int:
        return int(self.level_offsets[level] + index)

    def children(self, node: int) -> np.ndarray:
        level = int(self.node_depth[node])
        if level == self.depth:
            return np.empty(0, dtype=np.int64)
        idx = node - self.level_offsets[level]
        start = self.level_offsets[level + 1] + idx * self.branching
        return np.arange(start, start + self.branching, dtype=np.int64)

    def leaf_node(self, block: int) -> int:
        return self.leaf_offset + int(block)

    def path_nodes(self, block: int) -> np.ndarray:
        """Node ids on the root-to-leaf path for a block, excluding the root."""
        b = self.branching
        idx = int(block)
        out = np.empty(self.depth, dtype=np.int64)
        for level in range(self.depth, 0, -1):
            out[level - 1] = self.level_offsets[level] + idx
            idx //= b
        return out

    def path_indicator(self, node: int, block: int) -> bool:
        """Whether ``node`` lies on the root-to-leaf path of ``block``."""
        level = int(self.node_depth[node])
        idx = node - self.level_offsets[level]
        span = self.branching ** (self.depth - level)
        return idx * span <= block < (idx + 1) * span

    def leaf_range(self, node: int) -> tuple[int, int]:
        level = int(self.node_depth[node])
        idx = int(node - self.level_offsets[level])
        span = int(self.branching ** (self.depth - level))
        return idx * span, (idx + 1) * span

    def block_items(self, block: int) -> np.ndarray:
        return np.nonzero(self.block_of == block)[0]

    def spec(self) -> dict:
        return {"branching": self.branching, "depth": self.depth}


def build_tree(K: int, branching: int, depth: int, block_of: np.ndarray) -> PartitionTree:
    """Assemble the partition tree, checking the shape constraint b^D = K."""
    if branching**depth != K:
        raise ValueError(f"branching**depth = {branching**depth} != K = {K}")
    block_of = np.asarray(block_of, dtype=np.int64)
    if block_of.size and block_of.max() >= K:
        raise ValueError("block map references blocks beyond K")
    return PartitionTree(branching=branching, depth=depth, block_of=block_of)


def stratify_pool(pool: TestPool, K: int, branching: int, depth: int,
                  hist_bins: int = 1024,
                  edges: Optional[np.ndarray] = None) -> PartitionTree:
    """Convenience: CSF edges (unless given) + block map + tree in one call."""
    if K == 1:
        return build_tree(1, max(branching, 1), 0, np.zeros(pool.size, dtype=np.int64))
    if edges is None:
        edges = csf_bin_edges(pool.raw_scores, K, hist_bins=hist_bins)
    return build_tree(K, branching, depth, assign_blocks(pool, edges))
