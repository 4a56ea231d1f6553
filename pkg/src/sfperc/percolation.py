"""Bernoulli bond percolation on a grown tree and its cluster decomposition.

Edges are cut at their midpoint rather than removed, so every vertex keeps
its degree and each cut edge leaves one half-edge on either side.  Clusters
are indexed by birth rank: the root cluster has rank 0 and the cluster
hanging below the ``r``-th cut edge (in edge-label order) has rank ``r``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .tree_gen import Tree, yule_value


@dataclass(frozen=True)
class PercolationParams:
    c: float
    p: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")

    @classmethod
    def from_n(cls, c: float, n: int) -> "PercolationParams":
        return cls(c, p_of_n(c, n))


def p_of_n(c: float, n: int) -> float:
    """Retention probability ``1 - c / ln n``."""
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    ln_n = math.log(n)
    if ln_n <= c:
        raise ValueError(f"need ln n > c for p(n) in (0, 1); ln {n} = {ln_n:.4g} <= c = {c}")
    return 1.0 - c / ln_n


def edge_uniforms(n: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform per edge, in edge-label order (entry ``j-1`` marks edge ``j``)."""
    return rng.random(n)


def percolate(tree: Tree, p: float, rng: np.random.Generator) -> np.ndarray:
    """Intact-edge marks: ``marks[j-1]`` is True when edge ``j`` survives."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return edge_uniforms(tree.n, rng) <= p


class ClusterRecord(NamedTuple):
    birth_rank: int
    size: int
    half_edges: int
    y_value: float
    generation: int
    root_vertex: int


def cluster_roots(parent: np.ndarray, marks: np.ndarray) -> np.ndarray:
    """Topmost vertex of the cluster of every vertex.

    ``marks`` may carry leading batch dimensions; the last axis indexes
    edges ``1..n``.  Pointer jumping along intact parent links is the
    vectorised form of union-find with full path compression on a forest
    whose links always point to smaller labels.
    """
    marks = np.asarray(marks, dtype=bool)
    n = parent.size - 1
    own = np.arange(n + 1)
    ptr = np.broadcast_to(own, marks.shape[:-1] + (n + 1,)).copy()
    ptr[..., 1:] = np.where(marks, parent[1:], own[1:])
    while True:
        nxt = np.take_along_axis(ptr, ptr, axis=-1)
        if np.array_equal(nxt, ptr):
            return ptr
        ptr = nxt


@dataclass(eq=False)
class ClusterDecomposition:
    """Clusters of a percolated tree, one row per birth rank.

    Attributes
    ----------
    cluster_of : int array, length n + 1
        Birth rank of the cluster holding each vertex.
    size, half_edges, y_value, generation, root_vertex : arrays
        Per-cluster columns, indexed by birth rank.
    n, beta : tree size and attachment parameter
    """

    cluster_of: np.ndarray
    size: np.ndarray
    half_edges: np.ndarray
    y_value: np.ndarray
    generation: np.ndarray
    root_vertex: np.ndarray
    n: int
    beta: float

    @property
    def n_clusters(self) -> int:
        return self.size.size

    @property
    def n_clusters_nonroot(self) -> int:
        return self.size.size - 1

    @property
    def n_generation1(self) -> int:
        return int(np.count_nonzero(self.generation == 1))

    @property
    def delta(self) -> int:
        """Number of clusters at generation 2 or more."""
        return self.n_clusters_nonroot - self.n_generation1

    @property
    def birth_rank(self) -> np.ndarray:
        return np.arange(self.size.size)

    def __len__(self):
        return self.size.size

    def record(self, r: int) -> ClusterRecord:
        return ClusterRecord(r, int(self.size[r]), int(self.half_edges[r]),
                             float(self.y_value[r]), int(self.generation[r]),
                             int(self.root_vertex[r]))

    @property
    def clusters(self) -> list[ClusterRecord]:
        return [self.record(r) for r in range(self.size.size)]

    def delta_until(self, last_vertex: int) -> int:
        """Generation >= 2 clusters whose root vertex is at most ``last_vertex``.

        The tree restricted to ``0..last_vertex`` is the tree at an earlier
        time, and generations there coincide with generations here.
        """
        born = self.root_vertex <= last_vertex
        return int(np.count_nonzero(born & (self.generation >= 2)))

    def generation1_sizes(self) -> np.ndarray:
        """Sizes of generation-1 clusters in birth order."""
        return self.size[self.generation == 1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            write_cluster_rows(fh, self)


def write_cluster_rows(fh, decomp: ClusterDecomposition) -> None:
    w = csv.writer(fh, lineterminator="\r\n")
    w.writerow(["cluster_index", "birth_rank", "generation", "size",
                "half_edges", "y_value", "root_vertex"])
    for r in range(decomp.n_clusters):
        w.writerow([r, r, int(decomp.generation[r]), int(decomp.size[r]),
                    int(decomp.half_edges[r]), f"{float(decomp.y_value[r]):.17g}",
                    int(decomp.root_vertex[r])])


def _depth(up: np.ndarray) -> np.ndarray:
    # number of links from each node to node 0 in a forest with up[0] == 0
    dist = (np.arange(up.size) != 0).astype(np.int64)
    anc = up.copy()
    while np.any(anc != 0):
        dist = dist + np.where(anc != 0, dist[anc], 0)
        anc = anc[anc]
    return dist


def decompose(tree: Tree, marks) -> ClusterDecomposition:
    """Split ``tree`` into percolation clusters given the intact-edge marks."""
    marks = np.asarray(marks, dtype=bool)
    n = tree.n
    if marks.shape != (n,):
        raise ValueError(f"expected {n} edge marks, got shape {marks.shape}")
    parent, beta = tree.parent, tree.beta
    cut = ~marks
    rank = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(cut, out=rank[1:])
    roots = cluster_roots(parent, marks)
    cluster_of = rank[roots]
    k = int(rank[-1]) + 1

    size = np.bincount(cluster_of, minlength=k)
    cut_edges = np.flatnonzero(cut) + 1
    half = np.bincount(cluster_of[cut_edges], minlength=k)
    half += np.bincount(cluster_of[parent[cut_edges]], minlength=k)
    root_vertex = np.concatenate(([0], cut_edges))
    up = np.zeros(k, dtype=np.int64)
    up[1:] = cluster_of[parent[cut_edges]]
    generation = _depth(up)
    y_value = 2 * (size - 1) + half + beta * size
    return ClusterDecomposition(cluster_of, size, half, y_value, generation,
                                root_vertex, n, beta)


def sorted_cluster_sizes(decomp: ClusterDecomposition, nonroot: bool = False,
                         return_ranks: bool = False):
    """Cluster sizes in decreasing order, ties broken by birth rank.

    With ``nonroot=True`` the root cluster is left out.  With
    ``return_ranks=True`` the matching birth ranks are returned as well.
    """
    offset = 1 if nonroot else 0
    sizes = decomp.size[offset:]
    order = np.argsort(-sizes, kind="stable")
    if return_ranks:
        return sizes[order], order + offset
    return sizes[order]


def largest_nonroot(decomp: ClusterDecomposition, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Sizes and birth ranks of the ``k`` largest non-root clusters (padded with 0 / -1)."""
    sizes = decomp.size[1:]
    order = np.argsort(-sizes, kind="stable")[:k]
    out_s = np.zeros(k, dtype=np.int64)
    out_r = np.full(k, -1, dtype=np.int64)
    out_s[: order.size] = sizes[order]
    out_r[: order.size] = order + 1
    return out_s, out_r


def check_conservation(decomp: ClusterDecomposition) -> None:
    """Raise AssertionError unless the three sum identities hold."""
    n, beta = decomp.n, decomp.beta
    assert int(decomp.size.sum()) == n + 1
    assert int((2 * (decomp.size - 1) + decomp.half_edges).sum()) == 2 * n
    total = float(decomp.y_value.sum())
    assert math.isclose(total, yule_value(n + 1, beta), rel_tol=1e-12, abs_tol=1e-9)


def write_cluster_csv(path, decomp: ClusterDecomposition) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    decomp.write_csv(path)
