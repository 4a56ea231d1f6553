"""Independent reference computations used by several test modules."""

import itertools
from fractions import Fraction

import numpy as np

from sfperc.percolation import decompose
from sfperc.tree_gen import Tree


def all_trees(n):
    """Every recursive tree on {0..n}: parent[j] ranges over 0..j-1."""
    for tail in itertools.product(*[range(j) for j in range(2, n + 1)]):
        yield np.array([-1, 0, *tail], dtype=np.int64)


def all_marks(n):
    return np.array(list(itertools.product([False, True], repeat=n)), dtype=bool)


def components_by_search(parent, marks):
    """Smallest vertex label in each vertex's component, by label propagation.

    ``marks`` may hold one mark vector per row; edges are swept one at a
    time until no label changes.
    """
    marks = np.atleast_2d(np.asarray(marks, dtype=bool))
    n = parent.size - 1
    label = np.tile(np.arange(n + 1), (marks.shape[0], 1))
    changed = True
    while changed:
        changed = False
        for j in range(1, n + 1):
            a, b = label[:, j], label[:, parent[j]]
            lo = np.where(marks[:, j - 1], np.minimum(a, b), a)
            lo_b = np.where(marks[:, j - 1], np.minimum(a, b), b)
            if not (np.array_equal(lo, a) and np.array_equal(lo_b, b)):
                changed = True
                label[:, j], label[:, parent[j]] = lo, lo_b
    return label


FIELDS = ("cluster_of", "size", "half_edges", "generation", "y_value", "root_vertex")


def brute_force_clusters(parent, marks, beta):
    """Cluster columns for every mark vector, as ``(M, n + 1)`` arrays padded with -1.

    Tops are vertex 0 and the lower endpoints of cut edges, ranked by label;
    a vertex's generation is its parent's plus one per cut edge crossed.
    """
    marks = np.atleast_2d(marks)
    m, n = marks.shape
    comp = components_by_search(parent, marks)
    is_top = np.ones((m, n + 1), dtype=bool)
    is_top[:, 1:] = ~marks
    rank_at = np.cumsum(is_top, axis=1) - 1
    cluster_of = np.take_along_axis(rank_at, comp, axis=1)
    vgen = np.zeros((m, n + 1), dtype=np.int64)
    for v in range(1, n + 1):
        vgen[:, v] = vgen[:, parent[v]] + is_top[:, v]
    rows = np.arange(m)
    size = np.full((m, n + 1), -1)
    half = np.full((m, n + 1), -1)
    gen = np.full((m, n + 1), -1)
    root = np.full((m, n + 1), -1)
    for r in range(n + 1):
        exists = rank_at[:, -1] >= r
        size[exists, r] = (cluster_of[exists] == r).sum(axis=1)
        half[exists, r] = 0
    for v in range(n + 1):
        top = is_top[:, v]
        gen[rows[top], rank_at[top, v]] = vgen[top, v]
        root[rows[top], rank_at[top, v]] = v
    for j in range(1, n + 1):
        cut = ~marks[:, j - 1]
        np.add.at(half, (rows[cut], cluster_of[cut, j]), 1)
        np.add.at(half, (rows[cut], cluster_of[cut, parent[j]]), 1)
    y = np.where(size >= 0, 2 * (size - 1) + half + beta * size, -1.0)
    return {"cluster_of": cluster_of, "size": size, "half_edges": half,
            "generation": gen, "y_value": y, "root_vertex": root}


def decompose_blocks(parent, marks, beta):
    """Run ``decompose`` once on a tree holding one copy of ``parent`` per mark vector.

    Copy ``b`` occupies labels ``1 + b(n+1) .. (b+1)(n+1)`` and hangs from an
    extra vertex 0 by a cut edge.  Its clusters are mapped back to what a
    standalone call would return: ranks and vertex labels shifted, generation
    lowered by one, and the hanging edge's half-edge removed from its top
    cluster.  Output layout matches :func:`brute_force_clusters`.
    """
    marks = np.atleast_2d(marks)
    m, n = marks.shape
    w = n + 1
    offs = 1 + w * np.arange(m)
    big = np.empty(1 + m * w, dtype=np.int64)
    big[0] = -1
    big[1:] = (np.concatenate(([-1], parent[1:]))[None, :] + offs[:, None]).ravel()
    big[offs] = 0
    big_marks = np.ones((m, w), dtype=bool)
    big_marks[:, 0] = False
    big_marks[:, 1:] = marks
    d = decompose(Tree(big, beta), big_marks.ravel())
    r0 = d.cluster_of[offs]
    k = 1 + (~marks).sum(axis=1)
    idx = r0[:, None] + np.arange(w)[None, :]
    valid = np.arange(w)[None, :] < k[:, None]
    idx = np.where(valid, idx, 0)

    def take(col, shift=0):
        return np.where(valid, col[idx] - shift, -1)

    half = take(d.half_edges)
    half[:, 0] -= 1
    y = np.where(valid, d.y_value[idx], -1.0)
    y[:, 0] -= 1
    verts = offs[:, None] + np.arange(w)[None, :]
    return {"cluster_of": d.cluster_of[verts] - r0[:, None], "size": take(d.size),
            "half_edges": half, "generation": take(d.generation, 1), "y_value": y,
            "root_vertex": np.where(valid, d.root_vertex[idx] - offs[:, None], -1)}


def exhaustive_mismatches(n, beta=0.5):
    """Mark configurations, over all trees on {0..n}, where decompose disagrees."""
    marks = all_marks(n)
    bad = 0
    for parent in all_trees(n):
        got = decompose_blocks(parent, marks, beta)
        want = brute_force_clusters(parent, marks, beta)
        wrong = np.zeros(marks.shape[0], dtype=bool)
        for f in FIELDS:
            wrong |= np.any(got[f] != want[f], axis=1)
        bad += int(wrong.sum())
    return bad


def chain_law(n, beta):
    """Exact law of the parent array for trees on {0..n} by enumeration."""
    law = {(0,): Fraction(1)}
    b = Fraction(beta)
    for m in range(1, n):
        nxt = {}
        for par, pr in law.items():
            deg = [0] * (m + 1)
            for j, pj in enumerate(par, start=1):
                deg[j] += 1
                deg[pj] += 1
            tot = 2 * m + b * (m + 1)
            for i in range(m + 1):
                key = par + (i,)
                nxt[key] = nxt.get(key, 0) + pr * (deg[i] + b) / tot
        law = nxt
    return law
