"""Scale-free random trees grown by preferential attachment.

A tree on ``{0, ..., n}`` is stored as a parent array: ``parent[j]`` is the
vertex that ``j`` attached to when it arrived, and ``parent[0] == -1``.
The edge joining ``j`` to its parent is called edge ``j``.

Sampling the attachment vertex
------------------------------
When the tree has ``m`` edges the new vertex picks ``i`` with weight
``d(i) + beta``.  Writing ``d(i) = children(i) + [i >= 1]`` and using that
vertex 0 always keeps its child 1, the weights split into

* ``children(i)`` for ``i >= 1`` and ``children(0) - 1`` for the root:
  total ``m - 1``, sampled by taking the parent of a uniform edge among
  ``2..m``;
* ``1 + beta`` for every vertex: total ``(1 + beta)(m + 1)``, sampled
  uniformly.

Both parts are nonnegative for every ``beta > -1``, so no rejection step
is needed.  A "copy the parent of edge j" choice only refers to earlier
labels, which lets the whole array be resolved with pointer jumping.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

BETA_FLOOR = -1.0 + 1e-9


@dataclass(frozen=True)
class GrowthParams:
    beta: float
    n: int

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta <= BETA_FLOOR:
            raise ValueError(f"beta must be a finite real > -1 (+1e-9), got {self.beta}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n}")


class Tree:
    """Labelled tree on ``{0, ..., n}`` with ``parent[j] < j``.

    Parameters
    ----------
    parent : array of int, length n + 1
        ``parent[0]`` must be ``-1`` and ``parent[1]`` must be 0.
    beta : float
        Attachment parameter the tree was grown with.
    """

    def __init__(self, parent, beta: float = 0.0, check: bool = True):
        parent = np.asarray(parent, dtype=np.int64)
        if check:
            _check_parent(parent)
        self.parent = parent
        self.beta = float(beta)

    @classmethod
    def from_parents(cls, parents, beta: float = 0.0) -> "Tree":
        """Build from the list ``[parent[1], ..., parent[n]]``."""
        return cls(np.concatenate(([-1], np.asarray(parents, dtype=np.int64))), beta)

    @property
    def n(self) -> int:
        return self.parent.size - 1

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.parent[1:], minlength=self.n + 1)
        deg[1:] += 1
        return deg

    def prefix(self, m: int) -> "Tree":
        """The tree restricted to vertices ``0..m`` (the tree at size m + 1)."""
        if not 1 <= m <= self.n:
            raise ValueError(f"prefix size must lie in 1..{self.n}, got {m}")
        return Tree(self.parent[: m + 1], self.beta, check=False)

    def __len__(self):
        return self.n + 1

    def __eq__(self, other):
        return (isinstance(other, Tree) and self.beta == other.beta
                and np.array_equal(self.parent, other.parent))

    def __repr__(self):
        return f"Tree(n={self.n}, beta={self.beta})"

    def to_text(self) -> str:
        return "".join(f"{v}\n" for v in self.parent[1:].tolist())

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path, beta: float = 0.0) -> "Tree":
        rows = Path(path).read_text().split()
        return cls.from_parents([int(r) for r in rows], beta)


@dataclass(eq=False)
class TimedTree:
    """A tree together with the arrival time of each vertex.

    ``birth_time[0] == birth_time[1] == 0``; vertex ``j >= 2`` arrives after
    the exponential holding times of sizes ``2..j``.
    """

    tree: Tree
    birth_time: np.ndarray

    def __post_init__(self):
        self.birth_time = np.asarray(self.birth_time, dtype=float)
        if self.birth_time.size != self.tree.n + 1:
            raise ValueError("birth_time must have one entry per vertex")

    @property
    def n(self) -> int:
        return self.tree.n

    def size_at(self, t: float) -> int:
        """Number of vertices present at time ``t``."""
        return int(np.searchsorted(self.birth_time, t, side="right"))

    def to_text(self) -> str:
        par = self.tree.parent[1:].tolist()
        bt = self.birth_time[1:].tolist()
        return "".join(f"{v} {t:.17g}\n" for v, t in zip(par, bt))

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def _check_parent(parent: np.ndarray) -> None:
    if parent.ndim != 1 or parent.size < 2:
        raise ValueError("a tree needs at least the vertices 0 and 1")
    if parent[0] != -1 or parent[1] != 0:
        raise ValueError("parent[0] must be -1 and parent[1] must be 0")
    labels = np.arange(parent.size)
    if np.any(parent[1:] < 0) or np.any(parent[1:] >= labels[1:]):
        raise ValueError("every vertex j >= 1 must attach to a label in 0..j-1")


def attach_probs(tree: Tree) -> np.ndarray:
    """Attachment law of the next vertex over ``0..n``."""
    m = tree.n
    return (tree.degrees + tree.beta) / (2 * m + tree.beta * (m + 1))


def attach_prob(tree: Tree, i: int) -> float:
    """Probability that the next vertex attaches to ``i``."""
    if not 0 <= i <= tree.n:
        raise ValueError(f"vertex {i} is not in 0..{tree.n}")
    m = tree.n
    return float((tree.degrees[i] + tree.beta) / (2 * m + tree.beta * (m + 1)))


def _resolve(parent: np.ndarray, pending: np.ndarray) -> None:
    # pending vertices hold in parent[] the label whose parent they copy
    ptr = parent.copy()
    resolved = np.ones(parent.size, dtype=bool)
    resolved[pending] = False
    while pending.size:
        ref = ptr[pending]
        done = resolved[ref]
        hit = pending[done]
        parent[hit] = parent[ref[done]]
        resolved[hit] = True
        pending = pending[~done]
        ptr[pending] = ptr[ptr[pending]]


def grow_tree(params: GrowthParams, rng: np.random.Generator) -> Tree:
    """Grow a preferential-attachment tree on ``{0, ..., n}``.

    Draws are taken in vertex order, two uniforms per vertex, so the tree
    grown to ``n`` is a prefix of the tree grown to any ``n' > n`` from
    the same generator state.
    """
    n, beta = int(params.n), float(params.beta)
    parent = np.empty(n + 1, dtype=np.int64)
    parent[0], parent[1] = -1, 0
    if n == 1:
        return Tree(parent, beta, check=False)
    u = rng.random((n - 1, 2))
    m = np.arange(1, n, dtype=np.int64)            # edges present when vertex m+1 arrives
    copy = u[:, 0] * (2 * m + beta * (m + 1)) < (m - 1)
    pick = np.where(copy, 2 + np.floor(u[:, 1] * (m - 1)), np.floor(u[:, 1] * (m + 1)))
    pick = np.minimum(pick.astype(np.int64), m)
    parent[2:] = pick
    _resolve(parent, np.flatnonzero(copy) + 2)
    return Tree(parent, beta, check=False)


def holding_times(beta: float, n: int, rng: np.random.Generator, start: int = 1) -> np.ndarray:
    """Exponential holding times at tree sizes ``start+1 .. n`` (k edges each)."""
    k = np.arange(start, n, dtype=float)
    return rng.standard_exponential(k.size) / (2 * k + beta * (k + 1))


def grow_timed_tree(params: GrowthParams, rng: np.random.Generator) -> TimedTree:
    """Grow the tree in continuous time.

    The jump chain uses exactly the draws of :func:`grow_tree`; holding times
    are drawn afterwards from the same generator, one exponential per step
    at the total rate ``2k + beta(k+1)``.
    """
    tree = grow_tree(params, rng)
    bt = np.zeros(tree.n + 1)
    bt[2:] = np.cumsum(holding_times(tree.beta, tree.n, rng))
    return TimedTree(tree, bt)


def grow_until(beta: float, t: float, rng: np.random.Generator,
               max_vertices: int = 50_000_000) -> TimedTree:
    """Grow in continuous time and keep every vertex born by time ``t``.

    Holding times are drawn first (in chunks), then the jump chain for the
    resulting size.
    """
    GrowthParams(beta, 1)
    if t < 0:
        raise ValueError("t must be nonnegative")
    times = [np.zeros(2)]
    clock, k, chunk = 0.0, 1, 1024
    while True:
        h = holding_times(beta, k + chunk, rng, start=k)
        arr = clock + np.cumsum(h)
        stop = int(np.searchsorted(arr, t, side="right"))
        times.append(arr[:stop])
        if stop < arr.size:
            break
        clock, k = float(arr[-1]), k + chunk
        chunk *= 2
        if k > max_vertices:
            raise RuntimeError(f"more than {max_vertices} vertices born before t={t}")
    bt = np.concatenate(times)
    tree = grow_tree(GrowthParams(beta, bt.size - 1), rng)
    return TimedTree(tree, bt)


def yule_value(size: int, beta: float) -> float:
    """``2(size - 1) + beta * size``: total weight of a tree with ``size`` vertices."""
    if size < 2:
        raise ValueError(f"size must be >= 2, got {size}")
    return 2 * (size - 1) + beta * size


def yule_path(timed: TimedTree) -> tuple[np.ndarray, np.ndarray]:
    """Jump times and post-jump values of ``Y(t)`` reconstructed from a timed tree.

    Entry 0 is the initial state at time 0 (size 2).
    """
    sizes = np.arange(2, timed.n + 2)
    beta = timed.tree.beta
    return timed.birth_time[1:].copy(), 2 * (sizes - 1) + beta * sizes
