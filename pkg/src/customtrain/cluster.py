"""Euclidean neighbors and complete-linkage agglomerative clustering.

The agglomeration stores the full distance matrix, so memory grows as
``n**2``; around 20 000 points is the practical ceiling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InputError


def pairwise_distances(A, B=None):
    """Euclidean distances between the rows of ``A`` and the rows of ``B``.

    Rows are processed one at a time in index order so that the result does
    not depend on how the work is scheduled.
    """
    A = np.asarray(A, dtype=float)
    B = A if B is None else np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise InputError("row matrices must be 2-D with matching column counts")
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        out[i] = np.sqrt(((B - A[i]) ** 2).sum(axis=1))
    return out


def knn_indices(query_rows, reference_rows, R):
    """Indices of the ``min(R, n_ref)`` nearest reference rows per query row.

    Each row of the result is ordered by distance, ties going to the lower
    reference index.
    """
    ref = np.asarray(reference_rows, dtype=float)
    if ref.ndim != 2 or ref.shape[0] == 0:
        raise InputError("reference set is empty")
    if R < 1:
        raise InputError("R must be at least 1")
    k = min(int(R), ref.shape[0])
    D = pairwise_distances(query_rows, ref)
    return np.argsort(D, axis=1, kind="stable")[:, :k]


@dataclass(frozen=True)
class Dendrogram:
    """Merge history over ``leaf_count`` leaves.

    ``merges`` is an ``(n - 1, 4)`` array of ``(left, right, height, size)``
    rows. Leaves are nodes ``0..n-1``; merge ``t`` creates node ``n + t``.
    """

    merges: np.ndarray
    leaf_count: int

    def __post_init__(self):
        m = np.asarray(self.merges, dtype=float).reshape(-1, 4)
        n = self.leaf_count
        if n < 1 or m.shape[0] != n - 1:
            raise InputError(f"expected {n - 1} merges for {n} leaves, got {m.shape[0]}")
        if np.any(np.diff(m[:, 2]) < 0):
            raise InputError("merge heights must be non-decreasing")
        children = m[:, :2].astype(int).ravel()
        if len(np.unique(children)) != len(children):
            raise InputError("a node appears as a child more than once")
        if len(children) and (children.min() < 0 or np.any(children >= n + np.repeat(np.arange(n - 1), 2))):
            raise InputError("merge refers to a node that does not exist yet")
        if n > 1 and m[-1, 3] != n:
            raise InputError("final merge must contain every leaf")
        m.setflags(write=False)
        object.__setattr__(self, "merges", m)

    @property
    def heights(self):
        return self.merges[:, 2]

    @property
    def root(self):
        return 2 * self.leaf_count - 2

    def children(self, node):
        if node < self.leaf_count:
            return ()
        left, right = self.merges[node - self.leaf_count, :2]
        return int(left), int(right)

    def height(self, node):
        return 0.0 if node < self.leaf_count else float(self.merges[node - self.leaf_count, 2])

    def parents(self):
        """Parent node of every node (``-1`` for the root)."""
        par = np.full(2 * self.leaf_count - 1, -1, dtype=int)
        for t, (left, right) in enumerate(self.merges[:, :2].astype(int)):
            par[left] = par[right] = self.leaf_count + t
        return par

    def leaves(self, node):
        """Sorted leaf indices under ``node``."""
        out, stack = [], [int(node)]
        while stack:
            v = stack.pop()
            if v < self.leaf_count:
                out.append(v)
            else:
                stack.extend(self.children(v))
        return np.sort(np.asarray(out, dtype=int))

    def to_dict(self):
        return {
            "leaf_count": self.leaf_count,
            "merges": [[int(a), int(b), float(h), int(s)] for a, b, h, s in self.merges],
        }

    @classmethod
    def from_dict(cls, d):
        merges = np.asarray(d["merges"], dtype=float).reshape(-1, 4)
        return cls(merges, int(d["leaf_count"]))


@dataclass(frozen=True)
class ClusterAssignment:
    """Flat clustering obtained by cutting a dendrogram.

    ``nodes[k]`` is the dendrogram node whose leaves form cluster ``k`` and
    ``height`` the largest merge height kept by the cut.
    """

    labels: np.ndarray
    G: int
    nodes: tuple[int, ...]
    height: float

    def members(self, k):
        return np.flatnonzero(self.labels == k)


def hclust_complete(rows):
    """Agglomerative clustering with complete (maximum-distance) linkage.

    At each step the two clusters with the smallest linkage distance merge.
    Ties go to the pair whose smallest leaf indices are lexicographically
    smallest (lower cluster first). Each cluster caches its nearest
    higher-indexed neighbor, so only rows that pointed at a merged cluster
    are rescanned.
    """
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError("need at least one row to cluster")
    n = X.shape[0]
    if n == 1:
        return Dendrogram(np.zeros((0, 4)), 1)

    D = pairwise_distances(X)
    np.fill_diagonal(D, np.inf)
    # a cluster lives in the slot of its smallest leaf; its cached nearest
    # neighbor is searched among higher slots only
    node = np.arange(n)
    size = np.ones(n, dtype=int)
    nn_j = np.zeros(n, dtype=int)
    nn_d = np.full(n, np.inf)

    def rescan(k):
        if k < n - 1:
            jj = k + 1 + int(np.argmin(D[k, k + 1:]))
            nn_j[k], nn_d[k] = jj, D[k, jj]
        else:
            nn_d[k] = np.inf

    for k in range(n):
        rescan(k)
    merges = np.empty((n - 1, 4))

    for t in range(n - 1):
        i = int(np.argmin(nn_d))
        j = int(nn_j[i])
        merges[t] = node[i], node[j], nn_d[i], size[i] + size[j]

        # complete linkage: distance to the union is the larger of the two
        merged = np.maximum(D[i], D[j])
        D[i] = merged
        D[:, i] = merged
        D[i, i] = np.inf
        D[j, :] = np.inf
        D[:, j] = np.inf
        nn_d[j] = np.inf
        node[i] = n + t
        size[i] += size[j]

        stale = np.flatnonzero(((nn_j == i) | (nn_j == j)) & np.isfinite(nn_d))
        for k in np.union1d(stale, [i]):
            rescan(int(k))
        # rows before i whose cached neighbor lies beyond i may now tie with i
        before = np.arange(i)
        tie = (D[before, i] == nn_d[before]) & (nn_j[before] > i)
        nn_j[before[tie]] = i

    return Dendrogram(merges, n)


def _assignment(dendrogram, n_kept, height):
    n = dendrogram.leaf_count
    parent = np.arange(2 * n - 1)
    for t in range(n_kept):
        left, right = dendrogram.merges[t, :2].astype(int)
        parent[left] = parent[right] = n + t

    def find(v):
        while parent[v] != v:
            v = parent[v]
        return v

    roots = np.array([find(v) for v in range(n)])
    # number clusters by first appearance over leaves = smallest leaf order
    labels = np.empty(n, dtype=int)
    order = {}
    for v in range(n):
        labels[v] = order.setdefault(roots[v], len(order))
    return ClusterAssignment(labels, len(order), tuple(int(r) for r in order), float(height))


def cut_by_count(dendrogram, G):
    """Undo the last ``G - 1`` merges, leaving exactly ``G`` clusters."""
    n = dendrogram.leaf_count
    if not 1 <= G <= n:
        raise InputError(f"G must lie in 1..{n}, got {G}")
    kept = n - G
    height = dendrogram.heights[kept - 1] if kept > 0 else 0.0
    return _assignment(dendrogram, kept, height)


def cut_by_height(dendrogram, d):
    """Keep every merge at height ``<= d``."""
    if d < 0:
        raise InputError("cut height must be nonnegative")
    kept = int(np.searchsorted(dendrogram.heights, d, side="right"))
    height = dendrogram.heights[kept - 1] if kept > 0 else 0.0
    return _assignment(dendrogram, kept, height)
