"""
Connectivity-constrained Ward agglomeration of features.

Each feature is described by its column of ``X`` (its signal across the
n samples). Only clusters that touch in the connectivity graph may be
merged; the pair with the smallest increase of within-cluster inertia
is merged first.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NoChildrenError


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Binary merge tree over ``n_leaves`` features.

    Leaves are ``0..p-1``; internal node ``p + t`` is created by the
    ``t``-th merge. ``children[t]`` stores the merged pair (smaller id
    first), ``merge_cost[t]`` the inertia increase and ``forced[t]``
    whether the merge joined two disconnected components.
    """

    n_leaves: int
    children: np.ndarray
    merge_cost: np.ndarray
    forced: np.ndarray
    sizes: np.ndarray = field(init=False, repr=False)
    parent: np.ndarray = field(init=False, repr=False)
    leaf_order: np.ndarray = field(init=False, repr=False)
    _start: np.ndarray = field(init=False, repr=False)
    min_leaf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = int(self.n_leaves)
        if p < 1:
            raise InvalidInputError("a dendrogram needs at least one leaf")
        children = np.asarray(self.children, dtype=np.intp).reshape(-1, 2)
        cost = np.asarray(self.merge_cost, dtype=np.float64).reshape(-1)
        forced = np.asarray(self.forced, dtype=bool).reshape(-1)
        if not (len(children) == len(cost) == len(forced) == p - 1):
            raise InvalidInputError(f"a tree over {p} leaves needs {p - 1} merges")
        n_nodes = 2 * p - 1
        sizes = np.ones(n_nodes, dtype=np.intp)
        parent = np.full(n_nodes, -1, dtype=np.intp)
        min_leaf = np.arange(n_nodes, dtype=np.intp)
        for t, (a, b) in enumerate(children):
            k = p + t
            if not (0 <= a < k and 0 <= b < k and a != b):
                raise InvalidInputError(f"node {k} has invalid children ({a}, {b})")
            if parent[a] >= 0 or parent[b] >= 0:
                raise InvalidInputError(f"node {k} reuses an already merged child")
            parent[a] = parent[b] = k
            sizes[k] = sizes[a] + sizes[b]
            min_leaf[k] = min(min_leaf[a], min_leaf[b])
        # contiguous leaf ranges: node k owns leaf_order[start[k]:start[k] + sizes[k]]
        start = np.zeros(n_nodes, dtype=np.intp)
        for t in range(p - 2, -1, -1):
            a, b = children[t]
            start[a] = start[p + t]
            start[b] = start[p + t] + sizes[a]
        leaf_order = np.empty(p, dtype=np.intp)
        leaf_order[start[:p]] = np.arange(p)
        for name, arr in (("children", children), ("merge_cost", cost), ("forced", forced),
                          ("sizes", sizes), ("parent", parent), ("leaf_order", leaf_order),
                          ("_start", start), ("min_leaf", min_leaf)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_leaves", p)

    @property
    def n_nodes(self):
        return 2 * self.n_leaves - 1

    @property
    def root(self):
        return self.n_nodes - 1

    def is_leaf(self, node):
        return node < self.n_leaves

    def children_of(self, node):
        if not 0 <= node < self.n_nodes:
            raise InvalidInputError(f"node {node} not in tree")
        if node < self.n_leaves:
            raise NoChildrenError(f"node {node} is a leaf")
        a, b = self.children[node - self.n_leaves]
        return int(a), int(b)

    def leaves(self, node):
        """Sorted feature indices under ``node``."""
        s = self._start[node]
        return np.sort(self.leaf_order[s:s + self.sizes[node]])

    def to_csv(self, path):
        p = self.n_leaves
        with open(path, "w") as fh:
            fh.write("node_id,child1,child2,merge_cost,size,forced\n")
            for t in range(p - 1):
                a, b = self.children[t]
                fh.write(f"{p + t},{a},{b},{float(self.merge_cost[t])!r},"
                         f"{self.sizes[p + t]},{int(self.forced[t])}\n")

    @classmethod
    def from_csv(cls, path):
        rows = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))
        if rows.size == 0:
            return cls(1, np.empty((0, 2)), np.empty(0), np.empty(0, dtype=bool))
        p = len(rows) + 1
        return cls(p, rows[:, 1:3].astype(np.intp), rows[:, 3], rows[:, 5].astype(bool))


def children(tree, node):
    """The two children of an internal node, smaller id first."""
    return tree.children_of(node)


def _ward_cost(size_a, cent_a, sizes_b, cents_b):
    d = cents_b - cent_a
    return size_a * sizes_b / (size_a + sizes_b) * np.einsum("ij,ij->i", d, d)


def ward_build(dataset, graph):
    """Constrained Ward dendrogram over the columns of ``dataset.X``.

    The merge cost between clusters ``a`` and ``b`` is the Ward distance
    ``n_a n_b / (n_a + n_b) * ||c_a - c_b||^2`` between centroids, which is
    exactly the value propagated by the Lance-Williams Ward recurrence.
    Equal costs are resolved by the smallest ``(min id, max id)`` pair.
    When the graph has several components, each is completed first and
    the component roots are then merged by increasing cost (``forced``).
    """
    X = dataset.X if hasattr(dataset, "X") else np.asarray(dataset, dtype=np.float64)
    n, p = X.shape
    if graph.n_features != p:
        raise InvalidInputError(f"graph has {graph.n_features} features, data has {p}")
    if p < 1:
        raise InvalidInputError("no features to cluster")
    n_nodes = 2 * p - 1
    cent = np.zeros((n_nodes, n))
    cent[:p] = X.T
    size = np.zeros(n_nodes)
    size[:p] = 1.0
    active = np.zeros(n_nodes, dtype=bool)
    active[:p] = True
    nbrs = [set(graph.neighbors(i).tolist()) for i in range(p)]

    edges = graph.edges()
    heap = []
    if len(edges):
        d = X[:, edges[:, 0]] - X[:, edges[:, 1]]
        costs = 0.5 * np.einsum("ij,ij->j", d, d)
        heap = [(float(c), int(a), int(b)) for c, (a, b) in zip(costs, edges)]
        heapq.heapify(heap)

    children_ = np.empty((max(p - 1, 0), 2), dtype=np.intp)
    cost_ = np.empty(max(p - 1, 0))
    forced_ = np.zeros(max(p - 1, 0), dtype=bool)
    k = p

    def merge(a, b, c, forced):
        nonlocal k
        t = k - p
        children_[t] = (a, b)
        cost_[t] = c
        forced_[t] = forced
        size[k] = size[a] + size[b]
        cent[k] = (size[a] * cent[a] + size[b] * cent[b]) / size[k]
        active[a] = active[b] = False
        active[k] = True
        k += 1

    while heap:
        c, a, b = heapq.heappop(heap)
        if not (active[a] and active[b]):
            continue
        new = k
        merge(a, b, c, False)
        around = (nbrs[a] | nbrs[b]) - {a, b}
        nbrs[a] = nbrs[b] = None
        for m in around:
            s = nbrs[m]
            s.discard(a)
            s.discard(b)
            s.add(new)
        nbrs.append(around)
        if around:
            others = np.fromiter(sorted(around), dtype=np.intp, count=len(around))
            costs = _ward_cost(size[new], cent[new], size[others], cent[others])
            for m, cm in zip(others.tolist(), costs.tolist()):
                heapq.heappush(heap, (cm, m, new))

    while k < n_nodes:
        roots = np.flatnonzero(active)
        best = None
        for i, a in enumerate(roots[:-1]):
            others = roots[i + 1:]
            costs = _ward_cost(size[a], cent[a], size[others], cent[others])
            j = int(np.argmin(costs))
            cand = (float(costs[j]), int(a), int(others[j]))
            if best is None or cand < best:
                best = cand
        c, a, b = best
        merge(a, b, c, True)
        nbrs.append(set())

    return Dendrogram(p, children_, cost_, forced_)
