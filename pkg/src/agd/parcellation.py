"""Tree cuts as feature partitions, parcel averaging and weight back-projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NotSplittableError
from .grid import VoxelGrid, WeightMap


@dataclass(frozen=True, eq=False)
class Parcellation:
    """Partition of features into parcels, each parcel a dendrogram node.

    Parcel ids are ordered by the smallest feature they contain, so two
    equal partitions always carry identical labels.
    """

    labels: np.ndarray
    parcel_nodes: np.ndarray

    @classmethod
    def from_nodes(cls, tree, nodes):
        nodes = np.asarray(list(nodes), dtype=np.intp)
        if len(nodes) == 0:
            raise InvalidInputError("a parcellation needs at least one parcel")
        if np.any(nodes < 0) or np.any(nodes >= tree.n_nodes):
            raise InvalidInputError("parcel node outside the tree")
        nodes = nodes[np.argsort(tree.min_leaf[nodes], kind="stable")]
        labels = np.full(tree.n_leaves, -1, dtype=np.intp)
        for k, node in enumerate(nodes):
            leaves = tree.leaves(node)
            if np.any(labels[leaves] >= 0):
                raise InvalidInputError(f"parcel node {node} overlaps another parcel")
            labels[leaves] = k
        if np.any(labels < 0):
            raise InvalidInputError("parcel nodes do not cover every feature")
        labels.flags.writeable = False
        nodes.flags.writeable = False
        return cls(labels, nodes)

    @classmethod
    def root(cls, tree):
        return cls.from_nodes(tree, [tree.root])

    @property
    def n_parcels(self):
        return len(self.parcel_nodes)

    @property
    def n_features(self):
        return len(self.labels)

    @property
    def sizes(self):
        return np.bincount(self.labels, minlength=self.n_parcels)

    def members(self, parcel_id):
        return np.flatnonzero(self.labels == parcel_id)

    def same_partition(self, other):
        return np.array_equal(self.labels, other.labels)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("feature_index,parcel_id\n")
            for j, k in enumerate(self.labels):
                fh.write(f"{j},{k}\n")


def parcel_averages(X, parcellation):
    """Column k of the result is the mean of the columns of ``X`` in parcel k."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != parcellation.n_features:
        raise InvalidInputError(
            f"X has shape {X.shape}, parcellation covers {parcellation.n_features} features")
    labels = parcellation.labels
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=parcellation.n_parcels)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sums = np.add.reduceat(X[:, order], starts, axis=1)
    return sums / counts


def refine(parcellation, parcel_id, tree):
    """Replace parcel ``parcel_id`` by the two children of its tree node."""
    if not 0 <= parcel_id < parcellation.n_parcels:
        raise InvalidInputError(f"parcel {parcel_id} out of range")
    node = int(parcellation.parcel_nodes[parcel_id])
    if tree.is_leaf(node):
        raise NotSplittableError(f"parcel {parcel_id} is the single feature {node}")
    a, b = tree.children_of(node)
    nodes = [int(v) for i, v in enumerate(parcellation.parcel_nodes) if i != parcel_id]
    return Parcellation.from_nodes(tree, nodes + [a, b])


def backproject_weights(parcel_weights, parcellation, grid=None):
    """Spread parcel weights over features, dividing by parcel size."""
    w = np.asarray(parcel_weights, dtype=np.float64)
    if w.shape != (parcellation.n_parcels,):
        raise InvalidInputError(f"expected {parcellation.n_parcels} parcel weights, got shape {w.shape}")
    if grid is None:
        grid = VoxelGrid.line(parcellation.n_features)
    sizes = parcellation.sizes
    return WeightMap(w[parcellation.labels] / sizes[parcellation.labels], grid)


def main_branches_cut(tree, n_parcels):
    """Cut the tree into its ``n_parcels`` main branches.

    The last ``n_parcels - 1`` merges (by creation order) are undone; this
    always yields a valid cut even when merge costs are not monotone.
    """
    p = tree.n_leaves
    if not 1 <= n_parcels <= p:
        raise InvalidInputError(f"number of parcels must lie in [1, {p}], got {n_parcels}")
    nodes = {tree.root}
    for node in range(tree.root, tree.root - (n_parcels - 1), -1):
        nodes.remove(node)
        nodes.update(tree.children_of(node))
    return Parcellation.from_nodes(tree, sorted(nodes))
