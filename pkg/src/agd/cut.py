"""
Top-down pruning of a Ward dendrogram.

The supervised cut starts from the root parcel and, at every step,
commits the single parcel split whose parcel-averaged design gives the
best cross-validated score under the exploration fold scheme. The
nested parcellations are then scored under a second, selection fold
scheme and the best one is kept. The unsupervised cut replaces the
greedy exploration with the main branches of the tree.
"""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FoldError, InvalidInputError
from .evaluation import get_score, score_folds
from .parcellation import Parcellation, backproject_weights, main_branches_cut, parcel_averages


@dataclass(frozen=True, eq=False)
class CutStep:
    """Candidates evaluated at one exploration step and the committed split."""

    delta: int
    parcels: tuple
    nodes: tuple
    scores: tuple
    chosen: int

    def to_json(self):
        return {
            "delta": self.delta,
            "candidates": [{"parcel": int(i), "node": int(n), "score": _finite_or_none(s)}
                           for i, n, s in zip(self.parcels, self.nodes, self.scores)],
            "chosen_parcel": int(self.parcels[self.chosen]),
            "chosen_node": int(self.nodes[self.chosen]),
        }


@dataclass(frozen=True, eq=False)
class CutTrace:
    """Nested parcellations and their scores.

    ``parcellations[d - 1]`` is the parcellation of step ``d`` (1-based,
    as is ``chosen_delta``).
    """

    method: str
    parcellations: tuple
    exploration_scores: np.ndarray
    selection_scores: np.ndarray
    chosen_delta: int
    steps: tuple = ()
    n_fits: int = 0
    score: str = "zeta"

    @property
    def max_delta(self):
        return len(self.parcellations)

    def parcellation(self, delta):
        if not 1 <= delta <= self.max_delta:
            raise InvalidInputError(f"delta must lie in [1, {self.max_delta}]")
        return self.parcellations[delta - 1]

    @property
    def chosen_parcellation(self):
        return self.parcellation(self.chosen_delta)

    def to_json(self):
        return {
            "method": self.method,
            "score": self.score,
            "max_delta": self.max_delta,
            "chosen_delta": self.chosen_delta,
            "chosen_n_parcels": self.chosen_parcellation.n_parcels,
            "n_fits": self.n_fits,
            "exploration_scores": [_finite_or_none(s) for s in self.exploration_scores],
            "selection_scores": [_finite_or_none(s) for s in self.selection_scores],
            "steps": [s.to_json() for s in self.steps],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _default_score(dataset, score):
    if score is not None:
        return score
    return "kappa" if dataset.is_classification else "zeta"


class _NodeMeans:
    """Lazily computed mean signal of every tree node."""

    def __init__(self, X, tree):
        self.X = X
        self.tree = tree
        self.cache = {}

    def __getitem__(self, node):
        col = self.cache.get(node)
        if col is None:
            col = self.X[:, self.tree.leaves(node)].mean(axis=1)
            self.cache[node] = col
        return col

    def design(self, nodes):
        return np.column_stack([self[n] for n in nodes])


def _cv_mean(estimator, Z, y, folds, score):
    """Mean fold score and the number of fits; any failure scores -inf."""
    try:
        scores = score_folds(estimator, Z, y, folds, score)
    except FoldError as err:
        return -math.inf, err.fold + 1
    mean = float(np.mean(scores))
    return (mean if math.isfinite(mean) else -math.inf), len(folds)


def _map(fn, items, n_jobs):
    if n_jobs == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _sorted_nodes(tree, nodes):
    return sorted(nodes, key=lambda n: tree.min_leaf[n])


def _select(parcellation_nodes, means, estimator, y, folds_s, score, n_jobs):
    results = _map(lambda nodes: _cv_mean(estimator, means.design(nodes), y, folds_s, score),
                   parcellation_nodes, n_jobs)
    scores = np.array([r[0] for r in results])
    fits = sum(r[1] for r in results)
    # argmax keeps the smallest delta on ties
    return scores, int(np.argmax(scores)) + 1, fits


def supervised_cut(train, tree, max_delta, estimator, cv_e, cv_s, score=None, n_jobs=1):
    """Greedy supervised cut of ``tree`` followed by model selection.

    Parameters
    ----------
    train : Dataset
        Training data; its columns are the leaves of ``tree``.
    tree : Dendrogram
    max_delta : int
        Number of exploration steps; step ``d`` yields ``d + 1`` parcels.
        Values above ``p - 1`` are clipped with a warning.
    estimator : object with ``fit(X, y) -> model``
    cv_e, cv_s : FoldScheme
        Exploration and selection fold schemes, both applied to ``train``.
    score : {"zeta", "kappa"}, optional
        Defaults to kappa for integer targets, zeta otherwise.
    n_jobs : int
        Threads used to evaluate the candidate splits of one step.

    Returns
    -------
    CutTrace
    """
    X, y = train.X, train.y
    p = X.shape[1]
    if p != tree.n_leaves:
        raise InvalidInputError(f"tree has {tree.n_leaves} leaves, data has {p} features")
    if max_delta < 1:
        raise InvalidInputError("max_delta must be >= 1")
    if p < 2:
        raise InvalidInputError("supervised cut needs at least 2 features")
    if max_delta > p - 1:
        warnings.warn(f"max_delta={max_delta} clipped to p - 1 = {p - 1}", stacklevel=2)
        max_delta = p - 1
    score = _default_score(train, score)
    get_score(score)
    folds_e = cv_e.split(len(y), train.groups)
    folds_s = cv_s.split(len(y), train.groups)
    means = _NodeMeans(X, tree)

    nodes = [tree.root]
    history = []
    steps = []
    exploration = []
    n_fits = 0
    for delta in range(1, max_delta + 1):
        cand_ids = [i for i, node in enumerate(nodes) if not tree.is_leaf(node)]
        cand_nodes = []
        for i in cand_ids:
            a, b = tree.children_of(nodes[i])
            # fill the cache before worker threads read it
            means[a]
            means[b]
            cand_nodes.append(_sorted_nodes(tree, nodes[:i] + nodes[i + 1:] + [a, b]))
        results = _map(lambda ns: _cv_mean(estimator, means.design(ns), y, folds_e, score),
                       cand_nodes, n_jobs)
        scores = [r[0] for r in results]
        n_fits += sum(r[1] for r in results)
        best = 0
        for k in range(1, len(scores)):
            if scores[k] > scores[best]:
                best = k
        steps.append(CutStep(delta, tuple(cand_ids), tuple(int(nodes[i]) for i in cand_ids),
                             tuple(scores), best))
        exploration.append(scores[best])
        nodes = cand_nodes[best]
        history.append(list(nodes))

    selection, chosen, fits = _select(history, means, estimator, y, folds_s, score, n_jobs)
    n_fits += fits
    parcellations = tuple(Parcellation.from_nodes(tree, ns) for ns in history)
    return CutTrace("supervised", parcellations, np.array(exploration), selection, chosen,
                    tuple(steps), n_fits, score)


def unsupervised_cut_select(train, tree, max_delta, estimator, cv_s, score=None, n_jobs=1):
    """Score the main-branch cuts with 1..max_delta parcels and keep the best."""
    X, y = train.X, train.y
    p = X.shape[1]
    if p != tree.n_leaves:
        raise InvalidInputError(f"tree has {tree.n_leaves} leaves, data has {p} features")
    if max_delta < 1:
        raise InvalidInputError("max_delta must be >= 1")
    if max_delta > p:
        warnings.warn(f"max_delta={max_delta} clipped to p = {p}", stacklevel=2)
        max_delta = p
    score = _default_score(train, score)
    get_score(score)
    folds_s = cv_s.split(len(y), train.groups)
    means = _NodeMeans(X, tree)
    parcellations = tuple(main_branches_cut(tree, d) for d in range(1, max_delta + 1))
    history = [[int(n) for n in pc.parcel_nodes] for pc in parcellations]
    selection, chosen, fits = _select(history, means, estimator, y, folds_s, score, n_jobs)
    return CutTrace("unsupervised", parcellations, selection.copy(), selection, chosen,
                    (), fits, score)


def fit_with_cut(trace, train, estimator):
    """Fit ``estimator`` on the chosen parcel averages of ``train``."""
    pc = trace.chosen_parcellation
    if train.n_features != pc.n_features:
        raise InvalidInputError(f"train has {train.n_features} features, cut covers {pc.n_features}")
    return estimator.fit(parcel_averages(train.X, pc), train.y)


def predict_with_cut(trace, train, test, estimator, score=None):
    """Fit on the chosen parcel averages of ``train``; predict and score ``test``.

    Returns ``(predictions, score)``.
    """
    pc = trace.chosen_parcellation
    if test.n_features != pc.n_features:
        raise InvalidInputError(f"test has {test.n_features} features, cut covers {pc.n_features}")
    model = fit_with_cut(trace, train, estimator)
    pred = model.predict(parcel_averages(test.X, pc))
    return pred, get_score(_default_score(train, score))(test.y, pred)


def cut_weight_map(trace, model, grid=None):
    """Back-project the parcel weights of a model fitted with ``fit_with_cut``.

    The intercept is dropped; for several one-vs-rest rows the per-parcel
    Euclidean norm across rows is used.
    """
    w = np.asarray(model.w, dtype=np.float64)
    coef = w[:-1] if w.ndim == 1 else np.linalg.norm(w[:, :-1], axis=0)
    return backproject_weights(coef, trace.chosen_parcellation, grid)


def expected_fit_count(max_delta, n_folds_e, n_folds_s):
    """Estimator fits of a supervised cut when every parcel stays splittable."""
    return n_folds_e * max_delta * (max_delta + 1) // 2 + max_delta * n_folds_s
