"""
Prediction scores, fold schemes, the cross-validation driver and the
paired t-test used to compare methods.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import DegenerateError, FoldError, InvalidInputError


def explained_variance(y_true, y_pred):
    """Ratio of explained variance.

    The residual term is the mean squared residual and the target term the
    population variance, so ``1 - mse / var(y_true)``. A perfect prediction
    scores 1, predicting the target mean scores 0, and the score is unbounded
    below (a biased constant scores below 0).
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InvalidInputError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if len(y_true) < 2:
        raise InvalidInputError("explained variance needs at least 2 samples")
    var = np.var(y_true)
    if var == 0:
        raise DegenerateError("target has zero variance")
    return float((var - np.mean((y_true - y_pred) ** 2)) / var)


def accuracy(y_true, y_pred):
    """Fraction of exactly matching labels."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InvalidInputError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if len(y_true) < 1:
        raise InvalidInputError("accuracy needs at least 1 sample")
    return float(np.mean(y_true == y_pred))


SCORES = {"zeta": explained_variance, "kappa": accuracy}


def get_score(score):
    if callable(score):
        return score
    try:
        return SCORES[score]
    except KeyError:
        raise InvalidInputError(f"unknown score {score!r}; expected one of {sorted(SCORES)}") from None


@dataclass(frozen=True)
class FoldScheme:
    """A cross-validation splitting rule.

    ``kind`` is ``kfold`` (uses ``k``; shuffled when ``seed`` is set),
    ``leave_one_group_out`` or ``leave_one_out``.
    """

    kind: str = "kfold"
    k: int = 4
    seed: int = None

    def __post_init__(self):
        if self.kind not in ("kfold", "leave_one_group_out", "leave_one_out"):
            raise InvalidInputError(f"unknown fold scheme {self.kind!r}")
        if self.kind == "kfold" and self.k < 2:
            raise InvalidInputError("kfold needs k >= 2")

    @classmethod
    def parse(cls, text):
        """Parse ``kfold:4``, ``kfold:4:seed``, ``logo`` or ``loo``."""
        parts = str(text).strip().split(":")
        name = parts[0].lower()
        try:
            if name == "kfold":
                k = int(parts[1]) if len(parts) > 1 else 4
                seed = int(parts[2]) if len(parts) > 2 else None
                return cls("kfold", k, seed)
            if name in ("logo", "leave_one_group_out") and len(parts) == 1:
                return cls("leave_one_group_out")
            if name in ("loo", "leave_one_out") and len(parts) == 1:
                return cls("leave_one_out")
        except ValueError:
            pass
        raise InvalidInputError(f"cannot parse fold scheme {text!r}")

    def __str__(self):
        if self.kind == "kfold":
            return f"kfold:{self.k}" + ("" if self.seed is None else f":{self.seed}")
        return {"leave_one_group_out": "logo", "leave_one_out": "loo"}[self.kind]

    def split(self, n, groups=None):
        """List of ``(train_idx, test_idx)`` pairs over ``n`` samples."""
        idx = np.arange(n)
        if self.kind == "leave_one_out":
            if n < 2:
                raise InvalidInputError("leave-one-out needs at least 2 samples")
            return [(np.delete(idx, i), idx[i:i + 1]) for i in range(n)]
        if self.kind == "leave_one_group_out":
            if groups is None:
                raise InvalidInputError("leave-one-group-out needs group labels")
            groups = np.asarray(groups)
            if groups.shape != (n,):
                raise InvalidInputError(f"groups must have length {n}")
            uniq = np.unique(groups)
            if len(uniq) < 2:
                raise InvalidInputError("leave-one-group-out needs at least 2 groups")
            return [(idx[groups != g], idx[groups == g]) for g in uniq]
        if self.k > n:
            raise InvalidInputError(f"cannot make {self.k} folds from {n} samples")
        perm = idx if self.seed is None else np.random.default_rng(self.seed).permutation(n)
        sizes = np.full(self.k, n // self.k)
        sizes[: n % self.k] += 1
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        folds = []
        for f in range(self.k):
            test = np.sort(perm[bounds[f]:bounds[f + 1]])
            train = np.setdiff1d(idx, test, assume_unique=True)
            folds.append((train, test))
        return folds

    def n_splits(self, n, groups=None):
        if self.kind == "leave_one_out":
            return n
        if self.kind == "leave_one_group_out":
            return len(np.unique(groups))
        return self.k


def fold_assignment(folds, n):
    """Vector giving the test fold of each sample."""
    out = np.full(n, -1, dtype=np.intp)
    for f, (_, test) in enumerate(folds):
        out[test] = f
    return out


def score_folds(estimator, X, y, folds, score="zeta", n_jobs=1):
    """Per-fold test scores of ``estimator`` over precomputed ``folds``.

    Explained variance is undefined on a single test sample, so for ``zeta``
    with one-sample folds the out-of-fold predictions are pooled: fold ``f``
    reports ``1 - k * sse_f / (n * var(y))`` with ``k`` folds, whose mean is
    the pooled score. A failing fold raises ``FoldError`` carrying its index.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    scorer = get_score(score)
    pooled = score == "zeta" and min(len(test) for _, test in folds) < 2
    if pooled:
        var = np.var(y)
        if var == 0:
            raise FoldError(0, DegenerateError("target has zero variance"))

    def run(f):
        train, test = folds[f]
        try:
            model = estimator.fit(X[train], y[train])
            pred = model.predict(X[test])
            if pooled:
                return 1.0 - float(np.sum((y[test] - pred) ** 2)) * len(folds) / (len(y) * var)
            return scorer(y[test], pred)
        except Exception as exc:
            raise FoldError(f, exc) from exc

    if n_jobs == 1 or len(folds) == 1:
        per_fold = [run(f) for f in range(len(folds))]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            per_fold = list(pool.map(run, range(len(folds))))
    return np.asarray(per_fold, dtype=np.float64)


def cross_val_score(estimator, X, y, scheme, score="zeta", groups=None, n_jobs=1):
    """Fit on each training fold, score on the matching test fold.

    Returns ``(mean, per_fold)``; see ``score_folds`` for the handling of
    one-sample folds and failures.
    """
    per_fold = score_folds(estimator, X, y, scheme.split(len(y), groups), score, n_jobs)
    return float(per_fold.mean()), per_fold


def paired_t_statistic(scores_a, scores_b):
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise InvalidInputError("paired t-test needs at least 2 pairs")
    d = a - b
    sd = np.std(d, ddof=1)
    if sd == 0:
        raise DegenerateError("paired differences have zero variance")
    return float(np.mean(d) * math.sqrt(len(d)) / sd)


def paired_t_test(scores_a, scores_b):
    """Two-sided p-value of the paired t statistic (n - 1 dof)."""
    t = paired_t_statistic(scores_a, scores_b)
    dof = len(scores_a) - 1
    # P(|T| > t) = I_{dof / (dof + t^2)}(dof / 2, 1 / 2)
    return float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))


def summarize(scores):
    s = np.asarray(scores, dtype=np.float64)
    return {"mean": float(s.mean()), "std": float(s.std()),
            "max": float(s.max()), "min": float(s.min())}


def comparison_table(named_scores, reference=None):
    """Rows ``method, mean, std, max, min, p_vs_reference``.

    ``named_scores`` maps method name to per-fold scores; the first entry
    is the reference unless ``reference`` names another. Pairs whose
    p-value cannot be computed get ``None`` and an entry in ``errors``.
    """
    names = list(named_scores)
    if reference is None:
        reference = names[0]
    ref = np.asarray(named_scores[reference], dtype=np.float64)
    rows, errors = [], {}
    for name in names:
        row = {"method": name, **summarize(named_scores[name]), "p_vs_reference": None}
        if name != reference:
            try:
                row["p_vs_reference"] = paired_t_test(named_scores[name], ref)
            except (DegenerateError, InvalidInputError) as exc:
                errors[name] = str(exc)
        rows.append(row)
    return rows, errors
