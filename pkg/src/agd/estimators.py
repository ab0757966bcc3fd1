"""
Linear prediction functions.

Estimator objects are light, immutable descriptions of a learning
procedure: ``est.fit(X, y)`` returns a fitted model exposing
``predict``. Weight vectors carry the intercept as their last entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DegenerateError, InvalidInputError
from .evaluation import FoldScheme, cross_val_score


def _check_xy(X, y, min_samples=1):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise InvalidInputError(f"incompatible shapes X {X.shape}, y {y.shape}")
    if X.shape[0] < min_samples:
        raise InvalidInputError(f"need at least {min_samples} samples, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X contains non-finite values")
    if y.dtype.kind == "f" and not np.all(np.isfinite(y)):
        raise InvalidInputError("y contains non-finite values")
    return X, y


def _with_ones(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Fitted linear function ``X w[:-1] + w[-1]``.

    For classifiers ``w`` has one row per one-vs-rest problem (a single
    row for two classes) and ``classes`` holds the sorted labels.
    """

    w: np.ndarray
    classes: np.ndarray = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("model weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @property
    def coef(self):
        return self.w[..., :-1]

    @property
    def intercept(self):
        return self.w[..., -1]

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.w.shape[-1] - 1:
            raise InvalidInputError(f"X has shape {X.shape}, model expects {self.w.shape[-1] - 1} features")
        return X @ self.coef.T + self.intercept

    def predict(self, X):
        dec = self.decision_function(X)
        if self.classes is None:
            return dec
        if dec.ndim == 1:
            # zero decision goes to the smaller class
            return np.where(dec > 0, self.classes[1], self.classes[0])
        return self.classes[np.argmax(dec, axis=1)]

    def to_csv(self, path):
        w = np.atleast_2d(self.w)
        with open(path, "w") as fh:
            fh.write("index," + ",".join(f"w{k}" for k in range(len(w))) + "\n")
            for j in range(w.shape[1]):
                name = "intercept" if j == w.shape[1] - 1 else str(j)
                fh.write(name + "," + ",".join(repr(float(v)) for v in w[:, j]) + "\n")


# Bayesian ridge regression

@dataclass(frozen=True)
class BrrConfig:
    """Gamma hyperpriors and stopping rule for Bayesian ridge regression."""

    lambda1: float = 1e-6
    lambda2: float = 1e-6
    alpha1: float = 1e-6
    alpha2: float = 1e-6
    max_iter: int = 300
    tol: float = 1e-3

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.alpha1, self.alpha2) <= 0:
            raise InvalidInputError("hyperprior parameters must be positive")
        if self.max_iter < 1 or self.tol <= 0:
            raise InvalidInputError("max_iter must be >= 1 and tol > 0")


@dataclass(frozen=True, eq=False)
class BrrFit:
    """Posterior state of a Bayesian ridge fit (intercept is the last entry)."""

    mu: np.ndarray
    sigma: np.ndarray
    alpha: float
    lambda_: float
    gamma_eff: float
    iterations: int
    converged: bool

    @property
    def w(self):
        return self.mu

    @property
    def coef(self):
        return self.mu[:-1]

    @property
    def intercept(self):
        return float(self.mu[-1])

    def predict(self, X):
        return brr_predict(self, X)

    def report(self):
        return {"alpha": self.alpha, "lambda": self.lambda_, "gamma_eff": self.gamma_eff,
                "iterations": self.iterations, "converged": self.converged}


class _BrrDesign:
    """Thin SVD of a design with its ones column, reused across updates."""

    def __init__(self, Xa, y):
        self.Xa = Xa
        self.y = y
        U, S, Vt = np.linalg.svd(Xa, full_matrices=False)
        self.S = S
        self.s = S * S  # eigenvalues of Xa^T Xa; the remaining ones are 0
        self.Vt = Vt
        self.uty = U.T @ y

    def posterior_mean(self, alpha, lam):
        return self.Vt.T @ (alpha * self.S * self.uty / (lam + alpha * self.s))

    def posterior_cov(self, alpha, lam):
        d = self.Xa.shape[1]
        shrink = 1.0 / (lam + alpha * self.s) - 1.0 / lam
        sigma = np.eye(d) / lam + (self.Vt.T * shrink) @ self.Vt
        return 0.5 * (sigma + sigma.T)

    def gamma(self, alpha, lam):
        return float(np.sum(alpha * self.s / (lam + alpha * self.s)))


def brr_posterior(X, y, alpha, lam):
    """Posterior mean and covariance of the weights for fixed precisions.

    ``X`` is used as given plus a ones column; returns ``(mu, sigma)``.
    """
    X, y = _check_xy(X, y)
    design = _BrrDesign(_with_ones(X), y.astype(np.float64))
    return design.posterior_mean(alpha, lam), design.posterior_cov(alpha, lam)


def brr_fit(X, y, config=None):
    """Evidence-maximizing Bayesian ridge regression.

    Starts from ``alpha = 1/var(y)``, ``lambda = 1`` and alternates the
    posterior of the weights with the precision updates until the L1
    change of the weights drops below ``config.tol``.
    """
    config = config or BrrConfig()
    X, y = _check_xy(X, y, min_samples=2)
    y = y.astype(np.float64)
    var = np.var(y)
    if var == 0:
        raise DegenerateError("target has zero variance")
    n = len(y)
    design = _BrrDesign(_with_ones(X), y)
    alpha, lam = 1.0 / var, 1.0
    mu_prev = None
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        mu = design.posterior_mean(alpha, lam)
        gamma = design.gamma(alpha, lam)
        resid = y - design.Xa @ mu
        lam = (gamma + 2 * config.lambda1) / (mu @ mu + 2 * config.lambda2)
        alpha = (n - gamma + 2 * config.alpha1) / (resid @ resid + 2 * config.alpha2)
        if mu_prev is not None and np.sum(np.abs(mu - mu_prev)) < config.tol:
            converged = True
            break
        mu_prev = mu
    mu = design.posterior_mean(alpha, lam)
    return BrrFit(mu=mu, sigma=design.posterior_cov(alpha, lam), alpha=float(alpha),
                  lambda_=float(lam), gamma_eff=design.gamma(alpha, lam),
                  iterations=it, converged=converged)


def brr_predict(fit, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(fit.mu) - 1:
        raise InvalidInputError(f"X has shape {X.shape}, fit expects {len(fit.mu) - 1} features")
    return X @ fit.mu[:-1] + fit.mu[-1]


# Elastic net

@numba.njit(cache=True)
def _enet_cd(X, y, l1, l2, w, tol, max_sweeps):
    n, p = X.shape
    norms = np.zeros(p)
    r = y.copy()
    for j in range(p):
        for i in range(n):
            norms[j] += X[i, j] * X[i, j]
            r[i] -= X[i, j] * w[j]
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            denom = norms[j] + l2
            old = w[j]
            if denom == 0.0:
                new = 0.0
            else:
                rho = norms[j] * old
                for i in range(n):
                    rho += X[i, j] * r[i]
                if rho > l1:
                    new = (rho - l1) / denom
                elif rho < -l1:
                    new = (rho + l1) / denom
                else:
                    new = 0.0
            if new != old:
                delta = new - old
                for i in range(n):
                    r[i] -= delta * X[i, j]
                w[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        # small steps can hide a slow drift; also require the optimality conditions
        if max_change < tol and _enet_kkt_violation(X, r, w, l1, l2) < tol:
            return sweep + 1
    return max_sweeps


@numba.njit(cache=True)
def _enet_kkt_violation(X, r, w, l1, l2):
    n, p = X.shape
    worst = 0.0
    for j in range(p):
        g = 0.0
        for i in range(n):
            g += X[i, j] * r[i]
        g -= l2 * w[j]
        if w[j] > 0.0:
            v = abs(g - l1)
        elif w[j] < 0.0:
            v = abs(g + l1)
        else:
            v = max(abs(g) - l1, 0.0)
        if v > worst:
            worst = v
    return worst


def enet_fit(X, y, lambda1, lambda2, tol=1e-6, max_sweeps=10_000):
    """Elastic net by cyclic coordinate descent on centered data.

    Minimizes ``0.5 ||y - Xw||^2 + lambda1 ||w||_1 + 0.5 lambda2 ||w||^2``;
    the intercept is recovered from the column and target means. Sweeps
    stop once no weight moves by ``tol`` and every optimality condition
    holds to within ``tol``.
    """
    X, y = _check_xy(X, y, min_samples=2)
    if lambda1 < 0 or lambda2 < 0:
        raise InvalidInputError("penalties must be nonnegative")
    y = y.astype(np.float64)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = np.asfortranarray(X - x_mean)
    w = np.zeros(X.shape[1])
    sweeps = _enet_cd(Xc, y - y_mean, float(lambda1), float(lambda2), w, tol, max_sweeps)
    b = y_mean - x_mean @ w
    return LinearModel(np.append(w, b), params={"lambda1": float(lambda1), "lambda2": float(lambda2),
                                                 "sweeps": int(sweeps)})


def enet_lambda_max(X, y):
    """``||X^T y||_inf`` on centered data: the smallest all-zero ``lambda1``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.max(np.abs((X - X.mean(0)).T @ (y - y.mean()))))


# Linear SVC

@numba.njit(cache=True)
def _svc_dual_cd(Xa, y, C, alpha, w, tol, max_iter):
    n, d = Xa.shape
    qii = np.zeros(n)
    for i in range(n):
        for j in range(d):
            qii[i] += Xa[i, j] * Xa[i, j]
    for it in range(max_iter):
        pg_abs = 0.0
        for i in range(n):
            if qii[i] == 0.0:
                continue
            g = 0.0
            for j in range(d):
                g += w[j] * Xa[i, j]
            g = y[i] * g - 1.0
            if alpha[i] == 0.0:
                pg = min(g, 0.0)
            elif alpha[i] == C:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_abs = max(pg_abs, abs(pg))
            if pg != 0.0:
                old = alpha[i]
                alpha[i] = min(max(old - g / qii[i], 0.0), C)
                step = (alpha[i] - old) * y[i]
                for j in range(d):
                    w[j] += step * Xa[i, j]
        if pg_abs < tol:
            return it + 1
    return max_iter


def _binary_svc(Xa, y_pm, C, tol, max_iter):
    alpha = np.zeros(Xa.shape[0])
    w = np.zeros(Xa.shape[1])
    _svc_dual_cd(Xa, y_pm, float(C), alpha, w, tol, max_iter)
    return w, alpha


def svc_dual(X, y_pm, C, tol=1e-10, max_iter=100_000):
    """Dual coefficients and primal weights of a binary hinge-loss SVM."""
    Xa = np.ascontiguousarray(_with_ones(np.asarray(X, dtype=np.float64)))
    w, alpha = _binary_svc(Xa, np.asarray(y_pm, dtype=np.float64), C, tol, max_iter)
    return alpha, w


def svc_fit(X, y, C, tol=1e-8, max_iter=10_000):
    """L2-regularized hinge-loss linear classifier (dual coordinate descent).

    The intercept is an extra, regularized, constant feature. More than
    two classes are handled one-vs-rest.
    """
    X, y = _check_xy(X, y)
    if C <= 0:
        raise InvalidInputError("C must be positive")
    classes = np.unique(y)
    if len(classes) < 2:
        raise DegenerateError("svc needs at least two classes")
    Xa = np.ascontiguousarray(_with_ones(X))
    if len(classes) == 2:
        y_pm = np.where(y == classes[1], 1.0, -1.0)
        w, _ = _binary_svc(Xa, y_pm, C, tol, max_iter)
    else:
        w = np.stack([_binary_svc(Xa, np.where(y == c, 1.0, -1.0), C, tol, max_iter)[0]
                      for c in classes])
    return LinearModel(w, classes=classes, params={"C": float(C)})


# ANOVA screening

def anova_f(X, y):
    """Univariate F statistics (regression for float y, one-way ANOVA for labels)."""
    X, y = _check_xy(X, y, min_samples=3)
    n = len(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        if y.dtype.kind in "iu":
            classes, inv = np.unique(y, return_inverse=True)
            k = len(classes)
            if k < 2:
                raise DegenerateError("anova needs at least two classes")
            counts = np.bincount(inv)
            means = np.stack([X[inv == c].mean(0) for c in range(k)])
            grand = X.mean(0)
            between = (counts[:, None] * (means - grand) ** 2).sum(0) / (k - 1)
            within = ((X - means[inv]) ** 2).sum(0) / max(n - k, 1)
            F = between / within
        else:
            Xc = X - X.mean(0)
            yc = y - y.mean()
            r = (Xc.T @ yc) / (np.sqrt((Xc ** 2).sum(0)) * np.sqrt(yc @ yc))
            F = r * r / (1 - r * r) * (n - 2)
    # constant columns carry no information
    return np.where(np.isnan(F), 0.0, F)


def anova_select(X, y, k):
    """Indices (sorted) of the ``k`` largest F statistics; ties favor smaller indices."""
    p = np.asarray(X).shape[1]
    if not 1 <= k <= p:
        raise InvalidInputError(f"k must lie in [1, {p}], got {k}")
    F = anova_f(X, y)
    return np.sort(np.argsort(-F, kind="stable")[:k])


# Estimator objects

@dataclass(frozen=True)
class BayesianRidge:
    config: BrrConfig = field(default_factory=BrrConfig)
    is_classifier = False

    def fit(self, X, y):
        return brr_fit(X, y, self.config)


@dataclass(frozen=True)
class ElasticNet:
    lambda1: float
    lambda2: float
    is_classifier = False

    def fit(self, X, y):
        return enet_fit(X, y, self.lambda1, self.lambda2)


@dataclass(frozen=True)
class LinearSVC:
    C: float = 0.01
    is_classifier = True

    def fit(self, X, y):
        return svc_fit(X, y, self.C)


ENET_LAMBDA1_FRACTIONS = (0.2, 0.1, 0.05, 0.01)
ENET_LAMBDA2_GRID = (0.1, 0.5, 1.0, 10.0, 100.0)
SVC_C_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
ANOVA_K_GRID = (50, 100, 250, 500)


def _select_by_cv(candidates, X, y, cv, score):
    """Index of the candidate with the best mean CV score (first on ties)."""
    best, best_score = 0, -np.inf
    for i, est in enumerate(candidates):
        try:
            mean, _ = cross_val_score(est, X, y, cv, score)
        except Exception:
            continue
        if mean > best_score:
            best, best_score = i, mean
    return best, best_score


@dataclass(frozen=True)
class ElasticNetCV:
    """Elastic net with ``lambda1`` relative to ``||X^T y||_inf`` chosen by inner CV."""

    lambda1_fractions: tuple = ENET_LAMBDA1_FRACTIONS
    lambda2_grid: tuple = ENET_LAMBDA2_GRID
    cv: FoldScheme = FoldScheme("kfold", 4)
    is_classifier = False

    def fit(self, X, y):
        X, y = _check_xy(X, y, min_samples=2)
        lam_max = enet_lambda_max(X, y)
        grid = [ElasticNet(f * lam_max, l2) for f in self.lambda1_fractions for l2 in self.lambda2_grid]
        i, s = _select_by_cv(grid, X, y, self.cv, "zeta")
        model = grid[i].fit(X, y)
        frac = self.lambda1_fractions[i // len(self.lambda2_grid)]
        return LinearModel(model.w, params={**model.params, "lambda1_fraction": frac,
                                            "lambda_max": lam_max, "cv_score": s})


@dataclass(frozen=True)
class LinearSVCCV:
    Cs: tuple = SVC_C_GRID
    cv: FoldScheme = FoldScheme("kfold", 4)
    is_classifier = True

    def fit(self, X, y):
        grid = [LinearSVC(C) for C in self.Cs]
        i, s = _select_by_cv(grid, X, y, self.cv, "kappa")
        model = grid[i].fit(X, y)
        return LinearModel(model.w, model.classes, params={**model.params, "cv_score": s})


@dataclass(frozen=True, eq=False)
class SelectedModel:
    """A model fitted on a subset of the columns."""

    features: np.ndarray
    model: object
    n_features: int
    params: dict = field(default_factory=dict)

    def predict(self, X):
        return self.model.predict(np.asarray(X)[:, self.features])

    @property
    def w(self):
        """Weights scattered back to all columns (intercept last)."""
        inner = np.atleast_2d(self.model.w)
        full = np.zeros((inner.shape[0], self.n_features + 1))
        full[:, self.features] = inner[:, :-1]
        full[:, -1] = inner[:, -1]
        return full[0] if np.ndim(self.model.w) == 1 else full


@dataclass(frozen=True)
class AnovaCV:
    """ANOVA screening with the number of kept features picked by inner CV."""

    estimator: object
    ks: tuple = ANOVA_K_GRID
    cv: FoldScheme = FoldScheme("kfold", 4)

    @property
    def is_classifier(self):
        return self.estimator.is_classifier

    def fit(self, X, y):
        X, y = _check_xy(X, y, min_samples=3)
        p = X.shape[1]
        ks = sorted({min(k, p) for k in self.ks})
        score = "kappa" if self.is_classifier else "zeta"
        grid = [_AnovaFixed(self.estimator, k) for k in ks]
        i, s = _select_by_cv(grid, X, y, self.cv, score)
        model = grid[i].fit(X, y)
        return SelectedModel(model.features, model.model, p, params={"k": ks[i], "cv_score": s,
                                                                     **getattr(model.model, "params", {})})


@dataclass(frozen=True)
class _AnovaFixed:
    estimator: object
    k: int

    def fit(self, X, y):
        feats = anova_select(X, y, self.k)
        return SelectedModel(feats, self.estimator.fit(np.asarray(X)[:, feats], y), np.asarray(X).shape[1])


def make_estimator(name, **kwargs):
    """Estimator from its id: ``brr``, ``enet``, ``svc``, ``svc-cv`` or ``anova+<id>``."""
    if name.startswith("anova+"):
        return AnovaCV(make_estimator(name[len("anova+"):], **kwargs))
    if name == "brr":
        return BayesianRidge(BrrConfig(**kwargs))
    if name == "enet":
        return ElasticNetCV(**kwargs)
    if name == "svc":
        return LinearSVC(**kwargs)
    if name == "svc-cv":
        return LinearSVCCV(**kwargs)
    raise InvalidInputError(f"unknown estimator {name!r}")
