"""Searchlight decoding: cross-validated score of a small sphere around every voxel."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .estimators import make_estimator
from .evaluation import FoldScheme, cross_val_score
from .grid import WeightMap


@dataclass(frozen=True)
class SearchlightSpec:
    radius: float = 2.0
    inner_estimator: str = "brr"
    cv: FoldScheme = field(default_factory=lambda: FoldScheme("kfold", 4))
    score: str = "zeta"

    def __post_init__(self):
        if self.radius < 1:
            raise InvalidInputError("radius must be >= 1")


def ball_offsets(radius):
    """Integer offsets with Euclidean norm <= radius."""
    r = int(np.floor(radius))
    ax = np.arange(-r, r + 1)
    off = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return off[(off ** 2).sum(axis=1) <= radius * radius + 1e-9]


def sphere_neighbors(grid, center, radius, offsets=None):
    """Sorted in-mask features within ``radius`` voxels of ``center``.

    ``center`` is a feature index or a grid coordinate triple.
    """
    if np.ndim(center) == 0:
        if not 0 <= int(center) < grid.n_features:
            raise InvalidInputError(f"feature {center} outside the mask")
        c = grid.coords[int(center)]
    else:
        c = np.asarray(grid.coords[grid.index_of(center)])
    if offsets is None:
        offsets = ball_offsets(radius)
    pts = c + offsets
    dims = np.asarray(grid.dims)
    pts = pts[np.all((pts >= 0) & (pts < dims), axis=1)]
    idx = grid._lookup[tuple(pts.T)]
    return np.sort(idx[idx >= 0])


def searchlight_map(dataset, grid, spec=None, n_jobs=1):
    """Mean cross-validated score of each voxel's sphere, stored at the voxel.

    Voxels whose estimator fails are flagged in ``missing``.
    """
    spec = spec or SearchlightSpec()
    if dataset.n_features != grid.n_features:
        raise InvalidInputError(f"dataset has {dataset.n_features} features, grid has {grid.n_features}")
    est = make_estimator(spec.inner_estimator)
    offsets = ball_offsets(spec.radius)
    X, y = dataset.X, dataset.y

    def one(j):
        idx = sphere_neighbors(grid, j, spec.radius, offsets)
        try:
            mean, _ = cross_val_score(est, X[:, idx], y, spec.cv, spec.score, dataset.groups)
        except Exception:
            return np.nan
        return mean

    voxels = range(grid.n_features)
    if n_jobs == 1:
        scores = [one(j) for j in voxels]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            scores = list(pool.map(one, voxels))
    scores = np.asarray(scores, dtype=np.float64)
    missing = ~np.isfinite(scores)
    return WeightMap(np.where(missing, 0.0, scores), grid, missing if missing.any() else None)
