"""
Synthetic benchmarks: a 1D block-sparse regression problem and smoothed
3D volumes with four small regions of interest.

All randomness derives from ``spec.seed`` through named
``numpy.random.SeedSequence`` children, so every part can be regenerated
on its own.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidInputError
from .grid import Dataset, VoxelGrid, WeightMap


def gaussian_kernel(sigma, truncate=4.0):
    """Sampled Gaussian truncated at ``truncate * sigma``, normalized to unit sum."""
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    radius = int(truncate * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(volume, sigma, truncate=4.0):
    """Separable Gaussian smoothing along every axis with zero padding."""
    kernel = gaussian_kernel(sigma, truncate)
    out = np.asarray(volume, dtype=np.float64)
    for axis in range(out.ndim):
        out = correlate1d(out, kernel, axis=axis, mode="constant", cval=0.0)
    return out


@dataclass(frozen=True)
class Sim1dSpec:
    p: int = 200
    n: int = 150
    supports: tuple = ((20, 30), (50, 60))
    weight_ranges: tuple = ((0.75, 1.25), (-1.25, -0.75))
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise InvalidInputError("n and p must be positive")
        if len(self.supports) != len(self.weight_ranges):
            raise InvalidInputError("one weight range is needed per support")
        for lo, hi in self.supports:
            if not 0 <= lo <= hi < self.p:
                raise InvalidInputError(f"support [{lo}, {hi}] outside [0, {self.p})")
        if self.noise_std < 0:
            raise InvalidInputError("noise_std must be nonnegative")

    def to_json(self):
        return {"kind": "1d", **asdict(self)}


def _streams(seed, names):
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(c) for name, c in zip(names, children)}


def true_weights_1d(spec):
    """The weight vector used by ``simulate_1d(spec)``."""
    rng = _streams(spec.seed, ("weights", "X", "noise"))["weights"]
    w = np.zeros(spec.p)
    for (lo, hi), (a, b) in zip(spec.supports, spec.weight_ranges):
        w[lo:hi + 1] = rng.uniform(a, b, size=hi - lo + 1)
    return w


def simulate_1d(spec):
    """``y = X w + noise`` with standard normal ``X`` and block-sparse ``w``."""
    rngs = _streams(spec.seed, ("weights", "X", "noise"))
    w = true_weights_1d(spec)
    X = rngs["X"].standard_normal((spec.n, spec.p))
    y = X @ w + spec.noise_std * rngs["noise"].standard_normal(spec.n)
    return Dataset(X, y)


@dataclass(frozen=True)
class Sim3dSpec:
    n: int = 100
    dims: tuple = (12, 12, 12)
    roi_size: int = 2
    roi_corners: tuple = ((2, 2, 2), (2, 8, 8), (8, 2, 8), (8, 8, 2))
    roi_weights: tuple = (-0.5, 0.5, -0.5, 0.5)
    sigma: float = 2.0
    snr_db: float = 5.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "roi_corners", tuple(tuple(int(c) for c in rc) for rc in self.roi_corners))
        object.__setattr__(self, "roi_weights", tuple(float(w) for w in self.roi_weights))
        if self.n < 2:
            raise InvalidInputError("n must be at least 2")
        if len(self.roi_corners) != len(self.roi_weights):
            raise InvalidInputError("one weight is needed per ROI")
        if self.sigma <= 0:
            raise InvalidInputError("sigma must be positive")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise InvalidInputError("snr_db must be a number or +inf")
        taken = np.zeros(self.dims, dtype=bool)
        for corner in self.roi_corners:
            if any(c < 0 or c + self.roi_size > d for c, d in zip(corner, self.dims)):
                raise InvalidInputError(f"ROI at {corner} does not fit in {self.dims}")
            box = tuple(slice(c, c + self.roi_size) for c in corner)
            if taken[box].any():
                raise InvalidInputError(f"ROI at {corner} overlaps another ROI")
            taken[box] = True

    @property
    def grid(self):
        return VoxelGrid(self.dims)

    def weight_volume(self):
        vol = np.zeros(self.dims)
        for corner, w in zip(self.roi_corners, self.roi_weights):
            vol[tuple(slice(c, c + self.roi_size) for c in corner)] = w
        return vol

    def to_json(self):
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["roi_corners"] = [list(c) for c in self.roi_corners]
        d["roi_weights"] = list(self.roi_weights)
        d["snr_db"] = self.snr_db if math.isfinite(self.snr_db) else "inf"
        return {"kind": "3d", **d}


@dataclass(frozen=True, eq=False)
class Sim3d:
    """Output of ``simulate_3d``; unpacks as ``(train, test, true_weights)``."""

    train: Dataset
    test: Dataset
    true_weights: WeightMap
    roi: np.ndarray
    train_supports: np.ndarray
    test_supports: np.ndarray
    train_clean: np.ndarray
    test_clean: np.ndarray
    noise_std: tuple

    def __iter__(self):
        return iter((self.train, self.test, self.true_weights))


def _simulate_set(spec, seedseq, grid, roi, w_roi):
    children = seedseq.spawn(spec.n + 1)
    n_active = len(roi) // 2
    X = np.empty((spec.n, grid.n_features))
    supports = np.empty((spec.n, n_active), dtype=np.intp)
    clean = np.empty(spec.n)
    for l in range(spec.n):
        rng = np.random.default_rng(children[l])
        vol = gaussian_smooth(rng.standard_normal(spec.dims), spec.sigma)
        X[l] = grid.from_volume(vol)
        active = np.sort(rng.choice(len(roi), size=n_active, replace=False))
        supports[l] = roi[active]
        clean[l] = X[l, roi[active]] @ w_roi[active]
    if math.isinf(spec.snr_db):
        gamma = 0.0
    else:
        gamma = np.linalg.norm(clean) / (math.sqrt(spec.n) * 10.0 ** (spec.snr_db / 20.0))
    noise = gamma * np.random.default_rng(children[-1]).standard_normal(spec.n)
    return Dataset(X, clean + noise), supports, clean, float(gamma)


def simulate_3d(spec):
    """Independent train and test sets of smoothed volumes.

    For each image, half of the ROI voxels (drawn at random) carry their
    weight; the noise level is set from the realized noiseless target so
    that ``20 log10(||signal|| / (std * sqrt(n)))`` equals ``spec.snr_db``.
    """
    grid = spec.grid
    w = grid.from_volume(spec.weight_volume())
    roi = np.flatnonzero(w)
    train_ss, test_ss = np.random.SeedSequence(spec.seed).spawn(2)
    train, tr_sup, tr_clean, tr_g = _simulate_set(spec, train_ss, grid, roi, w[roi])
    test, te_sup, te_clean, te_g = _simulate_set(spec, test_ss, grid, roi, w[roi])
    return Sim3d(train, test, WeightMap(w, grid), roi, tr_sup, te_sup, tr_clean, te_clean, (tr_g, te_g))
