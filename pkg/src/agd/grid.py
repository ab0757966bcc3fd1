"""
Grid-structured feature spaces: voxel grids, datasets, adjacency graphs
and weight maps, plus the on-disk dataset formats.

Features are the in-mask cells of a 3D grid, numbered x-fastest
(x, then y, then z). One-dimensional signals use dims ``(p, 1, 1)``.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError

RAW_MAGIC = b"AGD1"
RAW_FLAG_GROUPS = 1
RAW_FLAG_LABELS = 2


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """A 3D grid with a boolean mask selecting the ``p`` features.

    Parameters
    ----------
    dims : tuple of 3 ints
        Grid shape ``(d_x, d_y, d_z)``.
    mask : ndarray of bool, shape dims, optional
        In-mask cells. Defaults to the full grid.
    """

    dims: tuple
    mask: np.ndarray = None
    coords: np.ndarray = field(init=False, repr=False)
    _lookup: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise InvalidInputError(f"dims must be three integers >= 1, got {self.dims}")
        mask = np.ones(dims, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != dims:
            raise InvalidInputError(f"mask shape {mask.shape} does not match dims {dims}")
        mask = mask.copy()
        mask.flags.writeable = False
        # x-fastest flattening is Fortran order
        flat = np.flatnonzero(mask.ravel(order="F"))
        coords = np.stack(np.unravel_index(flat, dims, order="F"), axis=1).astype(np.intp)
        coords.flags.writeable = False
        lookup = np.full(dims, -1, dtype=np.intp)
        lookup[tuple(coords.T)] = np.arange(len(flat))
        lookup.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def line(cls, p):
        """Full 1D grid of ``p`` features."""
        return cls((p, 1, 1))

    @property
    def n_features(self):
        return len(self.coords)

    def index_of(self, coord):
        """Feature index of an in-mask grid coordinate."""
        coord = tuple(int(c) for c in coord)
        if any(c < 0 or c >= d for c, d in zip(coord, self.dims)):
            raise InvalidInputError(f"coordinate {coord} outside grid {self.dims}")
        idx = int(self._lookup[coord])
        if idx < 0:
            raise InvalidInputError(f"coordinate {coord} is outside the mask")
        return idx

    def coord_of(self, index):
        return tuple(int(c) for c in self.coords[index])

    def to_volume(self, values, fill=0.0):
        """Scatter a length-p vector back into a dims-shaped array."""
        values = np.asarray(values)
        if values.shape != (self.n_features,):
            raise InvalidInputError(f"expected {self.n_features} values, got shape {values.shape}")
        vol = np.full(self.dims, fill, dtype=np.result_type(values, type(fill)))
        vol[tuple(self.coords.T)] = values
        return vol

    def from_volume(self, volume):
        """Gather the in-mask values of a dims-shaped array (feature order)."""
        volume = np.asarray(volume)
        if volume.shape[:3] != self.dims:
            raise InvalidInputError(f"volume shape {volume.shape} does not match dims {self.dims}")
        return volume[tuple(self.coords.T)]

    def to_json(self):
        full = bool(self.mask.all())
        flat = None if full else np.flatnonzero(self.mask.ravel(order="F")).tolist()
        return {"dims": list(self.dims), "mask": flat}

    @classmethod
    def from_json(cls, obj):
        dims = tuple(obj["dims"])
        if obj.get("mask") is None:
            return cls(dims)
        mask = np.zeros(int(np.prod(dims)), dtype=bool)
        mask[np.asarray(obj["mask"], dtype=np.intp)] = True
        return cls(dims, mask.reshape(dims, order="F"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class ConnectivityGraph:
    """Symmetric adjacency over features, stored as CSR arrays.

    ``indices[indptr[i]:indptr[i + 1]]`` holds the sorted neighbors of ``i``.
    """

    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_edges(cls, n_features, edges):
        """Build from an iterable of undirected ``(i, j)`` pairs."""
        nbrs = [set() for _ in range(n_features)]
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                continue
            if not (0 <= i < n_features and 0 <= j < n_features):
                raise InvalidInputError(f"edge ({i}, {j}) outside 0..{n_features - 1}")
            nbrs[i].add(j)
            nbrs[j].add(i)
        return cls._from_sets(nbrs)

    @classmethod
    def _from_sets(cls, nbrs):
        counts = np.array([len(s) for s in nbrs], dtype=np.intp)
        indptr = np.zeros(len(nbrs) + 1, dtype=np.intp)
        np.cumsum(counts, out=indptr[1:])
        indices = np.fromiter((j for s in nbrs for j in sorted(s)), dtype=np.intp, count=int(indptr[-1]))
        return cls(indptr, indices)

    @property
    def n_features(self):
        return len(self.indptr) - 1

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degree(self):
        return np.diff(self.indptr)

    def edges(self):
        """Array of undirected edges ``(i, j)`` with ``i < j``."""
        rows = np.repeat(np.arange(self.n_features), self.degree())
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def as_dict(self):
        return {i: self.neighbors(i).tolist() for i in range(self.n_features)}


def build_connectivity(grid, order="face_6"):
    """Adjacency graph between in-mask features of ``grid``.

    ``face_6`` links cells sharing a face (6-connectivity in 3D, a chain
    in 1D). ``chain_1d`` links consecutive feature indices regardless of
    the grid geometry.
    """
    p = grid.n_features
    if p == 0:
        raise InvalidInputError("grid mask is empty")
    if order == "chain_1d":
        i = np.arange(p - 1)
        return ConnectivityGraph.from_edges(p, zip(i, i + 1))
    if order != "face_6":
        raise InvalidInputError(f"unknown connectivity order {order!r}")
    lookup = grid._lookup
    src, dst = [], []
    for axis in range(3):
        if grid.dims[axis] < 2:
            continue
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a = lookup[tuple(lo)].ravel()
        b = lookup[tuple(hi)].ravel()
        ok = (a >= 0) & (b >= 0)
        src.append(a[ok])
        dst.append(b[ok])
    if src:
        src = np.concatenate(src)
        dst = np.concatenate(dst)
    else:
        src = dst = np.empty(0, dtype=np.intp)
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    order_ = np.lexsort((cols, rows))
    rows, cols = rows[order_], cols[order_]
    indptr = np.zeros(p + 1, dtype=np.intp)
    np.cumsum(np.bincount(rows, minlength=p), out=indptr[1:])
    return ConnectivityGraph(indptr, cols.astype(np.intp))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design matrix ``X`` (n x p), target ``y`` and optional ``groups``.

    Integer-typed ``y`` marks a classification problem.
    """

    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise InvalidInputError(f"X must be 2D, got shape {X.shape}")
        y = np.array(self.y)
        if y.ndim != 1 or len(y) != X.shape[0]:
            raise InvalidInputError(f"y must have length {X.shape[0]}, got shape {y.shape}")
        if y.dtype.kind not in "iu":
            y = y.astype(np.float64)
        else:
            y = y.astype(np.int64)
        groups = self.groups
        if groups is not None:
            groups = np.array(groups, dtype=np.int64)
            if groups.shape != (X.shape[0],):
                raise InvalidInputError(f"groups must have length {X.shape[0]}, got shape {groups.shape}")
            groups.flags.writeable = False
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "groups", groups)

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def is_classification(self):
        return self.y.dtype.kind in "iu"

    def subset(self, rows):
        rows = np.asarray(rows)
        groups = None if self.groups is None else self.groups[rows]
        return Dataset(self.X[rows], self.y[rows], groups)


@dataclass(frozen=True, eq=False)
class WeightMap:
    """Per-feature values attached to a grid.

    ``missing`` flags features whose value could not be computed; their
    stored value is 0.
    """

    values: np.ndarray
    grid: VoxelGrid
    missing: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.grid.n_features,):
            raise InvalidInputError(f"expected {self.grid.n_features} values, got shape {values.shape}")
        missing = self.missing
        if missing is not None:
            missing = np.array(missing, dtype=bool)
            values[missing] = 0.0
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("weight map values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("feature_index,x,y,z,weight\n")
            for j, (c, v) in enumerate(zip(self.grid.coords, self.values)):
                w = "" if self.missing is not None and self.missing[j] else repr(float(v))
                fh.write(f"{j},{c[0]},{c[1]},{c[2]},{w}\n")

    @classmethod
    def from_csv(cls, path, grid):
        values = np.zeros(grid.n_features)
        missing = np.zeros(grid.n_features, dtype=bool)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                j = int(row[0])
                if row[4] == "":
                    missing[j] = True
                else:
                    values[j] = float(row[4])
        return cls(values, grid, missing if missing.any() else None)


def _fmt(v):
    return repr(float(v))


def save_dataset(dataset, path, format="csv"):
    """Write ``dataset`` as CSV or raw little-endian float64."""
    if format == "csv":
        _save_csv(dataset, path)
    elif format == "raw_f64":
        _save_raw(dataset, path)
    else:
        raise InvalidInputError(f"unknown dataset format {format!r}")


def load_dataset(path, format=None):
    """Read a dataset file; the format is inferred from the suffix if omitted."""
    path = Path(path)
    if format is None:
        format = "raw_f64" if path.suffix in (".raw", ".bin", ".f64") else "csv"
    if not path.exists():
        raise InvalidInputError(f"{path}: no such file")
    if format == "csv":
        return _load_csv(path)
    if format == "raw_f64":
        return _load_raw(path)
    raise InvalidInputError(f"unknown dataset format {format!r}")


def _save_csv(ds, path):
    buf = io.StringIO()
    header = [str(ds.n_samples), str(ds.n_features)]
    if ds.is_classification:
        header.append("labels")
    if ds.groups is not None:
        header.append("groups")
    buf.write(",".join(header) + "\n")
    for i in range(ds.n_samples):
        cells = [_fmt(v) for v in ds.X[i]]
        cells.append(str(int(ds.y[i])) if ds.is_classification else _fmt(ds.y[i]))
        if ds.groups is not None:
            cells.append(str(int(ds.groups[i])))
        buf.write(",".join(cells) + "\n")
    Path(path).write_text(buf.getvalue())


def _load_csv(path):
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file, expected header 'n,p'", path, row=1)
    head = [t.strip() for t in lines[0].split(",")]
    if len(head) < 2:
        raise ParseError("header must start with 'n,p'", path, row=1)
    try:
        n, p = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(f"header n,p must be integers, got {lines[0]!r}", path, row=1) from None
    flags = set(head[2:])
    unknown = flags - {"labels", "groups"}
    if unknown:
        raise ParseError(f"unknown header flags {sorted(unknown)}", path, row=1)
    has_groups = "groups" in flags
    labels = "labels" in flags
    width = p + 1 + has_groups
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise ParseError(f"header declares {n} rows, found {len(body)}", path, row=len(body) + 2)
    X = np.empty((n, p))
    y = np.empty(n, dtype=np.int64 if labels else np.float64)
    groups = np.empty(n, dtype=np.int64) if has_groups else None
    for i, line in enumerate(body):
        cells = line.split(",")
        if len(cells) != width:
            raise ParseError(f"expected {width} values, found {len(cells)}", path, row=i + 2)
        for j, cell in enumerate(cells):
            try:
                if j < p:
                    X[i, j] = float(cell)
                elif j == p:
                    y[i] = int(cell) if labels else float(cell)
                else:
                    groups[i] = int(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", path, row=i + 2, column=j + 1) from None
    return Dataset(X, y, groups)


def _save_raw(ds, path):
    flags = (RAW_FLAG_GROUPS if ds.groups is not None else 0) | (RAW_FLAG_LABELS if ds.is_classification else 0)
    cols = [ds.X, ds.y.astype(np.float64)[:, None]]
    if ds.groups is not None:
        cols.append(ds.groups.astype(np.float64)[:, None])
    body = np.ascontiguousarray(np.hstack(cols), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC + struct.pack("<III", ds.n_samples, ds.n_features, flags))
        fh.write(body.tobytes())


def _load_raw(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != RAW_MAGIC:
        raise ParseError("missing AGD1 header", path)
    n, p, flags = struct.unpack("<III", data[4:16])
    width = p + 1 + bool(flags & RAW_FLAG_GROUPS)
    expected = 16 + 8 * n * width
    if len(data) != expected:
        raise ParseError(f"expected {expected} bytes for n={n}, p={p}, found {len(data)}", path)
    body = np.frombuffer(data, dtype="<f8", offset=16).reshape(n, width)
    y = body[:, p]
    if flags & RAW_FLAG_LABELS:
        y = y.astype(np.int64)
    groups = body[:, p + 1].astype(np.int64) if flags & RAW_FLAG_GROUPS else None
    return Dataset(body[:, :p], y, groups)
