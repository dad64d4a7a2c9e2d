"""
Lattice models of flat geometries
=================================

Finite grid samplings of a truncated Euclidean space (``box``) or of a flat
torus (``torus``), together with the metric and set operations used by the
rest of the package: distances, open balls, closed outer penumbras and the
inner penumbra of an exhaustion stage.

Sites are ordered lexicographically by axis (C order of the underlying grid),
so a site index is stable across runs and across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

__all__ = [
    "GeometryError",
    "LatticeModel",
    "Region",
    "build_box_lattice",
    "build_torus_lattice",
    "distance",
    "pairwise_distance",
    "ball",
    "outer_penumbra",
    "inner_penumbra_U",
    "distance_to_complement",
    "region_from_mask",
    "full_region",
]

DEFAULT_MAX_SITES = 4_000_000
_COMMENSURATE_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for invalid lattice parameters or foreign regions."""


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """A regular grid sampling of a flat box or flat torus.

    Attributes
    ----------
    dim : int
        Dimension ``n`` of the model space.
    kind : {"box", "torus"}
    extents : tuple of float
        Half widths (box) or circumferences (torus), one per axis.
    h : float
        Grid spacing, identical on every axis.
    shape : tuple of int
        Number of sites per axis.
    ints : ndarray, shape (N, n)
        Integer grid coordinates; the physical coordinate is ``ints * h``.
        Box coordinates are centred on the origin, torus coordinates run over
        ``0 .. shape[i]-1``.
    """

    dim: int
    kind: str
    extents: tuple[float, ...]
    h: float
    shape: tuple[int, ...]
    ints: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return int(self.ints.shape[0])

    @property
    def weight(self) -> float:
        """Quadrature weight ``h**n`` of a single site."""
        return float(self.h**self.dim)

    @property
    def sites(self) -> np.ndarray:
        """Physical site coordinates, shape ``(N, n)``."""
        return self.ints * self.h

    @property
    def periods(self) -> np.ndarray | None:
        if self.kind != "torus":
            return None
        return np.asarray(self.shape, dtype=float) * self.h

    @property
    def volume(self) -> float:
        return self.n_sites * self.weight

    def index_of(self, ints: np.ndarray) -> np.ndarray:
        """Site indices of integer coordinates (rows of ``ints``).

        Raises ``GeometryError`` for coordinates that are not lattice sites.
        """
        ints = np.atleast_2d(np.asarray(ints, dtype=np.int64))
        if self.kind == "torus":
            grid = np.mod(ints, self.shape)
        else:
            half = (np.asarray(self.shape) - 1) // 2
            grid = ints + half
            if np.any(grid < 0) or np.any(grid >= np.asarray(self.shape)):
                raise GeometryError("coordinates outside the box lattice")
        return np.ravel_multi_index(tuple(grid.T), self.shape)

    def grid_view(self, values: np.ndarray) -> np.ndarray:
        """Reshape a per-site array to the grid shape."""
        return np.asarray(values).reshape(self.shape)


@dataclass(frozen=True, eq=False)
class Region:
    """A subset of lattice sites.

    ``indices`` is sorted and duplicate free; ``tag`` is a free-form label.
    """

    model: LatticeModel
    indices: np.ndarray
    tag: str = ""

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= self.model.n_sites):
            raise GeometryError(f"region {self.tag!r} has indices outside the model")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def volume(self) -> float:
        return self.model.weight * len(self)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.model.n_sites, dtype=bool)
        m[self.indices] = True
        return m

    def complement(self, tag: str | None = None) -> "Region":
        return region_from_mask(self.model, ~self.mask, tag or f"complement({self.tag})")

    def __and__(self, other: "Region") -> "Region":
        _check_same_model(self, other)
        return Region(self.model, np.intersect1d(self.indices, other.indices),
                      f"{self.tag}&{other.tag}")

    def __or__(self, other: "Region") -> "Region":
        _check_same_model(self, other)
        return Region(self.model, np.union1d(self.indices, other.indices),
                      f"{self.tag}|{other.tag}")

    def __sub__(self, other: "Region") -> "Region":
        _check_same_model(self, other)
        return Region(self.model, np.setdiff1d(self.indices, other.indices),
                      f"{self.tag}-{other.tag}")

    def issubset(self, other: "Region") -> bool:
        _check_same_model(self, other)
        return bool(np.all(np.isin(self.indices, other.indices)))


def _check_same_model(a: Region, b: Region) -> None:
    if a.model is not b.model:
        raise GeometryError(f"regions {a.tag!r} and {b.tag!r} live on different models")


def _as_tuple(values, n: int, name: str) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise GeometryError(f"{name} must have {n} entries, got {arr.size}")
    return tuple(float(v) for v in arr)


def _grid_ints(axes: Sequence[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64)


def build_box_lattice(n: int, half_widths, h: float,
                      max_sites: int = DEFAULT_MAX_SITES) -> LatticeModel:
    """Grid on ``prod_i [-L_i, L_i]`` with spacing ``h``; the origin is a site.

    Per axis the sites are ``k*h`` for integers ``|k| <= floor(L_i/h)``.

    Examples
    --------
    >>> build_box_lattice(1, 4, 1.0).n_sites
    9
    >>> build_box_lattice(2, (1, 1), 0.5).n_sites
    25
    """
    if n < 1:
        raise GeometryError("dimension must be >= 1")
    if not h > 0:
        raise GeometryError("spacing h must be positive")
    L = _as_tuple(half_widths, n, "half_widths")
    if min(L) <= 0:
        raise GeometryError("half widths must be positive")
    K = [int(np.floor(l / h + _COMMENSURATE_TOL)) for l in L]
    shape = tuple(2 * k + 1 for k in K)
    if int(np.prod(shape)) > max_sites:
        raise GeometryError(f"{int(np.prod(shape))} sites exceed the budget of {max_sites}")
    ints = _grid_ints([np.arange(-k, k + 1) for k in K])
    return LatticeModel(n, "box", L, float(h), shape, ints)


def build_torus_lattice(n: int, circumferences, h: float,
                        max_sites: int = DEFAULT_MAX_SITES) -> LatticeModel:
    """Periodic grid with ``C_i / h`` sites on axis ``i``.

    Each circumference must be an integer multiple of ``h``.
    """
    if n < 1:
        raise GeometryError("dimension must be >= 1")
    if not h > 0:
        raise GeometryError("spacing h must be positive")
    C = _as_tuple(circumferences, n, "circumferences")
    counts = []
    for c in C:
        q = c / h
        k = int(round(q))
        if k < 1 or abs(q - k) > 1e-9 * max(1.0, q):
            raise GeometryError(f"circumference {c} is not an integer multiple of h={h}")
        counts.append(k)
    shape = tuple(counts)
    if int(np.prod(shape)) > max_sites:
        raise GeometryError(f"{int(np.prod(shape))} sites exceed the budget of {max_sites}")
    ints = _grid_ints([np.arange(k) for k in counts])
    return LatticeModel(n, "torus", C, float(h), shape, ints)


def _displacement(model: LatticeModel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if model.kind == "torus":
        P = model.periods
        diff = diff - P * np.round(diff / P)
    return diff


def distance(model: LatticeModel, p: int, q: int) -> float:
    """Euclidean (box) or wrapped Euclidean (torus) distance between sites."""
    x = model.sites
    return float(np.linalg.norm(_displacement(model, x[p], x[q])))


def pairwise_distance(model: LatticeModel, rows, cols=None) -> np.ndarray:
    """Distance matrix between two lists of site indices."""
    x = model.sites
    rows = np.atleast_1d(rows)
    cols = rows if cols is None else np.atleast_1d(cols)
    diff = _displacement(model, x[rows][:, None, :], x[cols][None, :, :])
    return np.sqrt(np.sum(diff**2, axis=-1))


def distances_from(model: LatticeModel, p: int) -> np.ndarray:
    x = model.sites
    return np.sqrt(np.sum(_displacement(model, x, x[p]) ** 2, axis=-1))


def _make_tree(model: LatticeModel, points: np.ndarray) -> cKDTree:
    if model.kind == "torus":
        P = model.periods
        # cKDTree wants coordinates in [0, P); torus coordinates already are.
        return cKDTree(np.mod(points, P), boxsize=P)
    return cKDTree(points)


def region_from_mask(model: LatticeModel, mask: np.ndarray, tag: str = "") -> Region:
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.size != model.n_sites:
        raise GeometryError("mask length does not match the model")
    return Region(model, np.flatnonzero(mask), tag)


def full_region(model: LatticeModel, tag: str = "M") -> Region:
    return Region(model, np.arange(model.n_sites), tag)


def _check_region(model: LatticeModel, X: Region) -> None:
    if X.model is not model:
        raise GeometryError(f"region {X.tag!r} is not a subset of this model")


def ball(model: LatticeModel, center: int, r: float) -> Region:
    """Open ball ``{m : d(m, center) < r}``.

    A site exactly at distance ``r`` is excluded; on a lattice this only
    matters when ``r`` is itself a lattice distance.
    """
    if r < 0:
        raise GeometryError("radius must be nonnegative")
    d = distances_from(model, center)
    return region_from_mask(model, d < r, f"B({center},{r:g})")


def _distance_to_set(model: LatticeModel, X: Region) -> np.ndarray:
    if len(X) == 0:
        return np.full(model.n_sites, np.inf)
    tree = _make_tree(model, model.sites[X.indices])
    d, _ = tree.query(model.sites, k=1)
    return d


def outer_penumbra(model: LatticeModel, X: Region, r: float) -> Region:
    """Closed penumbra ``{m : d(m, X) <= r}``; at ``r = 0`` this is ``X``."""
    if r < 0:
        raise GeometryError("radius must be nonnegative")
    _check_region(model, X)
    d = _distance_to_set(model, X)
    return region_from_mask(model, d <= r * (1 + 1e-12), f"Pen+({X.tag},{r:g})")


def distance_to_complement(model: LatticeModel, X: Region) -> np.ndarray:
    """Per-site distance to the nearest lattice site outside ``X``.

    Uses an exact Euclidean distance transform on the grid; torus grids are
    padded periodically. Sites outside ``X`` get 0. If ``X`` is everything,
    the result is ``inf`` everywhere.
    """
    _check_region(model, X)
    inside = model.grid_view(X.mask)
    if inside.all():
        return np.full(model.n_sites, np.inf)
    if model.kind == "torus":
        pad = [(s, s) for s in model.shape]
        padded = np.pad(inside, pad, mode="wrap")
        edt = ndimage.distance_transform_edt(padded, sampling=model.h)
        sl = tuple(slice(s, 2 * s) for s in model.shape)
        return edt[sl].ravel()
    return ndimage.distance_transform_edt(inside, sampling=model.h).ravel()


def inner_penumbra_U(model: LatticeModel, U: Region, Mj: Region, r: float) -> Region:
    """``{m in U & Mj : d(m, M - Mj) >= r}``.

    Each site stands for the cell of width ``h`` around it, so the distance to
    ``M - Mj`` is measured to the nearest cell face: the site distance to the
    complement minus ``h/2``. At ``r = 0`` the result is ``U & Mj``.

    The complement is taken inside the lattice, so the lattice must extend
    beyond ``Mj`` for the result to match the untruncated space.
    """
    if r < 0:
        raise GeometryError("radius must be nonnegative")
    _check_region(model, U)
    _check_region(model, Mj)
    d = distance_to_complement(model, Mj) - 0.5 * model.h
    keep = (U.mask & Mj.mask) & (d >= r * (1 - 1e-12))
    return region_from_mask(model, keep, f"Pen-U({U.tag},{Mj.tag},{r:g})")
