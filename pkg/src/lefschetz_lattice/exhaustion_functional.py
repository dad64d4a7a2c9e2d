"""
Exhaustions, averaged integrals and localized traces
====================================================

An :class:`ExhaustionPlan` bundles a lattice model, a set ``U`` and a nested
family ``M_j``. Stage ``j`` works on ``U_j = U & M_j``; every volume is a
lattice volume (site count times ``h**n``), so the two sides of any
comparison share one measure.

Limits over ``j`` are represented by :class:`AveragedFunctional`: the list of
stage averages together with its accumulation points. A functional
associated with the exhaustion is any choice among those points, so the
selection rule is explicit.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import (LatticeModel, Region, build_box_lattice,
                       full_region, inner_penumbra_U, region_from_mask)
from .isometry import IsometryPair, displacement_lower_bound

__all__ = [
    "ExhaustionError",
    "ExhaustionPlan",
    "Cluster",
    "AveragedFunctional",
    "make_plan",
    "exhaustion_builder",
    "region_from_spec",
    "u_regularity_ratio",
    "reflection_u_regularity",
    "averaged_integral",
    "accumulation_points",
    "polynomial_bump",
    "zeta_example",
    "stage_density",
    "tr_u_phi",
    "tr_u_phi_functional",
]

SELECTION_RULES = ("first", "min", "max", "nearest")


class ExhaustionError(ValueError):
    pass


# --- exhaustion families ------------------------------------------------------

def _cube_region(model: LatticeModel, half_width: float, tag: str) -> Region:
    x = model.sites
    if model.kind == "torus":
        P = model.periods
        x = x - P * np.round(x / P)
    inside = np.max(np.abs(x), axis=1) <= half_width * (1 + 1e-12) + 1e-12
    return region_from_mask(model, inside, tag)


def exhaustion_builder(model: LatticeModel, family: str = "cubes", scale: float = 1.0,
                       radii: Sequence[float] | None = None) -> Callable[[int], Region]:
    """Map ``j -> M_j``.

    ``cubes``
        ``[-j*scale, j*scale]**n`` (``j >= 1``).
    ``dyadic``
        ``[-scale * 2**(j+1), scale * 2**(j+1)]**n`` (``j >= 0``).
    ``radii``
        ``[-radii[j], radii[j]]**n`` for an increasing custom list.
    ``full``
        every site at every stage (compact models).
    """
    if family == "cubes":
        return lambda j: _cube_region(model, j * scale, f"M_{j}")
    if family == "dyadic":
        return lambda j: _cube_region(model, scale * 2.0 ** (j + 1), f"M_{j}")
    if family == "radii":
        if not radii:
            raise ExhaustionError("the radii family needs a list of radii")
        r = np.asarray(radii, dtype=float)
        if np.any(np.diff(r) < 0):
            raise ExhaustionError("custom radii must be nondecreasing")

        def build(j: int) -> Region:
            if not 0 <= j < r.size:
                raise ExhaustionError(f"stage {j} outside the custom radii list")
            return _cube_region(model, r[j], f"M_{j}")
        return build
    if family == "full":
        return lambda j: full_region(model, f"M_{j}")
    raise ExhaustionError(f"unknown exhaustion family {family!r}")


def _fixed_set_distance(model: LatticeModel, pair: IsometryPair) -> np.ndarray:
    """Continuum distance from each site to the fixed set of ``pair``."""
    O, b = pair.O, pair.b
    n = model.dim
    x = model.sites
    if model.kind == "torus":
        if not np.allclose(O, np.diag(np.diag(O))):
            raise ExhaustionError("tubes on a torus need a diagonal isometry")
        flipped = np.diag(O) < 0
        if np.any(np.abs(b[~flipped]) > 1e-12):
            return np.full(model.n_sites, np.inf)  # translation part along a fixed axis
        P = model.periods
        d2 = np.zeros(model.n_sites)
        for i in np.flatnonzero(flipped):
            # fixed coordinates b_i/2 + k P_i/2
            half = P[i] / 2
            off = x[:, i] - b[i] / 2
            off = off - half * np.round(off / half)
            d2 += off**2
        return np.sqrt(d2)
    A = np.eye(n) - O
    x0, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.linalg.norm(A @ x0 - b) > 1e-9:
        return np.full(model.n_sites, np.inf)
    # distance to x0 + ker(A) is the norm of the component in range(A^T)
    U, s, _ = np.linalg.svd(A.T)
    R = U[:, s > 1e-12]
    return np.linalg.norm((x - x0) @ R, axis=1)


def region_from_spec(model: LatticeModel, spec: dict, pair: IsometryPair | None = None) -> Region:
    """Build ``U`` from a config block.

    ``{"kind": "all"}``, ``{"kind": "intervals", "bounds": [[lo, hi] | None, ...]}``
    (open intervals, ``None`` for a whole axis) or
    ``{"kind": "tube", "radius": rho}`` (open tube around the fixed set).
    """
    kind = spec.get("kind", "all")
    if kind == "all":
        return full_region(model, "U")
    if kind == "intervals":
        bounds = spec["bounds"]
        if len(bounds) != model.dim:
            raise ExhaustionError("one interval per axis is required")
        mask = np.ones(model.n_sites, dtype=bool)
        for i, bd in enumerate(bounds):
            if bd is None:
                continue
            lo, hi = bd
            mask &= (model.sites[:, i] > lo) & (model.sites[:, i] < hi)
        return region_from_mask(model, mask, "U")
    if kind == "tube":
        if pair is None:
            raise ExhaustionError("a tube needs the isometry to locate the fixed set")
        d = _fixed_set_distance(model, pair)
        return region_from_mask(model, d < float(spec["radius"]), "U")
    raise ExhaustionError(f"unknown U kind {kind!r}")


# --- plan ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExhaustionPlan:
    """``U``, the exhaustion ``M_j`` and derived stage data."""

    model: LatticeModel = field(repr=False)
    U: Region = field(repr=False)
    builder: Callable[[int], Region] = field(repr=False)
    j_max: int
    j_min: int = 0
    pair: IsometryPair | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.U.model is not self.model:
            raise ExhaustionError("U does not belong to the plan's model")
        if self.j_max < self.j_min:
            raise ExhaustionError("j_max must be >= j_min")
        if self.pair is not None:
            mask = self.U.mask
            if not np.array_equal(mask[self.pair.perm], mask):
                raise ExhaustionError("U is not invariant under the isometry")
        object.__setattr__(self, "_cache", {})

    @property
    def stages(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def M(self, j: int) -> Region:
        if not self.j_min <= j <= self.j_max:
            raise ExhaustionError(f"stage {j} outside [{self.j_min}, {self.j_max}]")
        key = ("M", j)
        if key not in self._cache:
            Mj = self.builder(j)
            if Mj.model is not self.model:
                raise ExhaustionError("builder returned a region of another model")
            self._cache[key] = Mj
        return self._cache[key]

    def U_j(self, j: int) -> Region:
        key = ("U", j)
        if key not in self._cache:
            Uj = self.U & self.M(j)
            object.__setattr__(Uj, "tag", f"U_{j}")
            self._cache[key] = Uj
        return self._cache[key]

    def vol_U(self, j: int) -> float:
        return self.U_j(j).volume

    @property
    def delta(self) -> float:
        """Lower bound of ``d(phi(m), m)`` off ``U`` (``inf`` when ``U`` is everything)."""
        if self.pair is None:
            raise ExhaustionError("the plan has no isometry")
        if "delta" not in self._cache:
            self._cache["delta"] = displacement_lower_bound(self.model, self.pair,
                                                            self.U.complement())
        return self._cache["delta"]

    def check(self) -> dict:
        """Nestedness, exhaustion at ``j_max`` and the displacement bound."""
        nested = all(self.M(j).issubset(self.M(j + 1)) for j in range(self.j_min, self.j_max))
        if not nested:
            raise ExhaustionError("the sets M_j are not nested")
        out = {"nested": True, "exhausts": len(self.M(self.j_max)) == self.model.n_sites}
        if self.pair is not None:
            out["delta"] = self.delta
            out["delta_positive"] = self.delta > 0
        return out


def make_plan(model: LatticeModel, U: Region | dict | None = None, family: str = "cubes",
              j_max: int = 8, j_min: int | None = None, scale: float = 1.0,
              radii: Sequence[float] | None = None,
              pair: IsometryPair | None = None) -> ExhaustionPlan:
    """Convenience constructor; ``U`` may be a region, a spec dict or ``None`` (all sites)."""
    if U is None:
        U = full_region(model, "U")
    elif isinstance(U, dict):
        U = region_from_spec(model, U, pair)
    if j_min is None:
        j_min = 1 if family == "cubes" else 0
    if family == "radii" and radii is not None:
        j_max = min(j_max, len(radii) - 1)
    builder = exhaustion_builder(model, family, scale, radii)
    return ExhaustionPlan(model, U, builder, j_max, j_min, pair)


# --- stage quantities ---------------------------------------------------------

def u_regularity_ratio(plan: ExhaustionPlan, r: float, j: int) -> float:
    """``(vol U_j - vol Pen^-_U(U_j, r)) / vol U_j``."""
    if r < 0:
        raise ExhaustionError("r must be nonnegative")
    Uj = plan.U_j(j)
    if len(Uj) == 0:
        raise ExhaustionError(f"U_{j} is empty")
    if r == 0:
        return 0.0
    pen = inner_penumbra_U(plan.model, plan.U, plan.M(j), r)
    return (len(Uj) - len(pen)) / len(Uj)


def reflection_u_regularity(n: int, k: int, r: float, j: int, h: float) -> tuple[float, float]:
    """Lattice and continuum U-regularity ratio for the reference exhaustion.

    ``U = (-1, 1)**k x R**(n-k)`` (invariant under reflecting the first ``k``
    axes) and ``M_j = [-j, j]**n``; the continuum ratio is
    ``1 - ((j - r)/j)**(n - k)`` for ``j >= r + 1``. The reflected axes
    only need to cover ``U``, so the lattice is narrow there.
    """
    if not 0 < k < n:
        raise ExhaustionError("need 0 < k < n")
    half = [2.0] * k + [j + r + 2 * h] * (n - k)
    model = build_box_lattice(n, half, h)
    mask = np.all(np.abs(model.sites[:, :k]) < 1, axis=1)
    U = region_from_mask(model, mask, "U")
    plan = ExhaustionPlan(model, U, exhaustion_builder(model, "cubes", 1.0), j, j)
    return u_regularity_ratio(plan, r, j), 1 - ((j - r) / j) ** (n - k)


def _density_values(plan: ExhaustionPlan, density) -> np.ndarray:
    if callable(density):
        vals = np.asarray(density(plan.model.sites))
    else:
        vals = np.asarray(density)
    if vals.ndim == 0:
        vals = np.full(plan.model.n_sites, vals)
    if vals.shape[0] != plan.model.n_sites:
        raise ExhaustionError("density must give one value per site")
    return vals


def averaged_integral(plan: ExhaustionPlan, density, j: int) -> float:
    """``(1 / vol U_j) * sum_{m in U_j} h**n density(m)``.

    ``density`` is an array over sites, a scalar, or a callable on the site
    coordinates.
    """
    Uj = plan.U_j(j)
    if len(Uj) == 0:
        raise ExhaustionError(f"U_{j} is empty")
    vals = _density_values(plan, density)
    return float(np.mean(vals[Uj.indices]))


# --- accumulation points ------------------------------------------------------

@dataclass(frozen=True)
class Cluster:
    center: float
    indices: tuple[int, ...]  # positions in the stage sequence

    @property
    def size(self) -> int:
        return len(self.indices)


def accumulation_points(seq: Sequence[float], cluster_tol: float = 1e-3,
                        burn_in: float = 0.25, min_members: int = 2,
                        min_stages: int = 8) -> list[Cluster]:
    """Clusters of the tail of ``seq`` that witness accumulation points.

    The first ``burn_in`` fraction is discarded. Tail values are sorted and
    split wherever consecutive values differ by more than ``cluster_tol``;
    groups with fewer than ``min_members`` entries are dropped. A group
    whose spread exceeds ``cluster_tol`` is split again around the values of
    its latest members, which are the best converged. The center is the
    median of the later half of the members in stage order.

    Returns the clusters ordered by their second member, so the first one
    is the earliest to become stable. An empty list means no stable cluster
    at this tolerance.

    Examples
    --------
    >>> [round(c.center, 6) for c in accumulation_points([(-1) ** j for j in range(12)])]
    [1.0, -1.0]
    """
    s = np.asarray(seq, dtype=float)
    if s.size < min_stages:
        raise ExhaustionError(f"need at least {min_stages} stages, got {s.size}")
    start = int(np.floor(burn_in * s.size))
    idx = np.arange(start, s.size)
    idx = idx[np.isfinite(s[idx])]
    if idx.size == 0:
        return []
    order = idx[np.argsort(s[idx], kind="stable")]
    groups, cur = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if s[b] - s[a] > cluster_tol:
            groups.append(cur)
            cur = []
        cur.append(b)
    groups.append(cur)

    clusters = []
    for g in groups:
        g = np.sort(np.asarray(g))
        while g.size >= min_members:
            anchor = s[g[-1]]
            near = g[np.abs(s[g] - anchor) <= cluster_tol]
            if near.size >= min_members:
                late = near[near.size // 2:]
                clusters.append(Cluster(float(np.median(s[late])), tuple(int(i) for i in near)))
            g = np.setdiff1d(g, near)
    clusters.sort(key=lambda c: (c.indices[min_members - 1], c.indices[0]))
    return clusters


@dataclass(frozen=True, eq=False)
class AveragedFunctional:
    """Stage averages ``s_j`` and their accumulation points."""

    stages: np.ndarray
    values: np.ndarray
    volumes: np.ndarray
    cluster_tol: float = 1e-3
    burn_in: float = 0.25
    rule: str = "first"
    target: float | None = None
    clusters: list[Cluster] = field(default_factory=list)

    def __post_init__(self):
        if self.rule not in SELECTION_RULES:
            raise ExhaustionError(f"unknown selection rule {self.rule!r}")
        if self.rule == "nearest" and self.target is None:
            raise ExhaustionError("the nearest rule needs a target")
        if self.clusters:
            return
        v = np.asarray(self.values, dtype=float)
        if v.size >= 8:
            found = accumulation_points(v, self.cluster_tol, self.burn_in)
        elif v.size and np.ptp(v) <= self.cluster_tol:
            # too short to cluster, but constant within tolerance
            found = [Cluster(float(v[-1]), tuple(range(v.size)))]
        else:
            found = []
        object.__setattr__(self, "clusters", found)

    @property
    def points(self) -> list[float]:
        return [c.center for c in self.clusters]

    @property
    def stable(self) -> bool:
        return bool(self.clusters)

    @property
    def value(self) -> float:
        """The selected accumulation point; ``nan`` if there is none.

        Short sequences (fewer than 8 stages) count as one cluster when they
        are constant within ``cluster_tol``; otherwise they fall back to the
        last stage.
        """
        if not self.clusters:
            if 0 < self.values.size < 8:
                return float(self.values[-1])
            return float("nan")
        if self.rule == "first":
            return self.clusters[0].center
        if self.rule == "min":
            return min(self.points)
        if self.rule == "max":
            return max(self.points)
        return min(self.points, key=lambda v: abs(v - self.target))

    def witnesses(self, v: float) -> np.ndarray:
        """Stage labels of the subsequence converging to the point ``v``."""
        for c in self.clusters:
            if c.center == v:
                return self.stages[list(c.indices)]
        raise KeyError(v)

    def rows(self):
        for j, vol, s in zip(self.stages, self.volumes, self.values):
            yield {"j": int(j), "vol_U_j": float(vol), "stage_value": float(s)}


def _run_stages(fn: Callable[[int], float], stages, threads: int = 1) -> np.ndarray:
    stages = list(stages)
    if threads > 1 and len(stages) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return np.array(list(ex.map(fn, stages)), dtype=float)
    return np.array([fn(j) for j in stages], dtype=float)


# --- the dyadic alternating example -------------------------------------------

def polynomial_bump(coeffs: Sequence[float] = (0, 0, 30, -60, 30)) -> Callable[[np.ndarray], np.ndarray]:
    """Polynomial ``sum c_k x**k`` on ``[0, 1]``, zero elsewhere.

    The default is ``30 x**2 (1 - x)**2``, which has unit integral.
    """
    c = np.asarray(coeffs, dtype=float)

    def chi(x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0) & (x <= 1)
        return np.where(inside, np.polynomial.polynomial.polyval(x, c), 0.0)
    chi.coeffs = c
    return chi


def zeta_example(chi=None, j_max: int = 14, h: float = 1 / 32, cluster_tol: float = 1e-3,
                 rule: str = "first", burn_in: float = 0.25, integral: float = 1.0,
                 norm_tol: float = 1e-6, target: float | None = None) -> AveragedFunctional:
    """Averages of ``zeta(x) = sum_k (-1)**k chi(2**-k x - 1)`` on ``M_j = [-2**(j+1), 2**(j+1)]``.

    ``chi`` must vanish outside ``[0, 1]`` and integrate to ``integral``.
    The continuum stage value is ``integral * (1/(3 * 2**(j+2)) + (-1)**j / 6)``,
    so the averages alternate around ``+-integral/6``.
    """
    chi = chi or polynomial_bump()
    probe = np.linspace(-1.0, 2.0, 3001)
    outside = (probe < 0) | (probe > 1)
    if np.max(np.abs(chi(probe[outside])), initial=0.0) > norm_tol:
        raise ExhaustionError("chi is not supported in [0, 1]")
    nodes, weights = np.polynomial.legendre.leggauss(64)
    got = 0.5 * float(np.sum(weights * chi(0.5 * (nodes + 1))))
    if abs(got - integral) > norm_tol * max(1.0, abs(integral)):
        raise ExhaustionError(f"chi integrates to {got:.8g}, expected {integral:g}")

    model = build_box_lattice(1, 2.0 ** (j_max + 1), h)
    x = model.sites[:, 0]
    zeta = np.zeros_like(x)
    for k in range(j_max + 1):
        lo, hi = 2.0**k, 2.0 ** (k + 1)
        sel = (x >= lo) & (x <= hi)
        zeta[sel] += (-1) ** k * chi(x[sel] / 2.0**k - 1.0)
    # M_j are centred intervals, so cumulative sums over |x| give every stage
    ax = np.abs(x)
    order = np.argsort(ax, kind="stable")
    csum = np.cumsum(zeta[order])
    stages = np.arange(j_max + 1)
    radii = 2.0 ** (stages + 1)
    counts = np.searchsorted(ax[order], radii * (1 + 1e-12), side="right")
    values = csum[counts - 1] / counts
    vols = counts * h
    return AveragedFunctional(stages, values, vols, cluster_tol, burn_in, rule, target)


# --- localized trace ----------------------------------------------------------

def stage_density(pair: IsometryPair, K: np.ndarray, grading: np.ndarray | None = None) -> np.ndarray:
    """Per-site ``tr(Phi kappa(phi^-1(m), m))`` for a kernel matrix ``K``.

    With ``grading`` (a vector over sites times fibers) the trace is
    weighted by ``gamma(m)``.
    """
    N, f = pair.perm.size, pair.fiber_dim
    if K.shape != (N * f, N * f):
        raise ExhaustionError("kernel shape does not match the isometry")
    inv = pair.inverse_perm
    Kr = K.reshape(N, f, N, f)
    blocks = Kr[inv, :, np.arange(N), :]  # kappa(phi^-1(m), m), shape (N, f, f)
    L = pair.lift[inv]                    # fiber at phi^-1(m) -> fiber at m
    if grading is None:
        return np.einsum("mab,mba->m", L, blocks)
    g = np.asarray(grading).reshape(N, f)
    return np.einsum("mab,mba,ma->m", L, blocks, g)


def tr_u_phi(plan: ExhaustionPlan, pair: IsometryPair, kf, t: float, j: int,
             graded: bool = False, grading: np.ndarray | None = None) -> float:
    """Stage-``j`` value of the localized trace of ``kf`` at time ``t``.

    ``kf`` is a :class:`~lefschetz_lattice.heat_engine.KernelFamily` or a
    kernel matrix. ``graded=True`` uses the grading of the bundle that
    ``grading`` describes (required then).
    """
    K = kf if isinstance(kf, np.ndarray) else kf.matrix(t)
    if graded and grading is None:
        raise ExhaustionError("graded trace needs the grading vector")
    dens = stage_density(pair, K, grading if graded else None)
    Uj = plan.U_j(j)
    if len(Uj) == 0:
        raise ExhaustionError(f"U_{j} is empty")
    val = np.mean(dens[Uj.indices])
    return float(np.real(val))


def tr_u_phi_functional(plan: ExhaustionPlan, pair: IsometryPair, kf, t: float,
                        graded: bool = False, grading: np.ndarray | None = None,
                        cluster_tol: float = 1e-3, burn_in: float = 0.25, rule: str = "first",
                        target: float | None = None, threads: int = 1) -> AveragedFunctional:
    """Stage values over the whole plan and their accumulation points.

    The kernel is evaluated once; only the site average changes with ``j``.
    """
    K = kf if isinstance(kf, np.ndarray) else kf.matrix(t)
    if graded and grading is None:
        raise ExhaustionError("graded trace needs the grading vector")
    dens = np.real(stage_density(pair, K, grading if graded else None))

    def stage(j):
        Uj = plan.U_j(j)
        if len(Uj) == 0:
            raise ExhaustionError(f"U_{j} is empty")
        return float(np.mean(dens[Uj.indices]))

    stages = np.array(list(plan.stages))
    values = _run_stages(stage, stages, threads)
    vols = np.array([plan.vol_U(j) for j in stages])
    return AveragedFunctional(stages, values, vols, cluster_tol, burn_in, rule, target)
