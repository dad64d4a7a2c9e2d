"""
Affine isometries and their bundle lifts
========================================

An :class:`IsometryPair` is an affine map ``phi(x) = O x + b`` that permutes
the lattice sites exactly, together with a unitary lift ``L(m)`` from the
fiber at ``m`` to the fiber at ``phi(m)``. It acts on sections by

    (Phi s)(phi(m)) = L(m) s(m).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .clifford_dirac import CliffordBundle, exterior_lift_matrix
from .geometry import GeometryError, LatticeModel, Region

__all__ = [
    "IsometryError",
    "IsometryPair",
    "make_isometry",
    "resolve_lift",
    "act_on_section",
    "displacement_lower_bound",
    "compose",
]


class IsometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class IsometryPair:
    model: LatticeModel = field(repr=False)
    O: np.ndarray
    b: np.ndarray
    perm: np.ndarray = field(repr=False)
    lift: np.ndarray = field(repr=False)  # (N, f, f)
    preserves_grading: bool = True

    @property
    def fiber_dim(self) -> int:
        return int(self.lift.shape[1])

    @property
    def inverse_perm(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    def fixed_sites(self) -> np.ndarray:
        return np.flatnonzero(self.perm == np.arange(self.perm.size))

    def displacements(self) -> np.ndarray:
        """``d(phi(m), m)`` for every site."""
        x = self.model.sites
        diff = x[self.perm] - x
        if self.model.kind == "torus":
            P = self.model.periods
            diff = diff - P * np.round(diff / P)
        return np.sqrt(np.sum(diff**2, axis=1))

    def as_matrix(self) -> sp.csr_matrix:
        """Sparse matrix of the section action."""
        cached = self.__dict__.get("_matrix")
        if cached is not None:
            return cached
        N, f = self.perm.size, self.fiber_dim
        a = np.arange(f)
        # entry ((perm[m], a), (m, b)) = L(m)[a, b]
        rows = np.broadcast_to(self.perm[:, None, None] * f + a[None, :, None], (N, f, f))
        cols = np.broadcast_to(np.arange(N)[:, None, None] * f + a[None, None, :], (N, f, f))
        P = sp.csr_matrix((self.lift.ravel(), (rows.ravel(), cols.ravel())), shape=(N * f, N * f))
        P.eliminate_zeros()
        object.__setattr__(self, "_matrix", P)
        return P

    def order(self, max_order: int = 64) -> int | None:
        """Smallest ``k`` with ``Phi**k = 1``, or ``None`` up to ``max_order``."""
        P = self.as_matrix()
        I = sp.identity(P.shape[0], format="csr")
        Q = P.copy()
        for k in range(1, max_order + 1):
            if abs(Q - I).max() < 1e-12:
                return k
            Q = (Q @ P).tocsr()
        return None


def _sign_character(model: LatticeModel, O: np.ndarray) -> np.ndarray:
    """Staggered lift ``(-1)**(sum of coordinates along reflected axes)``."""
    if not np.allclose(O, np.diag(np.diag(O)), atol=1e-12):
        raise IsometryError("builtin:scalar-sign needs a diagonal orthogonal matrix")
    flipped = np.flatnonzero(np.diag(O) < 0)
    return (-1.0) ** np.sum(model.ints[:, flipped], axis=1)


def resolve_lift(spec, model: LatticeModel, O: np.ndarray, fiber_dim: int) -> np.ndarray:
    """Turn a lift specification into per-site matrices of shape ``(N, f, f)``.

    ``spec`` is ``"builtin:exterior"``, ``"builtin:scalar-sign"``,
    ``"builtin:scalar"`` (identity), an ``f x f`` matrix, or an ``(N, f, f)``
    array.
    """
    N = model.n_sites
    if isinstance(spec, str):
        if spec == "builtin:exterior":
            L = exterior_lift_matrix(O)
            if L.shape[0] != fiber_dim:
                raise IsometryError("exterior lift does not match the fiber dimension")
            return np.broadcast_to(L, (N,) + L.shape).copy()
        if spec == "builtin:scalar-sign":
            if fiber_dim != 1:
                raise IsometryError("builtin:scalar-sign is for one-dimensional fibers")
            return _sign_character(model, O)[:, None, None]
        if spec in ("builtin:scalar", "builtin:identity"):
            return np.broadcast_to(np.eye(fiber_dim), (N, fiber_dim, fiber_dim)).copy()
        raise IsometryError(f"unknown lift {spec!r}")
    L = np.asarray(spec)
    if L.ndim == 2:
        if L.shape != (fiber_dim, fiber_dim):
            raise IsometryError(f"lift matrix must be {fiber_dim}x{fiber_dim}")
        return np.broadcast_to(L, (N,) + L.shape).copy()
    if L.shape != (N, fiber_dim, fiber_dim):
        raise IsometryError("per-site lift has the wrong shape")
    return L.copy()


def _site_permutation(model: LatticeModel, O: np.ndarray, b: np.ndarray) -> np.ndarray:
    img = model.sites @ O.T + b
    q = img / model.h
    ints = np.round(q)
    if np.max(np.abs(q - ints), initial=0.0) > 1e-9:
        raise IsometryError("the map does not send lattice sites to lattice sites")
    try:
        perm = model.index_of(ints.astype(np.int64))
    except GeometryError as exc:
        raise IsometryError("the site set is not invariant under the map") from exc
    if np.unique(perm).size != perm.size:
        raise IsometryError("the map is not injective on the lattice")
    return perm


def make_isometry(model: LatticeModel, O, b=None, bundle_lift="builtin:scalar",
                  bundle: CliffordBundle | None = None, fiber_dim: int | None = None) -> IsometryPair:
    """Validate ``phi(x) = O x + b`` on ``model`` and attach a bundle lift.

    Raises ``IsometryError`` if ``O`` is not orthogonal, if ``phi`` does not
    permute the sites, or if the lift is not unitary. With ``bundle`` given,
    the grading is checked as well and ``preserves_grading`` records the
    outcome.
    """
    n = model.dim
    O = np.atleast_2d(np.asarray(O, dtype=float))
    if O.shape != (n, n):
        raise IsometryError(f"O must be {n}x{n}")
    if np.max(np.abs(O.T @ O - np.eye(n))) > 1e-12:
        raise IsometryError("O is not orthogonal")
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float).reshape(n)
    if model.kind == "torus":
        if not np.allclose(np.abs(O), np.abs(O).round(), atol=1e-12):
            raise IsometryError("torus isometries must be signed permutations")
        P = model.periods
        if not np.allclose(np.abs(O) @ P, P):
            raise IsometryError("O does not preserve the torus periods")
    perm = _site_permutation(model, O, b)

    if fiber_dim is None:
        fiber_dim = bundle.fiber_dim if bundle is not None else 1
    lift = resolve_lift(bundle_lift, model, O, fiber_dim)
    eye = np.eye(fiber_dim)
    LhL = np.einsum("nji,njk->nik", lift.conj(), lift)
    if np.max(np.abs(LhL - eye)) > 1e-10:
        raise IsometryError("bundle lift is not unitary")

    preserves = True
    if bundle is not None:
        g = bundle.grading_vector(model).reshape(model.n_sites, fiber_dim)
        # L(m) gamma(m) == gamma(phi(m)) L(m)
        lhs = lift * g[:, None, :]
        rhs = g[perm][:, :, None] * lift
        preserves = bool(np.max(np.abs(lhs - rhs)) < 1e-12)
    return IsometryPair(model, O, b, perm, lift, preserves)


def act_on_section(pair: IsometryPair, s: np.ndarray) -> np.ndarray:
    """``(Phi s)(phi(m)) = L(m) s(m)``; ``s`` has length ``N*f`` (or extra columns)."""
    N, f = pair.perm.size, pair.fiber_dim
    s = np.asarray(s)
    if s.shape[0] != N * f:
        raise IsometryError(f"section length {s.shape[0]} != {N * f}")
    tail = s.shape[1:]
    blocks = s.reshape((N, f) + tail)
    moved = np.einsum("nab,nb...->na...", pair.lift, blocks)
    out = np.empty_like(moved)
    out[pair.perm] = moved
    return out.reshape(s.shape)


def displacement_lower_bound(model: LatticeModel, pair: IsometryPair,
                             complement_of_U: Region) -> float:
    """``min d(phi(m), m)`` over the given region; ``inf`` if it is empty."""
    if complement_of_U.model is not model or pair.model is not model:
        raise IsometryError("region, pair and model do not match")
    if len(complement_of_U) == 0:
        return float("inf")
    return float(np.min(pair.displacements()[complement_of_U.indices]))


def compose(g: IsometryPair, h: IsometryPair) -> IsometryPair:
    """The pair ``g o h`` (apply ``h`` first)."""
    if g.model is not h.model:
        raise IsometryError("pairs live on different models")
    O = g.O @ h.O
    b = g.O @ h.b + g.b
    perm = g.perm[h.perm]
    lift = np.einsum("nab,nbc->nac", g.lift[h.perm], h.lift)
    return IsometryPair(g.model, O, b, perm, lift, g.preserves_grading and h.preserves_grading)
