"""
Clifford bundles and lattice Dirac operators
============================================

Three graded bundles over a flat lattice:

``exterior``
    Fiber ``Lambda(R^n)`` (dimension ``2**n``), Clifford action
    ``c_i = e_i^ - i_i`` (wedge minus contraction), grading by form degree.
``spinor``
    Complex spinors built by Jordan-Wigner; graded by chirality.
    Odd ``n`` uses the ``n+1`` dimensional representation so a grading exists.
``staggered``
    One component per site. The Clifford structure lives in site dependent
    signs, which is the lattice form of the Kahler-Dirac operator ``d + d*``:
    ``D = sum_i zeta_i(x) d_i`` with ``zeta_i(x) = (-1)**(x_i + ... + x_n)``
    and grading ``(-1)**(x_1 + ... + x_n)``. Central differences then carry
    a single continuum species per ``2**n`` block instead of ``2**n``
    doublers.

Differencing schemes for the fiber bundles are ``central`` (any model) and
``spectral`` (Fourier differentiation, torus with an odd number of sites
per axis). All gradings are diagonal
in the bases used here, so they are stored as ``+-1`` vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .geometry import LatticeModel

__all__ = [
    "CliffordBundle",
    "DiracOperator",
    "DiracError",
    "build_clifford",
    "assemble_dirac",
    "commutator_norm",
    "exterior_lift_matrix",
    "derivative_matrix",
]

SCHEMES = ("central", "spectral", "staggered")


class DiracError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CliffordBundle:
    """Fiber data of a graded Clifford module over flat ``R^n``.

    ``generators`` are skew-adjoint with ``c_i c_j + c_j c_i = -2 delta_ij``,
    ``grading`` is the diagonal of ``gamma``; ``mass_generator`` is a
    Hermitian involution anticommuting with every ``c_i`` and with ``gamma``,
    or ``None`` when the representation has no room for one.
    """

    n: int
    kind: str
    fiber_dim: int
    generators: tuple[np.ndarray, ...] = field(repr=False)
    grading: np.ndarray = field(repr=False)
    mass_generator: np.ndarray | None = field(default=None, repr=False)

    @property
    def gamma(self) -> np.ndarray:
        return np.diag(self.grading).astype(self.dtype)

    @property
    def dtype(self):
        if any(np.iscomplexobj(c) for c in self.generators):
            return complex
        return float

    def grading_vector(self, model: LatticeModel) -> np.ndarray:
        """Diagonal of the grading operator on the full section space."""
        if self.kind == "staggered":
            return (-1.0) ** np.sum(model.ints, axis=1)
        return np.tile(self.grading, model.n_sites).astype(float)


def _exterior_ops(n: int):
    dim = 1 << n
    wedge = []
    for i in range(n):
        E = np.zeros((dim, dim))
        for I in range(dim):
            if I >> i & 1:
                continue
            sign = (-1) ** bin(I & ((1 << i) - 1)).count("1")
            E[I | 1 << i, I] = sign
        wedge.append(E)
    degree = np.array([bin(I).count("1") for I in range(dim)])
    return wedge, degree


def _jordan_wigner(k: int) -> list[np.ndarray]:
    """Hermitian gammas ``G_1..G_2k`` with ``{G_a, G_b} = 2 delta_ab``."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.diag([1.0 + 0j, -1.0])
    out = []
    for j in range(k):
        for s in (sx, sy):
            mats = [sz] * j + [s] + [np.eye(2)] * (k - j - 1)
            M = mats[0]
            for m in mats[1:]:
                M = np.kron(M, m)
            out.append(M)
    return out


def build_clifford(n: int, kind: str = "exterior") -> CliffordBundle:
    """Generators and grading for ``kind`` in ``{"exterior", "spinor", "staggered"}``.

    Examples
    --------
    >>> b = build_clifford(1, "exterior")
    >>> b.fiber_dim, list(b.grading)
    (2, [1.0, -1.0])
    """
    if n < 1:
        raise DiracError("dimension must be >= 1")
    if kind == "exterior":
        wedge, degree = _exterior_ops(n)
        gens = tuple(E - E.T for E in wedge)
        mass = wedge[0] + wedge[0].T
        return CliffordBundle(n, kind, 1 << n, gens, (-1.0) ** degree, mass)
    if kind == "spinor":
        k = (n + 1) // 2
        G = _jordan_wigner(k)
        gens = tuple(1j * G[i] for i in range(n))
        # chirality is sigma_z (x) ... (x) sigma_z in the Jordan-Wigner basis
        grading = _kron_all([np.array([1.0, -1.0])] * k)
        mass = G[n] if n < 2 * k else None
        return CliffordBundle(n, kind, 1 << k, gens, grading, mass)
    if kind == "staggered":
        return CliffordBundle(n, kind, 1, (), np.array([1.0]), None)
    raise DiracError(f"unsupported bundle kind {kind!r}")


def _kron_all(mats):
    M = mats[0]
    for m in mats[1:]:
        M = np.kron(M, m)
    return M


def exterior_lift_matrix(O: np.ndarray) -> np.ndarray:
    """Action ``Lambda(O)`` of an orthogonal ``O`` on ``Lambda(R^n)``.

    Entry ``(I, J)`` is the minor ``det O[I, J]`` for equal-size subsets; the
    basis is indexed by bitmask, matching :func:`build_clifford`.
    """
    O = np.asarray(O, dtype=float)
    n = O.shape[0]
    dim = 1 << n
    L = np.zeros((dim, dim))
    subsets = {p: list(combinations(range(n), p)) for p in range(n + 1)}
    for p, subs in subsets.items():
        for I in subs:
            bI = sum(1 << i for i in I)
            for J in subs:
                bJ = sum(1 << j for j in J)
                L[bI, bJ] = 1.0 if p == 0 else np.linalg.det(O[np.ix_(I, J)])
    return L


def derivative_matrix(count: int, h: float, periodic: bool, scheme: str) -> sp.csr_matrix:
    """One-dimensional antisymmetric difference operator."""
    if scheme in ("central", "staggered"):
        if count < 3 and periodic:
            raise DiracError("periodic central differences need at least 3 sites")
        main = np.ones(count - 1)
        d = sp.diags([main, -main], [1, -1], shape=(count, count), format="lil")
        if periodic:
            d[count - 1, 0] = 1.0
            d[0, count - 1] = -1.0
        return (d.tocsr() / (2 * h))
    if scheme == "spectral":
        if not periodic:
            raise DiracError("spectral differentiation needs a torus")
        if count % 2 == 0:
            # the Nyquist mode would become a spurious zero mode
            raise DiracError("spectral differentiation needs an odd number of sites per axis")
        k = 2 * np.pi * np.fft.fftfreq(count, d=h)
        M = np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(np.eye(count), axis=0), axis=0))
        M = 0.5 * (M - M.T)
        M[np.abs(M) < 1e-14 / h] = 0.0
        return sp.csr_matrix(M)
    raise DiracError(f"unknown differencing scheme {scheme!r}")


def _axis_operator(model: LatticeModel, axis: int, d1: sp.spmatrix) -> sp.csr_matrix:
    mats = [d1 if a == axis else sp.identity(s, format="csr") for a, s in enumerate(model.shape)]
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


@dataclass(frozen=True, eq=False)
class DiracOperator:
    """Self-adjoint, odd lattice Dirac operator on ``sites x fiber``."""

    matrix: sp.csr_matrix = field(repr=False)
    model: LatticeModel = field(repr=False)
    bundle: CliffordBundle = field(repr=False)
    scheme: str = "central"
    mass: float = 0.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def grading(self) -> np.ndarray:
        return self.bundle.grading_vector(self.model)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def split(self):
        """Index arrays of the even and odd subspaces and the blocks ``D+``, ``D-``.

        ``D+`` maps even sections to odd ones; ``D-`` is its adjoint.
        """
        g = self.grading
        even = np.flatnonzero(g > 0)
        odd = np.flatnonzero(g < 0)
        M = self.matrix
        Dp = M[odd][:, even]
        Dm = M[even][:, odd]
        return even, odd, Dp, Dm


def assemble_dirac(model: LatticeModel, bundle: CliffordBundle,
                   scheme: str = "central", mass: float = 0.0) -> DiracOperator:
    """``D = sum_i c_i (x) d_i`` (+ optional ``mass * Gamma``).

    Box models use zero extension at the edges, so boundary rows only see
    in-grid neighbours; the matrix stays exactly symmetric.
    """
    if bundle.n != model.dim:
        raise DiracError(f"bundle dimension {bundle.n} != model dimension {model.dim}")
    if scheme not in SCHEMES:
        raise DiracError(f"unknown differencing scheme {scheme!r}")
    periodic = model.kind == "torus"
    if (scheme == "staggered") != (bundle.kind == "staggered"):
        raise DiracError("the staggered scheme goes with the staggered bundle only")
    if scheme == "staggered":
        if periodic and any(s % 2 for s in model.shape):
            raise DiracError("staggered signs need an even number of sites per torus axis")
        D = sp.csr_matrix((model.n_sites, model.n_sites))
        for i in range(model.dim):
            zeta = (-1.0) ** np.sum(model.ints[:, i:], axis=1)
            d = _axis_operator(model, i, derivative_matrix(model.shape[i], model.h, periodic, scheme))
            D = D + sp.diags(zeta) @ d
    else:
        D = None
        for i, c in enumerate(bundle.generators):
            d = _axis_operator(model, i, derivative_matrix(model.shape[i], model.h, periodic, scheme))
            term = sp.kron(d, sp.csr_matrix(c), format="csr")
            D = term if D is None else D + term
    if mass:
        if bundle.mass_generator is None:
            raise DiracError(f"no anticommuting mass generator for {bundle.kind} in dimension {bundle.n}")
        D = D + mass * sp.kron(sp.identity(model.n_sites), sp.csr_matrix(bundle.mass_generator))
    D = sp.csr_matrix(D)
    D.eliminate_zeros()
    return DiracOperator(D, model, bundle, scheme, float(mass))


def commutator_norm(D: DiracOperator, pair, iters: int = 300, seed: int = 0) -> float:
    """Power-iteration estimate of ``||D Phi - Phi D||_2``."""
    P = pair.as_matrix()
    if P.shape != D.matrix.shape:
        raise DiracError("isometry action and Dirac operator have different shapes")
    C = (D.matrix @ P - P @ D.matrix).tocsr()
    C.eliminate_zeros()
    if C.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(C.shape[0]) + 0j
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = C.conj().T @ (C @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        new = np.sqrt(nw)
        v = w / nw
        if abs(new - est) <= 1e-12 * new:
            est = new
            break
        est = new
    return float(est)
