"""
Heat kernels and functional-calculus kernel families
====================================================

A :class:`KernelFamily` is a ``t``-indexed family of discrete Schwartz
kernels. Kernel values carry the quadrature convention

    (A s)(m) = sum_{m'} h**n * kappa(m, m') s(m'),

so ``kappa = A_matrix / h**n``. The time convention is ``t -> f(tD)`` with the
heat family ``exp(-t**2 D**2)`` throughout.

Three sources are available:

* ``continuum_gaussian``: closed form of ``exp(-t**2 Delta)`` on ``R^n``
  evaluated at lattice sites;
* ``torus_image_sum``: the same kernel periodised by an image sum;
* ``spectral_oracle``: dense eigendecomposition of a lattice Dirac operator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .clifford_dirac import DiracOperator
from .geometry import LatticeModel, distances_from

__all__ = [
    "KernelError",
    "KernelFamily",
    "DecayEnvelope",
    "EnvelopeReport",
    "spectral_decomposition",
    "gaussian_heat_kernel",
    "spectral_kernel",
    "heat_family",
    "q_family",
    "dj_heat_family",
    "dj_norm_bound",
    "offdiagonal_mass",
    "row_masses",
    "fit_al_constants",
    "fit_gaussian_envelope",
    "fit_polynomial_constant",
    "check_envelope",
    "compose",
    "supertrace",
]

DEFAULT_EIG_BUDGET = 6000


class KernelError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class KernelFamily:
    """``t``-indexed kernel family on a lattice model.

    ``evaluator(t)`` returns the full kernel matrix of shape ``(N f, N f)``.
    """

    model: LatticeModel = field(repr=False)
    fiber_dim: int
    source: str
    symbol: str
    evaluator: Callable[[float], np.ndarray] = field(repr=False)

    def matrix(self, t: float) -> np.ndarray:
        return self.evaluator(float(t))

    def operator(self, t: float) -> np.ndarray:
        """Matrix acting on coefficient vectors (kernel times ``h**n``)."""
        return self.matrix(t) * self.model.weight

    def block(self, t: float, m: int, mp: int) -> np.ndarray:
        f = self.fiber_dim
        return self.matrix(t)[m * f:(m + 1) * f, mp * f:(mp + 1) * f]

    def scaled(self, factor: Callable[[float], float], symbol: str | None = None) -> "KernelFamily":
        return KernelFamily(self.model, self.fiber_dim, self.source, symbol or self.symbol,
                            lambda t: factor(t) * self.evaluator(t))

    def conjugated(self, left: np.ndarray | None = None, right: np.ndarray | None = None,
                   symbol: str | None = None) -> "KernelFamily":
        """Family ``t -> left @ kappa_t @ right`` (multipliers act on sections)."""
        def ev(t):
            K = self.evaluator(t)
            if left is not None:
                K = left @ K
            if right is not None:
                K = K @ right
            return K
        return KernelFamily(self.model, self.fiber_dim, self.source, symbol or self.symbol, ev)


# --- spectral oracle --------------------------------------------------------

def spectral_decomposition(D: DiracOperator, budget: int = DEFAULT_EIG_BUDGET):
    """Cached dense eigendecomposition ``(eigenvalues, eigenvectors)`` of ``D``."""
    cached = D.__dict__.get("_eig")
    if cached is not None:
        return cached
    if D.dim > budget:
        raise KernelError(f"operator dimension {D.dim} exceeds the eigensolver budget {budget}")
    A = D.dense()
    try:
        lam, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise KernelError("dense eigensolver failed") from exc
    object.__setattr__(D, "_eig", (lam, V))
    return lam, V


def spectral_kernel(D: DiracOperator, f: Callable[[np.ndarray], np.ndarray],
                    symbol: str = "f(tD)", budget: int = DEFAULT_EIG_BUDGET,
                    time_dependent: Callable[[float, np.ndarray], np.ndarray] | None = None
                    ) -> KernelFamily:
    """Kernel family of ``f(tD)`` from the full eigendecomposition of ``D``.

    ``time_dependent(t, lam)`` overrides the default spectral weights
    ``f(t * lam)``.
    """
    lam, V = spectral_decomposition(D, budget)
    w = D.model.weight
    weights = time_dependent or (lambda t, x: f(t * x))

    def ev(t: float) -> np.ndarray:
        c = weights(t, lam)
        K = (V * c) @ V.conj().T
        if not np.iscomplexobj(K) or np.max(np.abs(K.imag), initial=0.0) == 0:
            K = K.real
        return K / w

    return KernelFamily(D.model, D.bundle.fiber_dim, "spectral_oracle", symbol, ev)


def heat_family(D: DiracOperator, budget: int = DEFAULT_EIG_BUDGET) -> KernelFamily:
    """``t -> exp(-t**2 D**2)``."""
    return spectral_kernel(D, lambda x: np.exp(-x**2), "exp(-t^2 D^2)", budget)


def _h_of(x: np.ndarray) -> np.ndarray:
    """``(1 - exp(-x**2)) / x`` with its removable zero."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    nz = np.abs(x) > 1e-8
    out[nz] = -np.expm1(-x[nz] ** 2) / x[nz]
    out[~nz] = x[~nz]
    return out


def q_family(D: DiracOperator, budget: int = DEFAULT_EIG_BUDGET) -> KernelFamily:
    """Parametrix ``Q(t) = (1 - exp(-t**2 D**2)) / D = t h(tD)``."""
    return spectral_kernel(D, _h_of, "Q(t)", budget,
                           time_dependent=lambda t, lam: t * _h_of(t * lam))


def dj_heat_family(D: DiracOperator, j: int, budget: int = DEFAULT_EIG_BUDGET) -> KernelFamily:
    """``t -> D**j exp(-t**2 D**2) = t**-j f_j(tD)`` with ``f_j(x) = x**j exp(-x**2)``."""
    if j < 0:
        raise ValueError("j must be >= 0")
    if j == 0:
        return heat_family(D, budget)
    return spectral_kernel(D, lambda x: x**j * np.exp(-x**2), f"D^{j} exp(-t^2 D^2)", budget,
                           time_dependent=lambda t, lam: lam**j * np.exp(-(t * lam) ** 2))


def dj_norm_bound(j: int, t: float) -> float:
    """``max_x |x**j exp(-t**2 x**2)| = (j / (2 t**2))**(j/2) exp(-j/2)``."""
    if j == 0:
        return 1.0
    return (j / (2 * t**2)) ** (j / 2) * np.exp(-j / 2)


# --- continuum Gaussian -----------------------------------------------------

def _gaussian_1d(delta: np.ndarray, t: float) -> np.ndarray:
    return np.exp(-delta**2 / (4 * t**2)) / np.sqrt(4 * np.pi * t**2)


def gaussian_heat_kernel(model: LatticeModel, fiber_dim: int = 1, image_tol: float = 1e-17,
                         max_images: int = 64) -> KernelFamily:
    """Closed-form kernel of ``exp(-t**2 Delta)`` (times the fiber identity).

    On ``R^n`` this is ``(4 pi t**2)**(-n/2) exp(-|x-y|**2 / (4 t**2))``; on a
    torus the one-dimensional factors are summed over images until a term
    drops below ``image_tol`` relative to the peak.
    """
    x = model.sites
    eye = np.eye(fiber_dim)
    periodic = model.kind == "torus"
    periods = model.periods

    def ev(t: float) -> np.ndarray:
        K = np.ones((model.n_sites, model.n_sites))
        for i in range(model.dim):
            delta = x[:, i][:, None] - x[:, i][None, :]
            if not periodic:
                K *= _gaussian_1d(delta, t)
                continue
            C = periods[i]
            delta = delta - C * np.round(delta / C)
            acc = _gaussian_1d(delta, t)
            peak = _gaussian_1d(np.zeros(1), t)[0]
            for k in range(1, max_images + 1):
                term = _gaussian_1d(delta + k * C, t) + _gaussian_1d(delta - k * C, t)
                acc += term
                if np.max(term) < image_tol * peak:
                    break
            else:
                raise KernelError("image sum did not reach image_tol within max_images")
            K *= acc
        return np.kron(K, eye) if fiber_dim > 1 else K

    source = "torus_image_sum" if periodic else "continuum_gaussian"
    return KernelFamily(model, fiber_dim, source, "exp(-t^2 Delta)", ev)


# --- decay diagnostics ------------------------------------------------------

def compose(a: KernelFamily, b: KernelFamily, symbol: str | None = None) -> KernelFamily:
    """Quadrature composition ``(a o b)_t = sum_m'' h**n a_t(., m'') b_t(m'', .)``."""
    w = a.model.weight
    return KernelFamily(a.model, a.fiber_dim, "composite", symbol or f"({a.symbol})({b.symbol})",
                        lambda t: (a.matrix(t) @ b.matrix(t)) * w)


def supertrace(kf: KernelFamily, t: float, grading: np.ndarray) -> float:
    """``Str(gamma A) = sum_m h**n tr(gamma kappa(m, m))``."""
    K = kf.matrix(t)
    return float(np.real(np.sum(grading * np.diag(K))) * kf.model.weight)


def _block_frobenius_sq(K: np.ndarray, f: int) -> np.ndarray:
    N = K.shape[0] // f
    A = np.abs(K.reshape(N, f, N, f)) ** 2
    return A.sum(axis=(1, 3))


def row_masses(kf: KernelFamily, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Full row and column L2 masses ``int |kappa(m, .)|**2`` for every site."""
    F = _block_frobenius_sq(kf.matrix(t), kf.fiber_dim)
    w = kf.model.weight
    return F.sum(axis=1) * w, F.sum(axis=0) * w


def offdiagonal_mass(kf: KernelFamily, m: int, r: float, t: float) -> tuple[float, float]:
    """Row and column masses of ``|kappa_t|**2`` outside the open ball ``B(m, r)``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    f = kf.fiber_dim
    K = kf.matrix(t)
    rows = K[m * f:(m + 1) * f, :]
    cols = K[:, m * f:(m + 1) * f]
    N = kf.model.n_sites
    row_sq = (np.abs(rows.reshape(f, N, f)) ** 2).sum(axis=(0, 2))
    col_sq = (np.abs(cols.reshape(N, f, f)) ** 2).sum(axis=(1, 2))
    outside = distances_from(kf.model, m) >= r
    w = kf.model.weight
    return float(row_sq[outside].sum() * w), float(col_sq[outside].sum() * w)


@dataclass(frozen=True)
class DecayEnvelope:
    """Decay bound ``(r, t) -> bound``.

    ``kind="gaussian"``: ``C exp(-a r**2 / t**2)``.
    ``kind="polynomial"``: ``C r**(k - b + 1) t**(b - k - 1)`` with ``k``
    the order parameter ``max(-order, 0)``.
    ``kind="power"``: ``C t**(-a)`` (no ``r`` dependence).
    """

    kind: str
    C: float
    a: float = 0.0
    b: float = 0.0
    k: float = 0.0

    def __call__(self, r, t):
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return self.C * np.exp(-self.a * r**2 / t**2)
        if self.kind == "polynomial":
            return self.C * r ** (self.k - self.b + 1) * t ** (self.b - self.k - 1)
        if self.kind == "power":
            return self.C * t ** (-self.a) + 0 * r
        raise ValueError(f"unknown envelope kind {self.kind!r}")


@dataclass
class EnvelopeReport:
    points: list[tuple[int, float, float]]
    values: np.ndarray
    bounds: np.ndarray

    @property
    def passes(self) -> np.ndarray:
        return self.values <= self.bounds

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.passes))

    @property
    def max_violation_ratio(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self.bounds > 0, self.values / self.bounds, np.inf)
        return float(np.max(ratio)) if ratio.size else 0.0

    def rows(self):
        for (m, r, t), v, b, ok in zip(self.points, self.values, self.bounds, self.passes):
            yield {"site": m, "r": r, "t": t, "mass": v, "envelope": b, "pass": bool(ok)}


def _mass_quantity(kf, m, r, t, quantity):
    row, col = offdiagonal_mass(kf, m, r, t)
    v = max(row, col)
    return np.sqrt(v) if quantity == "norm" else v


def check_envelope(kf: KernelFamily, env: DecayEnvelope,
                   grid: Iterable[tuple[int, float, float]], quantity: str = "mass") -> EnvelopeReport:
    """Compare the off-diagonal mass (or its square root, ``quantity="norm"``)
    against ``env`` on a grid of ``(site, r, t)``."""
    pts = list(grid)
    vals = np.array([_mass_quantity(kf, m, r, t, quantity) for m, r, t in pts])
    bounds = np.array([float(env(r, t)) for _, r, t in pts])
    return EnvelopeReport(pts, vals, bounds)


def fit_al_constants(kf: KernelFamily, t_values: Iterable[float], sites=None,
                     safety: float = 1.05) -> DecayEnvelope:
    """Fit ``C, a`` so that row and column L2 masses are at most ``C t**-a``.

    ``a`` comes from a least-squares fit of ``log(max mass)`` against
    ``log t``; ``C`` is the smallest constant covering every sample, times
    ``safety``.
    """
    ts = np.asarray(list(t_values), dtype=float)
    peaks = []
    for t in ts:
        row, col = row_masses(kf, t)
        if sites is not None:
            row, col = row[sites], col[sites]
        peaks.append(max(row.max(), col.max()))
    peaks = np.asarray(peaks)
    if ts.size > 1:
        slope = np.polyfit(np.log(ts), np.log(peaks), 1)[0]
        a = max(-slope, 0.0)
    else:
        a = 0.0
    C = float(np.max(peaks * ts**a)) * safety
    return DecayEnvelope("power", C, a=a)


def fit_gaussian_envelope(samples: Iterable[tuple[float, float, float]], shrink: float = 0.8,
                          safety: float = 1.5) -> DecayEnvelope:
    """Fit ``C exp(-a r**2/t**2)`` to ``(r, t, value)`` samples.

    The exponent from a log-linear least-squares fit is multiplied by
    ``shrink`` so the exponential slack absorbs polynomial prefactors; ``C``
    then covers every sample, times ``safety``.
    """
    s = np.asarray(list(samples), dtype=float)
    s = s[s[:, 2] > 0]
    u = s[:, 0] ** 2 / s[:, 1] ** 2
    slope, _ = np.polyfit(u, np.log(s[:, 2]), 1)
    a = max(-slope, 0.0) * shrink
    C = float(np.max(s[:, 2] * np.exp(a * u))) * safety
    return DecayEnvelope("gaussian", C, a=a)


def fit_polynomial_constant(samples: Iterable[tuple[float, float, float]], b: float, k: float = 0.0,
                            safety: float = 1.0) -> DecayEnvelope:
    """Smallest ``C_b`` with ``value <= C_b r**(k-b+1) t**(b-k-1)`` on the samples."""
    s = np.asarray(list(samples), dtype=float)
    base = DecayEnvelope("polynomial", 1.0, b=b, k=k)
    C = float(np.max(s[:, 2] / base(s[:, 0], s[:, 1]))) * safety
    return DecayEnvelope("polynomial", C, b=b, k=k)
