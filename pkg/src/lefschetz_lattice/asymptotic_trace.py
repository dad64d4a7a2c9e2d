"""
Region decomposition, commutator traces and the graded heat idempotent
======================================================================

For a stage ``j`` and radius ``r`` the pairs ``U_j x M`` split into

* ``V``: ``m'`` in ``U_j``;
* ``Y``: ``m'`` in ``M_j - U_j``;
* ``W``: ``m'`` outside ``M_j`` and within ``r`` of ``m`` or of ``phi^-1(m)``;
* ``X``: ``m'`` outside ``M_j`` and at least ``r`` from both.

The localized trace of a commutator ``A(t)B(t) - B(t)A(t)`` is the sum of
four partial integrals over these sets. The ``V`` part cancels exactly
when ``A`` commutes with the isometry, and the other three are controlled
by the regularity of the exhaustion and by kernel decay.

The graded idempotent built from ``D+`` and ``D-`` represents the index
class; its localized trace against the reference ``diag(0, 1)`` equals the
localized heat supertrace.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clifford_dirac import DiracOperator
from .exhaustion_functional import (AveragedFunctional, ExhaustionError, ExhaustionPlan,
                                    stage_density, tr_u_phi_functional)
from .geometry import pairwise_distance
from .heat_engine import (DecayEnvelope, KernelFamily, dj_heat_family, fit_al_constants,
                          heat_family, q_family)
from .isometry import IsometryPair

__all__ = [
    "RegionDecomposition",
    "GradedIdempotent",
    "CommutatorReport",
    "decompose_regions",
    "commutator_region_integrals",
    "commutator_functional",
    "y_bound",
    "trend_slope",
    "asymptotic_trace_test",
    "families_from_spec",
    "graded_idempotent",
    "idempotent_pairing",
    "idempotent_functional",
]

SERIES_THRESHOLD = 1e-6  # below this, (1 - exp(-y))/y uses the Taylor polynomial


def _kernel(k, t: float) -> np.ndarray:
    return k if isinstance(k, np.ndarray) else k.matrix(t)


# --- regions ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegionDecomposition:
    """Site-pair masks over ``U_j x M``; row ``i`` is the site ``rows[i]``."""

    j: int
    r: float
    rows: np.ndarray
    V: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    X: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)

    @property
    def n_cols(self) -> int:
        return self.V.shape[1]

    def counts(self) -> dict:
        return {k: int(getattr(self, k).sum()) for k in "VWXY"}

    def is_partition(self) -> bool:
        total = self.V.astype(np.int8) + self.W + self.X + self.Y
        return bool(np.all(total == 1))

    def pairs(self, name: str) -> np.ndarray:
        """``(m, m')`` site index pairs of one set."""
        i, k = np.nonzero(getattr(self, name))
        return np.column_stack([self.rows[i], k])


def decompose_regions(plan: ExhaustionPlan, j: int, r: float) -> RegionDecomposition:
    """The four site-pair sets of stage ``j`` at radius ``r``."""
    if r <= 0:
        raise ExhaustionError("r must be positive")
    if plan.pair is None:
        raise ExhaustionError("the region decomposition needs the plan's isometry")
    model = plan.model
    Uj, Mj = plan.U_j(j), plan.M(j)
    rows = Uj.indices
    Um, Mm = Uj.mask, Mj.mask
    V = np.broadcast_to(Um, (rows.size, model.n_sites)).copy()
    Y = np.broadcast_to(Mm & ~Um, (rows.size, model.n_sites)).copy()
    out = np.broadcast_to(~Mm, (rows.size, model.n_sites))
    if out.any():
        cols = np.arange(model.n_sites)
        near = pairwise_distance(model, rows, cols) < r
        near |= pairwise_distance(model, plan.pair.inverse_perm[rows], cols) < r
        W = out & near
        X = out & ~near
    else:
        W = np.zeros_like(V)
        X = np.zeros_like(V)
    return RegionDecomposition(j, float(r), rows, V, W, X, Y)


# --- commutator integrals -----------------------------------------------------

def _pair_integrand(pair: IsometryPair, K: np.ndarray, L: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``tr(Phi kappa(phi^-1(m), m') lambda(m', m))`` for ``m`` in ``rows``, all ``m'``."""
    N, f = pair.perm.size, pair.fiber_dim
    inv = pair.inverse_perm[rows]
    Kr = K.reshape(N, f, N, f)[inv]                      # kappa(phi^-1 m, .)
    PK = np.einsum("iab,ibjc->iajc", pair.lift[inv], Kr)  # Phi kappa(phi^-1 m, m')
    Lr = L.reshape(N, f, N, f)[:, :, rows, :]            # lambda(m', m)
    return np.einsum("iajb,jbia->ij", PK, Lr)


def _commutator_integrand(pair, K, L, rows):
    return _pair_integrand(pair, K, L, rows) - _pair_integrand(pair, L, K, rows)


def commutator_region_integrals(pair: IsometryPair, A, B, dec: RegionDecomposition,
                                t: float) -> dict:
    """Partial integrals of the commutator integrand over ``V, W, X, Y``.

    Each is normalized by ``vol(U_j)``; their sum is the stage value of the
    localized trace of ``A(t)B(t) - B(t)A(t)``.
    """
    K, L = _kernel(A, t), _kernel(B, t)
    if dec.rows.size == 0:
        raise ExhaustionError(f"U_{dec.j} is empty")
    model = pair.model
    T = np.real(_commutator_integrand(pair, K, L, dec.rows))
    scale = model.weight / dec.rows.size
    parts = {k: float(np.sum(T[getattr(dec, k)]) * scale) for k in "VWXY"}
    parts["total"] = parts["V"] + parts["W"] + parts["X"] + parts["Y"]
    return parts


def commutator_functional(plan: ExhaustionPlan, pair: IsometryPair, A, B, t: float,
                          cluster_tol: float = 1e-3, burn_in: float = 0.25,
                          rule: str = "first", threads: int = 1) -> AveragedFunctional:
    """Stage values of the localized trace of ``A(t)B(t) - B(t)A(t)``."""
    K, L = _kernel(A, t), _kernel(B, t)
    C = (K @ L - L @ K) * plan.model.weight
    return tr_u_phi_functional(plan, pair, C, t, cluster_tol=cluster_tol, burn_in=burn_in,
                               rule=rule, threads=threads)


def _outside_ball_mass(K: np.ndarray, f: int, model, sites: np.ndarray, r: float) -> float:
    """``max`` over ``sites`` of the row and column L2 masses outside ``B(m, r)``."""
    N = model.n_sites
    A = np.abs(K.reshape(N, f, N, f)) ** 2
    Fr = A.sum(axis=(1, 3))[sites]      # rows m, cols m'
    Fc = A.sum(axis=(1, 3))[:, sites].T
    far = pairwise_distance(model, sites, np.arange(N)) >= r
    w = model.weight
    return float(max((Fr * far).sum(axis=1).max(), (Fc * far).sum(axis=1).max()) * w)


def y_bound(plan: ExhaustionPlan, A, B, t: float, j: int,
            env_A: DecayEnvelope, env_B: DecayEnvelope) -> float:
    """Cauchy-Schwarz bound for the ``Y`` part of the commutator integral.

    Every pair in ``Y`` has ``m'`` outside ``U``, so ``m'`` is at least
    ``delta/2`` from ``m`` or from ``phi^-1(m)``. With ``v`` the largest L2
    mass outside such a ball and ``C t**-a`` the full L2 mass bound, each of
    the two commutator terms is at most
    ``sqrt(v_A C_B t**-a_B) + sqrt(v_B C_A t**-a_A)``.
    """
    delta = plan.delta
    if not np.isfinite(delta):
        return 0.0
    Uj = plan.U_j(j)
    sites = np.union1d(Uj.indices, plan.pair.inverse_perm[Uj.indices])
    f = plan.pair.fiber_dim
    vA = _outside_ball_mass(_kernel(A, t), f, plan.model, sites, delta / 2)
    vB = _outside_ball_mass(_kernel(B, t), f, plan.model, sites, delta / 2)
    return 2.0 * (np.sqrt(vA * env_B(0.0, t)) + np.sqrt(vB * env_A(0.0, t)))


def trend_slope(t_values: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log|value|`` against ``log t`` over the smallest half of the grid.

    Positive means the values shrink as ``t`` decreases. Exact zeros give
    ``nan`` (nothing to fit).
    """
    t = np.asarray(t_values, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    order = np.argsort(t)
    k = max(2, int(np.ceil(t.size / 2)))
    sel = order[:k]
    if np.any(v[sel] == 0) or sel.size < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[sel]), np.log(v[sel]), 1)[0])


@dataclass
class CommutatorReport:
    t_values: np.ndarray
    values: np.ndarray
    functionals: list[AveragedFunctional] = field(repr=False)
    region_rows: list[dict] = field(repr=False)
    slope: float
    monotone: bool
    tol: float
    env_A: DecayEnvelope | None = None
    env_B: DecayEnvelope | None = None

    @property
    def final_value(self) -> float:
        return float(self.values[np.argmin(self.t_values)])

    @property
    def identically_zero(self) -> bool:
        return bool(np.all(self.values == 0))

    @property
    def passed(self) -> bool:
        if self.identically_zero:
            return True
        return bool(abs(self.final_value) < self.tol and self.slope > 0 and self.monotone)

    def rows(self):
        yield from self.region_rows


def asymptotic_trace_test(pair: IsometryPair, A: KernelFamily, B: KernelFamily,
                          plan: ExhaustionPlan, t_grid: Sequence[float],
                          j_schedule: Sequence[int] | None = None, r: float = 1.0,
                          tol: float = 1e-4, cluster_tol: float = 1e-3, burn_in: float = 0.25,
                          rule: str = "first", with_bounds: bool = True,
                          threads: int = 1) -> CommutatorReport:
    """Localized commutator trace over a ``t`` grid.

    For each ``t`` the stage values over the plan give the functional value
    (selected accumulation point); the four region integrals and the ``Y``
    bound are tabulated for the stages in ``j_schedule`` (default: the last
    stage). The test passes when the value at the smallest ``t`` is below
    ``tol``, the trend slope is positive and ``|value|`` does not increase as
    ``t`` decreases over the smallest half of the grid, or when every value
    is exactly zero.
    """
    ts = np.sort(np.asarray(list(t_grid), dtype=float))[::-1]
    js = list(j_schedule) if j_schedule is not None else [plan.j_max]
    env_A = env_B = None
    if with_bounds and plan.pair is not None and np.isfinite(plan.delta):
        env_A = fit_al_constants(A, ts)
        env_B = fit_al_constants(B, ts)
    decs = {j: decompose_regions(plan, j, r) for j in js}
    values, funcs, rows = [], [], []
    for t in ts:
        K, L = A.matrix(t), B.matrix(t)
        F = commutator_functional(plan, pair, K, L, t, cluster_tol, burn_in, rule, threads)
        funcs.append(F)
        values.append(F.value)
        for j in js:
            parts = commutator_region_integrals(pair, K, L, decs[j], t)
            row = {"t": float(t), "j": int(j), **parts, "stage_value": float(F.values[list(F.stages).index(j)])}
            if env_A is not None:
                row["y_bound"] = float(y_bound(plan, K, L, t, j, env_A, env_B))
            rows.append(row)
    values = np.asarray(values)
    slope = trend_slope(ts, values)
    half = np.abs(values[ts <= np.median(ts)])  # ordered by decreasing t
    monotone = bool(np.all(np.diff(half) <= 1e-15))
    return CommutatorReport(ts, values, funcs, rows, slope, monotone, tol, env_A, env_B)


FAMILIES = ("heat", "q", "d_heat")


def _multiplier(model, spec) -> np.ndarray | None:
    """Diagonal multiplier from a config value.

    ``None`` or ``"none"``: no multiplier. ``"step"``: the indicator of
    ``x_0 > 0``. A table ``{amplitude, frequency, phase}``:
    ``1 + amplitude * sin(frequency * x_0 + phase)``.
    """
    if spec is None or spec == "none":
        return None
    x = model.sites[:, 0]
    if spec == "step":
        v = (x > 0).astype(float)
    elif isinstance(spec, dict):
        v = 1.0 + spec.get("amplitude", 0.5) * np.sin(spec.get("frequency", 1.0) * x
                                                      + spec.get("phase", 0.0))
    else:
        raise ValueError(f"unknown multiplier {spec!r}")
    return v


def families_from_spec(D: DiracOperator, spec: dict) -> tuple[KernelFamily, KernelFamily]:
    """Families ``A`` and ``B`` from a ``commutator`` config block.

    Keys ``A`` and ``B`` name a family (``heat``: ``exp(-t^2 D^2)``, ``q``:
    the parametrix, ``d_heat``: ``D exp(-t^2 D^2)``); ``A_multiplier`` and
    ``B_multiplier`` multiply on the left (see :func:`_multiplier`).
    """
    makers = {"heat": heat_family, "q": q_family, "d_heat": lambda d: dj_heat_family(d, 1)}
    out = []
    for side in ("A", "B"):
        name = spec.get(side, "heat")
        if name not in makers:
            raise ValueError(f"commutator.{side} must be one of {FAMILIES}")
        kf = makers[name](D)
        mult = _multiplier(D.model, spec.get(f"{side}_multiplier"))
        if mult is not None:
            f = D.bundle.fiber_dim
            kf = kf.conjugated(left=np.diag(np.repeat(mult, f)), symbol=f"psi {kf.symbol}")
        out.append(kf)
    return out[0], out[1]


# --- graded idempotent --------------------------------------------------------

def _one_minus_exp_over(y: np.ndarray) -> np.ndarray:
    """``(1 - exp(-y)) / y`` with the Taylor polynomial ``1 - y/2 + y**2/6 - y**3/24`` near 0."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    small = np.abs(y) < SERIES_THRESHOLD
    ys = y[small]
    out[small] = 1 - ys / 2 + ys**2 / 6 - ys**3 / 24
    yl = y[~small]
    out[~small] = -np.expm1(-yl) / yl
    return out


@dataclass(frozen=True, eq=False)
class GradedIdempotent:
    """``e(t)`` as a 2x2 block operator on ``even + odd`` sections.

    Blocks act on coefficient vectors (kernel times ``h**n``); ``even`` and
    ``odd`` index the two summands inside the full section space.
    """

    t: float
    D: DiracOperator = field(repr=False)
    even: np.ndarray = field(repr=False)
    odd: np.ndarray = field(repr=False)
    e11: np.ndarray = field(repr=False)
    e12: np.ndarray = field(repr=False)
    e21: np.ndarray = field(repr=False)
    e22: np.ndarray = field(repr=False)

    def block_matrix(self) -> np.ndarray:
        return np.block([[self.e11, self.e12], [self.e21, self.e22]])

    def reference(self) -> np.ndarray:
        ne, no = self.even.size, self.odd.size
        f = np.zeros((ne + no, ne + no))
        f[ne:, ne:] = np.eye(no)
        return f

    def idempotency_defect(self) -> float:
        """``||e**2 - e||_2``."""
        e = self.block_matrix()
        return float(np.linalg.norm(e @ e - e, 2))

    def distance_to_reference(self) -> float:
        """``||e - f||_2``."""
        return float(np.linalg.norm(self.block_matrix() - self.reference(), 2))

    def embedded(self, minus_reference: bool = True) -> np.ndarray:
        """``e - f`` (or ``e``) placed back into the full section space."""
        n = self.D.dim
        dt = np.result_type(self.e11, self.e12, float)
        E = np.zeros((n, n), dtype=dt)
        ev, od = self.even, self.odd
        E[np.ix_(ev, ev)] = self.e11
        E[np.ix_(ev, od)] = self.e12
        E[np.ix_(od, ev)] = self.e21
        E[np.ix_(od, od)] = self.e22 - (np.eye(od.size) if minus_reference else 0)
        return E

    def kernel(self, minus_reference: bool = True) -> np.ndarray:
        return self.embedded(minus_reference) / self.D.model.weight


def graded_idempotent(D: DiracOperator, t: float) -> GradedIdempotent:
    """Blocks of ``e(t)`` from eigendecompositions of ``D-D+`` and ``D+D-``.

    ``e11 = exp(-t^2 D-D+)``,
    ``e12 = exp(-t^2/2 D-D+) (1 - exp(-t^2 D-D+)) / (D-D+) D-``,
    ``e21 = exp(-t^2/2 D+D-) D+``,
    ``e22 = 1 - exp(-t^2 D+D-)``.
    """
    even, odd, Dp, Dm = D.split()
    Dp = Dp.toarray()
    Dm = Dm.toarray()
    try:
        mu, Wm = np.linalg.eigh(Dm @ Dp)   # D-D+ on even sections
        nu, Wp = np.linalg.eigh(Dp @ Dm)   # D+D- on odd sections
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigensolver failed for the graded idempotent") from exc
    mu = np.clip(mu, 0.0, None)
    nu = np.clip(nu, 0.0, None)
    t2 = t * t

    def fn(W, lam, g):
        return (W * g(lam)) @ W.conj().T

    e11 = fn(Wm, mu, lambda x: np.exp(-t2 * x))
    # exp(-t^2 x / 2) (1 - exp(-t^2 x)) / x, with the removable point at x = 0
    e12 = fn(Wm, mu, lambda x: np.exp(-0.5 * t2 * x) * t2 * _one_minus_exp_over(t2 * x)) @ Dm
    e21 = fn(Wp, nu, lambda x: np.exp(-0.5 * t2 * x)) @ Dp
    e22 = fn(Wp, nu, lambda x: -np.expm1(-t2 * x))
    return GradedIdempotent(float(t), D, even, odd, e11, e12, e21, e22)


def idempotent_pairing(plan: ExhaustionPlan, pair: IsometryPair, e: GradedIdempotent,
                       j: int) -> float:
    """Stage-``j`` value of the localized trace of ``e(t) - f``, matrix trace included."""
    dens = np.real(stage_density(pair, e.kernel()))
    Uj = plan.U_j(j)
    if len(Uj) == 0:
        raise ExhaustionError(f"U_{j} is empty")
    return float(np.mean(dens[Uj.indices]))


def idempotent_functional(plan: ExhaustionPlan, pair: IsometryPair, e: GradedIdempotent,
                          cluster_tol: float = 1e-3, burn_in: float = 0.25,
                          rule: str = "first") -> AveragedFunctional:
    return tr_u_phi_functional(plan, pair, e.kernel(), e.t, cluster_tol=cluster_tol,
                               burn_in=burn_in, rule=rule)
