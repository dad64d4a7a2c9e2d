"""
Both sides of the localized equivariant index
=============================================

Analytic side
    ``Tr^U_Phi(gamma exp(-t^2 D^2))`` over a ``t`` grid, one averaged
    functional per ``t`` and an extrapolation to ``t -> 0``.
Geometric side
    ``(1 / vol U_j) * integral over the fixed points in U_j`` of the
    fixed-point integrand, with ``h**dim`` quadrature on the fixed affine
    subspace.

On flat models the fixed-point integrand is a constant. It is measured,
not assumed: :func:`ass_integrand_flat` sums the localized supertrace
density over a slab around one fixed component at small ``t`` and checks
the result against the global supertrace and a closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clifford_dirac import CliffordBundle, DiracOperator, assemble_dirac, build_clifford
from .config import Scenario, build_scenario, load_scenario
from .exhaustion_functional import (AveragedFunctional, ExhaustionPlan, stage_density,
                                    tr_u_phi_functional)
from .geometry import LatticeModel, build_torus_lattice
from .heat_engine import DecayEnvelope, fit_gaussian_envelope, heat_family, spectral_decomposition
from .isometry import IsometryPair, make_isometry

__all__ = [
    "IndexVerifyError",
    "IntegrandOracle",
    "AnalyticSide",
    "IndexReport",
    "fixed_set_dimension",
    "heat_density",
    "geometric_side",
    "geometric_functional",
    "ass_integrand_flat",
    "closed_form_flat",
    "truncation_error_bound",
    "analytic_side",
    "gaussian_displacement_check",
    "infinite_volume_limit",
    "run_scenario",
]


class IndexVerifyError(RuntimeError):
    pass


# --- geometric side -----------------------------------------------------------

def fixed_set_dimension(O: np.ndarray) -> int:
    """Dimension of the fixed subspace of the linear part ``O``."""
    n = O.shape[0]
    return int(n - np.linalg.matrix_rank(np.eye(n) - O, tol=1e-9))


def _integrand_values(model: LatticeModel, integrand) -> np.ndarray:
    if callable(integrand):
        return np.asarray(integrand(model.sites), dtype=float)
    vals = np.asarray(integrand, dtype=float)
    if vals.ndim == 0:
        return np.full(model.n_sites, float(vals))
    return vals


def geometric_side(plan: ExhaustionPlan, pair: IsometryPair, integrand, j: int) -> tuple[float, bool]:
    """Stage ``j`` average of the fixed-point integral; returns ``(value, empty)``.

    ``empty`` is ``True`` when ``U_j`` has no fixed sites, in which case the
    value is 0.
    """
    Uj = plan.U_j(j)
    if len(Uj) == 0:
        raise IndexVerifyError(f"U_{j} is empty")
    fixed = np.intersect1d(pair.fixed_sites(), Uj.indices)
    if fixed.size == 0:
        return 0.0, True
    k = fixed_set_dimension(pair.O)
    vals = _integrand_values(plan.model, integrand)
    integral = float(np.sum(vals[fixed])) * plan.model.h**k
    return integral / Uj.volume, False


def geometric_functional(plan: ExhaustionPlan, pair: IsometryPair, integrand,
                         cluster_tol: float = 1e-3, burn_in: float = 0.25,
                         rule: str = "first") -> tuple[AveragedFunctional, np.ndarray]:
    """Geometric stage values over the plan and the fixed-set volume per stage."""
    stages = np.array(list(plan.stages))
    vals, fvol = [], []
    k = fixed_set_dimension(pair.O)
    fixed = pair.fixed_sites()
    for j in stages:
        v, _ = geometric_side(plan, pair, integrand, j)
        vals.append(v)
        fvol.append(np.intersect1d(fixed, plan.U_j(j).indices).size * plan.model.h**k)
    vols = np.array([plan.vol_U(j) for j in stages])
    F = AveragedFunctional(stages, np.array(vals), vols, cluster_tol, burn_in, rule)
    return F, np.array(fvol)


# --- fixed-point integrand ----------------------------------------------------

def heat_density(D: DiracOperator, pair: IsometryPair, t: float, graded: bool = True) -> np.ndarray:
    """Per-site ``tr(gamma Phi kappa_t(phi^-1(m), m))`` of ``exp(-t^2 D^2)``.

    Same numbers as :func:`stage_density` on the heat kernel, computed from
    the eigenvectors without forming the full kernel matrix.
    """
    lam, V = spectral_decomposition(D)
    N, f = pair.perm.size, pair.fiber_dim
    W = V.reshape(N, f, -1)
    inv = pair.inverse_perm
    Y = np.einsum("mab,mbk->mak", pair.lift[inv], W[inv])
    c = np.exp(-(t * lam) ** 2)
    terms = Y * W.conj()
    if graded:
        terms = terms * D.grading.reshape(N, f)[:, :, None]
    return np.real(np.einsum("mak,k->m", terms, c)) / D.model.weight


def closed_form_flat(bundle_kind: str, O: np.ndarray) -> float | None:
    """Closed-form flat integrand for the de Rham (Gauss-Bonnet) complex.

    With ``k`` the codimension of the fixed set, the integrand is
    ``det(1 - O) / |det(1 - O_N)|`` when ``k = n`` (an isolated fixed point)
    and 0 otherwise, since the Euler form of a flat fixed set vanishes. Other
    bundles return ``None``.
    """
    if bundle_kind not in ("exterior", "staggered"):
        return None
    n = O.shape[0]
    k = n - fixed_set_dimension(O)
    if k < n:
        return 0.0
    d = np.linalg.det(np.eye(n) - O)
    return float(np.sign(d))


@dataclass
class IntegrandOracle:
    value: float
    t_values: np.ndarray
    slab_values: np.ndarray
    global_value: float
    closed_form: float | None
    converged: bool
    tol: float

    @property
    def closed_form_ok(self) -> bool | None:
        if self.closed_form is None:
            return None
        return bool(abs(self.value - self.closed_form) <= self.tol)


def _oracle_defaults(n: int, scheme: str, C: float):
    if n == 1:
        N = 256
    elif n == 2:
        N = 64 if scheme == "staggered" else 31
    else:
        raise IndexVerifyError("the integrand oracle supports dimensions 1 and 2; pass h explicitly")
    if scheme == "spectral" and N % 2 == 0:
        N -= 1
    h = C / N
    # smallest t keeps the scheme resolved; the slab edge C/4 stays far in the Gaussian tail
    t_min = 4 * h if scheme == "staggered" else 2.5 * h
    t_min = max(t_min, 0.1)
    return h, np.array([1.6 * t_min, 1.25 * t_min, t_min])


def ass_integrand_flat(bundle: CliffordBundle, pair: IsometryPair, circumference: float = 4.0,
                       h: float | None = None, t_values: Sequence[float] | None = None,
                       tol: float = 1e-4) -> IntegrandOracle:
    """Constant fixed-point integrand of a flat model, from the small-``t`` supertrace density.

    An oracle torus of the given circumference carries the same bundle
    (staggered scheme for the staggered bundle, Fourier differentiation for
    the others, so there are no doublers) and the linear part of ``pair``
    with its lift. The localized supertrace density is summed over the slab
    within ``circumference/4`` of the fixed component through the origin and
    divided by the tangential volume. The global supertrace divided by the
    number of fixed components (``2**k``) is reported as a cross-check; it
    does not depend on ``t``.
    """
    n = bundle.n
    O = np.asarray(pair.O, dtype=float)
    if not np.allclose(O, np.diag(np.diag(O))):
        raise IndexVerifyError("the flat integrand oracle needs a diagonal isometry")
    flipped = np.flatnonzero(np.diag(O) < 0)
    k = flipped.size
    scheme = "staggered" if bundle.kind == "staggered" else "spectral"
    C = float(circumference)
    if h is None:
        h, default_t = _oracle_defaults(n, scheme, C)
    else:
        default_t = np.array([8 * h, 6 * h, 4 * h])
    ts = np.sort(np.asarray(t_values if t_values is not None else default_t, dtype=float))[::-1]
    model = build_torus_lattice(n, C, h)
    ob = build_clifford(n, bundle.kind)
    D = assemble_dirac(model, ob, scheme)
    if bundle.kind == "staggered":
        lift = "builtin:scalar-sign"
    elif bundle.kind == "exterior":
        lift = "builtin:exterior"
    else:
        L = pair.lift
        if np.max(np.abs(L - L[0])) > 1e-12:
            raise IndexVerifyError("the oracle needs a constant bundle lift")
        lift = L[0]
    opair = make_isometry(model, O, None, lift, ob)
    x = model.sites
    d2 = np.zeros(model.n_sites)
    for i in flipped:
        off = x[:, i] - C * np.round(x[:, i] / C)
        d2 += off**2
    slab = np.sqrt(d2) < C / 4
    tangential = C ** (n - k)
    w = model.weight
    slab_vals, global_vals = [], []
    for t in ts:
        dens = heat_density(D, opair, t)
        slab_vals.append(np.sum(dens[slab]) * w / tangential)
        global_vals.append(np.sum(dens) * w / tangential / 2**k)
    slab_vals = np.asarray(slab_vals)
    converged = bool(abs(slab_vals[-1] - slab_vals[-2]) <= tol)
    return IntegrandOracle(float(slab_vals[-1]), ts, slab_vals, float(global_vals[-1]),
                           closed_form_flat(bundle.kind, O), converged, tol)


# --- analytic side ------------------------------------------------------------

def _edge_distance(model: LatticeModel) -> np.ndarray:
    """Distance from each site to the nearest missing site just outside the box."""
    if model.kind == "torus":
        return np.full(model.n_sites, np.inf)
    top = ((np.asarray(model.shape) - 1) // 2 + 1) * model.h
    return np.min(top - np.abs(model.sites), axis=1)


def truncation_error_bound(plan: ExhaustionPlan, pair: IsometryPair, t: float, j: int,
                           fiber_dim: int) -> float:
    """Heuristic size of the box-edge effect on the stage-``j`` average.

    A path from ``phi^-1(m)`` to ``m`` through the edge has length at least
    ``e(m) + e(phi^-1(m))`` (distances to the edge), so the edge changes the
    density at ``m`` by about ``f (4 pi t^2)**(-n/2) exp(-(e1 + e2)**2 / (4 t^2))``.
    """
    model = plan.model
    e = _edge_distance(model)
    if not np.all(np.isfinite(e)):
        return 0.0
    idx = plan.U_j(j).indices
    s = e[idx] + e[pair.inverse_perm[idx]]
    bound = fiber_dim * (4 * np.pi * t * t) ** (-model.dim / 2) * np.exp(-(s**2) / (4 * t * t))
    return float(np.mean(bound))


@dataclass
class AnalyticSide:
    t_values: np.ndarray
    functionals: list[AveragedFunctional] = field(repr=False)
    certified: dict = field(repr=False)      # t -> array of certified stage labels
    excluded_t: list = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([F.value for F in self.functionals])

    @property
    def smallest_t_value(self) -> float:
        return float(self.values[np.argmin(self.t_values)])

    def extrapolate(self) -> tuple[float, float]:
        """``(value, trend)``: intercept of ``a + b t**2`` over the three smallest ``t``
        (the smallest-``t`` value if fewer), and the last difference."""
        order = np.argsort(self.t_values)
        v = self.values[order]
        t = self.t_values[order]
        trend = float(abs(v[1] - v[0])) if v.size > 1 else float("nan")
        if v.size >= 3 and np.all(np.isfinite(v[:3])):
            a = np.polyfit(t[:3] ** 2, v[:3], 1)[1]
            return float(a), trend
        return float(v[0]), trend

    def rows(self):
        for t, F in zip(self.t_values, self.functionals):
            for j, vol, s in zip(F.stages, F.volumes, F.values):
                yield {"t": float(t), "j": int(j), "vol_U_j": float(vol), "value": float(s)}


def analytic_side(plan: ExhaustionPlan, pair: IsometryPair, D: DiracOperator,
                  t_grid: Sequence[float], j_schedule: Sequence[int] | None = None,
                  cluster_tol: float = 1e-3, burn_in: float = 0.25, rule: str = "first",
                  min_t_over_h: float = 4.0, truncation_tol: float = 1e-9,
                  threads: int = 1) -> AnalyticSide:
    """Stage tables of ``Tr^U_Phi(gamma exp(-t^2 D^2))``.

    ``t`` values below ``min_t_over_h * h`` are excluded (the lattice symbol
    is distorted there). On boxes, stages whose truncation bound exceeds
    ``truncation_tol`` are not certified and drop out of the functional.
    Raises :class:`IndexVerifyError` when no ``t`` can be certified.
    """
    H = heat_family(D)
    g = D.grading
    f = D.bundle.fiber_dim
    js = np.array(list(j_schedule) if j_schedule is not None else list(plan.stages))
    ts = np.sort(np.asarray(list(t_grid), dtype=float))[::-1]
    keep, excluded, funcs, cert = [], [], [], {}
    for t in ts:
        if t < min_t_over_h * plan.model.h * (1 - 1e-12):
            excluded.append((float(t), f"t < {min_t_over_h:g} h"))
            continue
        ok = np.array([truncation_error_bound(plan, pair, t, j, f) <= truncation_tol for j in js])
        if not ok.any():
            excluded.append((float(t), "box edge too close at every stage"))
            continue
        F = tr_u_phi_functional(plan, pair, H, t, graded=True, grading=g, cluster_tol=cluster_tol,
                                burn_in=burn_in, rule=rule, threads=threads)
        sel = np.isin(F.stages, js[ok])
        F = AveragedFunctional(F.stages[sel], F.values[sel], F.volumes[sel], cluster_tol, burn_in, rule)
        keep.append(t)
        funcs.append(F)
        cert[float(t)] = js[ok]
    if not keep:
        raise IndexVerifyError("no t in the grid can be certified; refine h or enlarge the box")
    return AnalyticSide(np.array(keep), funcs, cert, excluded)


# --- displacement envelope ----------------------------------------------------

@dataclass
class DisplacementCheck:
    delta: float
    envelope: DecayEnvelope
    calibration: list
    verification: list

    @property
    def dominated(self) -> bool:
        return all(v <= self.envelope(self.delta, t) for t, v in self.verification)

    def rows(self):
        for kind, pts in (("calibration", self.calibration), ("verification", self.verification)):
            for t, v in pts:
                yield {"set": kind, "t": t, "value": v, "envelope": float(self.envelope(self.delta, t)),
                       "pass": bool(v <= self.envelope(self.delta, t))}


def gaussian_displacement_check(plan: ExhaustionPlan, pair: IsometryPair, D: DiracOperator,
                                calibration_t: Sequence[float], verification_t: Sequence[float],
                                j: int | None = None) -> DisplacementCheck:
    """Fit ``C exp(-a delta^2 / t^2)`` to the ungraded localized heat trace on the
    calibration grid; the verification grid then lists graded and ungraded
    values to be dominated by it."""
    j = plan.j_max if j is None else j
    delta = plan.delta
    if not np.isfinite(delta):
        # U is everything: the displacement on U_j itself sets the decay
        delta = float(np.min(pair.displacements()[plan.U_j(j).indices]))
    if not delta > 0:
        raise IndexVerifyError("the displacement check needs delta > 0")
    Uj = plan.U_j(j).indices

    def vals(t, graded):
        return float(abs(np.mean(heat_density(D, pair, t, graded)[Uj])))

    cal = [(float(t), vals(t, False)) for t in calibration_t]
    env = fit_gaussian_envelope([(delta, t, v) for t, v in cal])
    ver = []
    for t in verification_t:
        ver.append((float(t), vals(t, False)))
        ver.append((float(t), vals(t, True)))
    return DisplacementCheck(delta, env, cal, ver)


def infinite_volume_limit(F: AveragedFunctional) -> float:
    """Intercept of ``v_j = a + b / vol(U_j)`` through the last two stages.

    Stage values on an infinite-volume ``U`` may carry a boundary residue of
    order ``1 / vol(U_j)`` (a bounded amount of density near the ends of
    ``U_j``); the intercept removes it. ``nan`` with fewer than two stages.
    """
    if F.values.size < 2:
        return float("nan")
    x = 1.0 / F.volumes[-2:]
    v = F.values[-2:]
    return float(v[0] - (v[1] - v[0]) / (x[1] - x[0]) * x[0])


# --- end to end ---------------------------------------------------------------

@dataclass
class IndexReport:
    scenario_id: str
    analytic: AnalyticSide = field(repr=False)
    geometric: AveragedFunctional = field(repr=False)
    fixed_volumes: np.ndarray = field(repr=False)
    analytic_value: float = float("nan")
    analytic_trend: float = float("nan")
    geometric_value: float = float("nan")
    integrand: IntegrandOracle | None = None
    verdicts: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    displacement: DisplacementCheck | None = None

    @property
    def passed(self) -> bool:
        return bool(self.verdicts) and all(self.verdicts.values())

    def analytic_rows(self):
        yield from self.analytic.rows()

    def geometric_rows(self):
        for j, vol, fv, s in zip(self.geometric.stages, self.geometric.volumes,
                                 self.fixed_volumes, self.geometric.values):
            yield {"j": int(j), "vol_U_j": float(vol), "fixed_volume": float(fv), "value": float(s)}

    def summary(self) -> dict:
        out = {
            "scenario": self.scenario_id,
            "analytic_value": self.analytic_value,
            "analytic_smallest_t_value": self.analytic.smallest_t_value,
            "analytic_trend": self.analytic_trend,
            "analytic_points": [F.points for F in self.analytic.functionals],
            "geometric_value": self.geometric_value,
            "geometric_points": self.geometric.points,
            "verdicts": dict(self.verdicts),
            "passed": self.passed,
            "diagnostics": self.diagnostics,
        }
        if self.integrand is not None:
            out["integrand"] = {"value": self.integrand.value, "global": self.integrand.global_value,
                                "closed_form": self.integrand.closed_form,
                                "converged": self.integrand.converged}
        return out


def _agree(a: float, b: float, rel: float, abs_tol: float) -> bool:
    return bool(abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_tol))


def run_scenario(config, threads: int = 1) -> IndexReport:
    """Run both sides for a scenario and attach the clause verdicts.

    Clauses that apply automatically:

    ``a``
        no fixed sites and ``delta > 0``: the analytic value at the smallest
        certified ``t`` is below ``decay_tol`` and the fitted Gaussian
        displacement envelope dominates the verification grid.
    ``b``
        otherwise: both accumulation sets are single points and agree.
    ``invertible_zero``
        nonzero mass: both sides are below ``decay_tol``.
    ``remark_U_eq_M``
        ``U`` is everything and there are fixed points: geometric stage values
        stay below ``|integrand| * vol(M_j^phi)/vol(M_j)``, the ratio decreases,
        and the analytic stage values follow the same bound.
    ``infinite_volume``
        the fixed set is positive dimensional and ``U`` is a proper subset:
        both sides vanish within ``decay_tol``.

    ``expect.clauses`` in the config replaces the automatic list and
    ``expect.value`` adds an ``expected_value`` clause.
    """
    try:
        sc = config if isinstance(config, Scenario) else build_scenario(
            config if isinstance(config, dict) and "origin" in config else load_scenario(config))
    except Exception as exc:
        raise IndexVerifyError(f"scenario {getattr(config, 'id', config)!r}: {exc}") from exc
    cfg = sc.config
    tol = cfg["tolerances"]
    ex = cfg["exhaustion"]
    plan, pair, D = sc.plan, sc.pair, sc.D
    ctol, burn = tol["cluster_tol"], tol["burn_in"]
    rule, target = ex["rule"], ex.get("target")
    try:
        fixed = pair.fixed_sites()
        if fixed.size:
            oracle = ass_integrand_flat(sc.bundle, pair)
            integrand = oracle.value
        else:
            oracle, integrand = None, 0.0
        geo, fvol = geometric_functional(plan, pair, integrand, ctol, burn, rule)
        ana = analytic_side(plan, pair, D, sc.t_grid, None, ctol, burn, rule,
                            cfg["grids"]["min_t_over_h"], tol["truncation_tol"], threads)
    except Exception as exc:
        raise IndexVerifyError(f"scenario {sc.id!r}: {exc}") from exc
    a_val, trend = ana.extrapolate()
    report = IndexReport(sc.id, ana, geo, fvol, a_val, trend, geo.value, oracle)
    diag = report.diagnostics
    diag["delta"] = float(plan.delta)
    diag["excluded_t"] = ana.excluded_t
    diag["fixed_sites"] = int(fixed.size)
    if oracle is not None:
        diag["integrand_converged"] = oracle.converged
        diag["integrand_closed_form_ok"] = oracle.closed_form_ok

    decay = tol["decay_tol"]
    clauses = []
    U_all = len(plan.U) == plan.model.n_sites
    k_fixed = fixed_set_dimension(pair.O)
    if fixed.size == 0 and plan.delta > 0:
        clauses.append("a")
    elif fixed.size and 0 < k_fixed < plan.model.dim and not U_all:
        clauses.append("infinite_volume")
    else:
        clauses.append("b")
    if D.mass:
        clauses.append("invertible_zero")
    if U_all and fixed.size and k_fixed < plan.model.dim:
        clauses.append("remark_U_eq_M")
    expect = cfg.get("expect", {})
    if "clauses" in expect:
        clauses = list(expect["clauses"])

    v = report.verdicts
    for c in clauses:
        if c == "a":
            small = ana.smallest_t_value
            ok = abs(small) < decay and np.all(geo.values == 0)
            gcfg = cfg["grids"]
            if "calibration_t2" in gcfg and "verification_t2" in gcfg:
                chk = gaussian_displacement_check(plan, pair, D, np.sqrt(gcfg["calibration_t2"]),
                                                  np.sqrt(gcfg["verification_t2"]))
                report.displacement = chk
                diag["envelope"] = {"C": float(chk.envelope.C), "a": float(chk.envelope.a),
                                    "delta": chk.delta}
                ok = ok and chk.dominated
            v["a"] = bool(ok)
        elif c == "b":
            F_small = ana.functionals[int(np.argmin(ana.t_values))]
            single = len(F_small.clusters) == 1 and len(geo.clusters) == 1
            diag["analytic_clusters"] = F_small.points
            diag["geometric_clusters"] = geo.points
            v["b"] = bool(single and _agree(a_val, geo.value, tol["agreement_tol"], decay))
        elif c == "invertible_zero":
            v["invertible_zero"] = bool(abs(a_val) < decay and abs(ana.smallest_t_value) < decay
                                        and abs(geo.value) < decay)
        elif c == "remark_U_eq_M":
            ratio = fvol / geo.volumes
            bound = abs(integrand) * ratio
            slack = tol["agreement_tol"] * bound + decay
            F_small = ana.functionals[int(np.argmin(ana.t_values))]
            sel = np.isin(geo.stages, F_small.stages)
            ok = (np.all(np.abs(geo.values) <= bound + 1e-15)
                  and np.all(np.diff(ratio) <= 1e-15) and ratio[-1] < ratio[0]
                  and np.all(np.abs(F_small.values) <= (bound + slack)[sel]))
            diag["fixed_ratio"] = ratio.tolist()
            v["remark_U_eq_M"] = bool(ok)
        elif c == "infinite_volume":
            F_small = ana.functionals[int(np.argmin(ana.t_values))]
            limit = infinite_volume_limit(F_small)
            diag["infinite_volume_limit"] = limit
            v["infinite_volume"] = bool(np.all(np.abs(geo.values) < decay)
                                        and np.isfinite(limit) and abs(limit) < ctol)
        else:
            raise IndexVerifyError(f"unknown clause {c!r}")
    if "value" in expect:
        ev = float(expect["value"])
        v["expected_value"] = bool(_agree(a_val, ev, tol["agreement_tol"], decay)
                                   and _agree(geo.value, ev, tol["agreement_tol"], decay))
    return report
