import numpy as np
import pytest

from lefschetz_lattice.clifford_dirac import assemble_dirac, build_clifford
from lefschetz_lattice.config import build_scenario, load_scenario
from lefschetz_lattice.exhaustion_functional import (AveragedFunctional, make_plan, stage_density,
                                                     tr_u_phi)
from lefschetz_lattice.geometry import build_box_lattice, build_torus_lattice
from lefschetz_lattice.heat_engine import heat_family
from lefschetz_lattice.index_verify import (IndexVerifyError, analytic_side, ass_integrand_flat,
                                            closed_form_flat, fixed_set_dimension,
                                            geometric_functional, geometric_side, heat_density,
                                            infinite_volume_limit, run_scenario,
                                            truncation_error_bound)
from lefschetz_lattice.isometry import make_isometry

_reports = {}


def report(sid):
    if sid not in _reports:
        _reports[sid] = run_scenario(sid)
    return _reports[sid]


# --- small pieces -------------------------------------------------------------

@pytest.mark.parametrize("O, k", [([[1.0]], 1), ([[-1.0]], 0),
                                  (np.diag([-1.0, 1.0]), 1), (-np.eye(2), 0),
                                  ([[0.0, -1.0], [1.0, 0.0]], 0)])
def test_fixed_set_dimension(O, k):
    assert fixed_set_dimension(np.asarray(O)) == k


def test_closed_form_flat():
    assert closed_form_flat("exterior", np.array([[-1.0]])) == 1.0
    assert closed_form_flat("staggered", -np.eye(2)) == 1.0
    assert closed_form_flat("exterior", np.diag([-1.0, 1.0])) == 0.0
    assert closed_form_flat("spinor", np.array([[-1.0]])) is None


@pytest.mark.parametrize("bundle", ["staggered", "exterior"])
def test_oracle_matches_closed_form_for_reflection(bundle):
    b = build_clifford(1, bundle)
    m = build_box_lattice(1, 2.0, 0.25)
    lift = "builtin:scalar-sign" if bundle == "staggered" else "builtin:exterior"
    pair = make_isometry(m, [[-1]], None, lift, b)
    o = ass_integrand_flat(b, pair)
    assert o.converged and o.closed_form_ok
    assert o.value == pytest.approx(1.0, abs=1e-4)
    assert o.global_value == pytest.approx(1.0, abs=1e-8)


def test_oracle_rejects_non_diagonal():
    b = build_clifford(2, "exterior")
    m = build_torus_lattice(2, 4.0, 0.5)
    pair = make_isometry(m, [[0, -1], [1, 0]], None, "builtin:exterior", b)
    with pytest.raises(IndexVerifyError):
        ass_integrand_flat(b, pair)


def test_heat_density_matches_kernel_density(box_staggered_1d):
    D = box_staggered_1d
    pair = make_isometry(D.model, [[-1]], None, "builtin:scalar-sign", D.bundle)
    K = heat_family(D).matrix(0.3)
    for graded in (False, True):
        want = np.real(stage_density(pair, K, D.grading if graded else None))
        assert np.allclose(heat_density(D, pair, 0.3, graded), want, atol=1e-12)


def test_geometric_side_counts_fixed_point(box_staggered_1d):
    D = box_staggered_1d
    m = D.model
    pair = make_isometry(m, [[-1]], None, "builtin:scalar-sign", D.bundle)
    plan = make_plan(m, {"kind": "intervals", "bounds": [[-1, 1]]}, j_max=8, scale=0.5, pair=pair)
    v, empty = geometric_side(plan, pair, 1.0, 4)
    assert not empty and v == pytest.approx(1.0 / plan.vol_U(4))
    F, fvol = geometric_functional(plan, pair, 1.0)
    assert np.all(fvol == 1.0)  # one isolated fixed point, weight h**0


def test_analytic_side_equals_stage_values(box_staggered_1d):
    D = box_staggered_1d
    m = D.model
    pair = make_isometry(m, [[-1]], None, "builtin:scalar-sign", D.bundle)
    plan = make_plan(m, {"kind": "intervals", "bounds": [[-1, 1]]}, j_max=8, scale=0.5, pair=pair)
    ana = analytic_side(plan, pair, D, [0.4], truncation_tol=1.0)
    F = ana.functionals[0]
    for j, v in zip(F.stages, F.values):
        assert v == pytest.approx(tr_u_phi(plan, pair, heat_family(D), 0.4, j, True, D.grading),
                                  abs=1e-12)


def test_analytic_side_refuses_uncertified(box_staggered_1d):
    D = box_staggered_1d
    m = D.model
    pair = make_isometry(m, [[-1]], None, "builtin:scalar-sign", D.bundle)
    plan = make_plan(m, {"kind": "intervals", "bounds": [[-1, 1]]}, j_max=8, scale=0.5, pair=pair)
    # large t: the kernel reaches the box edge at every stage
    with pytest.raises(IndexVerifyError):
        analytic_side(plan, pair, D, [2.0], truncation_tol=1e-12)
    # t below 4 h is excluded outright
    ana = analytic_side(plan, pair, D, [0.6, 0.2], truncation_tol=1.0)
    assert len(ana.t_values) == 1 and ana.excluded_t


def test_truncation_bound_zero_on_torus(torus_spinor_1d):
    D = torus_spinor_1d
    pair = make_isometry(D.model, [[1]], None, "builtin:identity", D.bundle)
    plan = make_plan(D.model, None, family="full", j_max=1, pair=pair)
    assert truncation_error_bound(plan, pair, 1.0, 1, 2) == 0.0


def test_infinite_volume_limit_removes_residue():
    vols = np.array([2.0, 4.0, 8.0])
    F = AveragedFunctional(np.arange(3), 0.3 + 0.7 / vols, vols)
    assert infinite_volume_limit(F) == pytest.approx(0.3)


# --- scenarios ----------------------------------------------------------------

def test_reflection_scenario_agrees_with_oracle():
    rep = report("reflection-r1")
    assert rep.verdicts == {"b": True, "expected_value": True}
    assert rep.integrand.value == pytest.approx(1.0, abs=1e-4)
    # both sides equal the oracle times the fixed volume over vol U
    assert rep.analytic_value == pytest.approx(rep.geometric_value, rel=1e-4)
    assert rep.geometric_value == pytest.approx(0.5, rel=0.01)


def test_translation_scenario_vanishes():
    rep = report("translation-r1")
    assert rep.verdicts["a"]
    assert abs(rep.analytic.smallest_t_value) < 1e-6
    assert rep.displacement.dominated


def test_mass_gapped_scenario_vanishes():
    rep = report("mass-gapped")
    assert rep.verdicts["invertible_zero"] and rep.passed


def test_torus_identity_scenario():
    rep = report("torus-identity")
    assert rep.passed and abs(rep.analytic_value) < 1e-6


def test_reflection_whole_space_remark():
    rep = report("reflection-UM")
    assert rep.verdicts == {"remark_U_eq_M": True}
    ratio = np.asarray(rep.diagnostics["fixed_ratio"])
    assert np.all(np.diff(ratio) < 0)


def test_tube_scenario_infinite_volume():
    rep = report("tube-r2")
    assert rep.verdicts["infinite_volume"]


def test_unknown_scenario_raises():
    with pytest.raises(IndexVerifyError):
        run_scenario("no-such-scenario")


def test_summary_is_serializable():
    import json

    from lefschetz_lattice.cli import _jsonable
    s = report("reflection-r1").summary()
    assert json.loads(json.dumps(_jsonable(s)))["passed"] is True
