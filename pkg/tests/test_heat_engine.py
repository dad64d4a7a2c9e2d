import numpy as np
import pytest

from lefschetz_lattice.clifford_dirac import assemble_dirac, build_clifford
from lefschetz_lattice.geometry import build_box_lattice, build_torus_lattice, distances_from
from lefschetz_lattice.heat_engine import (DecayEnvelope, KernelError, check_envelope, compose,
                                          dj_heat_family, dj_norm_bound, fit_al_constants,
                                          fit_gaussian_envelope, fit_polynomial_constant,
                                          gaussian_heat_kernel, heat_family, offdiagonal_mass,
                                          q_family, spectral_kernel, supertrace)


def test_gaussian_peak():
    m = build_box_lattice(1, 4.0, 0.25)
    K = gaussian_heat_kernel(m).matrix(1.0)
    c = int(m.index_of([[0]])[0])
    assert K[c, c] == pytest.approx((4 * np.pi) ** -0.5, rel=1e-12)
    assert (4 * np.pi) ** -0.5 == pytest.approx(0.28209, abs=1e-5)


def test_gaussian_mass():
    m = build_box_lattice(1, 6.0, 1 / 32)
    K = gaussian_heat_kernel(m).matrix(0.5)
    c = int(m.index_of([[0]])[0])
    assert K[c].sum() * m.h == pytest.approx(1.0, abs=1e-6)


def test_torus_image_sum_matches_spectral():
    # exact Laplacian symbol via Fourier differentiation on an odd grid
    m = build_torus_lattice(1, 1.0, 1 / 63)
    D = assemble_dirac(m, build_clifford(1, "spinor"), "spectral")
    t = 0.1
    Ks = heat_family(D).matrix(t)[0, 0]
    Kg = gaussian_heat_kernel(m).matrix(t)[0, 0]
    assert Ks == pytest.approx(Kg, abs=1e-12)


@pytest.mark.parametrize("t2", [0.01, 0.1, 0.5])
def test_two_constructions_agree_on_torus(t2):
    m = build_torus_lattice(1, 4.0, 4 / 63)
    D = assemble_dirac(m, build_clifford(1, "spinor"), "spectral")
    t = np.sqrt(t2)
    Ks = heat_family(D).matrix(t)[::2, ::2]  # spin-up block
    Kg = gaussian_heat_kernel(m).matrix(t)
    assert np.max(np.abs(Ks - Kg)) < 1e-6


@pytest.mark.parametrize("bundle, scheme", [("staggered", "staggered"), ("spinor", "central")])
def test_box_interior_converges_to_gaussian(bundle, scheme):
    """Difference schemes carry a second taste, so the lattice kernel only matches
    the Gaussian after averaging neighbouring columns; that error halves with h."""
    t = 0.5
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        m = build_box_lattice(1, 4.0, h)
        D = assemble_dirac(m, build_clifford(1, bundle), scheme)
        f = D.bundle.fiber_dim
        inner = np.flatnonzero(np.abs(m.sites[:, 0]) <= 4.0 - 4 * t + 1e-9)
        K = heat_family(D).matrix(t)[::f, ::f][np.ix_(inner, inner)]
        G = gaussian_heat_kernel(m).matrix(t)[np.ix_(inner, inner)]
        diff = K - G
        errs.append(np.max(np.abs(diff[:, :-1] + diff[:, 1:])) / 2)
    assert errs[1] < 0.55 * errs[0] and errs[2] < 0.55 * errs[1]


def test_identity_function():
    m = build_torus_lattice(1, 2.0, 0.25)
    D = assemble_dirac(m, build_clifford(1, "exterior"))
    K = spectral_kernel(D, lambda x: np.ones_like(x)).matrix(0.7)
    assert np.allclose(K, np.eye(D.dim) / m.weight)


@pytest.mark.parametrize("t2", [0.05, 0.2])
def test_parametrix_identity(torus_spinor_1d, t2):
    D = torus_spinor_1d
    t = np.sqrt(t2)
    A = D.dense()
    Q = q_family(D).operator(t)
    E = heat_family(D).operator(t)
    assert np.linalg.norm(np.eye(D.dim) - A @ Q - E, 2) < 1e-10


def test_semigroup(torus_spinor_1d):
    H = heat_family(torus_spinor_1d)
    t = 0.3
    K2 = compose(H, H).matrix(t)
    assert np.max(np.abs(K2 - H.matrix(np.sqrt(2) * t))) < 1e-6


def test_hermitian_and_even(torus_spinor_1d):
    D = torus_spinor_1d
    K = heat_family(D).matrix(0.4)
    g = D.grading
    assert np.allclose(K, K.conj().T, atol=1e-12)
    assert np.allclose(g[:, None] * K * g[None, :], K, atol=1e-12)


def test_dj_zero_is_heat(torus_spinor_1d):
    assert np.allclose(dj_heat_family(torus_spinor_1d, 0).matrix(0.3),
                       heat_family(torus_spinor_1d).matrix(0.3))


@pytest.mark.parametrize("j", [1, 2, 3])
def test_dj_norm_bound(torus_spinor_1d, j):
    t = 0.5
    op = dj_heat_family(torus_spinor_1d, j).operator(t)
    assert np.linalg.norm(op, 2) <= dj_norm_bound(j, t) * (1 + 1e-12)


def test_dj_supertrace_eigensum(torus_spinor_1d):
    D = torus_spinor_1d
    lam, V = np.linalg.eigh(D.dense())
    g = D.grading
    expected = np.sum(lam**2 * np.exp(-lam**2) * np.einsum("ik,i,ik->k", V.conj(), g, V).real)
    assert supertrace(dj_heat_family(D, 2), 1.0, g) == pytest.approx(expected, abs=1e-10)


def test_budget_enforced():
    m = build_torus_lattice(1, 4.0, 0.25)
    D = assemble_dirac(m, build_clifford(1, "exterior"))
    with pytest.raises(KernelError):
        heat_family(D, budget=8)


@pytest.fixture(scope="module")
def box_heat():
    # h = 1/32 keeps every sampled (r, t) with r <= t**2 / h, where the lattice
    # heat kernel is still Gaussian rather than in its Bessel tail
    m = build_box_lattice(1, 5.0, 1 / 32)
    D = assemble_dirac(m, build_clifford(1, "staggered"), "staggered")
    return m, heat_family(D)


def test_offdiagonal_mass_edges(box_heat):
    m, H = box_heat
    c = int(m.index_of([[0]])[0])
    full = offdiagonal_mass(H, c, 0.0, 0.3)
    assert full[0] > 0 and full[0] == pytest.approx(full[1])
    assert offdiagonal_mass(H, c, 100.0, 0.3) == (0.0, 0.0)
    masses = [offdiagonal_mass(H, c, r, 0.3)[0] for r in (0.25, 0.5, 1.0, 1.5)]
    assert np.all(np.diff(masses) < 0)


def test_al_bound_transfers_to_verification_grid(box_heat):
    m, H = box_heat
    env = fit_al_constants(H, [0.7, 0.6, 0.5])
    for t in (0.45, 0.4, 0.3, 0.25):
        row, col = offdiagonal_mass(H, int(m.index_of([[0]])[0]), 0.0, t)
        assert max(row, col) <= env(0.0, t)


def test_gaussian_envelope_fit_and_check(box_heat):
    m, H = box_heat
    sites = [int(m.index_of([[k]])[0]) for k in (-32, 0, 32)]
    cal = [(p, r, t) for p in sites for r in (1.0, 1.5) for t in (0.45, 0.5)]
    samples = [(r, t, offdiagonal_mass(H, p, r, t)[0]) for p, r, t in cal]
    env = fit_gaussian_envelope(samples)
    ver = [(p, r, t) for p in sites for r in (1.25, 2.0) for t in (0.25, 0.3, 0.35)]
    rep = check_envelope(H, env, ver)
    assert rep.all_pass and rep.max_violation_ratio <= 1


def test_gaussian_beats_polynomial(box_heat):
    m, H = box_heat
    c = int(m.index_of([[0]])[0])
    pts = [(c, r, t) for r in (1.0, 1.5, 2.0) for t in (0.5, 0.4, 0.3, 0.25)]
    # calibrate the polynomial constant at the corner r = 1, t = 0.5 only
    C = fit_polynomial_constant([(1.0, 0.5, offdiagonal_mass(H, c, 1.0, 0.5)[0])], b=4, safety=1 + 1e-9)
    assert check_envelope(H, C, pts).all_pass


def test_envelope_shape():
    g = DecayEnvelope("gaussian", 2.0, a=0.3)
    p = DecayEnvelope("polynomial", 1.0, b=4, k=0)
    r = np.linspace(1, 4, 20)
    for env in (g, p):
        assert np.all(np.diff(env(r, 0.5)) <= 0)
    t = np.linspace(0.05, 1, 40)
    for a in (0, 1, 2):
        for env in (g, p):
            v = t ** (-a) * env(1.0, t)
            assert np.all(np.diff(v) >= -1e-15) or a > 0 and env is g
