import numpy as np
import pytest
from hypothesis import given, strategies as st

from lefschetz_lattice.geometry import (GeometryError, ball, build_box_lattice, build_torus_lattice,
                                        distance, distance_to_complement, distances_from, full_region,
                                        inner_penumbra_U, outer_penumbra, pairwise_distance,
                                        region_from_mask)


def site(model, *coords):
    return int(model.index_of(np.round(np.array(coords) / model.h).astype(int))[0])


@pytest.mark.parametrize("n, L, h, count", [(1, 4, 1.0, 9), (2, (1, 1), 0.5, 25), (3, 1, 0.5, 125)])
def test_box_site_counts(n, L, h, count):
    m = build_box_lattice(n, L, h)
    assert m.n_sites == count
    assert m.volume == pytest.approx(count * h**n)


def test_box_sites_are_centred():
    m = build_box_lattice(1, 4, 1.0)
    assert np.array_equal(m.sites[:, 0], np.arange(-4, 5))


@pytest.mark.parametrize("n, C, h, count", [(1, 6.4, 0.1, 64), (2, (1, 1), 0.25, 16)])
def test_torus_site_counts(n, C, h, count):
    assert build_torus_lattice(n, C, h).n_sites == count


@pytest.mark.parametrize("builder, args", [
    (build_box_lattice, (1, 4, 0.0)),
    (build_box_lattice, (1, 4, -0.5)),
    (build_torus_lattice, (1, 1.0, 0.3)),
])
def test_invalid_lattices(builder, args):
    with pytest.raises(GeometryError):
        builder(*args)


def test_distance_examples():
    box = build_box_lattice(1, 4, 1.0)
    assert distance(box, site(box, -2), site(box, 3)) == pytest.approx(5)
    torus = build_torus_lattice(1, 10, 1.0)
    assert distance(torus, site(torus, 1), site(torus, 9)) == pytest.approx(2)
    assert distance(torus, 3, 3) == 0


@pytest.mark.parametrize("model", [build_box_lattice(2, (1.5, 1), 0.5),
                                   build_torus_lattice(2, (3, 2), 0.5)])
def test_distance_is_a_metric(model):
    d = pairwise_distance(model, np.arange(model.n_sites))
    assert np.allclose(d, d.T)
    assert np.all(np.diag(d) == 0)
    off = d + np.eye(model.n_sites)
    assert np.all(off > 0)
    # triangle inequality over all triples
    assert np.all(d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-12)


def test_ball_is_open():
    m = build_box_lattice(1, 4, 1.0)
    b = ball(m, site(m, 0), 2.5)
    assert np.array_equal(np.sort(m.sites[b.indices, 0]), np.arange(-2, 3))
    assert len(ball(m, site(m, 0), 2.0)) == 3


def test_torus_ball_volume_is_constant():
    m = build_torus_lattice(2, (3, 3), 0.25)
    vols = {len(ball(m, p, 0.8)) for p in range(m.n_sites)}
    assert len(vols) == 1


def test_box_ball_volume_monotone_under_inclusion():
    small = build_box_lattice(2, 1.0, 0.25)
    big = build_box_lattice(2, 2.0, 0.25)
    for p in range(0, small.n_sites, 7):
        q = int(big.index_of(small.ints[p:p + 1])[0])
        assert len(ball(small, p, 0.9)) <= len(ball(big, q, 0.9))


def test_outer_penumbra_zero_is_the_set():
    m = build_box_lattice(1, 4, 0.5)
    X = region_from_mask(m, np.abs(m.sites[:, 0]) < 1.2)
    assert np.array_equal(outer_penumbra(m, X, 0).indices, X.indices)
    grown = outer_penumbra(m, X, 1.0)
    assert X.issubset(grown)
    # closed convention: the site at distance exactly 1 from X is included
    assert np.isclose(np.max(np.abs(m.sites[grown.indices, 0])), 2.0)


def test_inner_penumbra_zero_radius():
    m = build_box_lattice(2, 3, 0.25)
    U = region_from_mask(m, np.abs(m.sites[:, 0]) < 1)
    Mj = region_from_mask(m, np.max(np.abs(m.sites), axis=1) <= 2)
    assert np.array_equal(inner_penumbra_U(m, U, Mj, 0).indices, (U & Mj).indices)


def test_distance_to_complement_matches_brute_force():
    m = build_box_lattice(2, 2, 0.25)
    X = region_from_mask(m, np.linalg.norm(m.sites, axis=1) < 1.3)
    d = distance_to_complement(m, X)
    comp = X.complement().indices
    brute = pairwise_distance(m, X.indices, comp).min(axis=1)
    assert np.allclose(d[X.indices], brute)


@pytest.mark.parametrize("h", [1 / 4, 1 / 8, 1 / 16])
def test_inner_penumbra_approaches_example_volume(h):
    """Pen^-_U(U_j, r) for U = (-1, 1) x R and M_j = [-j, j]^2 has area 2 * 2(j - r)."""
    j, r = 3, 1
    m = build_box_lattice(2, j + 1, h)
    U = region_from_mask(m, np.abs(m.sites[:, 0]) < 1)
    Mj = region_from_mask(m, np.max(np.abs(m.sites), axis=1) <= j + 1e-9)
    pen = inner_penumbra_U(m, U, Mj, r)
    assert pen.volume == pytest.approx(2 * 2 * (j - r), abs=8 * h)


@given(st.integers(0, 80), st.floats(0, 3))
def test_ball_membership_is_distance_rule(p, r):
    m = build_box_lattice(2, 2, 0.5)
    B = ball(m, p, r)
    d = distances_from(m, p)
    assert np.array_equal(B.mask, d < r)


def test_full_region_volume():
    m = build_torus_lattice(1, 4, 0.25)
    assert full_region(m).volume == pytest.approx(4)
