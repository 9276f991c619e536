import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from test_acceptance import _tetrahedron

from lorentz_embed.minkowski import MinkVec, mink_pairing
from lorentz_embed.wiggle import (choose_N, euclid_zigzag, lorentz_wiggle, polyline_length, spare_coordinate,
                                  star_passes, wiggle_points)

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 10), st.floats(1.01, 5), st.floats(0.01, 2))
def test_choose_N_is_smallest_even(alpha, ratio, eps):
    beta = alpha * ratio
    N = choose_N(alpha, beta, eps)
    gap = math.sqrt(beta**2 - alpha**2)
    assert N % 2 == 0 and gap / N <= eps * (1 + 1e-9)
    assert N == 2 or gap / (N - 2) > eps


def test_choose_N_rejects_bad_input():
    for args in ((2, 1, 0.1), (0, 1, 0.1), (1, 2, 0)):
        with pytest.raises(ValueError):
            choose_N(*args)


@settings(max_examples=100, deadline=None)
@given(seeds, st.floats(0.05, 0.95), st.floats(0.02, 1.0))
def test_wiggle_pieces_have_exact_energy(seed, shrink, eps):
    rng = np.random.default_rng(seed)
    a = MinkVec(rng.normal(size=3), rng.normal(size=1) * 0.1)
    b = a + MinkVec(rng.normal(size=3) + [3, 0, 0], [0.0])
    s = b - a
    beta = math.sqrt(mink_pairing(s, s))
    alpha = shrink * beta
    pts, N, lift, vbar = wiggle_points(a, b, alpha, eps)
    assert pts[0] == a and pts[-1] == b and len(pts) == N + 1
    for i, (p, q) in enumerate(zip(pts, pts[1:])):
        d = q - p
        assert mink_pairing(d, d) == pytest.approx(alpha**2 / N**2, rel=1e-9, abs=1e-12)
        stay = pts[i] - (a + s * (i / N))
        assert stay.euclidean_norm() <= eps * (1 + 1e-9)
    # the displacement is timelike and orthogonal to the edge
    assert mink_pairing(vbar, s) == pytest.approx(0, abs=1e-9 * s.euclidean_norm())
    assert mink_pairing(vbar, vbar) == pytest.approx(-1)


def test_wiggle_rejects_short_or_timelike_edges():
    a = MinkVec([0.0], [0.0])
    with pytest.raises(ValueError, match="timelike"):
        wiggle_points(a, MinkVec([1.0], [2.0]), 0.5, 0.1)
    with pytest.raises(ValueError, match="not expanding"):
        wiggle_points(a, MinkVec([1.0], [0.0]), 2.0, 0.1)
    pts, N, _, _ = wiggle_points(a, MinkVec([1.0], [0.0]), 1.0, 0.1)
    assert N == 1 and len(pts) == 2


def test_wiggle_map_keeps_other_vertices():
    cx, f = _tetrahedron()
    res = lorentz_wiggle(f, ("u", "v"), 3.0, 1.0, complex=cx)
    for v in "wx":
        assert res.new_map[v] == f[v]
    assert res.chain[0] == "u" and res.chain[-1] == "v"
    assert len(res.chain) == res.N + 1
    assert res.complex.value(res.chain[0], res.chain[1]) == pytest.approx(3.0 / res.N)


@pytest.mark.parametrize("N", [2, 4, 8])
def test_required_M_is_tight(N):
    cx, f = _tetrahedron()
    res = lorentz_wiggle(f, ("u", "v"), 3.0, 4.0 / N, complex=cx)
    specials = [frozenset(p) for p in zip(res.chain, res.chain[1:])]
    star = res.complex.maximal_simplices()
    assert star_passes(res.complex, res.new_map, star, specials, res.M_required).all()
    assert not star_passes(res.complex, res.new_map, star, specials, res.M_required * (1 - 2e-3)).all()


@settings(max_examples=80, deadline=None)
@given(seeds, st.integers(2, 5), st.floats(1.05, 3.0), st.floats(0.01, 0.5))
def test_zigzag_hits_length_exactly(seed, n, stretch, eps):
    rng = np.random.default_rng(seed)
    base = np.cumsum(rng.normal(size=(n, 3)), axis=0)
    chain = [MinkVec(np.concatenate([p, [0.0]]), [0.25]) for p in base]
    L0 = polyline_length(chain)
    out = euclid_zigzag(chain, stretch * L0, eps)
    assert polyline_length(out) == pytest.approx(stretch * L0, rel=1e-12)
    assert out[0] == chain[0] and out[-1] == chain[-1]
    assert all(np.array_equal(p.neg, [0.25]) for p in out)
    # every new point stays within eps of the original chain along the spare axis
    assert max(abs(p.pos[3]) for p in out) <= eps * (1 + 1e-12)


def test_zigzag_errors():
    a, b = MinkVec([0.0, 0.0]), MinkVec([1.0, 0.0])
    assert euclid_zigzag([a, b], 1.0, 0.1) == [a, b]
    with pytest.raises(ValueError, match="shorter"):
        euclid_zigzag([a, b], 0.5, 0.1)
    with pytest.raises(ValueError, match="epsilon"):
        euclid_zigzag([a, b], 2.0, 0.0)
    with pytest.raises(ValueError, match="negative block"):
        euclid_zigzag([MinkVec([0.0], [0.0]), MinkVec([1.0], [1.0])], 3.0, 0.1)
    with pytest.raises(ValueError, match="spare"):
        spare_coordinate([MinkVec([0.0, 0.0]), MinkVec([1.0, 1.0])])
    bent = [a, MinkVec([1.0, 1.0]), MinkVec([2.0, 0.0])]
    with pytest.raises(ValueError, match="already longer"):
        euclid_zigzag(bent, 2.1, 0.1, coordinate=0)
