import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorentz_embed.minkowski import (MinkVec, PLMap, lorentz_orthogonal_negative, mink_pairing, pl_path_energy,
                                     project_neg, project_pos)

seeds = st.integers(0, 2**32 - 1)


def rand_vec(rng, p=3, q=1):
    return MinkVec(rng.normal(size=p), rng.normal(size=q))


@settings(max_examples=80, deadline=None)
@given(seeds)
def test_pairing_is_symmetric_bilinear(seed):
    rng = np.random.default_rng(seed)
    u, v, w = rand_vec(rng), rand_vec(rng), rand_vec(rng)
    a, b = rng.normal(size=2)
    assert mink_pairing(u, v) == pytest.approx(mink_pairing(v, u), abs=1e-12)
    lhs = mink_pairing(u * a + v * b, w)
    assert lhs == pytest.approx(a * mink_pairing(u, w) + b * mink_pairing(v, w), abs=1e-10)
    # the two blocks split the form
    assert mink_pairing(u, u) == pytest.approx(
        mink_pairing(project_pos(u), project_pos(u)) + mink_pairing(project_neg(u), project_neg(u)), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(seeds, st.integers(1, 3))
def test_orthogonal_negative_direction(seed, q):
    rng = np.random.default_rng(seed)
    s = MinkVec(rng.normal(size=3) * 3 + 5, rng.normal(size=q) * 0.5)
    if mink_pairing(s, s) <= 1e-6:
        return
    v = lorentz_orthogonal_negative(s)
    assert mink_pairing(v, s) == pytest.approx(0.0, abs=1e-9 * s.euclidean_norm())
    assert mink_pairing(v, v) == pytest.approx(-1.0, abs=1e-12)


def test_orthogonal_negative_errors():
    with pytest.raises(ValueError, match="negative coordinate"):
        lorentz_orthogonal_negative(MinkVec([1.0, 0.0]))
    with pytest.raises(ValueError, match="spacelike"):
        lorentz_orthogonal_negative(MinkVec([1.0], [1.0]))
    with pytest.raises(ValueError, match="spacelike"):
        lorentz_orthogonal_negative(MinkVec([0.5], [1.0]))


def test_signature_mismatch():
    with pytest.raises(ValueError, match="signature"):
        MinkVec([1, 2]) + MinkVec([1], [2])
    with pytest.raises(ValueError, match="signature"):
        mink_pairing(MinkVec([1, 2]), MinkVec([1, 2, 3]))


def test_pl_path_energy_splits_blocks():
    pts = [(0.0, MinkVec([0, 0], [0])), (1.0, MinkVec([3, 0], [1])), (3.0, MinkVec([3, 4], [1]))]
    total, pos, neg = pl_path_energy(pts)
    assert pos == pytest.approx(9 / 1 + 16 / 2)
    assert neg == pytest.approx(-1.0)
    assert total == pytest.approx(pos + neg)
    assert pl_path_energy(pts[:1]) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="increasing"):
        pl_path_energy([(0.0, MinkVec([0])), (0.0, MinkVec([1]))])


def test_pl_map_interpolates_and_serializes():
    f = PLMap({"a": MinkVec([0, 0], [1]), "b": MinkVec([2, 4], [3])})
    assert f.signature == (2, 1)
    assert f.at(["a", "b"], [0.75, 0.25]) == MinkVec([0.5, 1.0], [1.5])
    assert MinkVec.from_json(f.to_json()["b"]) == f["b"]
    assert "a" in f and "z" not in f
    with pytest.raises(KeyError, match="no image"):
        f["z"]
    with pytest.raises(ValueError, match="mixed"):
        PLMap({"a": MinkVec([0]), "b": MinkVec([0, 0])})
    with pytest.raises(ValueError, match="declared"):
        PLMap({"a": MinkVec([0])}, (2, 0))


def test_vector_helpers():
    v = MinkVec.from_array([1, 2, 3], 2)
    assert v.signature == (2, 1)
    assert np.array_equal(v.as_array(), [1, 2, 3])
    assert -v == v * -1 == -1 * v
    assert hash(v) == hash(MinkVec([1, 2], [3]))
    assert v.euclidean_norm() == pytest.approx(np.sqrt(14))
