import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorentz_embed.minkowski import MinkVec, PLMap
from lorentz_embed.simplicial import (MetricComplex, QuadraticForm, batch_is_pd, embeddability_threshold,
                                      form_from_energies, gram_form, induced_metric, is_euclidean,
                                      is_one_lipschitz, one_special_edge_embeddable, quadratic_form,
                                      special_edge_complex, subdivide_edge)

seeds = st.integers(0, 2**32 - 1)
SETTINGS = settings(max_examples=60, deadline=None)


def point_simplex(rng, k, dim=None):
    """A k-simplex with vertex images in general position in R^dim."""
    dim = dim or k + 1
    X = rng.normal(size=(k + 1, dim))
    verts = [f"x{i}" for i in range(k + 1)]
    f = PLMap({v: MinkVec(x) for v, x in zip(verts, X)})
    metric = {(a, b): float(np.linalg.norm(X[i] - X[j]))
              for (i, a), (j, b) in itertools.combinations(enumerate(verts), 2)}
    return MetricComplex(verts, [verts], metric), f, X


@SETTINGS
@given(seeds, st.integers(1, 5))
def test_form_and_edge_energies_round_trip(seed, k):
    rng = np.random.default_rng(seed)
    G = {(i, j): float(rng.uniform(0.1, 4)) for i in range(k + 1) for j in range(i + 1, k + 1)}
    back = QuadraticForm(form_from_energies(G, k)).edge_energies()
    for key, val in G.items():
        assert back[key] == pytest.approx(val, abs=1e-12)


@SETTINGS
@given(seeds, st.integers(1, 4))
def test_point_set_metrics_are_euclidean(seed, k):
    rng = np.random.default_rng(seed)
    cx, f, X = point_simplex(rng, k)
    q = quadratic_form(cx, cx.vertices)
    gram = (X[1:] - X[0]) @ (X[1:] - X[0]).T
    np.testing.assert_allclose(q.matrix, gram, atol=1e-9)
    np.testing.assert_allclose(gram_form(f, cx.vertices).matrix, gram, atol=1e-12)
    np.testing.assert_allclose(quadratic_form(induced_metric(f, cx), cx.vertices).matrix, gram, atol=1e-12)
    if np.linalg.eigvalsh(gram).min() > 1e-6 * np.trace(gram):
        assert is_euclidean(q).is_positive_definite


@SETTINGS
@given(seeds, st.integers(1, 4), st.floats(0.1, 0.99))
def test_scaled_maps_are_short(seed, k, scale):
    rng = np.random.default_rng(seed)
    cx, f, X = point_simplex(rng, k)
    shrunk = PLMap({v: f[v] * scale for v in cx.vertices})
    g = quadratic_form(cx, cx.vertices)
    assert is_one_lipschitz(g, gram_form(shrunk, cx.vertices))
    assert is_one_lipschitz(g, gram_form(f, cx.vertices))
    stretched = PLMap({v: f[v] * (1 / scale) for v in cx.vertices})
    if scale < 0.9:
        assert not is_one_lipschitz(g, gram_form(stretched, cx.vertices))


@SETTINGS
@given(seeds, st.integers(1, 4), st.integers(2, 6))
def test_subdivision_is_flat(seed, k, N):
    """Subdividing a point-set simplex gives exactly the metric induced by the affine map."""
    rng = np.random.default_rng(seed)
    cx, f, X = point_simplex(rng, k)
    new, chain, corr = subdivide_edge(cx, ("x0", "x1"), N)
    images = dict(f.images)
    for i, w in enumerate(chain):
        images[w] = f["x0"] * (1 - i / N) + f["x1"] * (i / N)
    g = PLMap(images)
    for u, v in new.edges:
        d = g[u] - g[v]
        assert new.value(u, v) == pytest.approx(d.euclidean_norm(), abs=1e-9)
    assert len(corr[tuple(cx.vertices)]) == N
    assert len(new.maximal_simplices()) == N


def test_subdivision_errors():
    cx = special_edge_complex(2, 1.0, 1.0)
    with pytest.raises(ValueError):
        subdivide_edge(cx, (0, 1), 0)
    with pytest.raises(KeyError):
        subdivide_edge(MetricComplex([0, 1, 2], [[0, 1], [1, 2]], {(0, 1): 1, (1, 2): 1}), (0, 2), 2)
    same, chain, _ = subdivide_edge(cx, (0, 1), 1)
    assert same is cx and chain == [0, 1]


@SETTINGS
@given(seeds, st.integers(1, 5))
def test_batch_pd_matches_eigvalsh(seed, k):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(50, k, k))
    mats = A @ A.transpose(0, 2, 1) - rng.uniform(0, 1.5, size=(50, 1, 1)) * np.eye(k)
    ok, lam = batch_is_pd(mats)
    ref = np.linalg.eigvalsh(mats)[:, 0]
    np.testing.assert_allclose(lam, ref, atol=1e-10)
    thresh = 1e-9 * np.abs(np.trace(mats, axis1=1, axis2=2)) / k
    np.testing.assert_array_equal(ok, ref > thresh)


@pytest.mark.parametrize("k", [2, 3, 5, 8])
def test_special_edge_threshold(k):
    M = 1.7
    c_star = embeddability_threshold(k, M)
    if k == 2:
        assert c_star == pytest.approx(2 * M)  # the triangle inequality
    for c in (0.5 * c_star, 0.999 * c_star, 1.001 * c_star):
        pd = is_euclidean(quadratic_form(special_edge_complex(k, M, c), range(k + 1))).is_positive_definite
        assert pd == (c < c_star) == one_special_edge_embeddable(k, M, c)
    with pytest.raises(ValueError):
        one_special_edge_embeddable(1, M, 1.0)
    with pytest.raises(ValueError):
        one_special_edge_embeddable(2, 0.0, 1.0)


def test_cone_distance_shrinks_near_the_boundary():
    far = is_euclidean(quadratic_form(special_edge_complex(3, 1.0, 1.0), range(4)))
    near = is_euclidean(quadratic_form(special_edge_complex(3, 1.0, 0.99 * embeddability_threshold(3, 1.0)), range(4)))
    assert far.cone_distance > near.cone_distance > 0
    out = is_euclidean(quadratic_form(special_edge_complex(3, 1.0, 3.0), range(4)))
    assert not out.is_positive_definite and out.cone_distance == 0.0


def test_complex_structure_and_json():
    cx = MetricComplex("abcd", ["abc", "cd"], {"ab": 1, "bc": 1, "ac": 1.5, "cd": 2})
    assert cx.maximal_simplices() == [("a", "b", "c"), ("c", "d")]
    assert cx.dimension() == 2
    assert cx.star(["c"]) == [("a", "b", "c"), ("c", "d")]
    assert cx.energy("a", "c") == 2.25
    again = MetricComplex.from_json(cx.to_json())
    assert again.maximal_simplices() == cx.maximal_simplices()
    assert again.value("c", "d") == 2
    with pytest.raises(KeyError, match="missing edge"):
        MetricComplex("ab", ["ab"], {})
    with pytest.raises(KeyError):
        quadratic_form(cx, "abd")
    with pytest.raises(ValueError, match="symmetric"):
        QuadraticForm(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="permutation"):
        quadratic_form(cx, "abc", ordering="abd")
