import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_site, random_space, site_distance, vertex_distances

from lorentz_embed.metric_core import (FiniteLengthSpace, Geodesic, NormSampler, ParamPath, check_perturbed_energy,
                                       check_perturbed_energy_batch, energy_step_triangle, geodesic_energy,
                                       parallelogram_defect, path_energy, path_length, perturbation_constant)

seeds = st.integers(0, 2**32 - 1)
SETTINGS = settings(max_examples=60, deadline=None)


def line(n=3, w=1.0):
    pts = [f"p{i}" for i in range(n)]
    return FiniteLengthSpace(pts, [(pts[i], pts[i + 1], w) for i in range(n - 1)])


class TestSpace:
    def test_rejects_bad_input(self):
        with pytest.raises(ValueError, match="disconnected"):
            FiniteLengthSpace(["a", "b", "c"], [("a", "b", 1.0)])
        with pytest.raises(ValueError, match="loop"):
            FiniteLengthSpace(["a"], [("a", "a", 1.0)])
        with pytest.raises(ValueError, match="positive"):
            FiniteLengthSpace(["a", "b"], [("a", "b", -1.0)])
        with pytest.raises(ValueError, match="duplicate"):
            FiniteLengthSpace(["a", "a"], [])
        with pytest.raises(KeyError):
            FiniteLengthSpace(["a"], [("a", "z", 1.0)])

    def test_json_round_trip(self):
        sp = random_space(np.random.default_rng(1))
        again = FiniteLengthSpace.from_json(sp.to_json())
        assert again.to_json() == sp.to_json()
        assert np.array_equal(again.distance_matrix, sp.distance_matrix)

    @SETTINGS
    @given(seeds)
    def test_vertex_distances_match_dijkstra(self, seed):
        sp = random_space(np.random.default_rng(seed))
        np.testing.assert_allclose(sp.distance_matrix, vertex_distances(sp), rtol=0, atol=1e-12)

    @SETTINGS
    @given(seeds)
    def test_site_distances_match_split_graph(self, seed):
        rng = np.random.default_rng(seed)
        sp = random_space(rng)
        for _ in range(5):
            p, q = random_site(sp, rng), random_site(sp, rng)
            assert sp.distance(p, q) == pytest.approx(site_distance(sp, p, q), abs=1e-12)

    @SETTINGS
    @given(seeds)
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        sp = random_space(rng)
        p, q, r = (random_site(sp, rng) for _ in range(3))
        assert sp.distance(p, p) == 0
        assert sp.distance(p, q) == sp.distance(q, p)
        assert sp.distance(p, r) <= sp.distance(p, q) + sp.distance(q, r) + 1e-12

    @SETTINGS
    @given(seeds)
    def test_witness_paths_and_points_along(self, seed):
        rng = np.random.default_rng(seed)
        sp = random_space(rng)
        x, y = rng.choice(sp.points, 2)
        path = sp.vertex_path(x, y)
        length = sum(sp.edges[sp.edge_between(a, b)][2] for a, b in zip(path, path[1:]))
        assert length == pytest.approx(sp.vertex_distance(x, y), abs=1e-12)
        p, q = random_site(sp, rng), random_site(sp, rng)
        d = sp.distance(p, q)
        t = float(rng.uniform(0, 1)) * d
        m = sp.point_along(p, q, t)
        assert sp.distance(p, m) == pytest.approx(t, abs=1e-9)
        assert sp.distance(m, q) == pytest.approx(d - t, abs=1e-9)

    def test_canonical_sites(self):
        sp = line()
        assert sp.canon((0, 0.0)) == "p0"
        assert sp.canon((0, 1.0)) == "p1"
        assert sp.canon((1, 0.25)) == (1, 0.25)
        assert sp.from_fraction(1, 0.5) == (1, 0.5)


class TestEnergy:
    def test_geodesic_closed_form(self):
        sp = line(3, 2.0)
        g = Geodesic.between(sp, "p0", "p2", 1.0, 3.0)
        assert g.velocity == 2.0
        assert g.check()
        for n in (1, 3, 8):
            assert path_energy(g.path, n=n) == pytest.approx(geodesic_energy(4.0, 1.0, 3.0), abs=1e-12)
            assert path_length(g.path, n=n) == pytest.approx(4.0, abs=1e-12)
        assert geodesic_energy(4.0, 1.0, 3.0) == 8.0  # d^2 / (b - a) = v * l

    def test_geodesic_energy_domain_errors(self):
        with pytest.raises(ValueError):
            geodesic_energy(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            geodesic_energy(-1.0, 0.0, 1.0)

    @SETTINGS
    @given(seeds, st.integers(1, 6))
    def test_refinement_never_lowers_energy(self, seed, n):
        rng = np.random.default_rng(seed)
        sp = random_space(rng)
        ts = np.cumsum(rng.uniform(0.2, 1.0, 4))
        path = ParamPath(sp, list(ts), [random_site(sp, rng) for _ in ts])
        assert path_energy(path, n=n) <= path_energy(path, n=2 * n) + 1e-9
        assert path_length(path, n=n) <= path_length(path, n=2 * n) + 1e-9

    @SETTINGS
    @given(seeds)
    def test_doubling_the_domain_halves_energy(self, seed):
        rng = np.random.default_rng(seed)
        sp = random_space(rng)
        p, q = random_site(sp, rng), random_site(sp, rng)
        T = float(rng.uniform(0.5, 3))
        e1 = path_energy(Geodesic.between(sp, p, q, 0.0, T).path, n=4)
        e2 = path_energy(Geodesic.between(sp, p, q, 0.0, 2 * T).path, n=4)
        assert e2 == pytest.approx(e1 / 2, rel=1e-12, abs=1e-15)

    def test_path_json(self):
        sp = line(3, 1.0)
        path = ParamPath.from_json(sp, {"samples": [[0, "p0"], [0.5, [1, 0.5]]], "domain": [0, 0.5]})
        assert path.sites == ["p0", (1, 0.5)]
        with pytest.raises(ValueError, match="domain"):
            ParamPath.from_json(sp, {"samples": [[0, "p0"], [1, "p1"]], "domain": [0, 2]})
        with pytest.raises(ValueError, match="increasing"):
            ParamPath(sp, [0.0, 0.0], ["p0", "p1"])

    def test_triangle_step(self):
        holds, equal = energy_step_triangle(1.0, 2.0, 3.0, 1.0, 3.0)
        assert holds and equal  # additive, one speed
        holds, equal = energy_step_triangle(1.0, 2.0, 3.0, 2.0, 3.0)
        assert holds and not equal  # additive, two speeds
        holds, equal = energy_step_triangle(1.0, 1.0, 1.5, 1.0, 2.0)
        assert holds and not equal
        with pytest.raises(ValueError):
            energy_step_triangle(1, 1, 1, 2.0, 1.0)


class TestPerturbation:
    def test_constant_formula(self):
        assert perturbation_constant(2.0, 3, 0.0, 1.0) == 4 * 9 * 2 / (1 * 1)
        assert perturbation_constant(3.0, 1, 1.0, 3.0) == pytest.approx(4 * 3 / (2 * 2))
        for bad in ((1.0, 1, 0, 1), (2.0, 0, 0, 1), (2.0, 1, 1, 1)):
            with pytest.raises(ValueError):
                perturbation_constant(*bad)

    def test_default_delta_and_violations(self):
        sp = line(2, 1.0)
        path = Geodesic.between(sp, "p0", "p1", 0.0, 1.0).path

        def f(x):
            return np.array([sp.distance("p0", x)])

        delta = math.sqrt(0.1 / (2 * perturbation_constant(2.0, 8, 0.0, 1.0)))
        assert check_perturbed_energy(f, lambda x: f(x) + 0.9 * delta, path, 2.0, 0.1)
        assert check_perturbed_energy_batch(f, f, [path, path], 2.0, 0.1) == [True, True]
        with pytest.raises(ValueError, match="apart"):
            check_perturbed_energy(f, lambda x: f(x) + 2 * delta, path, 2.0, 0.1)
        with pytest.raises(ValueError):
            check_perturbed_energy(f, f, path, 1.0, 0.1)


class TestNorms:
    def test_quadratic_norm_is_homogeneous_and_parallelogram(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(3, 3))
        n = NormSampler.from_quadratic_form(A @ A.T + np.eye(3))
        xs = rng.normal(size=(10, 3))
        assert n.homogeneous_on(xs, [-2.0, 0.5, 3.0])
        assert max(parallelogram_defect(n, x, y) for x, y in zip(xs, xs[::-1])) < 1e-12

    def test_l1_breaks_parallelogram(self):
        n = NormSampler.lp(1)
        assert parallelogram_defect(n, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(4.0)
        assert parallelogram_defect(NormSampler.lp(2), [1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)
