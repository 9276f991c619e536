"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly with ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import itertools
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import exact_pl_pullback_energy, affine_graph_map, load_space, random_site, random_space, site_distance  # noqa: E402

from lorentz_embed.cover_nerve import (brute_force_nerve_distance, closure_order, nerve_distance,  # noqa: E402
                                       open_order)
from lorentz_embed.metric_core import (Geodesic, NormSampler, ParamPath, check_perturbed_energy,  # noqa: E402
                                       energy_step_triangle, parallelogram_defect, path_energy,
                                       perturbation_constant, pullback_energy)
from lorentz_embed.minkowski import MinkVec, PLMap, mink_pairing  # noqa: E402
from lorentz_embed.pipeline import (GeodesicFamily, PipelineConfig, build_stage, embed)  # noqa: E402
from lorentz_embed.simplicial import (MetricComplex, batch_is_pd, embeddability_threshold,  # noqa: E402
                                      one_special_edge_embeddable, quadratic_form, special_edge_complex)
from lorentz_embed.wiggle import lorentz_wiggle, star_passes, wiggle_points  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, title: str, limit: float):
    """Decorator: time the check, print one line, store it for the session summary."""
    def wrap(fn):
        def run():
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crash is a failed criterion, reported as such
                ok, detail = False, f"raised {type(exc).__name__}: {exc}"
            dt = time.perf_counter() - t0
            if dt >= limit:
                ok, detail = False, f"{detail}; runtime {dt:.2f}s over the {limit:g}s limit"
            line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} ({title}): {detail} [{dt:.2f}s]"
            RESULTS[number] = (ok, line)
            print(line)
            return ok, line
        run.number = number
        return run
    return wrap


# ----- 1 ---------------------------------------------------------------------------------------


@record(1, "wiggle exactness", 1.0)
def criterion_1():
    a = MinkVec([0.0, 0.0], [0.0])
    b = MinkVec([5.0, 0.0], [0.0])
    pts, N, lift, vbar = wiggle_points(a, b, 3.0, 0.5)
    energies = [mink_pairing(q - p, q - p) for p, q in zip(pts, pts[1:])]
    err = max(abs(e - 9 / 64) for e in energies)
    straight = [a + (b - a) * (i / N) for i in range(N + 1)]
    disp = max((p - s).euclidean_norm() for p, s in zip(pts, straight))
    proj = max(float(np.max(np.abs(p.pos - s.pos))) for p, s in zip(pts, straight))
    # the complex-level repair gives the same chain
    cx = MetricComplex(["u", "v"], [["u", "v"]], {("u", "v"): 3.0})
    res = lorentz_wiggle(PLMap({"u": a, "v": b}), ("u", "v"), 3.0, 0.5, complex=cx, compute_M=False)
    sub = [res.complex.energy(x, y) for x, y in zip(res.chain, res.chain[1:])]
    ok = N == 8 and err <= 1e-9 and disp == 0.5 and proj == 0.0 and all(abs(e - 9 / 64) <= 1e-9 for e in sub)
    return ok, f"N={N}, max |E-9/64|={err:.1e}, sup displacement={disp!r}, max projection gap={proj:.1e}"


# ----- 2 ---------------------------------------------------------------------------------------


def _tetrahedron():
    V = ["u", "v", "w", "x"]
    cx = MetricComplex(V, [V], {("u", "v"): 3.0, ("u", "w"): 6.0, ("u", "x"): 6.0, ("v", "w"): 6.0,
                                ("v", "x"): 6.0, ("w", "x"): 6.0})
    img = {"u": MinkVec([0, 0, 0], [0]), "v": MinkVec([5, 0, 0], [0]),
           "w": MinkVec([2.5, 2, 0], [0]), "x": MinkVec([2.5, 1, 1.5], [0])}
    return cx, PLMap(img, (3, 1))


@record(2, "shortness certificate", 10.0)
def criterion_2():
    cx, f = _tetrahedron()
    Ms, notes, ok = [], [], True
    for N in (2, 4, 8, 16):
        res = lorentz_wiggle(f, ("u", "v"), 3.0, 4.0 / N, complex=cx)
        specials = [frozenset(p) for p in zip(res.chain, res.chain[1:])]
        star = res.complex.maximal_simplices()
        at_M = star_passes(res.complex, res.new_map, star, specials, res.M_required)
        at_half = star_passes(res.complex, res.new_map, star, specials, 0.5 * res.M_required)
        ok &= res.N == N and bool(at_M.all()) and not bool(at_half.all())
        Ms.append(res.M_required)
        notes.append(f"N={N}: M={res.M_required:.4g}, fail@M/2={int((~at_half).sum())}/{len(star)}")
    ok &= all(b <= a for a, b in zip(Ms, Ms[1:]))
    return ok, "; ".join(notes)


# ----- 3 ---------------------------------------------------------------------------------------


def _random_path(space, rng):
    k = int(rng.integers(2, 6))
    ts = np.sort(rng.uniform(0, 4, k))
    while np.any(np.diff(ts) <= 0.1):
        ts = np.sort(rng.uniform(0, 4, k))
    return ParamPath(space, list(ts), [random_site(space, rng) for _ in range(k)])


@record(3, "energy functional suite", 10.0)
def criterion_3():
    rng = np.random.default_rng(3)
    mono_bad = 0
    for _ in range(500):
        space = random_space(rng)
        path = _random_path(space, rng)
        n = int(rng.integers(1, 5))
        if path_energy(path, n=2 * n) < path_energy(path, n=n) - 1e-9:
            mono_bad += 1
    closed_err, vl_err = 0.0, 0.0
    for _ in range(200):
        space = random_space(rng)
        p, q = random_site(space, rng), random_site(space, rng)
        a = float(rng.uniform(-2, 2))
        b = a + float(rng.uniform(0.1, 3))
        g = Geodesic.between(space, p, q, a, b)
        d = site_distance(space, p, q)
        E = path_energy(g.path, n=int(rng.integers(1, 9)))
        closed_err = max(closed_err, abs(E - d * d / (b - a)))
        vl_err = max(vl_err, abs(E - g.velocity * d))
    tri_bad = eq_bad = 0
    for i in range(1000):
        eps = float(rng.uniform(0.1, 3))
        delta = float(rng.uniform(0.05, 0.95)) * eps
        if i % 2:
            # additive triple travelled at one speed: q splits p..r in the ratio delta : eps - delta
            dpr = float(rng.uniform(0.1, 5))
            dpq, dqr = dpr * delta / eps, dpr * (eps - delta) / eps
        else:
            space = random_space(rng)
            p, q, r = (random_site(space, rng) for _ in range(3))
            dpq, dqr, dpr = site_distance(space, p, q), site_distance(space, q, r), site_distance(space, p, r)
        holds, equal = energy_step_triangle(dpq, dqr, dpr, delta, eps)
        lhs, rhs = dpr * dpr / eps, dpq * dpq / delta + dqr * dqr / (eps - delta)
        tri_bad += not holds
        exact = math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-12)
        eq_bad += equal != exact
    ok = mono_bad == 0 and closed_err <= 1e-9 and vl_err <= 1e-9 and tri_bad == 0 and eq_bad == 0
    return ok, (f"refinement violations={mono_bad}/500, closed form err={closed_err:.1e}, "
                f"E-v*l err={vl_err:.1e}, triangle violations={tri_bad}/1000, equality mismatches={eq_bad}")


# ----- 4 ---------------------------------------------------------------------------------------


@record(4, "perturbation bounds", 10.0)
def criterion_4():
    rng = np.random.default_rng(4)
    depth_bad = bound_bad = 0
    for _ in range(500):
        space = random_space(rng)
        path = _random_path(space, rng)
        dim = int(rng.integers(1, 4))
        images = {v: rng.normal(size=dim) for v in space.points}
        f = affine_graph_map(space, images)
        C = float(rng.uniform(1.05, 4.0))
        true_f = exact_pl_pullback_energy(space, path, images)
        lam = max(true_f, 1.0) * float(10 ** rng.uniform(-1, 0))
        # smallest dyadic depth whose sum is within lam/2 of the energy
        n = 1
        while true_f > pullback_energy(f, path, n) + lam / 2:
            n *= 2
        delta = math.sqrt(lam / (2 * perturbation_constant(C, n, path.a, path.b)))
        W, c = rng.normal(size=(dim, dim)), rng.uniform(0, 6, dim)
        amp = float(rng.uniform(0.2, 0.99)) * delta

        def g(x, f=f, W=W, c=c, amp=amp, dim=dim):
            y = f(x)
            return y + amp * np.sin(W @ y * 7 + c) / math.sqrt(dim)

        # the variational inequality at depth n with the actual sup distance
        gap = max(float(np.linalg.norm(f(path.at(t)) - g(path.at(t)))) for t in path.subdivision(n))
        Ef, Eg = pullback_energy(f, path, n), pullback_energy(g, path, n)
        C2 = perturbation_constant(C, n, path.a, path.b)
        depth_bad += Ef > C * Eg + C2 * gap * gap + 1e-12 * max(1.0, Ef)
        # the energy bound: f*E < C g*E + lam, using E_g(n) <= g*E
        bound_bad += not (true_f < C * Eg + lam)
        bound_bad += not check_perturbed_energy(f, g, path, C, lam, n=n)
    ok = depth_bad == 0 and bound_bad == 0
    return ok, f"depth-n inequality violations={depth_bad}/500, energy-bound violations={bound_bad}/1000"


# ----- 5 ---------------------------------------------------------------------------------------


def _small_complexes(rng, count):
    """Random complexes with at most six maximal simplices and Euclidean edge lengths."""
    out = []
    while len(out) < count:
        n = int(rng.integers(3, 7))
        m = int(rng.integers(1, min(6, math.comb(n, 2) + math.comb(n, 3)) + 1))
        V = [f"x{i}" for i in range(n)]
        P = {v: rng.normal(size=3) for v in V}
        simplices = set()
        while len(simplices) < m:
            k = int(rng.integers(2, 4))
            simplices.add(tuple(sorted(rng.choice(n, k, replace=False).tolist())))
        simplices = [[V[i] for i in s] for s in simplices]
        used = sorted({v for s in simplices for v in s}, key=V.index)
        metric = {}
        for s in simplices:
            for a, b in itertools.combinations(s, 2):
                metric[(a, b)] = float(np.linalg.norm(P[a] - P[b]))
        cx = MetricComplex(used, simplices, metric)
        if len(cx.maximal_simplices()) <= 6:
            out.append(cx)
    return out


@record(5, "nerve metrization", 30.0)
def criterion_5():
    cfg = PipelineConfig(stages=1)
    worst, notes = 0.0, []
    for name, D in (("tripod", ["a", "b", "c"]), ("theta", ["P", "Q", "r"])):
        space = load_space(name)
        fam = GeodesicFamily.build(space, [D])
        st = build_stage(space, fam, 1, None, cfg)
        for x, y in itertools.combinations(D, 2):
            L, _ = nerve_distance(st.metric, f"U:{x}", f"U:{y}")
            worst = max(worst, abs(L - space.distance(x, y)))
        notes.append(f"{name}: {len(st.metric.maximal_simplices())} simplices")
    rng = np.random.default_rng(5)
    agree = total = 0
    for cx in _small_complexes(rng, 40):
        for x, y in rng.choice(len(cx.vertices), (3, 2)):
            a, b = cx.vertices[x], cx.vertices[y]
            bb = nerve_distance(cx, a, b)[0]
            brute = brute_force_nerve_distance(cx, a, b)
            total += 1
            agree += (bb == brute) or (math.isinf(bb) and math.isinf(brute)) or abs(bb - brute) <= 1e-12
    ok = worst <= 1e-6 and agree == total
    return ok, f"max |d_N - d_X|={worst:.1e} ({', '.join(notes)}); oracle agreement {agree}/{total}"


# ----- 6 ---------------------------------------------------------------------------------------


@record(6, "cover bookkeeping", 5.0)
def criterion_6():
    ok, notes = True, []
    cases = (("tripod_leg", [["a", "b"], ["a", "b", "p"]]), ("theta", [["P", "Q", "r"]]),
             ("tripod", [["a", "b", "c"]]))
    cfg = PipelineConfig()
    for name, stages in cases:
        space = load_space(name)
        fam = GeodesicFamily.build(space, stages)
        prev = None
        for i in range(1, len(stages) + 1):
            st = build_stage(space, fam, i, prev, cfg)
            c = st.constants
            uv = st.cover.restricted("U", "V")
            order_uv, where = closure_order(uv)
            mids = set()
            for lay in st.cover.layouts:
                mids.update(lay.segment.locate(m) for m in lay.midpoints)
            at_mids = order_uv < 3 or all(w in mids for w in where)
            order_all = closure_order(st.cover)[0]
            chain = c["epsilon"] < c["beta"] < c["alpha"] < c["delta_prev"] / 3
            ok &= order_uv <= 3 and at_mids and order_all <= 4 and open_order(st.cover) <= 4 and chain
            notes.append(f"{name}/{i}: order(UV)={order_uv} at {len(where)} pts (midpoints: {at_mids}), "
                         f"order={order_all}, chain={chain}")
            prev = st
    return ok, "; ".join(notes)


# ----- 7 ---------------------------------------------------------------------------------------


@record(7, "two-stage embedding check", 120.0)
def criterion_7():
    space = load_space("tripod_leg")
    cfg = PipelineConfig(stages=2)
    stages, _, rep = embed(space, [["a", "b"], ["a", "b", "p"]], cfg)
    err = max(s["max_rel_energy_error"] for s in rep["stages"].values())
    collisions = rep["collisions"]["collisions_beyond_delta0"]
    neg = rep["negative_coordinate"]
    ratio = rep["transverse"]["ratios"][0]
    certs = all(not s["certificates"]["vertex_affine"]["failed"] for s in rep["stages"].values())
    ok = err < 1e-6 and not collisions and neg["identical"] and ratio >= 2 and certs
    return ok, (f"(a) max rel energy error={err:.1e}; (b) collisions={len(collisions)}; "
                f"(c) negative coordinate identical={neg['identical']} on {neg['points']} points; "
                f"(d) transverse energy ratio={ratio:.3f}; certificates={certs}")


# ----- 8 ---------------------------------------------------------------------------------------


def _pd(k, M, c) -> bool:
    cx = special_edge_complex(k, M, c)
    return bool(batch_is_pd(quadratic_form(cx, cx.vertices).matrix[None])[0][0])


@record(8, "embeddability threshold", 5.0)
def criterion_8():
    ok, notes = True, []
    for k in range(2, 6):
        M = 1.7
        thr = embeddability_threshold(k, M)
        lo, hi = 0.5 * M, 3 * M
        assert _pd(k, M, lo) and not _pd(k, M, hi)
        while hi - lo > 1e-9:
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if _pd(k, M, mid) else (lo, mid)
        flip = 0.5 * (lo + hi)
        agree = (one_special_edge_embeddable(k, M, thr - 1e-6) and _pd(k, M, thr - 1e-6)
                 and not one_special_edge_embeddable(k, M, thr + 1e-6) and not _pd(k, M, thr + 1e-6))
        ok &= abs(flip - thr) <= 1e-6 and agree
        notes.append(f"k={k}: PD flip at {flip:.9f} vs {thr:.9f}")
    return ok, "; ".join(notes)


# ----- 9 ---------------------------------------------------------------------------------------


@record(9, "parallelogram law", 2.0)
def criterion_9():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(5, 5))
    quad = NormSampler.from_quadratic_form(A @ A.T + np.eye(5))
    worst = max(parallelogram_defect(quad, rng.normal(size=5), rng.normal(size=5)) for _ in range(1000))
    l1 = NormSampler.lp(1)
    found = None
    for i in range(100):
        if parallelogram_defect(l1, rng.normal(size=5), rng.normal(size=5)) > 0.1:
            found = i + 1
            break
    ok = worst <= 1e-12 and found is not None
    return ok, f"quadratic-form max defect={worst:.1e}; l1 defect > 0.1 after {found} samples"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{c.number}" for c in CRITERIA])
def test_criterion(criterion):
    ok, line = criterion()
    assert ok, line


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(ok for ok, _ in results)}/{len(results)} criteria pass")
    sys.exit(0 if all(ok for ok, _ in results) else 1)
