"""Edge repairs.

``lorentz_wiggle`` shortens an edge whose image is too long: it subdivides
the edge and pushes every other subdivision vertex along a unit timelike
direction orthogonal to the edge, so each piece has energy exactly
alpha^2 / N^2.  ``euclid_zigzag`` lengthens a short polygonal chain to an
exact Euclidean length with a constant-amplitude zigzag.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .minkowski import MinkVec, PLMap, lorentz_orthogonal_negative, mink_pairing
from .simplicial import (MetricComplex, batch_one_lipschitz, form_from_energies, PD_TOL,
                         subdivide_edge)


@dataclass
class WiggleResult:
    new_map: PLMap
    N: int
    M_required: float
    correspondence: dict
    complex: MetricComplex | None = None
    chain: list = field(default_factory=list)
    offset: float = 0.0
    direction: MinkVec | None = None


def choose_N(alpha: float, beta: float, epsilon: float) -> int:
    """Smallest even N with sqrt(beta^2 - alpha^2) / N <= epsilon."""
    if not (beta > alpha > 0) or epsilon <= 0:
        raise ValueError("need beta > alpha > 0 and epsilon > 0")
    ratio = math.sqrt(beta * beta - alpha * alpha) / epsilon
    n = max(1, math.ceil(ratio * (1 - 1e-12)))
    return n + (n % 2)


def wiggle_points(a: MinkVec, b: MinkVec, alpha: float, epsilon: float) -> tuple[list[MinkVec], int, float, MinkVec]:
    """Subdivision points of the wiggled segment a -> b (endpoints included)."""
    s = b - a
    beta2 = mink_pairing(s, s)
    if beta2 <= 0:
        raise ValueError("edge image is null or timelike")
    beta = math.sqrt(beta2)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if beta < alpha * (1 - 1e-12):
        raise ValueError("edge is not expanding (beta < alpha); nothing to repair")
    vbar = lorentz_orthogonal_negative(s)
    if beta - alpha <= 1e-12 * alpha:
        return [a, b], 1, 0.0, vbar
    N = choose_N(alpha, beta, epsilon / vbar.euclidean_norm())
    lift = math.sqrt(beta2 - alpha * alpha) / N
    pts = [a + s * (i / N) + (vbar * lift if i % 2 else vbar * 0.0) for i in range(N + 1)]
    pts[0], pts[-1] = a, b
    return pts, N, lift, vbar


def lorentz_wiggle(map: PLMap, edge: Sequence, alpha: float, epsilon: float,
                   complex: MetricComplex | None = None, compute_M: bool = True) -> WiggleResult:
    u, v = edge
    if complex is None:
        complex = MetricComplex([u, v], [[u, v]], {(u, v): alpha})
    pts, N, lift, vbar = wiggle_points(map[u], map[v], alpha, epsilon)
    new_complex, chain, corr = subdivide_edge(complex, (u, v), N)
    metric = dict(new_complex.edge_metric)
    for a, b in zip(chain, chain[1:]):
        metric[frozenset((a, b))] = alpha / N if not new_complex.energies else (alpha / N) ** 2
    new_complex = new_complex.with_metric(metric)
    images = dict(map.images)
    if chain[0] != u:  # subdivide_edge orders by vertex order
        pts = pts[::-1]
    for w, p in zip(chain, pts):
        images[w] = p
    new_map = PLMap(images, map.signature)
    specials = [frozenset(p) for p in zip(chain, chain[1:])]
    star = [s for s in new_complex.maximal_simplices() if any(k <= set(s) for k in specials)]
    M = required_M(new_complex, new_map, star, specials) if compute_M else float("nan")
    return WiggleResult(new_map, N, M, corr, new_complex, chain, lift * vbar.euclidean_norm(), vbar)


def _star_forms(complex: MetricComplex, map: PLMap, star, specials, M: float):
    g_list, f_list = {}, {}
    for s in star:
        if len(s) < 2:
            continue
        k = len(s) - 1
        G = {}
        for i in range(k + 1):
            for j in range(i + 1, k + 1):
                key = frozenset((s[i], s[j]))
                G[(i, j)] = complex.energy(s[i], s[j]) if key in specials else M * M
        base = map[s[0]]
        ws = [(map[x] - base) for x in s[1:]]
        F = np.array([[mink_pairing(a, b) for b in ws] for a in ws])
        g_list.setdefault(k, []).append(form_from_energies(G, k))
        f_list.setdefault(k, []).append(F)
    return g_list, f_list


def star_passes(complex: MetricComplex, map: PLMap, star, specials, M: float, tol: float = PD_TOL) -> np.ndarray:
    """Per-simplex shortness with special edges kept and all other edges set to M."""
    specials = set(frozenset(k) for k in specials)
    results = []
    for s in star:
        if len(s) < 2:
            results.append(True)
            continue
        g, f = _star_forms(complex, map, [s], specials, M)
        k = len(s) - 1
        ok, _ = batch_one_lipschitz(np.array(g[k]), np.array(f[k]), tol)
        results.append(bool(ok[0]))
    return np.array(results, bool)


def required_M(complex: MetricComplex, wiggled_map: PLMap, edge_star, specials=None,
               tol: float = PD_TOL, cap: int = 80, rel: float = 1e-3) -> float:
    """Smallest M (to relative precision rel) making every star simplex short.

    Doubling locates a passing M, halving a failing one, and bisection
    closes the bracket.  Raises RuntimeError if the doubling hits the cap.
    """
    star = [tuple(s) for s in edge_star if len(s) >= 3]
    if specials is None:
        specials = set()
    specials = set(frozenset(k) for k in specials)
    if not star:
        return 0.0
    # precompute the image Gram matrices and the special-edge mask per dimension
    groups: dict[int, list] = {}
    for s in star:
        groups.setdefault(len(s) - 1, []).append(s)
    prepared = []
    for k, ss in groups.items():
        F = np.empty((len(ss), k, k))
        Gs = np.zeros((len(ss), k + 1, k + 1))
        mask = np.zeros((len(ss), k + 1, k + 1), bool)
        for n, s in enumerate(ss):
            base = wiggled_map[s[0]]
            ws = [wiggled_map[x] - base for x in s[1:]]
            F[n] = [[mink_pairing(a, b) for b in ws] for a in ws]
            for i in range(k + 1):
                for j in range(i + 1, k + 1):
                    if frozenset((s[i], s[j])) in specials:
                        Gs[n, i, j] = complex.energy(s[i], s[j])
                        mask[n, i, j] = True
        prepared.append((k, F, Gs, mask))

    def passes(M: float) -> bool:
        for k, F, Gs, mask in prepared:
            E = np.where(mask, Gs, M * M)
            Q = np.empty_like(F)
            for i in range(1, k + 1):
                Q[:, i - 1, i - 1] = E[:, 0, i]
                for j in range(i + 1, k + 1):
                    Q[:, i - 1, j - 1] = Q[:, j - 1, i - 1] = 0.5 * (E[:, 0, i] + E[:, 0, j] - E[:, i, j])
            ok, _ = batch_one_lipschitz(Q, F, tol)
            if not ok.all():
                return False
        return True

    chords = []
    for s in star:
        for i in range(len(s)):
            for j in range(i + 1, len(s)):
                if frozenset((s[i], s[j])) not in specials:
                    d = wiggled_map[s[i]] - wiggled_map[s[j]]
                    chords.append(math.sqrt(max(mink_pairing(d, d), 0.0)))
    hi = max(max(chords, default=0.0), 1e-12)
    steps = 0
    while not passes(hi):
        hi *= 2
        steps += 1
        if steps > cap:
            raise RuntimeError(f"required_M search exceeded {cap} doublings (M > {hi:.3g}); out of certified range")
    lo = hi / 2
    steps = 0
    while passes(lo):
        hi, lo = lo, lo / 2
        steps += 1
        if steps > cap:
            return hi
    while hi - lo > rel * hi:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return hi


def polyline_length(points: Sequence[MinkVec]) -> float:
    """Sum of Minkowski lengths sqrt(<d,d>) of the pieces (pieces must be spacelike or null)."""
    total = 0.0
    for a, b in zip(points, points[1:]):
        d = b - a
        total += math.sqrt(max(mink_pairing(d, d), 0.0))
    return total


def spare_coordinate(points: Sequence[MinkVec], tol: float = 0.0) -> int:
    """Lowest positive-block coordinate on which all points agree."""
    P = np.array([p.pos for p in points])
    spread = P.max(axis=0) - P.min(axis=0)
    free = np.nonzero(spread <= tol)[0]
    if free.size == 0:
        raise ValueError("no spare coordinate for the zigzag")
    return int(free[0])


def euclid_zigzag(segment_images: Sequence[MinkVec], target_length: float, epsilon: float,
                  coordinate: int | None = None, min_teeth: int = 1) -> list[MinkVec]:
    """Lengthen a Euclidean chain to exactly target_length, staying within epsilon of it."""
    pts = list(segment_images)
    if len(pts) < 2:
        raise ValueError("need at least two chain points")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    for p in pts:
        if p.neg.size and np.any(p.neg != pts[0].neg):
            raise ValueError("chain must not move in the negative block")
    P = np.array([p.pos for p in pts])
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    L0 = float(seg.sum())
    chord = float(np.linalg.norm(P[-1] - P[0]))
    T = float(target_length)
    if T < chord * (1 - 1e-12) - 1e-15:
        raise ValueError(f"target {T} is shorter than the endpoint distance {chord}")
    if T < L0 * (1 - 1e-12) - 1e-15:
        raise ValueError(f"chain is already longer ({L0}) than the target {T}")
    if abs(T - L0) <= 1e-13 * max(1.0, T):
        return pts
    if coordinate is None:
        coordinate = spare_coordinate(pts)
    # with m teeth per segment and amplitude A the length is sum sqrt(c^2 + (2 m A)^2);
    # solve for x = m A once, then pick the smallest m with A <= epsilon
    def excess(x):
        return float(np.sum(np.sqrt(seg * seg + 4 * x * x))) - T

    x = brentq(excess, 0.0, T, xtol=1e-16 * max(1.0, T), rtol=8.9e-16, maxiter=500)
    m = max(min_teeth, math.ceil(x / epsilon * (1 - 1e-12)))
    A = x / m
    neg = pts[0].neg
    frac = np.arange(1, 2 * m + 1) / (2 * m)
    bump = np.where(np.arange(1, 2 * m + 1) % 2 == 1, A, 0.0)
    rows = [P[:1]]
    for j in range(len(pts) - 1):
        block = P[j] + np.outer(frac, P[j + 1] - P[j])
        block[:, coordinate] += bump
        block[-1] = P[j + 1]
        rows.append(block)
    Q = np.vstack(rows)
    return [MinkVec(row, neg) for row in Q]
