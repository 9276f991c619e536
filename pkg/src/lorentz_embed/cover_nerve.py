"""Protected open covers of metric graphs and their nerves.

Covers are built from three families: balls around the intersection points
(tag U), thin tubes around consecutive subintervals of each geodesic
segment (tag V), and small balls filling what is left over (tag W).  All
cover geometry is exact: edge weights are converted to Fractions and every
open set is a finite union of open edge intervals, so order, mesh and the
Lebesgue number are computed by interval arithmetic rather than sampling.

Floating point enters only in the maps (partition of unity, psi, phi) and
in the metrized nerve.
"""
from __future__ import annotations

import bisect
import heapq
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .metric_core import FiniteLengthSpace
from .simplicial import MetricComplex, batch_is_pd, quadratic_form

INF = math.inf


def omega_schedule(i: int) -> float:
    return 2.0 ** (-i) / 4.0


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


# ----- exact graph ---------------------------------------------------------------


class ExactGraph:
    """The space with Fraction weights and exact vertex distances."""

    def __init__(self, space: FiniteLengthSpace):
        self.space = space
        self.w = [_frac(w) for _, _, w in space.edges]
        self.ends = [(u, v) for u, v, _ in space.edges]
        self.adj: dict[str, list[tuple[str, int]]] = {p: [] for p in space.points}
        for k, (u, v) in enumerate(self.ends):
            self.adj[u].append((v, k))
            self.adj[v].append((u, k))
        self._vd: dict[str, dict[str, Fraction]] = {}

    def sssp(self, sources: dict) -> dict:
        """Multi-source Dijkstra; sources maps vertex -> initial distance."""
        dist = dict(sources)
        heap = [(d, v) for v, d in sources.items()]
        heapq.heapify(heap)
        done = set()
        while heap:
            d, v = heapq.heappop(heap)
            if v in done or d > dist[v]:
                continue
            done.add(v)
            for u, k in self.adj[v]:
                nd = d + self.w[k]
                if u not in dist or nd < dist[u]:
                    dist[u] = nd
                    heapq.heappush(heap, (nd, u))
        return dist

    def vdist(self, x: str, y: str) -> Fraction:
        if x not in self._vd:
            self._vd[x] = self.sssp({x: Fraction(0)})
        return self._vd[x][y]

    def point_dist(self, p, q) -> Fraction:
        """Exact distance between vertices or (edge, offset) points."""
        best = None
        for a, da in self.anchors(p):
            for b, db in self.anchors(q):
                c = da + self.vdist(a, b) + db
                best = c if best is None or c < best else best
        if not isinstance(p, str) and not isinstance(q, str) and p[0] == q[0]:
            c = abs(p[1] - q[1])
            best = c if c < best else best
        return best

    def anchors(self, p):
        if isinstance(p, str):
            return [(p, Fraction(0))]
        e, s = p
        u, v = self.ends[e]
        return [(u, s), (v, self.w[e] - s)]


# ----- geodesic segments ------------------------------------------------------------


class Segment:
    """An edge path between two vertices, with exact arc-length coordinates."""

    def __init__(self, graph: ExactGraph, vertices: Sequence[str], sid: str):
        self.graph = graph
        self.sid = sid
        self.vertices = list(vertices)
        if len(self.vertices) < 2:
            raise ValueError("a segment needs two distinct vertices")
        self.edges: list[tuple[int, bool]] = []
        self.cum = [Fraction(0)]
        space = graph.space
        for a, b in zip(self.vertices, self.vertices[1:]):
            k = space.edge_between(a, b)
            self.edges.append((k, graph.ends[k][0] == a))
            self.cum.append(self.cum[-1] + graph.w[k])
        self.length = self.cum[-1]
        self.edge_pos = {k: i for i, (k, _) in enumerate(self.edges)}
        self.vertex_pos = {v: i for i, v in enumerate(self.vertices)}

    @property
    def start(self) -> str:
        return self.vertices[0]

    @property
    def end(self) -> str:
        return self.vertices[-1]

    def locate(self, sigma) -> object:
        sigma = _frac(sigma)
        if sigma <= 0:
            return self.start
        if sigma >= self.length:
            return self.end
        i = bisect.bisect_right(self.cum, sigma) - 1
        if sigma == self.cum[i]:
            return self.vertices[i]
        k, fwd = self.edges[i]
        t = sigma - self.cum[i]
        return (k, t if fwd else self.graph.w[k] - t)

    def arc_of(self, p):
        """Arc coordinate of a point on the segment, else None."""
        if isinstance(p, str):
            i = self.vertex_pos.get(p)
            return None if i is None else self.cum[i]
        e, s = p
        i = self.edge_pos.get(e)
        if i is None:
            return None
        fwd = self.edges[i][1]
        return self.cum[i] + (s if fwd else self.graph.w[e] - s)

    def parts(self, s0, s1) -> list[tuple[int, Fraction, Fraction]]:
        """Closed edge intervals (edge, lo, hi) making up the arc [s0, s1]."""
        s0, s1 = _frac(s0), _frac(s1)
        out = []
        for i, (k, fwd) in enumerate(self.edges):
            a, b = self.cum[i], self.cum[i + 1]
            lo, hi = max(a, s0), min(b, s1)
            if lo > hi or (lo == hi and s0 != s1):
                continue
            w = self.graph.w[k]
            if fwd:
                out.append((k, lo - a, hi - a))
            else:
                out.append((k, w - (hi - a), w - (lo - a)))
        return out

    def interior_branch_vertices(self) -> list[tuple[str, Fraction]]:
        out = []
        for v in self.vertices[1:-1]:
            if len(self.graph.adj[v]) >= 3:
                out.append((v, self.cum[self.vertex_pos[v]]))
        return out


# ----- open sets --------------------------------------------------------------------


@dataclass
class OpenSet:
    """A finite union of open edge intervals plus the vertices it contains."""

    label: str
    tag: str
    vertices: frozenset
    pieces: dict  # edge -> sorted list of (lo, hi) Fractions
    center: object = None  # representative point (U center, V midpoint, W center)
    radius: Fraction | None = None
    segment: str | None = None
    index: int | None = None

    def contains(self, p) -> bool:
        if isinstance(p, str):
            return p in self.vertices
        e, s = p
        return any(lo < s < hi for lo, hi in self.pieces.get(e, ()))

    def closure_contains(self, graph: ExactGraph, p) -> bool:
        if isinstance(p, str):
            if p in self.vertices:
                return True
            for _, k in graph.adj[p]:
                u, v = graph.ends[k]
                for lo, hi in self.pieces.get(k, ()):
                    if (p == u and lo == 0) or (p == v and hi == graph.w[k]):
                        return True
            return False
        e, s = p
        return any(lo <= s <= hi for lo, hi in self.pieces.get(e, ()))

    def union(self, other: "OpenSet") -> "OpenSet":
        pieces = {}
        for e in set(self.pieces) | set(other.pieces):
            pieces[e] = _merge(self.pieces.get(e, []) + other.pieces.get(e, []))
        return OpenSet(self.label, self.tag, self.vertices | other.vertices, pieces, self.center,
                       self.radius, self.segment, self.index)

    def to_json(self) -> dict:
        return {
            "label": self.label, "tag": self.tag,
            "vertices": sorted(self.vertices),
            "intervals": {str(e): [[float(lo), float(hi)] for lo, hi in iv] for e, iv in sorted(self.pieces.items())},
            "center": _site_json(self.center),
            "radius": None if self.radius is None else float(self.radius),
            "segment": self.segment,
        }


def _site_json(p):
    if p is None or isinstance(p, str):
        return p
    return [p[0], float(p[1])]


def _merge(intervals):
    iv = sorted(intervals)
    out = []
    for lo, hi in iv:
        if out and lo < out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def neighborhood(graph: ExactGraph, parts: Sequence, r, vertices: Iterable[str] = (), label="", tag="",
                 center=None) -> OpenSet:
    """{y : d(y, P) < r} for P a union of closed edge intervals and vertices."""
    r = _frac(r)
    src: dict[str, Fraction] = {}

    def offer(v, d):
        if v not in src or d < src[v]:
            src[v] = d

    for v in vertices:
        offer(v, Fraction(0))
    for k, lo, hi in parts:
        u, v = graph.ends[k]
        offer(u, lo)
        offer(v, graph.w[k] - hi)
    dist = graph.sssp(src)
    pieces: dict[int, list] = {}
    for k, (u, v) in enumerate(graph.ends):
        w = graph.w[k]
        cand = []
        du, dv = dist.get(u, None), dist.get(v, None)
        if du is not None and du < r:
            cand.append((Fraction(0), min(w, r - du)))
        if dv is not None and dv < r:
            cand.append((max(Fraction(0), w - (r - dv)), w))
        for kk, lo, hi in parts:
            if kk == k:
                cand.append((max(Fraction(0), lo - r), min(w, hi + r)))
        cand = [(a, b) for a, b in cand if a < b]
        if cand:
            pieces[k] = _merge(cand)
    inside = frozenset(v for v, d in dist.items() if d < r)
    return OpenSet(label, tag, inside, pieces, center, r)


# ----- the cover ----------------------------------------------------------------------


@dataclass
class SegmentLayout:
    segment: Segment
    xi: Fraction
    grid: list  # arc positions of subinterval endpoints
    midpoints: list
    v_labels: list
    start_label: str
    end_label: str
    enlarge: tuple = (Fraction(0), Fraction(0))
    persisting: bool = False

    @property
    def sid(self) -> str:
        return self.segment.sid


@dataclass
class Cover:
    graph: ExactGraph
    sets: list
    stage: int = 1
    params: dict = field(default_factory=dict)
    layouts: list = field(default_factory=list)
    centers: dict = field(default_factory=dict)  # D' vertex -> U label
    records: dict = field(default_factory=dict)

    def __post_init__(self):
        self.by_label = {s.label: s for s in self.sets}

    def tagged(self, *tags) -> list:
        return [s for s in self.sets if s.tag in tags]

    def restricted(self, *tags) -> "Cover":
        return Cover(self.graph, self.tagged(*tags), self.stage, self.params, self.layouts, self.centers, self.records)

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "params": {k: (float(v) if isinstance(v, (Fraction, float, int)) else v) for k, v in self.params.items()},
            "sets": [s.to_json() for s in self.sets],
        }


def _eta(graph: ExactGraph, x: str, segments: Sequence[Segment], dprime: Sequence[str]):
    best = None
    for seg in segments:
        if x in seg.vertex_pos:
            if x not in (seg.start, seg.end):
                return Fraction(0)
            continue
        d = min(graph.vdist(x, v) for v in seg.vertices)
        best = d if best is None or d < best else best
    for y in dprime:
        if y != x:
            d = graph.vdist(x, y)
            best = d if best is None or d < best else best
    return best


def build_U(space: FiniteLengthSpace | ExactGraph, Dprime: Sequence[str], Gamma_prime: Sequence, delta0,
            graph: ExactGraph | None = None) -> Cover:
    """One ball per point of D', radius alpha/2, with alpha = min(eta, delta0/3)/2."""
    if graph is None:
        graph = space if isinstance(space, ExactGraph) else ExactGraph(space)
    if not Dprime:
        raise ValueError("D' must be nonempty")
    segs = [g if isinstance(g, Segment) else Segment(graph, g, f"g{i}") for i, g in enumerate(Gamma_prime)]
    delta0 = _frac(delta0)
    etas = {}
    for x in Dprime:
        eta = _eta(graph, x, segs, Dprime)
        if eta == 0:
            raise ValueError(f"a geodesic passes through {x!r} without having it as an endpoint")
        etas[x] = eta
    finite = [e for e in etas.values() if e is not None]
    alpha = min(finite + [delta0 / 3]) / 2
    radius = alpha / 2
    sets, centers = [], {}
    for i, x in enumerate(Dprime):
        lab = f"U:{x}"
        s = neighborhood(graph, [], radius, [x], lab, "U", x)
        s.index = i
        sets.append(s)
        centers[x] = lab
    params = {"alpha": alpha, "alpha_radius": radius, "delta_prev": delta0}
    return Cover(graph, sets, 1, params, [], centers, {"eta": etas, "segments": segs})


def _segment_gap(a: Segment, b: Segment, ra, rb) -> Fraction:
    """Exact distance between the truncated parts [ra, len-ra] and [rb, len-rb]."""
    best = None
    pa = a.parts(ra, a.length - ra)
    pb = b.parts(rb, b.length - rb)
    g = a.graph
    for k1, lo1, hi1 in pa:
        for k2, lo2, hi2 in pb:
            for s in (lo1, hi1):
                for t in (lo2, hi2):
                    d = g.point_dist(_pt(g, k1, s), _pt(g, k2, t))
                    best = d if best is None or d < best else best
            if k1 == k2 and lo1 <= hi2 and lo2 <= hi1:
                return Fraction(0)
    return best


def _pt(graph, k, s):
    if s == 0:
        return graph.ends[k][0]
    if s == graph.w[k]:
        return graph.ends[k][1]
    return (k, s)


def _ceil_div(a: Fraction, b: Fraction) -> int:
    return -((-a) // b)


def build_V(space, Gamma_prime: Sequence, U: Cover, beta_params: dict | None = None,
            midpoint_constraints: Sequence | None = None) -> Cover:
    """Tubes of radius xi/2 around equal subintervals of every truncated segment.

    beta_params may carry "beta" (override) and "K_min".  midpoint_constraints
    is a list of (vertex path, grid anchor point, xi) from the previous stage;
    segments lying on a previous segment inherit its grid refined by an odd
    factor K, so old midpoints stay midpoints.  End balls of U are enlarged
    when the grid does not start exactly on the ball boundary.
    """
    graph = U.graph
    beta_params = dict(beta_params or {})
    segs = [g if isinstance(g, Segment) else Segment(graph, g, f"g{i}") for i, g in enumerate(Gamma_prime)]
    alpha, ra = U.params["alpha"], U.params["alpha_radius"]
    mu = None
    for a, b in itertools.combinations(segs, 2):
        d = _segment_gap(a, b, ra, ra)
        mu = d if mu is None or d < mu else mu
    if mu == 0:
        raise ValueError("truncated segments are not disjoint; U balls too small")
    beta = beta_params.get("beta")
    beta = _frac(beta) if beta is not None else (min(mu, alpha) if mu is not None else alpha) / 3
    bound = beta / 3  # subinterval length must stay below this

    # previous-stage grids that persisting segments must refine
    inherited = {}
    K = None
    for seg in segs:
        for path, anchor_pt, xi_old in (midpoint_constraints or []):
            if _contained(seg, path, graph):
                sa = seg.arc_of(anchor_pt if isinstance(anchor_pt, str) else (anchor_pt[0], _frac(anchor_pt[1])))
                if sa is None:
                    # anchor outside this piece: carry it along the old segment
                    old = Segment(graph, path, "old")
                    sa = _transfer_anchor(old, seg, anchor_pt)
                inherited[seg.sid] = (sa, _frac(xi_old))
                xi_old = _frac(xi_old)
                need = int(xi_old // bound) + 1
                need += 1 - need % 2
                K = need if K is None else max(K, need)
                break
    if K is not None:
        K = max(K, int(beta_params.get("K_min", 1)))
        K += 1 - K % 2

    sets = [s for s in U.sets]
    by_label = {s.label: i for i, s in enumerate(sets)}
    layouts = []
    counter = 0
    for seg in segs:
        lo, hi = ra, seg.length - ra
        L = hi - lo
        if seg.sid in inherited:
            anchor, xi_old = inherited[seg.sid]
            xi = xi_old / K
            persisting = True
        else:
            n = int(3 * L // beta) + 1
            xi = L / n
            branches = seg.interior_branch_vertices()
            anchor = branches[0][1] if branches else lo
            persisting = False
        j0 = _ceil_div(lo - anchor, xi)
        j1 = (hi - anchor) // xi
        if j1 - j0 < 1:
            n = int(3 * L // beta) + 1
            xi, anchor, j0, j1 = L / n, lo, 0, n
        grid = [anchor + j * xi for j in range(j0, j1 + 1)]
        mids = [(a + b) / 2 for a, b in zip(grid, grid[1:])]
        labels = []
        for j, (a, b) in enumerate(zip(grid, grid[1:])):
            lab = f"V:{seg.sid}:{j}"
            s = neighborhood(graph, seg.parts(a, b), xi / 2, (), lab, "V", seg.locate(mids[j]))
            s.segment, s.index = seg.sid, counter
            counter += 1
            sets.append(s)
            labels.append(lab)
        enl = (grid[0] - lo, hi - grid[-1])
        for end, gap, at in ((seg.start, enl[0], lo), (seg.end, enl[1], hi)):
            if gap > 0:
                lab = U.centers[end]
                extra = neighborhood(graph, seg.parts(at, at), gap, (), lab, "U")
                i = by_label[lab]
                sets[i] = sets[i].union(extra)
        layouts.append(SegmentLayout(seg, xi, grid, mids, labels, U.centers[seg.start], U.centers[seg.end],
                                     enl, persisting))
    xis = [l.xi for l in layouts]
    params = dict(U.params)
    params.update({"beta": beta, "mu": mu, "xi": max(xis) if xis else None,
                   "xi_min": min(xis) if xis else None, "K": K})
    rec = dict(U.records)
    rec["segments"] = segs
    return Cover(graph, sets, U.stage, params, layouts, dict(U.centers), rec)


def _contained(seg: Segment, path: Sequence[str], graph: ExactGraph) -> bool:
    """Whether every edge of seg is an edge of the old path."""
    old_edges = set()
    for a, b in zip(path, path[1:]):
        old_edges.add(graph.space.edge_between(a, b))
    return all(k in old_edges for k, _ in seg.edges)


def _transfer_anchor(old: Segment, seg: Segment, anchor_pt) -> Fraction:
    """Express a grid anchor given on the old segment in the new segment's arc coordinate."""
    sa_old = old.arc_of(anchor_pt if isinstance(anchor_pt, str) else (anchor_pt[0], _frac(anchor_pt[1])))
    # find where seg starts on old and its orientation
    s0 = old.arc_of(seg.start)
    s1 = old.arc_of(seg.end)
    return sa_old - s0 if s1 > s0 else s0 - sa_old


def _complement_pieces(graph: ExactGraph, sets: Sequence[OpenSet]):
    """Z = X minus the union: closed intervals per edge and uncovered vertices."""
    covered_v = set()
    for s in sets:
        covered_v |= s.vertices
    Z = {}
    for k in range(len(graph.ends)):
        w = graph.w[k]
        iv = _merge([p for s in sets for p in s.pieces.get(k, [])])
        gaps, cur = [], Fraction(0)
        u, v = graph.ends[k]
        start_closed = u not in covered_v
        for lo, hi in iv:
            if lo > cur or (lo == cur and cur == 0 and start_closed):
                gaps.append((cur, lo))
            cur = max(cur, hi)
        if cur < w or (cur == w and v not in covered_v):
            gaps.append((cur, w))
        # a gap (a, a) is a single uncovered point; drop those at covered vertices
        clean = []
        for a, b in gaps:
            if a == b and ((a == 0 and u in covered_v) or (a == w and v in covered_v)):
                continue
            clean.append((a, b))
        if clean:
            Z[k] = clean
    zv = [p for p in graph.space.points if p not in covered_v]
    return Z, zv


def build_W(space, UV: Cover, Gamma_vertices: Iterable[str] | None = None, epsilon=None) -> Cover:
    """Balls of one radius per component of Z, evenly spaced along Z, avoiding every geodesic."""
    graph = UV.graph
    beta = UV.params["beta"]
    eps = _frac(epsilon) if epsilon is not None else beta * Fraction(99, 100)
    if not eps < beta:
        raise ValueError("epsilon must be below beta")
    if Gamma_vertices is None:
        Gamma_vertices = sorted({v for seg in UV.records["segments"] for v in seg.vertices})
    gv = list(Gamma_vertices)
    Z, zvert = _complement_pieces(graph, UV.sets)
    sets = list(UV.sets)
    params = dict(UV.params)
    params["epsilon"] = eps
    if not Z and not zvert:
        params["w_radius"] = None
        return Cover(graph, sets, UV.stage, params, UV.layouts, UV.centers, UV.records)
    gdist = graph.sssp({v: Fraction(0) for v in gv}) if gv else {}

    def dist_gamma(p):
        if not gv:
            return None
        return min(d + gdist[a] for a, d in graph.anchors(p))
    # Z as a graph: nodes are vertices in Z and gap endpoints interior to an edge
    paths = []  # (edge, a, b) pieces
    for k, gaps in Z.items():
        for a, b in gaps:
            paths.append((k, a, b))
    # components by union-find on shared vertices
    parent = list(range(len(paths)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i
    at_vertex: dict[str, list[int]] = {}
    for i, (k, a, b) in enumerate(paths):
        u, v = graph.ends[k]
        if a == 0:
            at_vertex.setdefault(u, []).append(i)
        if b == graph.w[k]:
            at_vertex.setdefault(v, []).append(i)
    for v, ids in at_vertex.items():
        for i in ids[1:]:
            parent[find(i)] = find(ids[0])
    comps: dict[int, list[int]] = {}
    for i in range(len(paths)):
        comps.setdefault(find(i), []).append(i)
    isolated = [v for v in zvert if v not in at_vertex]
    w_sets = []
    cap = eps / 2 * Fraction(99, 100)
    for root, ids in sorted(comps.items()):
        dmin = None
        for i in ids:
            k, a, b = paths[i]
            for s in (a, b):
                d = dist_gamma(_pt(graph, k, s))
                if d is not None:
                    dmin = d if dmin is None or d < dmin else dmin
        rho = cap if dmin is None else min(cap, dmin * Fraction(99, 100))
        if rho <= 0:
            raise ValueError("epsilon too large to avoid geodesics: Z touches a geodesic")
        centers = set()
        for i in ids:
            k, a, b = paths[i]
            L = b - a
            w = graph.w[k]
            if L == 0:
                centers.add(_pt(graph, k, a))
                continue
            kk = int(L / rho)
            if Fraction(kk) == L / rho:
                kk -= 1
            if kk < 1:
                # shorter than one spacing: a single ball at the middle
                if a == 0 or b == w:
                    centers.add(_pt(graph, k, a if a == 0 else b))
                    if L >= rho:
                        centers.add(_pt(graph, k, b if a == 0 else a))
                else:
                    centers.add(_pt(graph, k, (a + b) / 2))
                continue
            step = L / kk
            for j in range(kk + 1):
                centers.add(_pt(graph, k, a + j * step))
        for c in sorted(centers, key=lambda p: (0, p, 0) if isinstance(p, str) else (1, str(p[0]), p[1])):
            parts = [] if isinstance(c, str) else [(c[0], c[1], c[1])]
            verts = [c] if isinstance(c, str) else []
            w_sets.append((c, rho, parts, verts))
    for v in isolated:
        d = dist_gamma(v)
        rho = cap if d is None else min(cap, d * Fraction(99, 100))
        w_sets.append((v, rho, [], [v]))
    for n, (c, rho, parts, verts) in enumerate(w_sets):
        s = neighborhood(graph, parts, rho, verts, f"W:{n}", "W", c)
        s.index = n
        sets.append(s)
    params["w_radius"] = min((r for _, r, _, _ in w_sets), default=None)
    cov = Cover(graph, sets, UV.stage, params, UV.layouts, UV.centers, UV.records)
    bad = [s.label for s in cov.tagged("W") if _meets_vertices(s, gv, graph)]
    if bad:
        raise ValueError(f"epsilon too large to avoid geodesics: {bad[0]} meets a geodesic")
    return cov


def _meets_vertices(s: OpenSet, verts, graph: ExactGraph) -> bool:
    vs = set(verts)
    if s.vertices & vs:
        return True
    for k, iv in s.pieces.items():
        u, v = graph.ends[k]
        if u in vs and v in vs and iv:
            # edges between geodesic vertices may be geodesic edges; treat as meeting
            return True
    return False


# ----- exact statistics ---------------------------------------------------------------------


def _edge_events(cover: Cover):
    per_edge: dict[int, list] = {}
    for s in cover.sets:
        for k, iv in s.pieces.items():
            for lo, hi in iv:
                per_edge.setdefault(k, []).append((lo, hi, s.label))
    return per_edge


def _stab(records, queries, closed: bool = False) -> list:
    """For ascending query points, the records (lo, hi, ...) containing each one.

    Containment is lo < t < hi, or lo <= t <= hi when closed.  A sweep keeps
    the active records, so the cost is linear in records plus output.
    """
    recs = sorted(records, key=lambda r: r[0])
    out, active, i = [], [], 0
    for t in queries:
        while i < len(recs) and (recs[i][0] <= t if closed else recs[i][0] < t):
            active.append(recs[i])
            i += 1
        active = [r for r in active if (r[1] >= t if closed else r[1] > t)]
        out.append(list(active))
    return out


def closure_order(cover: Cover):
    """Maximum number of set closures through a point, and where it is attained."""
    graph = cover.graph
    best, where = 0, []
    per_edge = _edge_events(cover)
    for k, ivs in per_edge.items():
        pts = sorted({lo for lo, _, _ in ivs} | {hi for _, hi, _ in ivs})
        # closures are closed intervals: the count at an endpoint includes touching intervals
        for t, hit in zip(pts, _stab(ivs, pts, closed=True)):
            if t == 0 or t == graph.w[k]:
                continue
            c = len(hit)
            if c > best:
                best, where = c, [(k, t)]
            elif c == best:
                where.append((k, t))
        # plateaus between endpoints cannot exceed the endpoint counts
    for v in graph.space.points:
        c = sum(1 for s in cover.sets if s.closure_contains(graph, v))
        if c > best:
            best, where = c, [v]
        elif c == best:
            where.append(v)
    return best, where


def open_order(cover: Cover) -> int:
    """Maximum number of open sets sharing a point."""
    best = 0
    for simplex in _intersection_families(cover):
        best = max(best, len(simplex))
    return best


def _complement_distance(graph: ExactGraph, s: OpenSet) -> dict:
    """dist(v, X minus S) for every vertex v in S, exactly."""
    src: dict[str, Fraction] = {}
    for v in graph.space.points:
        if v not in s.vertices:
            src[v] = Fraction(0)
    boundary = []
    for k, iv in s.pieces.items():
        w = graph.w[k]
        for lo, hi in iv:
            if lo > 0:
                boundary.append((k, lo))
            if hi < w:
                boundary.append((k, hi))
    for k, t in boundary:
        u, v = graph.ends[k]
        for x, d in ((u, t), (v, graph.w[k] - t)):
            if x not in src or d < src[x]:
                src[x] = d
    if not src:
        return {v: None for v in s.vertices}
    dist = graph.sssp(src)
    return {v: dist.get(v) for v in s.vertices}


def tent_data(cover: Cover):
    """Per edge, the list (lo, hi, A, B, label) with dist(x, X minus S) = min(x - A, B - x) on (lo, hi)."""
    graph = cover.graph
    out: dict[int, list] = {}
    vert: dict[str, list] = {}
    for s in cover.sets:
        dc = _complement_distance(graph, s)
        for v in s.vertices:
            vert.setdefault(v, []).append((s.label, dc[v]))
        for k, iv in s.pieces.items():
            u, v = graph.ends[k]
            w = graph.w[k]
            for lo, hi in iv:
                if lo == 0 and u in s.vertices:
                    A = None if dc[u] is None else -dc[u]
                else:
                    A = lo
                if hi == w and v in s.vertices:
                    B = None if dc[v] is None else w + dc[v]
                else:
                    B = hi
                out.setdefault(k, []).append((lo, hi, A, B, s.label))
    return out, vert


def _tent_value(t, A, B):
    vals = []
    if A is not None:
        vals.append(t - A)
    if B is not None:
        vals.append(B - t)
    return min(vals) if vals else None


def lebesgue_number(cover: Cover):
    """2 * inf_x max_S dist(x, X minus S), evaluated exactly (None if unbounded)."""
    graph = cover.graph
    tents, vert = tent_data(cover)
    best = None

    def consider(val):
        nonlocal best
        if val is None:
            return
        best = val if best is None or val < best else best
    for v in graph.space.points:
        vals = [d for _, d in vert.get(v, [])]
        if not vals:
            consider(Fraction(0))
        elif any(d is None for d in vals):
            continue
        else:
            consider(max(vals))
    for k in range(len(graph.ends)):
        ivs = tents.get(k, [])
        w = graph.w[k]
        cand = {Fraction(0), w}
        for lo, hi, A, B, _ in ivs:
            cand.update((lo, hi))
            if A is not None and B is not None:
                cand.add((A + B) / 2)
        srt = sorted(ivs, key=lambda r: r[0])
        for i, (lo1, hi1, A1, B1, _) in enumerate(srt):
            for lo2, hi2, A2, B2, _ in srt[i + 1:]:
                if lo2 >= hi1:
                    break
                for a, b in ((A1, B2), (A2, B1)):
                    if a is not None and b is not None:
                        cand.add((a + b) / 2)
        qs = sorted(c for c in cand if 0 < c < w)
        for t, hit in zip(qs, _stab(ivs, qs)):
            vals = []
            unbounded = False
            for lo, hi, A, B, _ in hit:
                val = _tent_value(t, A, B)
                if val is None:
                    unbounded = True
                else:
                    vals.append(val)
            if unbounded:
                continue
            consider(max(vals) if vals else Fraction(0))
    return None if best is None else 2 * best


def _route_functions(graph: ExactGraph, k1, k2):
    """Affine pieces (a, b, c) with d(s on k1, t on k2) = min a*s + b*t + c."""
    u1, v1 = graph.ends[k1]
    u2, v2 = graph.ends[k2]
    w1, w2 = graph.w[k1], graph.w[k2]
    fs = [
        (1, 1, graph.vdist(u1, u2)),
        (1, -1, graph.vdist(u1, v2) + w2),
        (-1, 1, w1 + graph.vdist(v1, u2)),
        (-1, -1, w1 + w2 + graph.vdist(v1, v2)),
    ]
    return fs


def _max_min_affine(fs, same_edge, box):
    """max over the box of min(f_i, and |s - t| if same_edge), exactly."""
    (s0, s1), (t0, t1) = box
    funcs = list(fs)
    if same_edge:
        funcs += [(1, -1, Fraction(0)), (-1, 1, Fraction(0))]

    def val(s, t):
        m = min(a * s + b * t + c for a, b, c in fs)
        if same_edge:
            m = min(m, abs(s - t))
        return m
    cands = [(s0, t0), (s0, t1), (s1, t0), (s1, t1)]
    for (a1, b1, c1), (a2, b2, c2) in itertools.combinations(funcs, 2):
        da, db, dc = a1 - a2, b1 - b2, c1 - c2
        for s in (s0, s1):
            if db != 0:
                t = -(da * s + dc) / db
                if t0 <= t <= t1:
                    cands.append((s, t))
        for t in (t0, t1):
            if da != 0:
                s = -(db * t + dc) / da
                if s0 <= s <= s1:
                    cands.append((s, t))
    for f1, f2, f3 in itertools.combinations(funcs, 3):
        a1, b1, c1 = f1[0] - f2[0], f1[1] - f2[1], f1[2] - f2[2]
        a2, b2, c2 = f1[0] - f3[0], f1[1] - f3[1], f1[2] - f3[2]
        det = a1 * b2 - a2 * b1
        if det != 0:
            s = (-c1 * b2 + c2 * b1) / det
            t = (-a1 * c2 + a2 * c1) / det
            if s0 <= s <= s1 and t0 <= t <= t1:
                cands.append((s, t))
    return max(val(s, t) for s, t in cands)


def set_diameter(graph: ExactGraph, s: OpenSet) -> Fraction:
    """Exact diameter of the closure of an open set."""
    ivs = [(k, lo, hi) for k, iv in s.pieces.items() for lo, hi in iv]
    if not ivs:
        return Fraction(0)
    if len(ivs) == 1:
        k, lo, hi = ivs[0]
        u, v = graph.ends[k]
        around = lo + graph.vdist(u, v) + (graph.w[k] - hi)
        if hi - lo <= around:
            return hi - lo
    best = Fraction(0)
    for i, (k1, lo1, hi1) in enumerate(ivs):
        for k2, lo2, hi2 in ivs[i:]:
            fs = _route_functions(graph, k1, k2)
            m = _max_min_affine(fs, k1 == k2, ((lo1, hi1), (lo2, hi2)))
            best = max(best, m)
    return best


def mesh(cover: Cover, tags: Sequence[str] | None = None) -> Fraction:
    sets = cover.sets if tags is None else cover.tagged(*tags)
    return max((set_diameter(cover.graph, s) for s in sets), default=Fraction(0))


def covers_space(cover: Cover) -> bool:
    Z, zv = _complement_pieces(cover.graph, cover.sets)
    return not Z and not zv


def cover_stats(cover: Cover) -> tuple:
    order, _ = closure_order(cover)
    return order, mesh(cover), lebesgue_number(cover)


def star_refines(fine: Cover, coarse: Cover):
    """Return None if every star of a fine set lies in one coarse set, else an offending label."""
    fam = _intersection_families(fine)
    nbr: dict[str, set] = {s.label: {s.label} for s in fine.sets}
    for simplex in fam:
        for a in simplex:
            nbr[a].update(simplex)
    for s in fine.sets:
        star = None
        for lab in nbr[s.label]:
            star = fine.by_label[lab] if star is None else star.union(fine.by_label[lab])
        if not any(_subset(star, c) for c in coarse.sets):
            return s.label
    return None


def _subset(a: OpenSet, b: OpenSet) -> bool:
    if not a.vertices <= b.vertices:
        return False
    for k, iv in a.pieces.items():
        biv = b.pieces.get(k, [])
        for lo, hi in iv:
            if not any(blo <= lo and hi <= bhi for blo, bhi in biv):
                return False
    return True


# ----- nerve ---------------------------------------------------------------------------


def _intersection_families(cover: Cover) -> list:
    """Maximal families of sets with a common point."""
    cached = cover.__dict__.get("_families")
    if cached is not None:
        return cached
    graph = cover.graph
    fams = set()
    per_edge = _edge_events(cover)
    for k, ivs in per_edge.items():
        pts = sorted({lo for lo, _, _ in ivs} | {hi for _, hi, _ in ivs})
        mids = [(a + b) / 2 for a, b in zip(pts, pts[1:])]
        for hit in _stab(ivs, mids):
            fam = frozenset(r[2] for r in hit)
            if fam:
                fams.add(fam)
    for v in graph.space.points:
        fam = frozenset(s.label for s in cover.sets if v in s.vertices)
        if fam:
            fams.add(fam)
    by_label: dict = {}
    for f in fams:
        for lab in f:
            by_label.setdefault(lab, []).append(f)
    out = [f for f in fams if not any(f < g for g in by_label[next(iter(f))])]
    out = sorted(out, key=lambda f: sorted(f))
    cover.__dict__["_families"] = out
    return out


@dataclass
class Nerve:
    complex: MetricComplex
    cover: Cover
    special: dict  # D point -> vertex label

    @property
    def vertices(self) -> list:
        return self.complex.vertices

    def set_of(self, label: str) -> OpenSet:
        return self.cover.by_label[label]

    def to_json(self) -> dict:
        return {
            "vertices": self.complex.vertices,
            "simplices": [list(s) for s in self.complex.maximal_simplices()],
            "special": self.special,
            "tags": {s.label: s.tag for s in self.cover.sets},
        }


def nerve(cover: Cover) -> Nerve:
    labels = [s.label for s in cover.sets]
    fams = _intersection_families(cover)
    placeholder = {}
    simplices = [sorted(f, key=labels.index) for f in fams]
    for s in simplices:
        for a, b in itertools.combinations(s, 2):
            placeholder[(a, b)] = 1.0
    cx = MetricComplex(labels, simplices, placeholder)
    return Nerve(cx, cover, dict(cover.centers))


def _node_point(cover: Cover, label: str):
    s = cover.by_label[label]
    return s.center


def metrize_nerve(nv: Nerve, M: float, omega: float = 0.0, mode: str = "distance", stage: int | None = None,
                  check: bool = True) -> MetricComplex:
    """Edge lengths on the nerve: M on W-incident edges, and on the others
    (1 - omega) times the distance between centers/midpoints ("distance")
    or (1 - omega) times the subinterval length ("uniform")."""
    cover = nv.cover
    alpha = float(cover.params.get("alpha", 0.0))
    if M < alpha:
        raise ValueError(f"M={M} is below alpha={alpha}")
    layout_xi = {l.sid: l.xi for l in cover.layouts}
    arcs = {}
    for l in cover.layouts:
        for lab, m in zip(l.v_labels, l.midpoints):
            arcs[lab] = (l.sid, m)
    metric = {}
    g = cover.graph
    for a, b in nv.complex.edges:
        sa, sb = cover.by_label[a], cover.by_label[b]
        if sa.tag == "W" or sb.tag == "W":
            metric[(a, b)] = float(M)
            continue
        if mode == "uniform":
            seg = sa.segment or sb.segment
            xi = layout_xi.get(seg, cover.params.get("xi"))
            metric[(a, b)] = (1 - omega) * float(xi)
        else:
            if a in arcs and b in arcs and arcs[a][0] == arcs[b][0]:
                d = abs(arcs[a][1] - arcs[b][1])
            else:
                d = g.point_dist(sa.center, sb.center)
            metric[(a, b)] = (1 - omega) * float(d)
    cx = nv.complex.with_metric(metric)
    if check:
        bad = first_non_euclidean(cx)
        if bad is not None:
            raise ValueError(f"M={M} below the PD threshold on simplex {bad}")
    return cx


def first_non_euclidean(cx: MetricComplex):
    groups: dict[int, list] = {}
    for s in cx.maximal_simplices():
        if len(s) >= 2:
            groups.setdefault(len(s) - 1, []).append(s)
    for k, ss in groups.items():
        mats = np.array([quadratic_form(cx, s).matrix for s in ss])
        ok, _ = batch_is_pd(mats)
        if not ok.all():
            return ss[int(np.argmin(ok))]
    return None


# ----- partition of unity and psi -----------------------------------------------------------


@dataclass
class BaryPoint:
    """A point of the nerve: positive weights (summing to 1) on a simplex."""

    labels: tuple
    weights: np.ndarray

    @classmethod
    def vertex(cls, label) -> "BaryPoint":
        return cls((label,), np.array([1.0]))

    @classmethod
    def make(cls, pairs) -> "BaryPoint":
        acc = {}
        for lab, w in pairs:
            if w > 0:
                acc[lab] = acc.get(lab, 0.0) + float(w)
        tot = sum(acc.values())
        labs = tuple(sorted(acc))
        return cls(labs, np.array([acc[l] / tot for l in labs]))

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.weights.tolist()))

    def to_json(self) -> dict:
        return self.as_dict()


class PartitionOfUnity:
    """Normalized tents dist(x, X minus S) of the cover sets."""

    def __init__(self, cover: Cover):
        self.cover = cover
        tents, vert = tent_data(cover)
        self.edge_index = {}
        for k, ivs in tents.items():
            pts = sorted({lo for lo, *_ in ivs} | {hi for _, hi, *_ in ivs})
            mids = [(a + b) / 2 for a, b in zip(pts, pts[1:])]
            segs = [[(float(lo), float(hi), None if A is None else float(A), None if B is None else float(B), lab)
                     for lo, hi, A, B, lab in hit] for hit in _stab(ivs, mids)]
            self.edge_index[k] = ([float(p) for p in pts], segs)
        self.vertex_weights = {v: [(lab, (1.0 if d is None else float(d))) for lab, d in lst] for v, lst in vert.items()}

    def weights(self, p) -> dict:
        if isinstance(p, str):
            lst = self.vertex_weights.get(p, [])
            raw = dict(lst)
        else:
            k, s = p
            s = float(s)
            u, v, w = self.cover.graph.space.edges[k]
            if s <= 0 or s >= float(w):
                return self.weights(u if s <= 0 else v)
            pts, segs = self.edge_index.get(k, ([], []))
            raw = {}
            if pts:
                i = bisect.bisect_right(pts, s) - 1
                pool = []
                for j in (i - 1, i):
                    if 0 <= j < len(segs):
                        pool.extend(segs[j])
                for lo, hi, A, B, lab in pool:
                    if lo < s < hi:
                        vals = [v for v in ((s - A) if A is not None else None, (B - s) if B is not None else None)
                                if v is not None]
                        raw[lab] = min(vals) if vals else 1.0
        tot = sum(raw.values())
        if tot <= 0:
            raise ValueError(f"point {p!r} lies outside every cover set")
        return {lab: w / tot for lab, w in raw.items() if w > 0}


def chain_nodes(layout: SegmentLayout, mode: str = "distance") -> list:
    """(arc position, nerve vertex) nodes that psi interpolates along a segment."""
    if mode == "uniform":
        first = layout.grid[0] - layout.xi / 2
        last = layout.grid[-1] + layout.xi / 2
    else:
        first, last = Fraction(0), layout.segment.length
    nodes = [(first, layout.start_label)]
    nodes += list(zip(layout.midpoints, layout.v_labels))
    nodes.append((last, layout.end_label))
    return nodes


class Psi:
    """psi: space -> nerve.  On geodesic segments it is linear in arc length between
    chain nodes; elsewhere it is the partition of unity."""

    def __init__(self, cover: Cover, partition: PartitionOfUnity | None = None, mode: str = "distance"):
        self.cover = cover
        self.partition = partition or PartitionOfUnity(cover)
        self.mode = mode
        self.chains = []
        for l in cover.layouts:
            nodes = chain_nodes(l, mode)
            self.chains.append((l.segment, [float(a) for a, _ in nodes], [lab for _, lab in nodes]))

    def locate_on_chain(self, p):
        for seg, arcs, labs in self.chains:
            sa = seg.arc_of(p if isinstance(p, str) else (p[0], Fraction(p[1])) if not isinstance(p[1], float) else p)
            if sa is None and not isinstance(p, str):
                i = seg.edge_pos.get(p[0])
                if i is not None:
                    k, fwd = seg.edges[i]
                    w = float(self.cover.graph.w[k])
                    sa = float(seg.cum[i]) + (float(p[1]) if fwd else w - float(p[1]))
            if sa is not None:
                return seg, float(sa), arcs, labs
        return None

    def __call__(self, p) -> BaryPoint:
        hit = self.locate_on_chain(p)
        if hit is not None:
            _, sa, arcs, labs = hit
            return self.on_chain(sa, arcs, labs)
        return BaryPoint.make(self.partition.weights(p).items())

    @staticmethod
    def on_chain(sa, arcs, labs) -> BaryPoint:
        if sa <= arcs[0]:
            return BaryPoint.vertex(labs[0])
        if sa >= arcs[-1]:
            return BaryPoint.vertex(labs[-1])
        i = bisect.bisect_right(arcs, sa) - 1
        if sa == arcs[i]:
            return BaryPoint.vertex(labs[i])
        t = (sa - arcs[i]) / (arcs[i + 1] - arcs[i])
        return BaryPoint.make([(labs[i], 1 - t), (labs[i + 1], t)])


def psi(x, cover: Cover, partition: PartitionOfUnity | None = None, mode: str = "distance") -> BaryPoint:
    return Psi(cover, partition, mode)(x)


# ----- refinement map phi ---------------------------------------------------------------------


def case1_ratio(omega_prev: float, omega_next: float) -> float:
    return (1 - omega_prev) / (1 - omega_next)


@dataclass
class NerveMap:
    """Vertex images of a simplicial-on-a-subdivision map between nerves."""

    images: dict  # next label -> BaryPoint in the previous nerve
    kinds: dict  # next label -> "persist" | "barycenter" | "vertex"

    def __getitem__(self, lab) -> BaryPoint:
        return self.images[lab]


def phi(nerve_next: Nerve, nerve_prev: Nerve, psi_prev: Psi, check_refinement: bool = True) -> NerveMap:
    """Refinement map: vertices on persisting geodesics follow psi_prev; U vertices of
    old centers stay put; everything else goes to the barycenter of the simplex
    of previous sets containing its center point."""
    cn, cp = nerve_next.cover, nerve_prev.cover
    if check_refinement:
        bad = star_refines(cn, cp)
        if bad is not None:
            raise ValueError(f"star-refinement violated at {bad}")
    images, kinds = {}, {}
    prev_partition = psi_prev.partition
    for s in cn.sets:
        c = s.center
        if s.tag == "U" and c in cp.centers:
            images[s.label] = BaryPoint.vertex(cp.centers[c])
            kinds[s.label] = "vertex"
        elif s.tag in ("U", "V") and psi_prev.locate_on_chain(c) is not None and _on_persisting(cn, s):
            images[s.label] = psi_prev(c)
            kinds[s.label] = "persist"
        else:
            support = [lab for lab in prev_partition.weights(c)]
            images[s.label] = BaryPoint.make([(lab, 1.0) for lab in support])
            kinds[s.label] = "barycenter"
    return NerveMap(images, kinds)


def _on_persisting(cover: Cover, s: OpenSet) -> bool:
    if s.tag == "U":
        return True
    for l in cover.layouts:
        if l.sid == s.segment:
            return l.persisting
    return False


def bary_distance(cx: MetricComplex, p: BaryPoint, q: BaryPoint) -> float | None:
    """Straight-line distance when both points lie in a common simplex, else None."""
    verts = tuple(dict.fromkeys(p.labels + q.labels))
    s = cx.sorted_simplex(verts)
    if s not in cx.simplices:
        return None
    if len(s) == 1:
        return 0.0
    Q = quadratic_form(cx, s).matrix
    wp = np.array([p.as_dict().get(v, 0.0) for v in s])
    wq = np.array([q.as_dict().get(v, 0.0) for v in s])
    d = (wp - wq)[1:]
    return float(math.sqrt(max(d @ Q @ d, 0.0)))


# ----- taut chains on the metrized nerve ------------------------------------------------------------


@dataclass
class Chain:
    points: list  # BaryPoints
    simplices: list  # maximal simplices, one per step
    length: float


class _NerveGeometry:
    def __init__(self, cx: MetricComplex):
        self.cx = cx
        self.maxs = cx.maximal_simplices()
        self.forms = [quadratic_form(cx, s).matrix if len(s) > 1 else np.zeros((0, 0)) for s in self.maxs]
        self.index_of = {s: i for i, s in enumerate(self.maxs)}
        self.containing: dict = {}
        for i, s in enumerate(self.maxs):
            for v in s:
                self.containing.setdefault(v, []).append(i)
        self.nbrs = []
        for i, s in enumerate(self.maxs):
            cand = set()
            for v in s:
                cand.update(self.containing[v])
            cand.discard(i)
            self.nbrs.append(sorted(cand))
        lengths = [cx.value(a, b) for a, b in cx.edges]
        self.min_edge = min([x for x in lengths if x > 0], default=1.0)

    def face(self, i, j) -> tuple:
        sj = set(self.maxs[j])
        return tuple(v for v in self.maxs[i] if v in sj)

    def seg_len(self, i, wa: dict, wb: dict) -> float:
        s = self.maxs[i]
        if len(s) == 1:
            return 0.0
        d = np.array([wa.get(v, 0.0) - wb.get(v, 0.0) for v in s])[1:]
        return float(math.sqrt(max(d @ self.forms[i] @ d, 0.0)))

    def holds(self, i, p: BaryPoint) -> bool:
        return set(p.labels) <= set(self.maxs[i])


def _sequence_cost(geo: _NerveGeometry, seq: Sequence[int], x: BaryPoint, y: BaryPoint | None):
    """Optimal chain length through the simplex sequence (y None: free end on the last face)."""
    faces = [geo.face(a, b) for a, b in zip(seq, seq[1:])]
    xw = x.as_dict()
    if y is None:
        if not faces:
            return 0.0, [x]
        # the last simplex is reached at the last face for free
        seq = seq[:-1]
        target = None
    else:
        target = y.as_dict()
    if target is None:
        faces_used = faces[: len(seq)]
    else:
        faces_used = faces

    def assemble(params):
        pts = [xw]
        it = iter(params)
        for n, f in enumerate(faces_used):
            if len(f) == 1:
                pts.append({f[0]: 1.0})
            else:
                w = [next(it) for _ in f]
                pts.append(dict(zip(f, w)))
        if target is not None:
            pts.append(target)
        return pts

    def cost_of(pts):
        total = 0.0
        for n, i in enumerate(seq):
            if n + 1 < len(pts):
                total += geo.seg_len(i, pts[n], pts[n + 1])
        return total

    nfree = sum(len(f) for f in faces_used if len(f) > 1)
    if nfree == 0:
        pts = assemble([])
        return cost_of(pts), [BaryPoint.make(p.items()) for p in pts]

    sizes = [len(f) for f in faces_used if len(f) > 1]
    # every chain point is a constant plus a linear function of the free weights;
    # each segment contributes sqrt(d' Q d) with d = c + L p in reduced coordinates
    blocks, off = [], 0
    for f in faces_used:
        if len(f) > 1:
            blocks.append((f, off))
            off += len(f)
        else:
            blocks.append((f, None))
    point_specs = [(xw, None)] + [(({f[0]: 1.0}, None) if o is None else (f, o)) for f, o in blocks]
    if target is not None:
        point_specs.append((target, None))
    terms = []
    for n, i in enumerate(seq):
        if n + 1 >= len(point_specs):
            continue
        simplex = geo.maxs[i]
        if len(simplex) == 1:
            continue
        pos = {v: r for r, v in enumerate(simplex)}
        c = np.zeros(len(simplex))
        L = np.zeros((len(simplex), off))
        for sign, (pt, o) in ((1.0, point_specs[n]), (-1.0, point_specs[n + 1])):
            if o is None:
                for v, w in pt.items():
                    if v in pos:
                        c[pos[v]] += sign * w
            else:
                for r, v in enumerate(pt):
                    L[pos[v], o + r] += sign
        terms.append((c[1:], L[1:], geo.forms[i]))

    def smooth(params):
        total, grad = 0.0, np.zeros(off)
        for c, L, Q in terms:
            d = c + L @ params
            Qd = Q @ d
            r = math.sqrt(max(float(d @ Qd), 0.0) + 1e-24)
            total += r
            grad += (L.T @ Qd) / r
        return total, grad

    starts = [np.concatenate([np.full(k, 1.0 / k) for k in sizes])]
    cons, o = [], 0
    for k in sizes:
        row = np.zeros(off)
        row[o:o + k] = 1.0
        cons.append({"type": "eq", "fun": (lambda p, row=row: float(row @ p) - 1.0),
                     "jac": (lambda p, row=row: row)})
        o += k
    best = None
    for x0 in starts:
        res = minimize(smooth, x0, jac=True, method="SLSQP", bounds=[(0.0, 1.0)] * off, constraints=cons,
                       options={"ftol": 1e-14, "maxiter": 500})
        pts = assemble(np.clip(res.x, 0, 1))
        c = cost_of(pts)
        # vertex junctions are always feasible; keep the better of the two
        if best is None or c < best[0]:
            best = (c, pts)
    # also try every choice of face vertices (exact on 1-dim junctions at corners)
    for choice in itertools.islice(itertools.product(*[range(k) for k in sizes]), 64):
        params = []
        for k, c in zip(sizes, choice):
            params.extend([1.0 if j == c else 0.0 for j in range(k)])
        pts = assemble(params)
        c = cost_of(pts)
        if c < best[0] - 1e-15:
            best = (c, pts)
    return best[0], [BaryPoint.make(p.items()) for p in best[1]]


def _upper_bound(geo: _NerveGeometry, x: BaryPoint, y: BaryPoint) -> float:
    """Dijkstra on the 1-skeleton, entering and leaving through simplex vertices."""
    cx = geo.cx
    xw, yw = x.as_dict(), y.as_dict()
    ix = [i for i in range(len(geo.maxs)) if geo.holds(i, x)]
    iy = [i for i in range(len(geo.maxs)) if geo.holds(i, y)]
    for i in ix:
        if geo.holds(i, y):
            return geo.seg_len(i, xw, yw)
    dist = {}
    heap = []
    for i in ix:
        for v in geo.maxs[i]:
            d = geo.seg_len(i, xw, {v: 1.0})
            if d < dist.get(v, INF):
                dist[v] = d
                heapq.heappush(heap, (d, v))
    adj: dict = {}
    for a, b in cx.edges:
        L = cx.value(a, b)
        adj.setdefault(a, []).append((b, L))
        adj.setdefault(b, []).append((a, L))
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for u, L in adj.get(v, []):
            if d + L < dist.get(u, INF):
                dist[u] = d + L
                heapq.heappush(heap, (d + L, u))
    best = INF
    for i in iy:
        for v in geo.maxs[i]:
            if v in dist:
                best = min(best, dist[v] + geo.seg_len(i, {v: 1.0}, yw))
    return best


def _as_point(x) -> BaryPoint:
    return x if isinstance(x, BaryPoint) else BaryPoint.vertex(x)


def nerve_distance(cx: MetricComplex, x: BaryPoint, y: BaryPoint, cap: int | None = None,
                   slack: int = 3, tol: float = 1e-12, return_stats: bool = False):
    """Shortest chain length between two nerve points by branch and bound.

    Sequences of maximal simplices (no repeats, consecutive ones sharing a
    face) are grown depth first in index order; a partial sequence is cut
    when its best cost up to its last face already reaches the incumbent.
    The incumbent starts at the 1-skeleton distance, and the length cap
    defaults to ceil(incumbent / shortest edge) + slack.
    """
    x, y = _as_point(x), _as_point(y)
    geo = _NerveGeometry(cx)
    ub = _upper_bound(geo, x, y)
    if cap is None:
        cap = (int(math.ceil(ub / geo.min_edge)) if math.isfinite(ub) else len(geo.maxs)) + slack
    starts = [i for i in range(len(geo.maxs)) if geo.holds(i, x)]
    best = (ub, None)
    explored = 0
    truncated = False
    stack = [[i] for i in reversed(starts)]
    lb_cache: dict = {}
    while stack:
        seq = stack.pop()
        explored += 1
        last = seq[-1]
        if len(seq) > 1:
            lb = _prefix_cost(geo, seq, x, lb_cache)
            if lb >= best[0] - tol:
                continue
        if geo.holds(last, y):
            c, pts = _sequence_cost(geo, seq, x, y)
            if c < best[0] - tol or (best[1] is None and c <= best[0] + tol):
                best = (c, Chain(pts, [geo.maxs[i] for i in seq], c))
        if len(seq) >= cap:
            truncated = True
            continue
        used = set(seq)
        for j in reversed(geo.nbrs[last]):
            if j not in used:
                stack.append(seq + [j])
    length, chain = best
    if chain is None and math.isfinite(length):
        chain = Chain([x, y], [], length)
    if return_stats:
        return length, chain, {"explored": explored, "cap": cap, "cap_reached": truncated}
    return length, chain


def _prefix_cost(geo, seq, x, cache):
    key = tuple(seq)
    if key in cache:
        return cache[key]
    faces = [geo.face(a, b) for a, b in zip(seq, seq[1:])]
    if all(len(f) == 1 for f in faces):
        pts = [x.as_dict()] + [{f[0]: 1.0} for f in faces]
        c = sum(geo.seg_len(i, pts[n], pts[n + 1]) for n, i in enumerate(seq[:-1]))
    else:
        c, _ = _sequence_cost(geo, seq, x, None)
    cache[key] = c
    return c


def brute_force_nerve_distance(cx: MetricComplex, x: BaryPoint, y: BaryPoint, cap: int | None = None) -> float:
    """Minimum over every simple simplex sequence (exhaustive; small complexes only)."""
    x, y = _as_point(x), _as_point(y)
    geo = _NerveGeometry(cx)
    n = len(geo.maxs)
    cap = n if cap is None else cap
    best = INF
    starts = [i for i in range(n) if geo.holds(i, x)]

    def grow(seq):
        nonlocal best
        if geo.holds(seq[-1], y):
            c, _ = _sequence_cost(geo, seq, x, y)
            best = min(best, c)
        if len(seq) >= cap:
            return
        for j in geo.nbrs[seq[-1]]:
            if j not in seq:
                grow(seq + [j])
    for i in starts:
        grow([i])
    return best
