"""Staged embedding f_i = h_i o psi_i of a metric graph into R^{p,1}.

Stage 1 places the nerve vertices generically in a small ball (Euclidean,
negative coordinate zero) and lengthens every nerve edge to its metric
length with a zigzag.  Later stages pull the previous embedding back along
the refinement map, keep sub-polylines on persisting geodesics, and repair
new geodesic edges: expanding ones with the Lorentzian wiggle, short ones
with a zigzag in a fresh coordinate.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .cover_nerve import (BaryPoint, Cover, ExactGraph, Nerve, NerveMap, Psi, build_U, build_V, build_W,
                          chain_nodes, closure_order, lebesgue_number, mesh, metrize_nerve, nerve, phi)
from .metric_core import FiniteLengthSpace, perturbation_constant
from .minkowski import MinkVec, PLMap, pl_energy_arrays
from .simplicial import MetricComplex, PD_TOL, batch_one_lipschitz
from .wiggle import euclid_zigzag, lorentz_wiggle, wiggle_points

ENERGY_TOL = 1e-6


# ----- geodesic families --------------------------------------------------------------


def _pair(x: str, y: str) -> tuple:
    return (x, y) if x <= y else (y, x)


@dataclass
class GeodesicFamily:
    """Point sets D_1 ⊂ D_2 ⊂ ... and one vertex-path geodesic per pair."""

    space: FiniteLengthSpace
    stages: list
    paths: dict = field(default_factory=dict)  # pair -> vertex path from pair[0] to pair[1]
    birth: dict = field(default_factory=dict)  # pair -> stage index
    order: list = field(default_factory=list)  # creation order

    @classmethod
    def build(cls, space: FiniteLengthSpace, stages: Sequence[Sequence[str]], fix: bool = True) -> "GeodesicFamily":
        fam = cls(space, [list(s) for s in stages])
        seen = set()
        for i, D in enumerate(fam.stages, start=1):
            for x in D:
                if x not in space.index:
                    raise KeyError(f"point {x!r} of D_{i} is not a vertex of the space")
            if not seen <= set(D):
                raise ValueError(f"D_{i} does not contain D_{i - 1}")
            seen = set(D)
            for x, y in itertools.combinations(sorted(D), 2):
                key = _pair(x, y)
                if key not in fam.paths:
                    fam.paths[key] = space.vertex_path(*key)
                    fam.birth[key] = i
                    fam.order.append(key)
        return fix_intersections(fam) if fix else fam

    def keys(self, stage: int | None = None) -> list:
        if stage is None:
            return list(self.order)
        return [k for k in self.order if self.birth[k] <= stage]

    def length(self, key) -> float:
        p = self.paths[key]
        return sum(self.space.edges[self.space.edge_between(a, b)][2] for a, b in zip(p, p[1:]))

    def copy(self) -> "GeodesicFamily":
        return GeodesicFamily(self.space, [list(s) for s in self.stages], dict(self.paths), dict(self.birth),
                              list(self.order))


def intersection_components(space: FiniteLengthSpace, p: Sequence[str], q: Sequence[str]) -> list:
    """Connected components (vertex sets) of im(p) ∩ im(q)."""
    common = set(p) & set(q)
    if not common:
        return []
    ep = {space.edge_between(a, b) for a, b in zip(p, p[1:])}
    eq = {space.edge_between(a, b) for a, b in zip(q, q[1:])}
    parent = {v: v for v in common}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v
    for k in ep & eq:
        u, v, _ = space.edges[k]
        parent[find(u)] = find(v)
    comps: dict = {}
    for v in common:
        comps.setdefault(find(v), set()).add(v)
    return sorted(comps.values(), key=lambda c: sorted(c))


def classify_intersection(space, p, q) -> str:
    comps = intersection_components(space, p, q)
    if not comps:
        return "empty"
    if len(comps) > 1:
        return "non-allowable"
    return "point" if len(comps[0]) == 1 else "interval"


def fix_intersections(family: GeodesicFamily, max_passes: int = 100) -> GeodesicFamily:
    """Reroute newer geodesics so every pair meets in at most one point or interval.

    For an older geodesic meeting a newer one in several pieces, the newer one
    is rerouted along the older one between the first and last of the older
    one's points lying on the newer one.
    """
    fam = family.copy()
    space = fam.space
    for _ in range(max_passes):
        changed = False
        for j, newer in enumerate(fam.order):
            for older in fam.order[:j]:
                old, new = fam.paths[older], fam.paths[newer]
                if len(intersection_components(space, old, new)) <= 1:
                    continue
                on_new = set(new)
                hits = [i for i, v in enumerate(old) if v in on_new]
                x, y = old[hits[0]], old[hits[-1]]
                middle = old[hits[0]: hits[-1] + 1]
                ix, iy = new.index(x), new.index(y)
                if ix > iy:
                    ix, iy, middle = iy, ix, middle[::-1]
                rerouted = new[:ix] + middle + new[iy + 1:]
                before = _path_length(space, new)
                after = _path_length(space, rerouted)
                if after > before * (1 + 1e-12) + 1e-12:
                    raise RuntimeError("rerouting produced a longer path; inputs are not geodesics")
                fam.paths[newer] = rerouted
                changed = True
        if not changed:
            return fam
    raise RuntimeError("intersection repair did not settle")


def _path_length(space, path) -> float:
    return sum(space.edges[space.edge_between(a, b)][2] for a, b in zip(path, path[1:]))


def derive_prime(family: GeodesicFamily, stage: int | None = None) -> tuple[list, list]:
    """D' (D plus single intersection points and shared-interval endpoints) and
    Γ' (every geodesic split at the points of D' on it, shared pieces once)."""
    space = family.space
    keys = family.keys(stage)
    D = family.stages[(stage or len(family.stages)) - 1]
    extra = set()
    for k1, k2 in itertools.combinations(keys, 2):
        p, q = family.paths[k1], family.paths[k2]
        comps = intersection_components(space, p, q)
        if len(comps) > 1:
            raise ValueError(f"geodesics {k1} and {k2} do not intersect allowably")
        for comp in comps:
            if len(comp) == 1:
                extra |= comp
            else:
                # ends of the shared interval: the shared vertices with one shared neighbour
                for v in comp:
                    i = p.index(v)
                    nb = [p[j] for j in (i - 1, i + 1) if 0 <= j < len(p) and p[j] in comp]
                    if len(nb) <= 1:
                        extra.add(v)
    Dp = list(D) + sorted(extra - set(D))
    marks = set(Dp)
    segs, seen = [], set()
    for key in keys:
        path = family.paths[key]
        start = 0
        for i in range(1, len(path)):
            if path[i] in marks:
                piece = path[start:i + 1]
                edges = frozenset(space.edge_between(a, b) for a, b in zip(piece, piece[1:]))
                if edges not in seen:
                    seen.add(edges)
                    segs.append(piece)
                start = i
    return Dp, segs


def image_intervals(space: FiniteLengthSpace, paths: Sequence[Sequence[str]]) -> set:
    """Edge indices covered by a collection of vertex paths."""
    return {space.edge_between(a, b) for p in paths for a, b in zip(p, p[1:])}


# ----- embeddings of nerves ------------------------------------------------------------------


class NerveEmbedding:
    """Vertex images plus one polyline per nerve edge, evaluated on barycentric points.

    On a simplex with weights b, h(b) = Σ b_i h(v_i) + Σ_{i<j} (b_i + b_j) Δ_ij(b_j / (b_i + b_j)),
    where Δ_ij is the deviation of the edge polyline from the straight chord at
    the given fraction of its length.  On an edge this is exactly the polyline.
    """

    def __init__(self, p: int, q: int, vertex_images: dict, polylines: dict | None = None):
        self.p, self.q = p, q
        self.images = {k: np.asarray(v, float) for k, v in vertex_images.items()}
        self.polylines: dict = {}  # (a, b) -> (pts, cum), stored once per edge
        for (a, b), (pts, cum) in (polylines or {}).items():
            self.set_polyline(a, b, pts, cum)

    def set_polyline(self, a, b, pts, cum=None):
        pts = np.asarray(pts, float)
        if cum is None:
            cum = polyline_cum(pts, self.p)
        self.polylines[(a, b)] = (pts, np.asarray(cum, float))

    def edge(self, a, b):
        if (a, b) in self.polylines:
            return self.polylines[(a, b)]
        if (b, a) in self.polylines:
            pts, cum = self.polylines[(b, a)]
            return pts[::-1], cum[-1] - cum[::-1]
        pts = np.array([self.images[a], self.images[b]])
        return pts, polyline_cum(pts, self.p)

    def vertex(self, lab) -> np.ndarray:
        return self.images[lab]

    def at(self, bp: BaryPoint) -> np.ndarray:
        labs, w = bp.labels, bp.weights
        out = sum(wi * self.images[l] for l, wi in zip(labs, w))
        if len(labs) == 1:
            return np.array(self.images[labs[0]], float)
        for i, j in itertools.combinations(range(len(labs)), 2):
            s = w[i] + w[j]
            if s <= 0:
                continue
            t = w[j] / s
            pts, cum = self.edge(labs[i], labs[j])
            if len(pts) == 2:
                continue
            P = kernels.polyline_at(cum, pts, np.array([t * cum[-1]]))[0]
            chord = (1 - t) * self.images[labs[i]] + t * self.images[labs[j]]
            out = out + s * (P - chord)
        return out

    def to_minkvec(self, x) -> MinkVec:
        return MinkVec(x[: self.p], x[self.p:])

    def vertex_coords_json(self) -> dict:
        return {str(k): {"pos": v[: self.p].tolist(), "neg": v[self.p:].tolist()} for k, v in sorted(self.images.items())}


def polyline_cum(pts: np.ndarray, p: int) -> np.ndarray:
    """Cumulative Minkowski length sqrt(max(<d,d>, 0)) along a polyline."""
    d = np.diff(pts, axis=0)
    q2 = np.sum(d[:, :p] ** 2, axis=1) - np.sum(d[:, p:] ** 2, axis=1)
    return np.concatenate([[0.0], np.cumsum(np.sqrt(np.maximum(q2, 0.0)))])


def _groups(cx: MetricComplex, simplices):
    out: dict[int, list] = {}
    for s in simplices:
        if len(s) >= 2:
            out.setdefault(len(s) - 1, []).append(s)
    return out


def certify(cx: MetricComplex, images: dict, p: int, simplices=None, tol: float = PD_TOL) -> dict:
    """Vertex-affine shortness certificates: g - (Minkowski Gram of images) PSD per simplex."""
    simplices = cx.maximal_simplices() if simplices is None else simplices
    failed, worst, count = [], math.inf, 0
    for k, ss in _groups(cx, simplices).items():
        G = np.empty((len(ss), k, k))
        F = np.empty((len(ss), k, k))
        for n, s in enumerate(ss):
            e0 = [cx.value(s[0], s[i]) ** 2 for i in range(1, k + 1)]
            for i in range(1, k + 1):
                G[n, i - 1, i - 1] = e0[i - 1]
                for j in range(i + 1, k + 1):
                    G[n, i - 1, j - 1] = G[n, j - 1, i - 1] = 0.5 * (e0[i - 1] + e0[j - 1] - cx.value(s[i], s[j]) ** 2)
            base = images[s[0]]
            D = np.array([images[v] - base for v in s[1:]])
            F[n] = D[:, :p] @ D[:, :p].T - D[:, p:] @ D[:, p:].T
        ok, lam = batch_one_lipschitz(G, F, tol)
        count += len(ss)
        worst = min(worst, float(lam.min()))
        failed.extend(s for s, good in zip(ss, ok) if not good)
    return {"checked": count, "failed": failed, "min_margin": worst}


# ----- configuration and stage records -------------------------------------------------------


@dataclass
class PipelineConfig:
    delta0: float = 12.0
    stages: int = 2
    M1_factor: float = 2.0  # M_1 = M1_factor * alpha_1
    M_growth: float = 2.0  # M_{i+1} >= M_growth * M_i
    pos_dim: int = 9
    neg_dim: int = 1
    place_dim: int = 7
    rho_cap: float | None = None  # default: xi_next / 4
    seed: int = 0
    sample_step: float = 0.01
    transverse_edge: int | None = None
    transverse_samples: int = 4001

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StageResult:
    index: int
    D: list
    Dprime: list
    geodesics: list  # pair keys of Γ_i
    segments: list  # vertex paths of Γ'_i
    cover: Cover
    nerve: Nerve
    metric: MetricComplex
    psi: Psi
    h: NerveEmbedding | None = None
    phi: NerveMap | None = None
    constants: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)
    _curves: dict = field(default_factory=dict, repr=False)

    def f(self, site) -> np.ndarray:
        return self.h.at(self.psi(site))

    def layout_curve(self, layout):
        """Breakpoints (arc, point) of f along a whole segment of Γ'."""
        if layout.sid in self._curves:
            return self._curves[layout.sid]
        nodes = chain_nodes(layout, "distance")
        ts, pts = [], []
        for (sa, A), (sb, B) in zip(nodes, nodes[1:]):
            P, cum = self.h.edge(A, B)
            L = cum[-1]
            sa, sb = float(sa), float(sb)
            loc = sa + (cum / L) * (sb - sa) if L > 0 else np.linspace(sa, sb, len(P))
            start = 1 if ts else 0
            ts.extend(loc[start:].tolist())
            pts.extend(P[start:])
        out = (np.array(ts), np.array(pts))
        out[0][-1] = float(layout.segment.length)
        self._curves[layout.sid] = out
        return out

    def geodesic_curve(self, path: Sequence[str]):
        """Breakpoints of f along a vertex path made of Γ' segments, with node arcs."""
        by_edges = {frozenset(k for k, _ in l.segment.edges): l for l in self.cover.layouts}
        marks = set(self.Dprime)
        ts, pts, nodes = [], [], []
        offset = 0.0
        start = 0
        space = self.cover.graph.space
        for i in range(1, len(path)):
            if path[i] not in marks and i < len(path) - 1:
                continue
            piece = path[start:i + 1]
            edges = frozenset(space.edge_between(a, b) for a, b in zip(piece, piece[1:]))
            lay = by_edges[edges]
            t, P = self.layout_curve(lay)
            L = float(lay.segment.length)
            mids = [float(m) for m in lay.midpoints]
            if lay.segment.start != piece[0]:
                t, P = L - t[::-1], P[::-1]
                mids = [L - m for m in mids[::-1]]
            skip = 1 if ts else 0
            ts.extend((t[skip:] + offset).tolist())
            pts.extend(P[skip:])
            nodes.extend(m + offset for m in mids)
            offset += L
            start = i
        return np.array(ts), np.array(pts), np.array(nodes)


# ----- stage construction --------------------------------------------------------------------


def build_stage(space: FiniteLengthSpace, family: GeodesicFamily, i: int, prev: StageResult | None,
                config: PipelineConfig) -> StageResult:
    """Cover, nerve, metric and psi for stage i; the embedding is attached afterwards."""
    graph = prev.cover.graph if prev is not None else ExactGraph(space)
    keys = family.keys(i)
    Dp, segs = derive_prime(family, i)
    delta_prev = config.delta0 if prev is None else prev.constants["delta"]
    U = build_U(graph, Dp, segs, Fraction(delta_prev))
    constraints = None
    if prev is not None:
        constraints = [(l.segment.vertices, l.segment.locate(l.grid[0]), l.xi) for l in prev.cover.layouts]
    UV = build_V(graph, segs, U, None, constraints)
    cover = build_W(graph, UV)
    cover.stage = i
    nv = nerve(cover)
    alpha = float(cover.params["alpha"])
    M = config.M1_factor * alpha if prev is None else config.M_growth * prev.constants["M"]
    cx = metrize_nerve(nv, M, 0.0, "distance", stage=i)
    ps = Psi(cover, mode="distance")
    delta = lebesgue_number(cover)
    xi = cover.params["xi"]
    consts = {
        "alpha": alpha, "beta": float(cover.params["beta"]), "epsilon": float(cover.params["epsilon"]),
        "xi": float(xi), "xi_min": float(cover.params["xi_min"]), "K": cover.params.get("K"),
        "omega": 0.0, "M": M, "delta": float(delta) if delta is not None else None,
        "delta_prev": float(delta_prev),
        "mesh": float(mesh(cover)), "mesh_U": float(mesh(cover, ["U"])), "mesh_V": float(mesh(cover, ["V"])),
        "mesh_W": float(mesh(cover, ["W"])),
        "order": closure_order(cover)[0], "order_UV": closure_order(cover.restricted("U", "V"))[0],
        "sets": {t: len(cover.tagged(t)) for t in "UVW"},
    }
    st = StageResult(i, list(family.stages[i - 1]), Dp, keys, segs, cover, nv, cx, ps, constants=consts)
    if prev is not None:
        st.phi = phi(nv, prev.nerve, prev.psi)
    return st


def embed_first(stage: StageResult, config: PipelineConfig) -> NerveEmbedding:
    """Generic vertex placement in a ball small enough for every simplex to be short,
    then every edge zigzagged out to its exact metric length."""
    cx = stage.metric
    p, q = config.pos_dim, config.neg_dim
    labels = cx.vertices
    rng = np.random.default_rng(config.seed)
    P = rng.normal(size=(len(labels), config.place_dim))
    P /= np.linalg.norm(P, axis=1).max()
    lengths = [cx.value(a, b) for a, b in cx.edges]
    r = min(lengths) / 2
    for _ in range(80):
        images = {}
        for lab, row in zip(labels, P):
            x = np.zeros(p + q)
            x[: config.place_dim] = r * row
            images[lab] = x
        cert = certify(cx, images, p)
        if not cert["failed"]:
            break
        r /= 2
    else:
        raise RuntimeError("could not place the stage-1 vertices shortly")
    emb = NerveEmbedding(p, q, images)
    zig = config.place_dim
    for a, b in cx.edges:
        g = cx.value(a, b)
        A, B = MinkVec(images[a][:p], images[a][p:]), MinkVec(images[b][:p], images[b][p:])
        chord = float(np.linalg.norm(images[a] - images[b]))
        if chord > g * (1 + 1e-12):
            raise RuntimeError(f"edge {a}-{b} is longer than its metric length")
        coarse = stage.cover.by_label[a].tag == "W" or stage.cover.by_label[b].tag == "W"
        eps = r if coarse else r / 4
        pts = euclid_zigzag([A, B], g, eps, coordinate=zig)
        arr = np.array([v.as_array() for v in pts])
        emb.set_polyline(a, b, arr, _scaled_cum(arr, p, g))
    stage.h = emb
    stage.constants["placement_radius"] = r
    stage.certificates = {"vertex_affine": _cert_summary(cert), "repaired_edges": 0}
    return emb


def _scaled_cum(arr, p, target):
    cum = polyline_cum(arr, p)
    if cum[-1] > 0:
        cum = cum * (target / cum[-1])
    return cum


def _cert_summary(cert: dict) -> dict:
    return {"checked": cert["checked"], "failed": len(cert["failed"]),
            "failed_examples": [list(s) for s in cert["failed"][:5]], "min_margin": cert["min_margin"]}


def rho_schedule(prev: StageResult, next_xi: float, config: PipelineConfig, separation: float | None) -> dict:
    """rho = min(cap, separation bound, perturbation bound); all three are returned."""
    cap = config.rho_cap if config.rho_cap is not None else next_xi / 4
    sep_bound = separation / 4 if separation else math.inf
    e_min = min((_path_length(prev.cover.graph.space, s) for s in prev.segments), default=1.0)
    lam = ENERGY_TOL * e_min
    C2 = perturbation_constant(2.0, 8, 0.0, 1.0)
    delta_bound = math.sqrt(lam / (2 * C2))
    return {"rho": min(cap, sep_bound, delta_bound), "cap": cap, "separation_bound": sep_bound,
            "perturbation_bound": delta_bound}


def embed_next(prev: StageResult, nxt: StageResult, rho: float, config: PipelineConfig) -> NerveEmbedding:
    """h_next: h_prev o phi at the vertices, persisting sub-polylines, repaired new edges."""
    p, q = config.pos_dim, config.neg_dim
    ph = nxt.phi
    rng = np.random.default_rng(config.seed + nxt.index)
    images = {}
    for lab in nxt.metric.vertices:
        x = prev.h.at(ph[lab])
        if ph.kinds[lab] == "barycenter":
            d = rng.normal(size=config.place_dim)
            d *= rho / 2 * rng.uniform(0.5, 1.0) / np.linalg.norm(d)
            x = x.copy()
            x[: config.place_dim] += d
        images[lab] = x
    emb = NerveEmbedding(p, q, images)
    cover = nxt.cover
    prev_by_edges = [(set(k for k, _ in l.segment.edges), l) for l in prev.cover.layouts]
    chain_edges = {}
    for lay in cover.layouts:
        nodes = chain_nodes(lay, "distance")
        for (sa, A), (sb, B) in zip(nodes, nodes[1:]):
            chain_edges[(A, B)] = (lay, sa, sb)
    wiggled, zigzagged, persisted = [], 0, 0
    required = [0.0]
    M_next = config.M_growth * prev.constants["M"]
    cx = nxt.metric
    high: dict = {}
    for s in cx.maximal_simplices():
        if len(s) >= 3:
            for e in itertools.combinations(s, 2):
                high.setdefault(frozenset(e), []).append(s)

    for (A, B), (lay, sa, sb) in chain_edges.items():
        g = cx.value(A, B)
        if lay.persisting:
            arr = _persisting_piece(prev, prev_by_edges, lay, sa, sb)
            arr[0], arr[-1] = images[A], images[B]
            emb.set_polyline(A, B, arr, _scaled_cum(arr, p, g))
            persisted += 1
            continue
        a, b = images[A], images[B]
        chord = float(np.linalg.norm(a - b))
        MA, MB = MinkVec(a[:p], a[p:]), MinkVec(b[:p], b[p:])
        if chord > g * (1 + 1e-12):
            star = high.get(frozenset((A, B)), [])
            if star:
                verts = sorted({v for s in star for v in s}, key=cx.order.get)
                sub = MetricComplex(verts, star, {k: cx.edge_metric[k] for k in cx.edge_metric if k <= set(verts)})
                res = lorentz_wiggle(PLMap({v: MinkVec(images[v][:p], images[v][p:]) for v in verts}), (A, B),
                                     g, rho / 2, complex=sub, compute_M=True)
                pts = [res.new_map[w] for w in res.chain]
                if res.chain[0] != A:
                    pts = pts[::-1]
                required.append(res.M_required)
            else:
                pts, N, lift, vbar = wiggle_points(MA, MB, g, rho / 2)
            arr = np.array([v.as_array() for v in pts])
            wiggled.append((A, B, len(pts) - 1))
        else:
            pts = euclid_zigzag([MA, MB], g, rho / 2, coordinate=config.place_dim + 1)
            arr = np.array([v.as_array() for v in pts])
            zigzagged += 1
        emb.set_polyline(A, B, arr, _scaled_cum(arr, p, g))

    M_final = max(M_next, max(required))
    if M_final != nxt.constants["M"]:
        nxt.metric = metrize_nerve(nxt.nerve, M_final, 0.0, "distance", stage=nxt.index)
        cx = nxt.metric
    nxt.constants["M"] = M_final
    nxt.constants["M_required"] = max(required)
    chain_keys = set(chain_edges) | {(b, a) for a, b in chain_edges}
    # off-chain edges never carry a geodesic, so a coarse amplitude is enough
    coarse = max(rho, prev.constants.get("offchain_amplitude", prev.constants.get("placement_radius", rho)))
    nxt.constants["offchain_amplitude"] = coarse
    for a, b in cx.edges:
        if (a, b) in chain_keys:
            continue
        g = cx.value(a, b)
        xa, xb = images[a], images[b]
        chord = float(np.linalg.norm(xa - xb))
        if chord > g * (1 + 1e-12):
            raise RuntimeError(f"shortness certificate failure on edge {a}-{b}")
        pts = euclid_zigzag([MinkVec(xa[:p], xa[p:]), MinkVec(xb[:p], xb[p:])], g, coarse,
                            coordinate=config.place_dim + 1)
        arr = np.array([v.as_array() for v in pts])
        emb.set_polyline(a, b, arr, _scaled_cum(arr, p, g))

    # certificates: vertex-affine where no edge was repaired, subdivided stars otherwise
    repaired = {frozenset((a, b)) for a, b, _ in wiggled}
    plain = [s for s in cx.maximal_simplices() if not any(frozenset(e) in repaired for e in itertools.combinations(s, 2))]
    cert = certify(cx, images, p, plain)
    sub_fail = 0
    for a, b, n in wiggled:
        pts, cum = emb.edge(a, b)
        d = np.diff(pts, axis=0)
        q2 = np.sum(d[:, :p] ** 2, axis=1) - np.sum(d[:, p:] ** 2, axis=1)
        target = (cx.value(a, b) / n) ** 2
        # differences of coordinates of size `scale` carry rounding of about eps * scale each
        scale = float(np.abs(pts).max())
        slack = 4 * np.finfo(float).eps * scale * np.sum(np.abs(d), axis=1)
        if np.any(q2 > target * (1 + 1e-12) + slack):
            sub_fail += 1
    nxt.h = emb
    nxt.certificates = {
        "vertex_affine": _cert_summary(cert),
        "repaired_edges": len(wiggled),
        "repaired_subedge_failures": sub_fail,
        "repaired_star_M": max(required),
        "zigzag_edges": zigzagged,
        "persisting_edges": persisted,
        "max_subdivision": max((n for _, _, n in wiggled), default=0),
    }
    return emb


def _persisting_piece(prev: StageResult, prev_by_edges, lay, sa, sb) -> np.ndarray:
    """f_prev on the arc [sa, sb] of a segment lying on a previous segment."""
    seg = lay.segment
    edges = {k for k, _ in seg.edges}
    old = next(l for es, l in prev_by_edges if edges <= es)
    t_old, P_old = prev.layout_curve(old)
    a_old = float(old.segment.arc_of(seg.locate(sa)))
    b_old = float(old.segment.arc_of(seg.locate(sb)))
    lo, hi = min(a_old, b_old), max(a_old, b_old)
    tol = 1e-12 * max(1.0, float(t_old[-1]))
    i0 = np.searchsorted(t_old, lo + tol, side="right")
    i1 = np.searchsorted(t_old, hi - tol, side="left")
    ends = kernels.polyline_at(t_old, P_old, np.array([lo, hi]))
    arr = np.vstack([ends[:1], P_old[i0:i1], ends[1:]])
    return arr if a_old <= b_old else arr[::-1].copy()


# ----- verification ----------------------------------------------------------------------------


def sample_sites(space: FiniteLengthSpace, step: float) -> list:
    sites = list(space.points)
    for k, (_, _, w) in enumerate(space.edges):
        n = max(1, int(math.ceil(w / step)))
        sites.extend((k, w * j / n) for j in range(1, n))
    return sites


def energy_audit(stage: StageResult, family: GeodesicFamily, space: FiniteLengthSpace) -> dict:
    """Relative energy error of f along each geodesic and all its midpoint-to-midpoint pieces."""
    p = stage.h.p
    out = {}
    for key in stage.geodesics:
        path = family.paths[key]
        ts, P, nodes = stage.geodesic_curve(path)
        E, _, _ = pl_energy_arrays(ts, P[:, :p], P[:, p:])
        L = float(_path_length(space, path))
        # prefix energies at the midpoints give every sub-geodesic between two of them
        dt = np.diff(ts)
        d = np.diff(P, axis=0)
        piece = (np.sum(d[:, :p] ** 2, axis=1) - np.sum(d[:, p:] ** 2, axis=1)) / dt
        prefix = np.concatenate([[0.0], np.cumsum(piece)])
        idx = np.searchsorted(ts, nodes)
        idx = np.clip(idx, 0, len(ts) - 1)
        err_nodes = np.abs(ts[idx] - nodes)
        pe = prefix[idx] - nodes
        worst = 0.0
        chunk = 512
        for s in range(0, len(nodes), chunk):
            diff = np.abs(pe[s:s + chunk, None] - pe[None, :])
            span = nodes[None, :] - nodes[s:s + chunk, None]
            mask = span > 0
            if mask.any():
                worst = max(worst, float((diff[mask] / span[mask]).max()))
        out["-".join(key)] = {"energy": E, "expected": L, "rel_error": abs(E - L) / L,
                              "sub_geodesics": int(len(nodes) * (len(nodes) - 1) // 2),
                              "sub_rel_error": worst, "node_misalignment": float(err_nodes.max(initial=0.0))}
    return out


def collision_search(stage: StageResult, space: FiniteLengthSpace, delta0: float, step: float,
                     thresholds=(1.0, 0.5, 0.25, 0.125), k: int = 24) -> dict:
    sites = sample_sites(space, step)
    X = np.array([stage.f(s) for s in sites])
    tree = cKDTree(X)
    pairs = tree.query_pairs(1e-12)
    collisions = [(sites[i], sites[j]) for i, j in pairs if space.distance(sites[i], sites[j]) >= delta0]
    kk = min(k, len(sites))
    dist, idx = tree.query(X, k=kk)
    table = {}
    for thr in thresholds:
        best = math.inf
        for i in range(len(sites)):
            found = False
            for dd, j in zip(dist[i][1:], idx[i][1:]):
                if space.distance(sites[i], sites[j]) >= thr:
                    best = min(best, dd)
                    found = True
                    break
            if not found:
                best = min(best, dist[i][-1])
        table[str(thr)] = float(best)
    return {"samples": len(sites), "collisions_beyond_delta0": [[_site(a), _site(b)] for a, b in collisions],
            "min_separation": table}


def _site(s):
    return s if isinstance(s, str) else [s[0], float(s[1])]


def transverse_edge(space: FiniteLengthSpace, family: GeodesicFamily, stage: int) -> int | None:
    used = image_intervals(space, [family.paths[k] for k in family.keys(stage)])
    free = [k for k in range(len(space.edges)) if k not in used]
    return free[-1] if free else None


def transverse_energy(stage: StageResult, edge: int, samples: int) -> float:
    """Energy of f along the outer half of an edge, parameterized on [0, 1]."""
    space = stage.cover.graph.space
    w = space.edges[edge][2]
    ts = np.linspace(0.0, 1.0, samples)
    P = np.array([stage.f((edge, w * (0.5 + 0.5 * t))) for t in ts])
    p = stage.h.p
    return pl_energy_arrays(ts, P[:, :p], P[:, p:])[0]


def negative_coordinate_audit(a: StageResult, b: StageResult, family: GeodesicFamily) -> dict:
    """Compare the negative block of f_a and f_b on points of im(Γ_a)."""
    space = a.cover.graph.space
    sites = []
    for key in a.geodesics:
        path = family.paths[key]
        for u, v in zip(path, path[1:]):
            k = space.edge_between(u, v)
            w = space.edges[k][2]
            sites.append(u)
            sites.extend((k, w * j / 37) for j in range(1, 37))
        sites.append(path[-1])
    p = a.h.p
    diffs = [float(np.max(np.abs(a.f(s)[p:] - b.f(s)[p:]), initial=0.0)) for s in sites]
    return {"points": len(sites), "max_difference": max(diffs), "identical": all(d == 0.0 for d in diffs)}


def verify(space: FiniteLengthSpace, family: GeodesicFamily, stages: Sequence[StageResult],
           config: PipelineConfig) -> dict:
    report: dict = {"stages": {}}
    for st in stages:
        cons = st.constants
        chain_ok = cons["epsilon"] < cons["beta"] < cons["alpha"] < cons["delta_prev"] / 3
        rep = {
            "energy": energy_audit(st, family, space),
            "certificates": st.certificates,
            "constant_chain": chain_ok,
            "order": cons["order"], "order_UV": cons["order_UV"],
        }
        rep["max_rel_energy_error"] = max((max(v["rel_error"], v["sub_rel_error"]) for v in rep["energy"].values()),
                                          default=0.0)
        report["stages"][str(st.index)] = rep
    first = stages[0]
    report["collisions"] = collision_search(first, space, config.delta0, config.sample_step)
    if len(stages) >= 2:
        report["negative_coordinate"] = negative_coordinate_audit(stages[0], stages[1], family)
        edge = config.transverse_edge
        if edge is None:
            edge = transverse_edge(space, family, stages[-1].index)
        if edge is not None:
            energies = [transverse_energy(st, edge, config.transverse_samples) for st in stages]
            report["transverse"] = {"edge": edge, "energies": energies,
                                    "ratios": [b / a for a, b in zip(energies, energies[1:])]}
        report["rho"] = {str(st.index): st.constants.get("rho_bounds") for st in stages[1:]}
    report["ok"] = certificates_ok(report)
    return report


def certificates_ok(report: dict) -> bool:
    for rep in report["stages"].values():
        c = rep["certificates"]
        if c["vertex_affine"]["failed"] or c.get("repaired_subedge_failures", 0):
            return False
        if rep["max_rel_energy_error"] >= ENERGY_TOL or not rep["constant_chain"]:
            return False
    if report.get("collisions", {}).get("collisions_beyond_delta0"):
        return False
    neg = report.get("negative_coordinate")
    if neg is not None and not neg["identical"]:
        return False
    return True


# ----- driver ----------------------------------------------------------------------------------


def embed(space: FiniteLengthSpace, point_stages: Sequence[Sequence[str]], config: PipelineConfig | None = None):
    """Build every stage and verify; returns (stages, family, report)."""
    config = config or PipelineConfig()
    stages_in = [list(s) for s in point_stages][: config.stages]
    family = GeodesicFamily.build(space, stages_in)
    results: list[StageResult] = []
    separation = None
    for i in range(1, len(stages_in) + 1):
        prev = results[-1] if results else None
        st = build_stage(space, family, i, prev, config)
        if prev is None:
            embed_first(st, config)
            sep = collision_search(st, space, config.delta0, config.sample_step, thresholds=(0.5,))
            separation = sep["min_separation"]["0.5"]
        else:
            bounds = rho_schedule(prev, st.constants["xi_min"], config, separation)
            st.constants["rho"] = bounds["rho"]
            st.constants["rho_bounds"] = bounds
            embed_next(prev, st, bounds["rho"], config)
        results.append(st)
    report = verify(space, family, results, config)
    return results, family, report


def result_json(stages: Sequence[StageResult], report: dict, space: FiniteLengthSpace | None = None,
                point_stages=None, config: PipelineConfig | None = None) -> dict:
    out = {}
    for st in stages:
        cons = {k: v for k, v in st.constants.items()}
        out[f"stage_{st.index}"] = {
            "constants": cons,
            "vertex_coords": st.h.vertex_coords_json(),
            "report": report["stages"][str(st.index)],
        }
    out["report"] = {k: v for k, v in report.items() if k != "stages"}
    if space is not None:
        out["input"] = {"space": space.to_json(), "points": point_stages,
                        "config": config.to_json() if config else None}
    return out
