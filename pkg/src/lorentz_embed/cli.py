"""Command line entry point: ``lorentz-embed <command> ...``.

Every command writes JSON to stdout (or ``--out``).  ``embed`` and ``verify``
exit with status 1 when any certificate in the report fails.
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cover_nerve import cover_stats, nerve_distance
from .metric_core import FiniteLengthSpace, Geodesic, ParamPath, path_energy
from .minkowski import MinkVec, mink_pairing
from .pipeline import (GeodesicFamily, PipelineConfig, build_stage, certificates_ok, embed,
                       result_json)
from .wiggle import wiggle_points


def _load(path: str):
    with open(path) as fh:
        return json.load(fh)


def point_stages(doc, stages: int | None = None) -> list[list[str]]:
    """Point sets per stage.

    ``{"stages": [[...], ...]}`` is taken as given.  A flat list of n points
    gives the last of k stages all of them and each earlier stage one point
    fewer, so ``["a", "b", "p"]`` with k = 2 means ``[a, b]`` then ``[a, b, p]``.
    """
    if isinstance(doc, dict):
        out = [list(map(str, s)) for s in doc["stages"]]
        return out[:stages] if stages is not None else out
    pts = [str(p) for p in doc]
    k = 1 if stages is None else stages
    if len(pts) - k + 1 < 2:
        raise SystemExit(f"{len(pts)} points cannot fill {k} stages (the first stage needs two)")
    return [pts[: len(pts) - k + i] for i in range(1, k + 1)]


def _dump(obj, out: str | None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    return str(x)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "stages", None):
        cfg.stages = args.stages
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "delta0", None) is not None:
        cfg.delta0 = args.delta0
    return cfg


def cmd_embed(args) -> int:
    space = FiniteLengthSpace.from_json(_load(args.space))
    cfg = _config(args)
    stages = point_stages(_load(args.points), cfg.stages)
    t0 = time.perf_counter()
    results, _, report = embed(space, stages, cfg)
    doc = result_json(results, report, space, stages, cfg)
    doc["report"]["seconds"] = time.perf_counter() - t0
    _dump(doc, args.out)
    if args.out:
        print(f"{'ok' if report['ok'] else 'FAILED'}: {len(results)} stage(s) written to {args.out}", file=sys.stderr)
    return 0 if report["ok"] else 1


def cmd_verify(args) -> int:
    doc = _load(args.result)
    stages = {k: v for k, v in doc.items() if k.startswith("stage_")}
    report = dict(doc.get("report", {}))
    report["stages"] = {k.split("_", 1)[1]: v["report"] for k, v in stages.items()}
    ok = certificates_ok(report)
    summary = {"stages": len(stages), "ok": ok}
    if args.rebuild:
        inp = doc.get("input")
        if not inp:
            raise SystemExit("result has no recorded input to rebuild from")
        space = FiniteLengthSpace.from_json(inp["space"])
        cfg = PipelineConfig(**inp["config"])
        results, _, fresh = embed(space, inp["points"], cfg)
        drift = 0.0
        for st in results:
            old = stages[f"stage_{st.index}"]["vertex_coords"]
            for lab, x in st.h.vertex_coords_json().items():
                o = old[lab]
                drift = max(drift, float(np.max(np.abs(np.r_[x["pos"], x["neg"]] - np.r_[o["pos"], o["neg"]]))))
        summary["rebuild"] = {"ok": fresh["ok"], "max_vertex_drift": drift}
        ok = ok and fresh["ok"]
        summary["ok"] = ok
    for k, v in report["stages"].items():
        summary[f"stage_{k}"] = {"max_rel_energy_error": v["max_rel_energy_error"],
                                 "certificates": v["certificates"]}
    _dump(summary, None)
    return 0 if ok else 1


def cmd_energy(args) -> int:
    space = FiniteLengthSpace.from_json(_load(args.space))
    if args.path:
        path = ParamPath.from_json(space, _load(args.path))
        ns = [int(n) for n in args.n.split(",")]
        out = {"energies": {str(n): path_energy(path, n=n) for n in ns}}
    else:
        if not (args.source and args.target):
            raise SystemExit("give --path, or --from and --to")
        duration = args.duration if args.duration else None
        geo = Geodesic.between(space, args.source, args.target, 0.0, duration)
        d = space.distance(args.source, args.target)
        out = {"distance": d, "velocity": geo.velocity, "domain": [geo.path.a, geo.path.b],
               "energy": path_energy(geo.path, n=int(args.n.split(",")[-1])),
               "closed_form": d * d / (geo.path.b - geo.path.a)}
    _dump(out, args.out)
    return 0


def cmd_wiggle(args) -> int:
    a = MinkVec(np.zeros(args.dim), np.zeros(1))
    b = MinkVec(np.r_[args.beta, np.zeros(args.dim - 1)], np.zeros(1))
    pts, N, lift, vbar = wiggle_points(a, b, args.alpha, args.epsilon)
    sub = [mink_pairing(q - p, q - p) for p, q in zip(pts, pts[1:])]
    disp = max(float(np.linalg.norm((p - (a + (b - a) * (i / N))).as_array())) for i, p in enumerate(pts))
    out = {"N": N, "target_subedge_energy": (args.alpha / N) ** 2,
           "subedge_energy": {"min": min(sub), "max": max(sub)}, "sup_displacement": disp,
           "points": [p.as_array().tolist() for p in pts] if args.points else None}
    _dump(out, args.out)
    return 0


def _stage_one(args):
    space = FiniteLengthSpace.from_json(_load(args.space))
    cfg = _config(args)
    stages = point_stages(_load(args.points), getattr(args, "stages", None))
    family = GeodesicFamily.build(space, stages)
    return space, cfg, stages, family


def cmd_cover(args) -> int:
    space, cfg, stages, family = _stage_one(args)
    out, prev = {}, None
    for i in range(1, len(stages) + 1):
        st = build_stage(space, family, i, prev, cfg)
        order, width, lebesgue = cover_stats(st.cover)
        stats = {"order": order, "mesh": float(width), "lebesgue": None if lebesgue is None else float(lebesgue)}
        out[f"stage_{i}"] = {"constants": st.constants, "stats": stats}
        if args.sets:
            out[f"stage_{i}"]["sets"] = st.cover.to_json()
        prev = st
    _dump(out, args.out)
    return 0


def cmd_nerve(args) -> int:
    space, cfg, stages, family = _stage_one(args)
    st = build_stage(space, family, 1, None, cfg)
    cx = st.metric
    dims: dict[int, int] = {}
    for s in cx.maximal_simplices():
        dims[len(s) - 1] = dims.get(len(s) - 1, 0) + 1
    pairs = {}
    for x, y in itertools.combinations(stages[0], 2):
        L, _, stats = nerve_distance(cx, f"U:{x}", f"U:{y}", return_stats=True)
        pairs[f"{x}-{y}"] = {"nerve_distance": L, "space_distance": space.distance(x, y), **stats}
    out = {"stats": {"vertices": len(cx.vertices), "edges": len(cx.edges), "maximal_simplices": dims,
                     "dimension": max(dims, default=0)},
           "pairs": pairs, "M": st.constants["M"]}
    _dump(out, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lorentz-embed", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="build and verify a staged embedding")
    p.add_argument("--space", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--seed", type=int)
    p.add_argument("--delta0", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("verify", help="re-check the certificates recorded in a result file")
    p.add_argument("--result", required=True)
    p.add_argument("--rebuild", action="store_true", help="rerun the pipeline from the recorded input")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("energy", help="path energy on a metric graph")
    p.add_argument("--space", required=True)
    p.add_argument("--path", help="ParamPath JSON with samples [[t, site], ...]")
    p.add_argument("--from", dest="source")
    p.add_argument("--to", dest="target")
    p.add_argument("--duration", type=float)
    p.add_argument("--n", default="1", help="comma separated subdivision counts")
    p.add_argument("--out")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("wiggle", help="subdivide and wiggle one straight edge")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--points", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_wiggle)

    for name, fn, text in (("cover", cmd_cover, "cover constants and statistics per stage"),
                           ("nerve", cmd_nerve, "stage-one nerve statistics and point distances")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--space", required=True)
        p.add_argument("--points", required=True)
        p.add_argument("--stages", type=int, default=1)
        p.add_argument("--delta0", type=float)
        p.add_argument("--out")
        if name == "cover":
            p.add_argument("--sets", action="store_true", help="include every open set")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
