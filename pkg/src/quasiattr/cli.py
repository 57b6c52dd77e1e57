"""Scenario-driven command line: validate, run, render, cache."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from . import __version__
from .conley import (CSV_FIELDS, attracting_morse_sets, attractor_evidence, basin_boxes, condense,
                     refine_loop, _as_depth)
from .geometry import BoxSet, keys_to_centers
from .hyperbolicity import (ConeField, DominationCertificate, check_cone_invariance, check_domination,
                            expansion_constant)
from .models.base import ConstructionError
from .models.zoo import build_model
from .orbits import (find_periodic, find_tangencies, lamination_curves, tangency_field,
                     tangency_neighborhood)
from .transition import EnclosureConfig, TransitionGraph, build_graph

log = logging.getLogger("quasiattr")

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 2, 3
STAGES = ("graph", "morse", "refine", "cones", "domination", "periodic", "tangency", "evidence")
# each entry is a list of alternatives; one of them must run earlier in the pipeline
REQUIRES = {
    "morse": [("graph",)],
    "evidence": [("morse",)],
    "cones": [("refine", "morse")],
    "domination": [("refine", "morse")],
}
STAGE_OPTIONS = {
    "graph": {"depth"},
    "morse": set(),
    "refine": {"budget"},
    "cones": {"alpha", "axes", "ell", "samples", "fan"},
    "domination": {"dims", "N", "samples"},
    "periodic": {"seeds", "period", "tol"},
    "tangency": {"phi_steps", "sigma_length", "h_max", "field_depth", "field_n", "domination_N"},
    "evidence": set(),
}
SCENARIO_KEYS = {"name", "model", "pipeline", "enclosure", "depths", "output", "seed", "stages"}


class ScenarioError(ValueError):
    """A scenario that violates a precondition (exit code 2)."""


def default_cache_dir() -> Path:
    env = os.environ.get("QUASIATTR_CACHE")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "quasiattr"


@dataclass
class Scenario:
    model: dict
    pipeline: list
    enclosure: dict = field(default_factory=dict)
    depths: list = field(default_factory=lambda: [3])
    output: str = "out"
    seed: int = 0
    stages: dict = field(default_factory=dict)
    name: str = "scenario"

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a mapping")
        extra = set(d) - SCENARIO_KEYS
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        for key in ("model", "pipeline"):
            if key not in d:
                raise ScenarioError(f"scenario needs '{key}'")
        kw = {k: d[k] for k in SCENARIO_KEYS if k in d and d[k] is not None}
        return cls(**kw)

    def to_json(self) -> dict:
        return {"name": self.name, "model": self.model, "pipeline": list(self.pipeline),
                "enclosure": self.enclosure, "depths": self.depths, "output": self.output,
                "seed": self.seed, "stages": self.stages}


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)  # JSON files parse too
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario is not valid YAML/JSON: {exc}") from exc
    return Scenario.from_dict(data)


def validate(sc: Scenario):
    """Check structure and model preconditions; returns (model, enclosure config)."""
    if not isinstance(sc.pipeline, list) or not sc.pipeline:
        raise ScenarioError("pipeline must be a non-empty list of stages")
    seen = []
    for st in sc.pipeline:
        if st not in STAGES:
            raise ScenarioError(f"unknown stage {st!r}; known: {list(STAGES)}")
        if st in seen:
            raise ScenarioError(f"stage {st!r} listed twice")
        for alts in REQUIRES.get(st, []):
            if not any(a in seen for a in alts):
                raise ScenarioError(f"stage {st!r} requires {' or '.join(alts)} earlier in the pipeline")
        seen.append(st)
    if not isinstance(sc.stages, dict):
        raise ScenarioError("stages must be a mapping")
    for st, opts in sc.stages.items():
        if st not in STAGES:
            raise ScenarioError(f"options for unknown stage {st!r}")
        bad = set(opts or {}) - STAGE_OPTIONS[st]
        if bad:
            raise ScenarioError(f"unknown options for stage {st!r}: {sorted(bad)}")
    if not isinstance(sc.seed, int) or isinstance(sc.seed, bool) or not 0 <= sc.seed < 2 ** 64:
        raise ScenarioError("seed must be an integer in [0, 2^64)")
    if not isinstance(sc.depths, list) or not sc.depths:
        raise ScenarioError("depths must be a non-empty list")
    try:
        model = build_model(sc.model)
    except ConstructionError as exc:
        raise ScenarioError(f"model precondition failed: {exc}") from exc
    except TypeError as exc:
        raise ScenarioError(f"bad model parameters: {exc}") from exc
    try:
        depths = [_as_depth(d, model.domain.dim) for d in sc.depths]
    except Exception as exc:
        raise ScenarioError(f"bad depth schedule: {exc}") from exc
    if any(sum(d) > 62 for d in depths):
        raise ScenarioError("total depth exceeds 62 bits")
    if any(np.any(np.asarray(b) < np.asarray(a)) for a, b in zip(depths, depths[1:])):
        raise ScenarioError("depth schedule must be non-decreasing")
    try:
        cfg = EnclosureConfig(**(sc.enclosure or {}))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad enclosure config: {exc}") from exc
    if "tangency" in sc.pipeline and getattr(model, "disk_model", None) is None:
        raise ScenarioError("tangency stage needs a realized disk-map model")
    return model, cfg


# ---------------------------------------------------------------- artifacts

def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_default, allow_nan=False) + "\n"


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class Context:
    sc: Scenario
    model: object
    cfg: EnclosureConfig
    out: Path
    workers: int
    cache: Path
    results: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    cache_hit: Optional[bool] = None

    def opts(self, stage: str) -> dict:
        return dict(self.sc.stages.get(stage) or {})

    def write_json(self, name: str, obj) -> None:
        p = self.out / name
        p.write_text(dumps(obj))
        self.files.append(p)

    def write_text(self, name: str, text: str) -> None:
        p = self.out / name
        p.write_text(text)
        self.files.append(p)

    def region(self) -> BoxSet:
        if "refine" in self.results:
            reg = self.results["refine"].union(-1)
        else:
            md = self.results["morse"]
            sets = attracting_morse_sets(md)
            reg = sets[0] if sets else None
            for s in sets[1:]:
                reg = reg.union(s)
        if reg is None or len(reg) == 0:
            raise RuntimeError("no attracting boxes to test")
        return reg


def graph_cache_key(model, boxes: BoxSet, cfg: EnclosureConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(getattr(model, "spec", {"name": model.name}), sort_keys=True).encode())
    h.update(json.dumps(cfg.to_json(), sort_keys=True).encode())
    h.update(json.dumps([boxes.chart.id, list(boxes.depth)]).encode())
    h.update(np.ascontiguousarray(boxes.codes, dtype="<i8").tobytes())
    return h.hexdigest()


def stage_graph(ctx: Context) -> None:
    o = ctx.opts("graph")
    depth = _as_depth(o.get("depth", ctx.sc.depths[0]), ctx.model.domain.dim)
    boxes = BoxSet.full(ctx.model.domain, depth)
    key = graph_cache_key(ctx.model, boxes, ctx.cfg)
    path = ctx.cache / f"{key}.qgraph"
    if path.exists():
        g = TransitionGraph.load(path)
        ctx.cache_hit = True
    else:
        g = build_graph(ctx.model, boxes, ctx.cfg, workers=ctx.workers)
        ctx.cache.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        g.save(tmp)
        os.replace(tmp, path)
        ctx.cache_hit = False
    ctx.results["graph"] = g
    ctx.write_json("graph.json", {"cache_key": key, "graph_sha256": g.sha256(), "n_boxes": g.n,
                                  "n_edges": g.n_edges, "n_escape": int(g.escape.sum()),
                                  "depth": list(depth), "chart": boxes.chart.id})


def stage_morse(ctx: Context) -> None:
    md = condense(ctx.results["graph"])
    ctx.results["morse"] = md
    ctx.write_json("morse.json", md.to_json())


def stage_refine(ctx: Context) -> None:
    o = ctx.opts("refine")
    kw = {"budget": int(o["budget"])} if "budget" in o else {}
    ap = refine_loop(ctx.model, ctx.sc.depths, ctx.cfg, workers=ctx.workers, **kw)
    ctx.results["refine"] = ap
    buf = io.StringIO()
    _write_report_csv(ap, buf)
    ctx.write_text("refine.csv", buf.getvalue())
    ctx.write_json("refine.json", ap.to_json(include_time=False))
    ctx.results["refine_seconds"] = [r.seconds for r in ap.reports]
    if ap.partial:
        raise RuntimeError(f"refinement stopped early: {ap.reason}")


def _write_report_csv(ap, fh) -> None:
    rows = [r.row(include_time=False) for r in ap.reports]
    fields = list(rows[0]) if rows else ["depth"]
    w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def stage_cones(ctx: Context) -> None:
    o = ctx.opts("cones")
    dim = ctx.model.domain.dim
    cone = ConeField.axis(dim, o.get("axes", [0]), float(o.get("alpha", 2.0)))
    reg = ctx.region()
    kw = dict(ell=int(o.get("ell", 1)), samples=int(o.get("samples", 2000)), seed=ctx.sc.seed,
              fan=int(o.get("fan", 64)))
    res = check_cone_invariance(ctx.model, reg, cone, **kw)
    lam = expansion_constant(ctx.model, reg, cone, **kw)
    ctx.write_json("cones.json", {"invariance": res.to_json(), "expansion": lam,
                                  "axes": list(o.get("axes", [0])), "region_boxes": len(reg)})


def stage_domination(ctx: Context) -> None:
    o = ctx.opts("domination")
    res = check_domination(ctx.model, ctx.region(), tuple(o.get("dims", (2, 1))), int(o.get("N", 8)),
                           samples=int(o.get("samples", 2000)), seed=ctx.sc.seed)
    kind = "certificate" if isinstance(res, DominationCertificate) else "counterexample"
    ctx.write_json("domination.json", {"result": kind, **res.to_json()})


def stage_periodic(ctx: Context) -> None:
    o = ctx.opts("periodic")
    seeds = o.get("seeds")
    if not seeds:
        dm = getattr(ctx.model, "disk_model", None)
        if dm is None or dm.marked_point is None:
            raise RuntimeError("periodic stage needs 'seeds'")
        seeds = [[0.0, *np.asarray(dm.marked_point, dtype=float).tolist()]]
    out = []
    for s in seeds:
        orb = find_periodic(ctx.model, np.asarray(s, dtype=float), period=int(o.get("period", 1)),
                            tol=float(o.get("tol", 1e-10)))
        out.append(orb.to_json())
    ctx.write_json("periodic.json", {"orbits": out})


def stage_tangency(ctx: Context) -> None:
    o = ctx.opts("tangency")
    m = ctx.model
    curves = lamination_curves(m, phi_steps=int(o.get("phi_steps", 4)),
                               sigma_length=float(o.get("sigma_length", 1e-5)),
                               h_max=float(o.get("h_max", 1e-3)))
    fld = tangency_field(m, depth=int(o.get("field_depth", 6)), n=int(o.get("field_n", 10)))
    rep = find_tangencies(curves, fld)
    dom = []
    N = int(o.get("domination_N", 8))
    for t in rep.quadratic[:1]:
        pts, reg = tangency_neighborhood(m, curves[t.curve], t, N=N, seed=ctx.sc.seed)
        for dims in ((1, 1), (2, 1)):
            r = check_domination(m, reg, dims, N, points=pts)
            dom.append({"dims": list(dims), "result": "certificate" if isinstance(r, DominationCertificate)
                        else "counterexample", **r.to_json()})
    ctx.write_json("tangency.json", {"tangencies": rep.to_json(), "curves": [c.to_json() for c in curves],
                                     "field": {"n": fld.n, "n_boxes": len(fld.region),
                                               "reliable": int(fld.reliable.sum()),
                                               "discontinuous": int(fld.discontinuous.sum())},
                                     "domination": dom})
    ctx.write_text("tangency_curves.csv", curve_rows_csv(curves, rep))


def stage_evidence(ctx: Context) -> None:
    md = ctx.results["morse"]
    g = md.graph
    out = []
    for k in np.flatnonzero(md.attracting):
        M = md.members[k]
        ev = attractor_evidence(g, M, md)
        b = basin_boxes(g, M, md)
        out.append({"morse_set": int(k), "n_boxes": int(len(M)), **ev.to_json(),
                    "basin_definitely": len(b.definitely), "basin_possibly": len(b.possibly)})
    ctx.write_json("evidence.json", {"attracting": out})


STAGE_FUNCS: dict[str, Callable[[Context], None]] = {
    "graph": stage_graph, "morse": stage_morse, "refine": stage_refine, "cones": stage_cones,
    "domination": stage_domination, "periodic": stage_periodic, "tangency": stage_tangency,
    "evidence": stage_evidence,
}


def run(sc: Scenario, workers: int = 1, output: Optional[str] = None, cache: Optional[Path] = None) -> int:
    model, cfg = validate(sc)
    out = Path(output or sc.output)
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("*.FAILED"):
        stale.unlink()
    ctx = Context(sc, model, cfg, out, max(1, int(workers)), cache or default_cache_dir())
    manifest = {"engine": {"name": "quasiattr", "version": __version__},
                "scenario": sc.to_json(), "model": getattr(model, "spec", {}),
                "enclosure": cfg.to_json(), "workers": ctx.workers, "stages": [],
                "started": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    code = EXIT_OK
    for st in sc.pipeline:
        ctx.files, ctx.cache_hit = [], None
        t0 = time.perf_counter()
        entry = {"name": st}
        try:
            log.info("stage %s", st)
            STAGE_FUNCS[st](ctx)
            entry["status"] = "ok"
        except Exception as exc:  # keep partial artifacts, mark the failure
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            marker = out / f"{st}.FAILED"
            marker.write_text(dumps({"stage": st, "error": entry["error"]}))
            ctx.files.append(marker)
            code = EXIT_STAGE
            log.error("stage %s failed: %s", st, entry["error"])
        entry["seconds"] = round(time.perf_counter() - t0, 3)
        if ctx.cache_hit is not None:
            entry["cache"] = "hit" if ctx.cache_hit else "miss"
        if st == "refine" and "refine_seconds" in ctx.results:
            entry["depth_seconds"] = ctx.results["refine_seconds"]
        entry["artifacts"] = [{"path": p.name, "sha256": _sha(p), "bytes": p.stat().st_size} for p in ctx.files]
        manifest["stages"].append(entry)
        if code:
            break
    manifest["exit_code"] = code
    (out / "manifest.json").write_text(dumps(manifest))
    return code


def verify_manifest(out) -> list[str]:
    """Names of artifacts whose content no longer matches the manifest hash."""
    out = Path(out)
    man = json.loads((out / "manifest.json").read_text())
    bad = []
    for st in man["stages"]:
        for a in st["artifacts"]:
            p = out / a["path"]
            if not p.exists() or _sha(p) != a["sha256"]:
                bad.append(a["path"])
    return bad


# ---------------------------------------------------------------- render

def boxes_slice_csv(boxes: BoxSet, dims=(0, 1), slice_dim: Optional[int] = 2, value: float = 0.0) -> str:
    """Rectangles of the boxes meeting the hyperplane x[slice_dim] = value, projected to ``dims``."""
    c, r = keys_to_centers(boxes.chart, boxes.depth, boxes.keys)
    keep = np.ones(len(c), dtype=bool)
    if slice_dim is not None and slice_dim < boxes.chart.dim:
        keep = np.abs(c[:, slice_dim] - value) <= r[:, slice_dim]
    i, j = dims
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}_lo", f"x{i}_hi", f"x{j}_lo", f"x{j}_hi"])
    for cc, rr in zip(c[keep], r[keep]):
        w.writerow([repr(float(cc[i] - rr[i])), repr(float(cc[i] + rr[i])),
                    repr(float(cc[j] - rr[j])), repr(float(cc[j] + rr[j]))])
    return buf.getvalue()


def curve_rows_csv(curves, report) -> str:
    """Polyline rows per curve followed by one marker row per tangency."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = curves[0].local.shape[1] if curves else 0
    w.writerow(["row", "curve", "param"] + [f"x{k}" for k in range(dim)] + [f"local{k}" for k in range(dim)] + ["kind"])
    for ci, c in enumerate(curves):
        for s, p, q in zip(c.param, c.points, c.local):
            w.writerow(["vertex", ci, repr(float(s))] + [repr(float(v)) for v in p] + [repr(float(v)) for v in q] + [""])
    for t in report.tangencies:
        w.writerow(["marker", t.curve, repr(t.param)] + [repr(float(v)) for v in t.point]
                   + [repr(float(v)) for v in t.local] + [t.kind])
    return buf.getvalue()


def _curve_json_csv(obj: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    curves = obj["curves"]
    dim = len(curves[0]["points"][0]) if curves and curves[0]["points"] else 0
    w.writerow(["row", "curve", "param"] + [f"x{k}" for k in range(dim)] + ["kind"])
    for ci, c in enumerate(curves):
        for s, p in zip(c["param"], c["points"]):
            w.writerow(["vertex", ci, repr(float(s))] + [repr(float(v)) for v in p] + [""])
    for t in obj["tangencies"]["tangencies"]:
        w.writerow(["marker", t["curve"], repr(float(t["param"]))] + [repr(float(v)) for v in t["point"]] + [t["kind"]])
    return buf.getvalue()


def _boxset_from_artifact(obj: dict) -> BoxSet:
    if "keys" in obj and "chart" in obj:
        return BoxSet.from_json(obj)
    if "levels" in obj:  # refine.json: union of the finest level
        sets = [BoxSet.from_json(s) for s in obj["levels"][-1]]
    elif "morse_sets" in obj:
        sets = [BoxSet.from_json({"chart": obj["chart"], "depth": obj["depth"], "keys": s["keys"]})
                for s in obj["morse_sets"]]
    else:
        raise ValueError("artifact holds no box set")
    if not sets:
        raise ValueError("artifact holds an empty box set")
    out = sets[0]
    for s in sets[1:]:
        out = out.union(s)
    return out


def render_data(artifact, kind: str, slice_dim: Optional[int] = 2, value: float = 0.0, dims=(0, 1)) -> str:
    path = Path(artifact)
    if not path.exists():
        raise FileNotFoundError(f"unknown artifact {artifact}")
    if kind == "report":
        if path.suffix == ".csv":
            return path.read_text()
        obj = json.loads(path.read_text())
        if "reports" not in obj:
            raise ValueError("artifact holds no refine report")
        rows = obj["reports"]
        buf = io.StringIO()
        fields = [k for k in CSV_FIELDS if rows and k in rows[0]] or ["depth"]
        w = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    obj = json.loads(path.read_text())
    if kind == "boxes2d_slice":
        return boxes_slice_csv(_boxset_from_artifact(obj), dims, slice_dim, value)
    if kind == "curve":
        if "curves" not in obj:
            raise ValueError("artifact holds no curves")
        return _curve_json_csv(obj)
    raise ValueError(f"unknown render kind {kind!r}")


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quasiattr", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("validate", help="check a scenario without running it")
    v.add_argument("--scenario", required=True)

    r = sub.add_parser("run", help="run every stage of a scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--output", default=None, help="output directory (overrides the scenario)")
    r.add_argument("--seed", type=int, default=None, help="U64 seed (overrides the scenario)")
    r.add_argument("--cache-dir", default=None)

    d = sub.add_parser("render", help="plot-ready CSV from an artifact")
    d.add_argument("artifact")
    d.add_argument("--kind", choices=("boxes2d_slice", "curve", "report"), required=True)
    d.add_argument("--slice-dim", type=int, default=2)
    d.add_argument("--slice-value", type=float, default=0.0)
    d.add_argument("--dims", type=int, nargs=2, default=(0, 1))
    d.add_argument("--output", default=None, help="file to write (default stdout)")

    c = sub.add_parser("cache", help="inspect or clear the graph cache")
    c.add_argument("action", choices=("list", "clear"))
    c.add_argument("--cache-dir", default=None)
    return p


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.cmd == "validate":
        try:
            validate(load_scenario(args.scenario))
        except ScenarioError as exc:
            print(f"validation failed: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        print("ok")
        return EXIT_OK
    if args.cmd == "run":
        try:
            sc = load_scenario(args.scenario)
            if args.seed is not None:
                sc.seed = args.seed
            return run(sc, args.workers, args.output, Path(args.cache_dir) if args.cache_dir else None)
        except ScenarioError as exc:
            print(f"validation failed: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
    if args.cmd == "render":
        try:
            text = render_data(args.artifact, args.kind, args.slice_dim, args.slice_value, tuple(args.dims))
        except (OSError, ValueError, KeyError) as exc:
            print(f"render failed: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        if args.output:
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    cache = Path(args.cache_dir) if args.cache_dir else default_cache_dir()
    files = sorted(cache.glob("*.qgraph")) if cache.exists() else []
    if args.action == "list":
        for f in files:
            print(f"{f.stem}\t{f.stat().st_size}")
        return EXIT_OK
    for f in files:
        f.unlink()
    print(f"removed {len(files)} cached graph(s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
