"""Combinatorial Conley theory on transition graphs."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .geometry import Box, BoxSet, DomainError, _encode, boxes_meet_domain
from .transition import EnclosureConfig, TransitionGraph, build_graph

NodeRef = Union[int, Box, Sequence[int]]


# ---------------------------------------------------------------- graph helpers

def _adj(g: TransitionGraph) -> csr_matrix:
    data = np.ones(len(g.indices), dtype=np.int32)
    return csr_matrix((data, g.indices, g.indptr), shape=(g.n, g.n))


def _closure(A: csr_matrix, mask: np.ndarray, block: Optional[np.ndarray] = None) -> np.ndarray:
    """Nodes reachable from ``mask`` (inclusive) along A; ``block`` nodes are reached but not expanded."""
    seen = np.asarray(mask, dtype=bool).copy()
    frontier = seen.copy()
    if block is not None:
        frontier &= ~block
    AT = A.T.tocsr()
    while frontier.any():
        nxt = (AT @ frontier.astype(np.int32)) > 0
        nxt &= ~seen
        seen |= nxt
        frontier = nxt if block is None else nxt & ~block
    return seen


def _node(g: TransitionGraph, b: NodeRef) -> int:
    if isinstance(b, (int, np.integer)):
        i = int(b)
        if not 0 <= i < g.n:
            raise DomainError(f"node {i} out of range")
        return i
    key = b.key if isinstance(b, Box) else tuple(int(k) for k in b)
    if isinstance(b, Box) and tuple(b.depth) != g.boxes.depth:
        raise DomainError("box depth does not match graph depth")
    i = int(g.boxes.index_of(_encode(np.asarray([key], dtype=np.int64), g.boxes.depth))[0])
    if i < 0:
        raise DomainError(f"box {key} is not a node of the graph")
    return i


def _mask(g: TransitionGraph, s: Union[BoxSet, np.ndarray, Iterable[int]]) -> np.ndarray:
    if isinstance(s, BoxSet):
        idx = g.boxes.index_of(s.codes)
        if (idx < 0).any():
            raise DomainError("box set is not contained in the graph")
        m = np.zeros(g.n, dtype=bool)
        m[idx] = True
        return m
    s = np.asarray(s)
    if s.dtype == bool:
        return s.copy()
    m = np.zeros(g.n, dtype=bool)
    m[s.astype(np.int64)] = True
    return m


# ---------------------------------------------------------------- Morse decomposition

@dataclass(frozen=True)
class MorseDecomposition:
    """Recurrent SCCs of a transition graph, ordered by smallest box code.

    ``attracting[k]``: no other Morse set and no escaping node is reachable
    from set k.  ``repelling[k]``: no other Morse set reaches set k.
    """

    graph: TransitionGraph
    labels: np.ndarray            # SCC label per node
    morse_label: np.ndarray       # Morse set index per node, -1 for transient nodes
    members: tuple                # node indices per Morse set
    attracting: np.ndarray
    repelling: np.ndarray
    _edges: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_sets(self) -> int:
        return len(self.members)

    @property
    def sets(self) -> list[BoxSet]:
        return [self.graph.boxes.select(m) for m in self.members]

    def kind(self, k: int) -> str:
        a, r = bool(self.attracting[k]), bool(self.repelling[k])
        if a and r:
            return "attracting+repelling"
        return "attracting" if a else "repelling" if r else "saddle"

    @property
    def recurrent_mask(self) -> np.ndarray:
        return self.morse_label >= 0

    def edges(self) -> list[tuple[int, int]]:
        """Morse-level condensation edges: k -> j when a path leads from set k to set j through transient nodes."""
        if "e" not in self._edges:
            A = _adj(self.graph)
            rec = self.recurrent_mask
            out = []
            for k, mem in enumerate(self.members):
                start = np.zeros(self.graph.n, dtype=bool)
                start[mem] = True
                # step once out of the set, then walk through transient nodes only
                nxt = (A.T.tocsr() @ start.astype(np.int32)) > 0
                nxt &= self.morse_label != k
                reach = _closure(A, nxt, block=rec)
                hit = np.unique(self.morse_label[reach & rec])
                out.extend((k, int(j)) for j in hit if j != k)
            self._edges["e"] = sorted(out)
        return self._edges["e"]

    def to_json(self) -> dict:
        bs = self.graph.boxes
        return {
            "chart": bs.chart.id,
            "depth": list(bs.depth),
            "morse_sets": [{"index": k, "kind": self.kind(k), "n_boxes": int(len(m)),
                            "keys": bs.select(m).keys.tolist()} for k, m in enumerate(self.members)],
            "edges": [list(e) for e in self.edges()],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))


def _reach_flags(S: csr_matrix, flag: np.ndarray) -> np.ndarray:
    """r[c] = some strict successor s of c in the DAG S has flag[s] or r[s]."""
    r = np.zeros(S.shape[0], dtype=bool)
    while True:
        new = (S @ (flag | r).astype(np.int32)) > 0
        if np.array_equal(new, r):
            return r
        r = new


def condense(g: TransitionGraph) -> MorseDecomposition:
    """Strongly connected components, recurrent sets and their classification."""
    n = g.n
    if n == 0:
        e = np.zeros(0, dtype=np.int64)
        return MorseDecomposition(g, e, e, (), np.zeros(0, bool), np.zeros(0, bool))
    A = _adj(g)
    ncomp, lab = connected_components(A, directed=True, connection="strong")
    src, dst = g.edges()
    size = np.bincount(lab, minlength=ncomp)
    loop = np.zeros(ncomp, dtype=bool)
    loop[lab[src[src == dst]]] = True
    recurrent = (size > 1) | loop

    # Morse sets ordered by their smallest node index (= smallest box code)
    first = np.full(ncomp, n, dtype=np.int64)
    np.minimum.at(first, lab, np.arange(n))
    rec_ids = np.flatnonzero(recurrent)
    rec_ids = rec_ids[np.argsort(first[rec_ids], kind="stable")]
    morse_of_comp = np.full(ncomp, -1, dtype=np.int64)
    morse_of_comp[rec_ids] = np.arange(len(rec_ids))
    morse_label = morse_of_comp[lab]
    order = np.argsort(morse_label, kind="stable")
    bounds = np.searchsorted(morse_label[order], np.arange(len(rec_ids) + 1))
    members = tuple(np.sort(order[bounds[k]:bounds[k + 1]]) for k in range(len(rec_ids)))

    cross = lab[src] != lab[dst]
    S = csr_matrix((np.ones(int(cross.sum()), dtype=np.int32), (lab[src[cross]], lab[dst[cross]])),
                   shape=(ncomp, ncomp))
    S.data[:] = 1
    esc = np.zeros(ncomp, dtype=bool)
    esc[lab[g.escape]] = True
    down = _reach_flags(S, recurrent | esc)
    up = _reach_flags(S.T.tocsr(), recurrent)
    attracting = ~(down | esc)[rec_ids]
    repelling = ~up[rec_ids]
    return MorseDecomposition(g, lab.astype(np.int64), morse_label, members, attracting, repelling)


def chain_recurrent_boxes(g: Union[TransitionGraph, MorseDecomposition]) -> BoxSet:
    md = g if isinstance(g, MorseDecomposition) else condense(g)
    return md.graph.boxes.select(md.recurrent_mask)


def attracting_morse_sets(md: MorseDecomposition) -> list[BoxSet]:
    return [md.graph.boxes.select(m) for k, m in enumerate(md.members) if md.attracting[k]]


# ---------------------------------------------------------------- regions

def _offsets(dim: int, radius: int = 1) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    offs = np.array(np.meshgrid(*[r] * dim, indexing="ij")).reshape(dim, -1).T
    return offs[np.abs(offs).sum(axis=1) > 0]


def erosion(s: BoxSet) -> BoxSet:
    """Cells of ``s`` whose whole one-cell neighbourhood lies in ``s`` (chart edges count as outside)."""
    keys = s.keys
    n = 2 ** np.asarray(s.depth, dtype=np.int64)
    ok = np.ones(len(keys), dtype=bool)
    periodic = list(s.chart.periodic_dims)
    for off in _offsets(s.chart.dim):
        k = keys + off
        inside = np.ones(len(k), dtype=bool)
        for d in range(s.chart.dim):
            if d in periodic:
                k[:, d] = np.mod(k[:, d], n[d])
            else:
                inside &= (k[:, d] >= 0) & (k[:, d] < n[d])
        k = np.where(inside[:, None], k, 0)
        ok &= inside & s.contains_codes(_encode(k, s.depth))
    return s.select(ok)


@dataclass(frozen=True)
class AttractingRegion:
    """Forward-invariant box set U whose targets avoid the one-cell boundary layer of U."""

    boxes: BoxSet
    nodes: np.ndarray
    forward_invariant: bool
    collar: bool

    def to_json(self) -> dict:
        return {"chart": self.boxes.chart.id, "depth": list(self.boxes.depth),
                "n_boxes": len(self.boxes), "forward_invariant": self.forward_invariant,
                "collar": self.collar, "keys": self.boxes.keys.tolist()}


def forward_closure(g: TransitionGraph, seed) -> np.ndarray:
    """Boolean mask of nodes reachable from ``seed`` (inclusive)."""
    return _closure(_adj(g), _mask(g, seed))


def _collar_ok(g: TransitionGraph, U: np.ndarray) -> bool:
    inner = erosion(g.boxes.select(U))
    src, dst = g.edges()
    tgt = np.unique(dst[U[src]])
    return bool(inner.contains_codes(g.boxes.codes[tgt]).all())


def find_attracting_region(g: TransitionGraph, seed, grow: int = 2) -> Optional[AttractingRegion]:
    """Forward closure of ``seed``, returned only if it is forward invariant and passes the collar test.

    The outermost cells of a bare closure are usually targets themselves, so
    when the collar test fails the closure is dilated by one cell and closed
    again, up to ``grow`` times.
    """
    A = _adj(g)
    U = _closure(A, _mask(g, seed))
    for k in range(grow + 1):
        if k:
            U = _closure(A, _mask(g, g.boxes.select(U).neighbors(1, within=g.boxes)))
        if g.escape[U].any():
            return None
        if _collar_ok(g, U):
            return AttractingRegion(g.boxes.select(U), np.flatnonzero(U), True, True)
        if U.all():
            return None
    return None


@dataclass(frozen=True)
class Path:
    nodes: list
    boxes: BoxSet

    @property
    def length(self) -> int:
        return len(self.nodes) - 1


@dataclass(frozen=True)
class SeparatingRegion:
    """Forward closure of the start box; it does not contain the target box."""

    boxes: BoxSet
    nodes: np.ndarray
    escapes: bool


def dichotomy(g: TransitionGraph, b1: NodeRef, b2: NodeRef) -> Union[Path, SeparatingRegion]:
    """Shortest path b1 -> b2 if one exists, otherwise the forward closure of b1."""
    i, j = _node(g, b1), _node(g, b2)
    if i == j:
        return Path([i], g.boxes.select([i]))
    order, pred = breadth_first_order(_adj(g), i, directed=True, return_predecessors=True)
    if pred[j] >= 0:
        path = [j]
        while path[-1] != i:
            path.append(int(pred[path[-1]]))
        path = path[::-1]
        return Path(path, g.boxes.select(np.asarray(path)))
    nodes = np.sort(order)
    return SeparatingRegion(g.boxes.select(nodes), nodes, bool(g.escape[nodes].any()))


# ---------------------------------------------------------------- basins and evidence

@dataclass(frozen=True)
class Basin:
    """``definitely``: every terminal class reachable from the box lies in the forward closure of M;
    ``possibly``: the closure of M is reachable at all.

    Terminal classes are the attracting Morse sets, escaping nodes and dead
    ends; transient and saddle-type classes are passed through, as in the
    condensation.
    """

    definitely: BoxSet
    possibly: BoxSet
    definitely_mask: np.ndarray
    possibly_mask: np.ndarray


def basin_boxes(g: TransitionGraph, M, md: Optional[MorseDecomposition] = None) -> Basin:
    md = md or condense(g)
    A = _adj(g)
    T = _closure(A, _mask(g, M))
    AT = A.T.tocsr()
    possibly = _closure(AT, T)
    attracting_node = np.zeros(g.n, dtype=bool)
    for k, mem in enumerate(md.members):
        if md.attracting[k]:
            attracting_node[mem] = True
    dead = np.diff(g.indptr) == 0
    bad = ~T & (attracting_node | g.escape | dead)
    definitely = ~_closure(AT, bad) & possibly
    return Basin(g.boxes.select(definitely), g.boxes.select(possibly), definitely, possibly)


def _box_distance(s: BoxSet, other: BoxSet) -> float:
    """Smallest Chebyshev index distance between cells of two sets (periodic dims wrap)."""
    if len(s) == 0 or len(other) == 0:
        return float("inf")
    from scipy.spatial import cKDTree
    n = 2 ** np.asarray(s.depth, dtype=np.int64)
    size = np.where([d in s.chart.periodic_dims for d in range(s.chart.dim)], n, 4 * n).astype(float)
    tree = cKDTree(other.keys.astype(float), boxsize=size)
    d, _ = tree.query(s.keys.astype(float), k=1, p=np.inf)
    return float(d.min())


@dataclass(frozen=True)
class AttractorEvidence:
    """Finite-resolution diagnostics for one attracting Morse set (not a decision procedure).

    A recurrent class is *foreign* to M when no path leads from it to M;
    classes that drain into M (including closed-face self-loops next to a
    sink) do not count against isolation.
    """

    region_found: bool
    region_size: int
    region_has_foreign: bool
    min_distance_to_other: float
    min_distance_to_foreign: float
    isolated: bool

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        for k in ("min_distance_to_other", "min_distance_to_foreign"):
            if not np.isfinite(d[k]):
                d[k] = None
        return d


def attractor_evidence(g: TransitionGraph, M, md: Optional[MorseDecomposition] = None) -> AttractorEvidence:
    md = md or condense(g)
    mask = _mask(g, M)
    rec = md.recurrent_mask
    reaches_M = _closure(_adj(g).T.tocsr(), mask)
    foreign = rec & ~reaches_M
    reg = find_attracting_region(g, mask)
    has_foreign = reg is not None and bool(foreign[reg.nodes].any())
    here = g.boxes.select(mask)
    d_other = _box_distance(here, g.boxes.select(rec & ~mask))
    d_foreign = _box_distance(here, g.boxes.select(foreign))
    isolated = reg is not None and not has_foreign and d_foreign > 1
    return AttractorEvidence(reg is not None, 0 if reg is None else len(reg.boxes), has_foreign,
                             d_other, d_foreign, isolated)


# ---------------------------------------------------------------- refinement

DEFAULT_BUDGET = 10 ** 7
CSV_FIELDS = ("depth", "n_boxes", "n_morse", "n_attracting", "max_diameter", "n_edges", "seconds")


@dataclass
class DepthReport:
    depth: tuple
    n_boxes: int
    n_morse: int
    n_attracting: int
    max_diameter: float
    n_edges: int
    seconds: float
    graph_sha256: str = ""

    def row(self, include_time: bool = True) -> dict:
        r = {"depth": "x".join(map(str, self.depth)), "n_boxes": self.n_boxes,
             "n_morse": self.n_morse, "n_attracting": self.n_attracting,
             "max_diameter": f"{self.max_diameter:.6g}", "n_edges": self.n_edges}
        if include_time:
            r["seconds"] = f"{self.seconds:.3f}"
        return r


@dataclass
class QuasiAttractorApprox:
    """Attracting Morse sets per depth, each level inside the refined collar of the previous one."""

    levels: list = field(default_factory=list)       # list[list[BoxSet]]
    reports: list = field(default_factory=list)      # list[DepthReport]
    partial: bool = False
    reason: str = ""
    decompositions: list = field(default_factory=list, repr=False)

    @property
    def counts(self) -> list[int]:
        return [len(lv) for lv in self.levels]

    def union(self, i: int = -1) -> Optional[BoxSet]:
        lv = self.levels[i]
        if not lv:
            return None
        out = lv[0]
        for s in lv[1:]:
            out = out.union(s)
        return out

    def is_nested(self) -> bool:
        for i in range(1, len(self.levels)):
            prev, cur = self.union(i - 1), self.union(i)
            if prev is None or cur is None:
                continue
            if not cur.issubset(_lift(prev.neighbors(1), cur.depth)):
                return False
        return True

    def write_csv(self, path, include_time: bool = True) -> None:
        fields = CSV_FIELDS if include_time else CSV_FIELDS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for r in self.reports:
                w.writerow(r.row(include_time))

    def to_json(self, include_time: bool = True) -> dict:
        return {"partial": self.partial, "reason": self.reason,
                "reports": [dict(r.row(include_time), graph_sha256=r.graph_sha256) for r in self.reports],
                "levels": [[s.to_json() for s in lv] for lv in self.levels]}


def _as_depth(d, dim: int) -> tuple:
    if isinstance(d, (int, np.integer)):
        return (int(d),) * dim
    d = tuple(int(x) for x in d)
    if len(d) != dim:
        raise DomainError(f"depth {d} does not match dimension {dim}")
    return d


def _lift(s: BoxSet, depth: tuple) -> BoxSet:
    """Subdivide ``s`` until it reaches ``depth`` (componentwise)."""
    while True:
        dims = [k for k in range(s.chart.dim) if s.depth[k] < depth[k]]
        if not dims:
            break
        s = s.refine(dims)
    if s.depth != tuple(depth):
        raise DomainError(f"cannot refine depth {s.depth} to {depth}")
    if s.chart.disk_groups and len(s):
        c, r = s.centers_radii()
        s = s.select(boxes_meet_domain(s.chart, c, r))
    return s


def refine_loop(m, depth_schedule, cfg: EnclosureConfig = EnclosureConfig(), budget: int = DEFAULT_BUDGET,
                workers: int = 1, csv_path=None, initial: Optional[BoxSet] = None,
                log=None) -> QuasiAttractorApprox:
    """Condense at each depth, keeping only the attracting sets (plus a one-box collar) for the next one."""
    dim = m.domain.dim
    depths = [_as_depth(d, dim) for d in depth_schedule]
    for a, b in zip(depths, depths[1:]):
        if any(y < x for x, y in zip(a, b)) or a == b:
            raise DomainError("depth schedule must be increasing")
    out = QuasiAttractorApprox()
    boxes = initial if initial is not None else BoxSet.full(m.domain, depths[0])
    if boxes.depth != depths[0]:
        boxes = _lift(boxes, depths[0])
    for i, depth in enumerate(depths):
        if i > 0:
            prev = out.union(-1)
            if prev is None:
                out.partial, out.reason = True, f"no attracting set at depth {depths[i - 1]}"
                break
            boxes = _lift(prev.neighbors(1), depth)
        if len(boxes) > budget:
            out.partial, out.reason = True, f"budget exceeded at depth {depth}: {len(boxes)} > {budget} boxes"
            break
        t0 = time.perf_counter()
        g = build_graph(m, boxes, cfg, workers=workers)
        md = condense(g)
        att = attracting_morse_sets(md)
        dt = time.perf_counter() - t0
        rep = DepthReport(depth, len(boxes), md.n_sets, len(att),
                          max((s.diameter() for s in att), default=0.0), g.n_edges, dt, g.sha256())
        out.levels.append(att)
        out.reports.append(rep)
        out.decompositions.append(md)
        if log is not None:
            log(rep)
    if csv_path is not None:
        out.write_csv(csv_path)
    return out
