"""Outer-approximation transition graphs over box sets."""
from __future__ import annotations

import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (Box, BoxSet, DomainError, _encode, boxes_meet_domain, cell_width,
                       keys_to_centers, parse_scheme, point_keys, scheme_offsets)
from .models.base import SmoothMap

MODES = ("sampled_lipschitz", "interval")


class EscapeError(DomainError):
    """The sampled image of a box left the codomain chart."""


@dataclass(frozen=True)
class EnclosureConfig:
    """How box images are enclosed.

    ``sampled_lipschitz``: bounding box of the images of the sample points,
    padded per output coordinate by ``padding_scale * sum_j L_ij r_j + padding_abs``.
    ``interval``: centred mean-value form f(c) +- sum_j L_ij r_j with the
    model's global derivative bounds (no sampling).
    ``padding_scale < 1`` breaks soundness and is refused unless
    ``allow_unsound`` is set (used only by detector tests).
    """

    mode: str = "sampled_lipschitz"
    scheme: str = "corners+grid(2)"
    padding_scale: float = 1.0
    padding_abs: float = 1e-12
    local_bounds: bool = True
    allow_unsound: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown enclosure mode {self.mode!r}")
        if self.padding_abs < 0 or self.padding_scale < 0:
            raise ValueError("padding must be non-negative")
        if self.padding_scale < 1 and not self.allow_unsound:
            raise ValueError("padding_scale < 1 violates the Lipschitz padding invariant")
        for part in self.scheme.split("+"):
            parse_scheme(part)

    def offsets(self, dim: int) -> np.ndarray:
        parts = [scheme_offsets(dim, parse_scheme(p)) for p in self.scheme.split("+")]
        return np.unique(np.concatenate(parts), axis=0)

    def to_json(self) -> dict:
        return asdict(self)


def _bounds(m: SmoothMap, centers: np.ndarray, radii: np.ndarray, cfg: EnclosureConfig) -> np.ndarray:
    if cfg.local_bounds and m.local_lipschitz is not None and cfg.mode == "sampled_lipschitz":
        L = m.local_lipschitz(centers, radii)
    else:
        L = np.broadcast_to(m.lipschitz, (len(centers),) + m.lipschitz.shape)
    return np.einsum("nij,nj->ni", L, radii)


def enclosure_intervals(m: SmoothMap, centers: np.ndarray, radii: np.ndarray,
                        cfg: EnclosureConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-box closed intervals [lo, hi] enclosing f(box), before gridding.

    Periodic output coordinates are unwrapped around the image of the centre,
    so ``hi - lo`` may exceed the circle length (meaning: the whole circle).
    """
    cod = m.codomain
    n, dim = centers.shape
    pad = cfg.padding_scale * _bounds(m, centers, radii, cfg) + cfg.padding_abs
    fc = m.f(centers)
    if cfg.mode == "interval":
        lo, hi = fc - pad, fc + pad
        sampled, src = fc[:, None, :], centers
    else:
        off = cfg.offsets(dim)
        pts = (centers[:, None, :] + off[None, :, :] * radii[:, None, :]).reshape(-1, dim)
        dom = m.domain
        for k in dom.periodic_dims:
            pts[:, k] = np.mod(pts[:, k], 1.0)
        img = m.f(pts).reshape(n, len(off), cod.dim)
        sampled, src = img, pts
        rel = img - fc[:, None, :]
        for k in cod.periodic_dims:
            rel[:, :, k] -= np.round(rel[:, :, k])
        lo = fc + rel.min(axis=1) - pad
        hi = fc + rel.max(axis=1) + pad
    flat = sampled.reshape(-1, cod.dim)
    # corner samples of boundary boxes may lie outside the round domain; only
    # images of genuine domain points can witness an escape
    inside = m.domain.contains(src, tol=1e-12)
    bad = (~cod.contains(flat, tol=1e-9) & inside) | ~np.isfinite(flat).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad)) // sampled.shape[1]
        raise EscapeError(f"image of box centred at {centers[i].tolist()} escapes {cod.id} "
                          f"(e.g. {flat[np.argmax(bad)].tolist()})")
    return lo, hi


def _key_ranges(chart, depth, lo, hi):
    """Inclusive key ranges of the cells meeting [lo, hi] (closed rule: a face
    belongs to the cell above it, so hi on a grid line adds that cell)."""
    w = cell_width(chart, depth)
    n = 2 ** np.asarray(depth, dtype=np.int64)
    klo = np.floor((lo - chart.lo_arr) / w).astype(np.int64)
    khi = np.floor((hi - chart.lo_arr) / w).astype(np.int64)
    per = np.zeros(chart.dim, dtype=bool)
    per[list(chart.periodic_dims)] = True
    full = per & ((khi - klo + 1) >= n)
    klo = np.where(full, 0, klo)
    khi = np.where(full, n - 1, khi)
    klo = np.where(per, klo, np.clip(klo, 0, n - 1))
    khi = np.where(per, khi, np.clip(khi, 0, n - 1))
    return klo, khi


def _expand(chart, depth, klo, khi) -> tuple[np.ndarray, np.ndarray]:
    """All codes in each box range: returns (source index per candidate, codes)."""
    size = khi - klo + 1
    cnt = size.prod(axis=1)
    src = np.repeat(np.arange(len(klo)), cnt)
    starts = np.concatenate([[0], np.cumsum(cnt)[:-1]])
    local = np.arange(cnt.sum()) - np.repeat(starts, cnt)
    n = 2 ** np.asarray(depth, dtype=np.int64)
    keys = np.empty((len(src), chart.dim), dtype=np.int64)
    for j in range(chart.dim - 1, -1, -1):
        s = size[src, j]
        keys[:, j] = klo[src, j] + local % s
        local //= s
    for k in chart.periodic_dims:
        keys[:, k] = np.mod(keys[:, k], n[k])
    return src, keys


def image_enclosure(m: SmoothMap, b: Box, cfg: EnclosureConfig = EnclosureConfig()) -> BoxSet:
    """Grid cells at ``b``'s depth covering f(b)."""
    c = np.asarray(b.center, dtype=float)[None, :]
    r = np.asarray(b.radius, dtype=float)[None, :]
    lo, hi = enclosure_intervals(m, c, r, cfg)
    klo, khi = _key_ranges(m.codomain, b.depth, lo, hi)
    _, keys = _expand(m.codomain, b.depth, klo, khi)
    out = BoxSet(m.codomain, b.depth, keys)
    if m.codomain.disk_groups:
        cc, rr = out.centers_radii()
        out = out.select(boxes_meet_domain(m.codomain, cc, rr))
    return out


@dataclass
class TransitionGraph:
    """CSR adjacency over ``boxes`` (targets sorted), with per-node escape flags."""

    boxes: BoxSet
    indptr: np.ndarray
    indices: np.ndarray
    escape: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.boxes)

    @property
    def n_edges(self) -> int:
        return int(len(self.indices))

    def targets(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        src = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return src, self.indices

    def to_sparse(self):
        from scipy.sparse import csr_matrix
        data = np.ones(len(self.indices), dtype=np.int8)
        return csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def subgraph(self, mask: np.ndarray) -> "TransitionGraph":
        """Restrict to nodes in ``mask``; edges leaving the subset set the escape flag."""
        mask = np.asarray(mask, dtype=bool)
        new = np.full(self.n, -1, dtype=np.int64)
        new[mask] = np.arange(mask.sum())
        src, dst = self.edges()
        keep = mask[src]
        s, d = src[keep], dst[keep]
        inside = mask[d]
        esc = self.escape.copy()
        np.logical_or.at(esc, s[~inside], True)
        s, d = new[s[inside]], new[d[inside]]
        indptr = np.concatenate([[0], np.cumsum(np.bincount(s, minlength=int(mask.sum())))])
        return TransitionGraph(self.boxes.select(mask), indptr.astype(np.int64), d.astype(np.int64),
                               esc[mask], dict(self.provenance))

    # serialization: JSON header line, then little-endian int64 codes, indptr, indices, uint8 escape
    def to_bytes(self) -> bytes:
        header = {"format": "quasiattr-graph/1", "chart": self.boxes.chart.id,
                  "depth": list(self.boxes.depth), "n": self.n, "edges": self.n_edges,
                  "provenance": self.provenance}
        buf = io.BytesIO()
        buf.write(json.dumps(header, sort_keys=True, separators=(",", ":"), default=_json_default).encode())
        buf.write(b"\n")
        for arr, dt in ((self.boxes.codes, "<i8"), (self.indptr, "<i8"), (self.indices, "<i8"),
                        (self.escape, "u1")):
            buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return buf.getvalue()

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path) -> str:
        data = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TransitionGraph":
        from .geometry import chart_from_id
        nl = data.index(b"\n")
        h = json.loads(data[:nl])
        n, e = h["n"], h["edges"]
        off = nl + 1
        codes = np.frombuffer(data, "<i8", n, off)
        off += 8 * n
        indptr = np.frombuffer(data, "<i8", n + 1, off)
        off += 8 * (n + 1)
        indices = np.frombuffer(data, "<i8", e, off)
        off += 8 * e
        esc = np.frombuffer(data, "u1", n, off).astype(bool)
        bs = BoxSet.from_codes(chart_from_id(h["chart"]), h["depth"], codes.copy())
        return cls(bs, indptr.astype(np.int64), indices.astype(np.int64), esc, h["provenance"])

    @classmethod
    def load(cls, path) -> "TransitionGraph":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _graph_chunk(m, boxes, all_keys, cfg, lo_i, hi_i):
    keys = all_keys[lo_i:hi_i]
    c, r = keys_to_centers(boxes.chart, boxes.depth, keys)
    r = np.ascontiguousarray(r)
    lo, hi = enclosure_intervals(m, c, r, cfg)
    klo, khi = _key_ranges(m.codomain, boxes.depth, lo, hi)
    src, tkeys = _expand(m.codomain, boxes.depth, klo, khi)
    codes = _encode(tkeys, boxes.depth)
    pos = np.searchsorted(boxes.codes, codes)
    pos_c = np.minimum(pos, len(boxes.codes) - 1)
    hit = boxes.codes[pos_c] == codes
    esc = np.zeros(hi_i - lo_i, dtype=bool)
    miss = ~hit
    if miss.any():
        mk = tkeys[miss]
        meets = np.ones(len(mk), dtype=bool)
        if m.codomain.disk_groups:
            cc, rr = keys_to_centers(m.codomain, boxes.depth, mk)
            meets = boxes_meet_domain(m.codomain, cc, rr)
        esc[np.unique(src[miss][meets])] = True
    s, d = src[hit], pos_c[hit]
    order = np.lexsort((d, s))
    s, d = s[order], d[order]
    keep = np.ones(len(s), dtype=bool)
    keep[1:] = (s[1:] != s[:-1]) | (d[1:] != d[:-1])
    s, d = s[keep], d[keep]
    counts = np.bincount(s, minlength=hi_i - lo_i)
    return counts, d, esc


def build_graph(m: SmoothMap, boxes: BoxSet, cfg: EnclosureConfig = EnclosureConfig(),
                workers: int = 1, chunk: int = 20000) -> TransitionGraph:
    """T(b) = enclosure(b) intersected with ``boxes``; cells outside ``boxes`` set escape[b].

    Work is split into fixed chunks in box order, so the result does not
    depend on ``workers``.
    """
    if boxes.chart.id != m.domain.id:
        raise DomainError(f"boxes live on {boxes.chart.id}, map on {m.domain.id}")
    n = len(boxes)
    keys = boxes.keys
    bounds = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda b: _graph_chunk(m, boxes, keys, cfg, *b), bounds))
    else:
        parts = [_graph_chunk(m, boxes, keys, cfg, *b) for b in bounds]
    if parts:
        counts = np.concatenate([p[0] for p in parts])
        indices = np.concatenate([p[1] for p in parts]).astype(np.int64)
        esc = np.concatenate([p[2] for p in parts])
    else:
        counts, indices, esc = np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, bool)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    prov = {"model": getattr(m, "spec", {"name": m.name}), "params": json.loads(m.params_json()),
            "config": cfg.to_json(), "depth": list(boxes.depth)}
    return TransitionGraph(boxes, indptr, indices, esc, prov)


def graph_from_adjacency(boxes: BoxSet, adj: list, provenance: dict | None = None) -> TransitionGraph:
    """Graph over ``boxes`` from explicit target index lists (fixtures and tests)."""
    counts = [len(set(a)) for a in adj]
    indices = np.concatenate([np.sort(np.unique(np.asarray(a, dtype=np.int64))) for a in adj]) if adj else np.zeros(0)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return TransitionGraph(boxes, indptr, indices.astype(np.int64), np.zeros(len(boxes), bool), provenance or {})


@dataclass
class Violation:
    box: int
    x: list
    fx: list

    def to_json(self) -> dict:
        return asdict(self)


def verify_outer(m: SmoothMap, g: TransitionGraph, trials: int = 100000, seed: int = 0,
                 n_boxes: int = 100) -> list[Violation]:
    """Monte Carlo soundness check: ``trials`` points spread over ``n_boxes`` random boxes."""
    rng = np.random.default_rng(seed)
    if g.n == 0:
        return []
    pick = np.sort(rng.choice(g.n, size=min(n_boxes, g.n), replace=False))
    per = int(np.ceil(trials / len(pick)))
    keys = g.boxes.keys[pick]
    c, r = keys_to_centers(g.boxes.chart, g.boxes.depth, keys)
    out = []
    for i, b in enumerate(pick):
        x = c[i] + rng.uniform(-1, 1, (per, c.shape[1])) * r[i]
        for k in m.domain.periodic_dims:
            x[:, k] = np.mod(x[:, k], 1.0)
        x = x[m.domain.contains(x)]
        if not len(x):
            continue
        fx = m.f(x)
        tk = point_keys(m.codomain, g.boxes.depth, fx, check=False)
        codes = _encode(tk, g.boxes.depth)
        tgt_codes = g.boxes.codes[g.targets(b)]
        ok = np.isin(codes, tgt_codes)
        if g.escape[b]:
            ok |= ~g.boxes.contains_codes(codes)
        for j in np.flatnonzero(~ok):
            out.append(Violation(int(b), x[j].tolist(), fx[j].tolist()))
    return out
