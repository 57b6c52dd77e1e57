"""Charted phase spaces, dyadic boxes and box sets.

Every space used by the engine is a product of at most one circle factor
(coordinate in [0, 1) with wraparound) and round-disk factors, the latter
stored as enclosing cubes ``[-1, 1]^k``.  Boxes come from dyadic bisection
of the chart bounds, so a box at depth vector ``d`` is addressed by an
integer multi-index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when a point or box does not belong to the chart it is used with."""


@dataclass(frozen=True)
class Chart:
    id: str
    dim: int
    periodic_dims: tuple[int, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    disk_groups: tuple[tuple[int, ...], ...] = ()

    @property
    def lo_arr(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    @property
    def width(self) -> np.ndarray:
        return self.hi_arr - self.lo_arr

    @property
    def periodic_mask(self) -> np.ndarray:
        m = np.zeros(self.dim, dtype=bool)
        m[list(self.periodic_dims)] = True
        return m

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Reduce periodic coordinates into [0, 1)."""
        x = np.array(x, dtype=float, copy=True)
        for k in self.periodic_dims:
            x[..., k] = np.mod(x[..., k], 1.0)
            # np.mod can return 1.0 for tiny negative inputs
            x[..., k] = np.where(x[..., k] >= 1.0, 0.0, x[..., k])
        return x

    def in_bounds(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(x)
        ok = np.ones(len(x), dtype=bool)
        for k in range(self.dim):
            if k in self.periodic_dims:
                continue
            ok &= (x[:, k] >= self.lo[k] - tol) & (x[:, k] <= self.hi[k] + tol)
        return ok

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Membership in the round product domain (disk factors tested by norm)."""
        x = np.atleast_2d(x)
        ok = self.in_bounds(x, tol)
        for g in self.disk_groups:
            ok &= np.linalg.norm(x[:, list(g)], axis=1) <= 1.0 + tol
        return ok

    def boundary_distance(self, x: np.ndarray) -> np.ndarray:
        """Distance to the boundary of the round domain (negative outside)."""
        x = np.atleast_2d(x)
        d = np.full(len(x), np.inf)
        grouped = {k for g in self.disk_groups for k in g}
        for g in self.disk_groups:
            d = np.minimum(d, 1.0 - np.linalg.norm(x[:, list(g)], axis=1))
        for k in range(self.dim):
            if k in self.periodic_dims or k in grouped:
                continue
            d = np.minimum(d, np.minimum(x[:, k] - self.lo[k], self.hi[k] - x[:, k]))
        return d

    def to_json(self) -> dict:
        return {"id": self.id, "dim": self.dim}


def torus3() -> Chart:
    """S^1 x D^2 with the circle coordinate first."""
    return Chart("Torus3", 3, (0,), (0.0, -1.0, -1.0), (1.0, 1.0, 1.0), ((1, 2),))


def disk2() -> Chart:
    return Chart("Disk2", 2, (), (-1.0, -1.0), (1.0, 1.0), ((0, 1),))


def ball3() -> Chart:
    return Chart("Ball3", 3, (), (-1.0,) * 3, (1.0,) * 3, ((0, 1, 2),))


def ball_d(d: int) -> Chart:
    """D^3 x D^(d-3), the phase space of a normally contracted extension of a ball map."""
    if d < 4:
        raise DomainError(f"BallD needs d > 3, got {d}")
    return Chart(f"BallD({d})", d, (), (-1.0,) * d, (1.0,) * d,
                 ((0, 1, 2), tuple(range(3, d))))


def cube(dim: int) -> Chart:
    """[-1, 1]^dim without round factors (used by linear fixtures)."""
    if dim < 1:
        raise DomainError(f"cube dimension must be positive, got {dim}")
    return Chart(f"Cube({dim})", dim, (), (-1.0,) * dim, (1.0,) * dim, ())


def chart_from_id(cid: str) -> Chart:
    if cid == "Torus3":
        return torus3()
    if cid == "Disk2":
        return disk2()
    if cid == "Ball3":
        return ball3()
    if cid.startswith("BallD(") and cid.endswith(")"):
        return ball_d(int(cid[6:-1]))
    if cid.startswith("Cube(") and cid.endswith(")"):
        return cube(int(cid[5:-1]))
    raise DomainError(f"unknown chart id {cid!r}")


@dataclass(frozen=True)
class PointP:
    chart: Chart
    coords: tuple[float, ...]

    def __post_init__(self):
        if len(self.coords) != self.chart.dim:
            raise DomainError("coordinate count does not match chart dimension")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


@dataclass(frozen=True)
class Box:
    chart: Chart
    center: tuple[float, ...]
    radius: tuple[float, ...]
    depth: tuple[int, ...]

    def __post_init__(self):
        if any(r <= 0 for r in self.radius):
            raise DomainError("box radius must be positive in every dimension")

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.radius)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.radius)

    def volume(self) -> float:
        return float(np.prod(2.0 * np.asarray(self.radius)))

    def contains(self, p: PointP | np.ndarray) -> bool:
        x = p.array if isinstance(p, PointP) else np.asarray(p, dtype=float)
        lo, hi = self.lower, self.upper
        for k in range(self.chart.dim):
            v = x[k]
            if k in self.chart.periodic_dims:
                v = lo[k] + np.mod(v - lo[k], 1.0)
            if not (lo[k] <= v <= hi[k]):
                return False
        return True

    @property
    def key(self) -> tuple[int, ...]:
        w = self.chart.width / 2.0 ** np.asarray(self.depth)
        idx = np.floor((self.lower - self.chart.lo_arr) / w + 0.5)
        return tuple(int(i) for i in idx)


def cell_width(chart: Chart, depth: Sequence[int]) -> np.ndarray:
    return chart.width / 2.0 ** np.asarray(depth, dtype=float)


def box_from_key(chart: Chart, depth: Sequence[int], key: Sequence[int]) -> Box:
    w = cell_width(chart, depth)
    lo = chart.lo_arr + np.asarray(key) * w
    return Box(chart, tuple(lo + w / 2), tuple(w / 2), tuple(int(d) for d in depth))


def keys_to_centers(chart: Chart, depth: Sequence[int], keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = cell_width(chart, depth)
    centers = chart.lo_arr + (np.asarray(keys, dtype=float) + 0.5) * w
    radii = np.broadcast_to(w / 2, centers.shape)
    return centers, radii


def point_keys(chart: Chart, depth: Sequence[int], x: np.ndarray, check: bool = True) -> np.ndarray:
    """Vectorized box_of: multi-indices of the cells containing each row of ``x``.

    Faces belong to the cell whose lower corner they are; the closed upper
    end of a non-periodic interval belongs to the last cell.
    """
    x = chart.wrap(np.atleast_2d(np.asarray(x, dtype=float)))
    if check:
        bad = ~chart.in_bounds(x)
        if bad.any():
            raise DomainError(f"point {x[np.argmax(bad)].tolist()} outside chart {chart.id}")
    n = 2 ** np.asarray(depth, dtype=np.int64)
    w = cell_width(chart, depth)
    idx = np.floor((x - chart.lo_arr) / w).astype(np.int64)
    # the quotient can round across a face; cell bounds lo + i*w are exact
    idx -= x < chart.lo_arr + idx * w
    idx += (x >= chart.lo_arr + (idx + 1) * w) & (idx + 1 < n)
    return np.clip(idx, 0, n - 1)


def box_of(p: PointP | np.ndarray, depth: Sequence[int], chart: Chart | None = None) -> Box:
    if isinstance(p, PointP):
        chart, x = p.chart, p.array
    else:
        if chart is None:
            raise DomainError("chart required for raw coordinates")
        x = np.asarray(p, dtype=float)
    key = point_keys(chart, depth, x[None, :])[0]
    return box_from_key(chart, depth, key)


def subdivide(b: Box, dims: Iterable[int] | None = None) -> "BoxSet":
    """Bisect ``b`` along each dimension in ``dims`` (all dimensions if None)."""
    chart = b.chart
    mask = np.zeros(chart.dim, dtype=bool)
    mask[list(range(chart.dim)) if dims is None else list(dims)] = True
    key = np.asarray(b.key, dtype=np.int64)
    depth = np.asarray(b.depth) + mask
    offsets = np.array(np.meshgrid(*[[0, 1] if m else [0] for m in mask], indexing="ij"))
    offsets = offsets.reshape(chart.dim, -1).T
    keys = key * (1 + mask) + offsets
    return BoxSet(chart, tuple(int(d) for d in depth), keys)


def _encode(keys: np.ndarray, depth: Sequence[int]) -> np.ndarray:
    """Pack multi-indices into int64 codes whose order is lexicographic key order."""
    code = np.zeros(len(keys), dtype=np.int64)
    for k, d in enumerate(depth):
        code = (code << np.int64(d)) | keys[:, k].astype(np.int64)
    return code


def _decode(codes: np.ndarray, depth: Sequence[int]) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    keys = np.zeros((len(codes), len(depth)), dtype=np.int64)
    c = codes.copy()
    for k in range(len(depth) - 1, -1, -1):
        d = int(depth[k])
        keys[:, k] = c & np.int64((1 << d) - 1)
        c = c >> np.int64(d)
    return keys


class BoxSet:
    """A finite set of same-depth cells, stored in canonical (lexicographic) order."""

    def __init__(self, chart: Chart, depth: Sequence[int], keys: np.ndarray | Iterable = ()):
        self.chart = chart
        self.depth = tuple(int(d) for d in depth)
        if len(self.depth) != chart.dim:
            raise DomainError("depth vector length does not match chart dimension")
        if sum(self.depth) > 62:
            raise DomainError("total depth exceeds 62 bits")
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, chart.dim)
        n = 2 ** np.asarray(self.depth, dtype=np.int64)
        if len(keys) and ((keys < 0) | (keys >= n)).any():
            raise DomainError("box key out of range for depth")
        self.codes = np.unique(_encode(keys, self.depth))

    @classmethod
    def from_codes(cls, chart: Chart, depth: Sequence[int], codes: np.ndarray) -> "BoxSet":
        bs = cls.__new__(cls)
        bs.chart = chart
        bs.depth = tuple(int(d) for d in depth)
        bs.codes = np.unique(np.asarray(codes, dtype=np.int64))
        return bs

    @classmethod
    def full(cls, chart: Chart, depth: Sequence[int], round_only: bool = True) -> "BoxSet":
        """All cells at ``depth``; with ``round_only`` only cells meeting the round domain."""
        axes = [np.arange(2 ** int(d), dtype=np.int64) for d in depth]
        keys = np.array(np.meshgrid(*axes, indexing="ij")).reshape(chart.dim, -1).T
        bs = cls(chart, depth, keys)
        if round_only and chart.disk_groups:
            c, r = bs.centers_radii()
            bs = bs.select(boxes_meet_domain(chart, c, r))
        return bs

    @property
    def keys(self) -> np.ndarray:
        return _decode(self.codes, self.depth)

    def __len__(self) -> int:
        return len(self.codes)

    def __iter__(self):
        for key in self.keys:
            yield box_from_key(self.chart, self.depth, key)

    def __eq__(self, other) -> bool:
        return (isinstance(other, BoxSet) and self.chart == other.chart
                and self.depth == other.depth and np.array_equal(self.codes, other.codes))

    def __repr__(self) -> str:
        return f"BoxSet({self.chart.id}, depth={self.depth}, n={len(self)})"

    def centers_radii(self) -> tuple[np.ndarray, np.ndarray]:
        return keys_to_centers(self.chart, self.depth, self.keys)

    def index_of(self, codes: np.ndarray) -> np.ndarray:
        """Position of each code in this set, -1 if absent."""
        codes = np.asarray(codes, dtype=np.int64)
        pos = np.searchsorted(self.codes, codes)
        pos = np.clip(pos, 0, max(len(self.codes) - 1, 0))
        found = len(self.codes) > 0
        hit = (self.codes[pos] == codes) if found else np.zeros(len(codes), bool)
        return np.where(hit, pos, -1)

    def contains_codes(self, codes: np.ndarray) -> np.ndarray:
        return self.index_of(codes) >= 0

    def select(self, mask_or_idx) -> "BoxSet":
        return BoxSet.from_codes(self.chart, self.depth, self.codes[mask_or_idx])

    def union(self, other: "BoxSet") -> "BoxSet":
        self._check_compatible(other)
        return BoxSet.from_codes(self.chart, self.depth, np.union1d(self.codes, other.codes))

    def intersection(self, other: "BoxSet") -> "BoxSet":
        self._check_compatible(other)
        return BoxSet.from_codes(self.chart, self.depth, np.intersect1d(self.codes, other.codes))

    def difference(self, other: "BoxSet") -> "BoxSet":
        self._check_compatible(other)
        return BoxSet.from_codes(self.chart, self.depth, np.setdiff1d(self.codes, other.codes))

    def issubset(self, other: "BoxSet") -> bool:
        self._check_compatible(other)
        return bool(np.isin(self.codes, other.codes).all())

    def _check_compatible(self, other: "BoxSet"):
        if self.chart != other.chart or self.depth != other.depth:
            raise DomainError("box sets live on different charts or depths")

    def refine(self, dims: Iterable[int] | None = None) -> "BoxSet":
        """Subdivide every cell once along ``dims``."""
        mask = np.zeros(self.chart.dim, dtype=bool)
        mask[list(range(self.chart.dim)) if dims is None else list(dims)] = True
        keys = self.keys
        offs = np.array(np.meshgrid(*[[0, 1] if m else [0] for m in mask], indexing="ij"))
        offs = offs.reshape(self.chart.dim, -1).T
        new = (keys * (1 + mask))[:, None, :] + offs[None, :, :]
        depth = tuple(int(d) for d in np.asarray(self.depth) + mask)
        return BoxSet(self.chart, depth, new.reshape(-1, self.chart.dim))

    def neighbors(self, radius: int = 1, within: "BoxSet | None" = None) -> "BoxSet":
        """All cells within ``radius`` index steps (Chebyshev) of the set."""
        keys = self.keys
        n = 2 ** np.asarray(self.depth, dtype=np.int64)
        rng = np.arange(-radius, radius + 1)
        offs = np.array(np.meshgrid(*[rng] * self.chart.dim, indexing="ij")).reshape(self.chart.dim, -1).T
        out = []
        for off in offs:
            k = keys + off
            ok = np.ones(len(k), dtype=bool)
            for d in range(self.chart.dim):
                if d in self.chart.periodic_dims:
                    k[:, d] = np.mod(k[:, d], n[d])
                else:
                    ok &= (k[:, d] >= 0) & (k[:, d] < n[d])
            out.append(_encode(k[ok], self.depth))
        bs = BoxSet.from_codes(self.chart, self.depth, np.concatenate(out))
        if within is not None:
            bs = bs.intersection(within)
        return bs

    def to_json(self) -> dict:
        return {"chart": self.chart.id, "depth": list(self.depth),
                "keys": self.keys.tolist()}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict | str) -> "BoxSet":
        if isinstance(obj, str):
            obj = json.loads(obj)
        chart = chart_from_id(obj["chart"])
        return cls(chart, obj["depth"], np.asarray(obj["keys"], dtype=np.int64).reshape(-1, chart.dim))

    def diameter(self) -> float:
        """Upper bound on the diameter of the union of the cells (chart metric)."""
        if len(self) == 0:
            return 0.0
        c, r = self.centers_radii()
        ext = []
        for k in range(self.chart.dim):
            if k in self.chart.periodic_dims:
                # covered arc length: 1 minus the largest uncovered gap
                lo = np.unique(np.round(c[:, k] - r[:, k], 12))
                w = 2 * r[0, k]
                gaps = np.diff(np.concatenate([lo, [lo[0] + 1.0]])) - w
                ext.append(min(0.5, 1.0 - gaps.max() if len(lo) > 1 else w))
            else:
                ext.append((c[:, k] + r[:, k]).max() - (c[:, k] - r[:, k]).min())
        return float(np.linalg.norm(ext))


def boxes_meet_domain(chart: Chart, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """True for boxes that intersect the round product domain."""
    ok = np.ones(len(centers), dtype=bool)
    for g in chart.disk_groups:
        g = list(g)
        nearest = np.clip(0.0, centers[:, g] - radii[:, g], centers[:, g] + radii[:, g])
        ok &= np.linalg.norm(nearest, axis=1) <= 1.0
    return ok


def dist(p: PointP | np.ndarray, q: PointP | np.ndarray, chart: Chart | None = None) -> np.ndarray | float:
    """Product metric: wraparound on the circle factor, Euclidean on disk factors."""
    if isinstance(p, PointP) or isinstance(q, PointP):
        if not (isinstance(p, PointP) and isinstance(q, PointP)):
            raise DomainError("cannot mix charted and raw points")
        if p.chart != q.chart:
            raise DomainError(f"chart mismatch: {p.chart.id} vs {q.chart.id}")
        chart, a, b = p.chart, p.array, q.array
    else:
        if chart is None:
            raise DomainError("chart required for raw coordinates")
        a, b = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    d = np.abs(a - b)
    for k in chart.periodic_dims:
        dk = np.mod(d[..., k], 1.0)
        d[..., k] = np.minimum(dk, 1.0 - dk)
    out = np.sqrt((d ** 2).sum(axis=-1))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Corners:
    pass


@dataclass(frozen=True)
class Grid:
    k: int


@dataclass(frozen=True)
class Random:
    m: int
    seed: int = 0


def scheme_offsets(dim: int, scheme) -> np.ndarray:
    """Sample offsets in units of the box radius, i.e. points in [-1, 1]^dim."""
    if isinstance(scheme, Corners):
        g = np.array(np.meshgrid(*[[-1.0, 1.0]] * dim, indexing="ij"))
        return g.reshape(dim, -1).T
    if isinstance(scheme, Grid):
        ax = (np.arange(scheme.k) + 0.5) / scheme.k * 2.0 - 1.0
        g = np.array(np.meshgrid(*[ax] * dim, indexing="ij"))
        return g.reshape(dim, -1).T
    if isinstance(scheme, Random):
        return np.random.default_rng(scheme.seed).uniform(-1.0, 1.0, size=(scheme.m, dim))
    raise TypeError(f"unknown sampling scheme {scheme!r}")


def parse_scheme(s) -> object:
    """Accept scheme objects or strings like 'corners', 'grid(2)', 'random(100,7)'."""
    if not isinstance(s, str):
        return s
    s = s.strip()
    if s == "corners":
        return Corners()
    if s.startswith("grid(") and s.endswith(")"):
        return Grid(int(s[5:-1]))
    if s.startswith("random(") and s.endswith(")"):
        parts = [int(v) for v in s[7:-1].split(",")]
        return Random(parts[0], parts[1] if len(parts) > 1 else 0)
    raise ValueError(f"cannot parse sampling scheme {s!r}")


def sample(b: Box, scheme) -> list[PointP]:
    scheme = parse_scheme(scheme)
    off = scheme_offsets(b.chart.dim, scheme)
    pts = np.asarray(b.center) + off * np.asarray(b.radius)
    return [PointP(b.chart, tuple(p)) for p in pts]
