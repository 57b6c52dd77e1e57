"""Periodic orbits, unstable leaves, first-hit points in Delta(f), stable direction fields, tangencies."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .geometry import BoxSet, Chart, PointP, disk2, point_keys, _encode
from .hyperbolicity import ConeField
from .models.base import SmoothMap

NONHYPERBOLIC_TOL = 1e-8


class OrbitError(RuntimeError):
    """Newton failure, cone violation, or a sweep that cannot resolve the expected structure."""


def _centered(d: np.ndarray) -> np.ndarray:
    c = np.where((d >= 0.5) & (d < 1.0), d - 1.0, np.mod(d + 0.5, 1.0) - 0.5)
    return np.where(np.abs(d) < 0.5, d, c)


def chart_diff(chart: Chart, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a - b with periodic coordinates taken in (-1/2, 1/2]."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    for k in chart.periodic_dims:
        d[..., k] = _centered(d[..., k])
    return d


# ---------------------------------------------------------------- periodic orbits

@dataclass
class PeriodicOrbit:
    points: np.ndarray          # (period, dim)
    period: int
    eigenvalues: np.ndarray     # of the monodromy Df^period at points[0]
    residual: float
    chart_id: str = ""

    @property
    def multipliers(self) -> np.ndarray:
        return np.sort(np.abs(self.eigenvalues))

    @property
    def hyperbolic(self) -> bool:
        return bool(np.all(np.abs(self.multipliers - 1) > NONHYPERBOLIC_TOL))

    @property
    def kind(self) -> str:
        mu = self.multipliers
        if not self.hyperbolic:
            return "non-hyperbolic"
        if (mu < 1).all():
            return "sink"
        if (mu > 1).all():
            return "source"
        return "saddle"

    def to_json(self) -> dict:
        return {"period": self.period, "points": self.points.tolist(), "kind": self.kind,
                "multipliers": self.multipliers.tolist(), "residual": self.residual,
                "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
                "chart": self.chart_id}


def _power(m: SmoothMap, x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orbit points, f^k(x) and Df^k(x) for a single point."""
    pts = [x]
    J = np.eye(len(x))
    y = x[None, :]
    for _ in range(k):
        J = m.df(y)[0] @ J
        y = m.f(y)
        pts.append(y[0])
    return np.array(pts[:-1]), y[0], J


def find_periodic(m: SmoothMap, seed: Union[PointP, np.ndarray], period: int = 1, tol: float = 1e-10,
                  max_iter: int = 100) -> PeriodicOrbit:
    """Damped Newton on F(x) = f^period(x) - x (periodic coordinates unwrapped)."""
    chart = m.domain
    x = np.asarray(seed.array if isinstance(seed, PointP) else seed, dtype=float).copy()
    if not chart.contains(x[None, :], tol=1e-12)[0]:
        raise OrbitError("seed outside the domain")
    eye = np.eye(chart.dim)
    res = np.inf
    for it in range(max_iter):
        _, y, J = _power(m, x, period)
        F = chart_diff(chart, y, x)
        res = float(np.linalg.norm(F))
        if res < tol:
            break
        A = J - eye
        if np.linalg.cond(A) > 1e14:
            raise OrbitError(f"singular Newton matrix at iteration {it} (residual {res:.3g})")
        step = np.linalg.solve(A, -F)
        lam = 1.0
        while lam > 1e-6:
            xn = chart.wrap((x + lam * step)[None, :])[0]
            if chart.contains(xn[None, :], tol=1e-12)[0]:
                _, yn, _ = _power(m, xn, period)
                if np.linalg.norm(chart_diff(chart, yn, xn)) < (1 - 1e-4 * lam) * res or lam < 1e-3:
                    break
            lam *= 0.5
        x = xn
    else:
        raise OrbitError(f"Newton did not converge in {max_iter} iterations (residual {res:.3g})")
    pts, _, J = _power(m, x, period)
    resid = 0.0
    for p in pts:
        _, yp, _ = _power(m, p, period)
        resid = max(resid, float(np.linalg.norm(chart_diff(chart, yp, p))))
    if resid >= tol:
        raise OrbitError(f"orbit residual {resid:.3g} >= tol {tol:g}")
    return PeriodicOrbit(pts, period, np.linalg.eigvals(J), resid, chart.id)


def monodromy(m: SmoothMap, orbit: PeriodicOrbit, start: int = 0) -> np.ndarray:
    return _power(m, orbit.points[start], orbit.period)[2]


# ---------------------------------------------------------------- curves

@dataclass
class CurveSegment:
    """Ordered polyline with unit tangents; ``param`` is the generator parameter of each vertex.

    Points are ``origin + scale * local`` (``scale`` lets a tiny curve keep
    full relative precision); ``points`` returns the absolute positions.
    """

    local: np.ndarray
    tangents: np.ndarray
    param: np.ndarray
    chart: Optional[Chart] = None
    origin: Optional[np.ndarray] = None
    scale: float = 1.0
    gen: Optional[Callable] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        if self.origin is None:
            return self.local
        p = self.origin + self.scale * self.local
        return p if self.chart is None else self.chart.wrap(p)

    def steps(self) -> np.ndarray:
        d = np.diff(self.local, axis=0)
        if self.origin is None and self.chart is not None:
            d = chart_diff(self.chart, self.local[1:], self.local[:-1])
        return np.linalg.norm(d, axis=1) * self.scale

    @property
    def arclength(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.steps())])

    @property
    def length(self) -> float:
        return float(self.steps().sum())

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "tangents": self.tangents.tolist(),
                "param": self.param.tolist(), "scale": self.scale,
                "origin": None if self.origin is None else self.origin.tolist(),
                "local": self.local.tolist() if self.origin is not None else None, **self.meta}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = self.local.shape[1]
            w.writerow(["s", "arclength"] + [f"x{i}" for i in range(d)] + [f"t{i}" for i in range(d)])
            for s, a, p, t in zip(self.param, self.arclength, self.points, self.tangents):
                w.writerow([repr(float(s)), repr(float(a))] + [repr(float(v)) for v in p] + [repr(float(v)) for v in t])


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def resample(gen: Callable, s: np.ndarray, diff: Callable, h_max: float, max_turn_deg: float = 2.0,
             max_vertices: int = 400000) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Insert generator midpoints until vertex spacing <= h_max and turning <= max_turn_deg."""
    s = np.asarray(s, dtype=float)
    P, T = gen(s)
    cos_lim = np.cos(np.radians(max_turn_deg))
    while True:
        d = np.linalg.norm(diff(P[1:], P[:-1]), axis=1)
        tu = _unit(T)
        turn = np.einsum("ij,ij->i", tu[1:], tu[:-1]) < cos_lim
        bad = ((d > h_max) | turn) & (np.diff(s) > 1e-15 * np.maximum(1.0, np.abs(s[1:])))
        if not bad.any():
            return s, P, T
        if len(s) + bad.sum() > max_vertices:
            raise OrbitError(f"resampling needs more than {max_vertices} vertices")
        mids = 0.5 * (s[:-1][bad] + s[1:][bad])
        Pm, Tm = gen(mids)
        idx = np.flatnonzero(bad) + 1
        s = np.insert(s, idx, mids)
        P = np.insert(P, idx, Pm, axis=0)
        T = np.insert(T, idx, Tm, axis=0)


def unstable_segment(m: SmoothMap, p: PeriodicOrbit, cone: Optional[ConeField], length: float,
                     h_max: float = 1e-2, seed_length: float = 1e-6, max_turn_deg: float = 2.0,
                     max_iter: int = 200, branch: int = 1) -> CurveSegment:
    """One branch of the unstable manifold of ``p`` grown to at least ``length``.

    Vertices are exact images F^k(p + s * seed_length * v), s in [0, 1],
    F = f^period, v the dominant expanding eigenvector oriented along the
    first cone axis (the circle orientation for solenoids).
    """
    M = monodromy(m, p)
    ev, V = np.linalg.eig(M)
    i = int(np.argmax(np.abs(ev)))
    if abs(ev[i]) <= 1 or abs(ev[i].imag) > 1e-12:
        raise OrbitError("no real expanding eigenvalue at the periodic point")
    v = _unit(np.real(V[:, i]))
    x0 = p.points[0]
    if cone is not None:
        F0, P0 = cone.frames(x0[None, :])
        cF = F0[0].T @ v
        if np.linalg.norm(P0[0].T @ v) > cone.alpha * np.linalg.norm(cF):
            raise OrbitError("expanding direction lies outside the cone")
        if cF[0] < 0:
            v = -v
    elif v[np.argmax(np.abs(v))] < 0:
        v = -v
    if branch < 0:
        v = -v
    chart = m.domain
    diff = lambda a, b: chart_diff(chart, a, b)

    def make_gen(k):
        def gen(s):
            x = x0[None, :] + np.asarray(s)[:, None] * seed_length * v[None, :]
            T = np.broadcast_to(seed_length * v, x.shape).copy()
            for _ in range(k * p.period):
                J = m.df(x)
                T = np.einsum("nij,nj->ni", J, T)
                x = m.f(x)
            return x, T
        return gen

    s = np.linspace(0.0, 1.0, 9)
    for k in range(max_iter):
        gen = make_gen(k)
        s, P, T = resample(gen, s, diff, h_max, max_turn_deg)
        inside = chart.contains(P, tol=1e-12)
        truncated = not inside.all()
        if truncated:
            cut = int(np.argmin(inside))
            s, P, T = s[:cut], P[:cut], T[:cut]
        seg = CurveSegment(P, _unit(T), s, chart, gen=gen,
                           meta={"iterates": k, "period": p.period, "seed_length": seed_length,
                                 "h_max": h_max, "truncated": truncated})
        if cone is not None:
            _check_cone(cone, P, T)
        if seg.length >= length or truncated:
            return seg
    raise OrbitError(f"segment did not reach length {length} in {max_iter} iterations")


def _check_cone(cone: ConeField, P: np.ndarray, T: np.ndarray):
    F, Q = cone.frames(P)
    cF = np.linalg.norm(np.einsum("ndk,nd->nk", F, T), axis=1)
    cQ = np.linalg.norm(np.einsum("ndk,nd->nk", Q, T), axis=1)
    bad = cQ > cone.alpha * cF
    if bad.any():
        j = int(np.argmax(bad))
        raise OrbitError(f"leaf tangent leaves the cone at vertex {j} ({P[j].tolist()})")


def hausdorff(a: np.ndarray, b: np.ndarray, chart: Optional[Chart] = None) -> float:
    """Symmetric Hausdorff distance between two polylines (vertex-to-segment)."""
    def one_way(p, q):
        worst = 0.0
        A, B = q[:-1], q[1:]
        for chunk in np.array_split(np.arange(len(p)), max(1, len(p) // 2000)):
            x = p[chunk][:, None, :]
            ab = B - A if chart is None else chart_diff(chart, B, A)
            ax = x - A[None] if chart is None else chart_diff(chart, x, A[None])
            t = np.clip(np.einsum("nmd,md->nm", ax, ab) / np.maximum(np.einsum("md,md->m", ab, ab), 1e-300), 0, 1)
            d = np.linalg.norm(ax - t[..., None] * ab[None], axis=2).min(axis=1)
            worst = max(worst, float(d.max()))
        return worst
    return max(one_way(a, b), one_way(b, a))


# ---------------------------------------------------------------- Delta(f) and first hits

@dataclass
class DiskComponent:
    """f({tau} x D^2), one connected component of f(S^1 x D^2) inside the fiber {t0} x D^2."""

    tau: float
    t0: float
    center: np.ndarray
    boundary: np.ndarray
    role: str = "other"                 # "image" (= f(D_f)), "delta" (= Delta(f)) or "other"
    _m: Optional[SmoothMap] = field(default=None, repr=False)

    def contains(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if self._m is not None and self._m.has_inverse:
            x = self._m.inverse(np.column_stack([np.full(len(z), self.t0), z]))
            ok = ~np.isnan(x).any(axis=1)
            good = np.zeros(len(z), dtype=bool)
            good[ok] = np.abs(_centered(x[ok, 0] - self.tau)) < 1e-7
            good[ok] &= np.linalg.norm(x[ok, 1:], axis=1) <= 1 + 1e-12
            return good
        return _winding(self.boundary, z)

    def to_json(self) -> dict:
        return {"tau": self.tau, "t0": self.t0, "center": self.center.tolist(), "role": self.role,
                "boundary": self.boundary.tolist()}


def _winding(poly: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Point-in-polygon by winding number (closed polyline ``poly``)."""
    a = poly[None, :, :] - z[:, None, :]
    b = np.roll(a, -1, axis=1)
    ang = np.arctan2(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0], np.einsum("nmd,nmd->nm", a, b))
    return np.abs(ang.sum(axis=1)) > np.pi


def delta_components(m: SmoothMap, t0: float = 0.0, radius: float = 1.0, sweep: int = 20000,
                     expected: Optional[int] = None, boundary_points: int = 256) -> list[DiskComponent]:
    """Components of f(S^1 x D^2) in the fiber disk {t0} x D^2, found by sweeping fibers."""
    if m.domain.id != "Torus3":
        raise OrbitError("delta_components needs a solid-torus map")
    if radius < 1 - 1e-12:
        raise OrbitError("the disk must be a whole fiber {t0} x D^2 (essential disk)")
    n = expected if expected is not None else getattr(getattr(m, "braid", None), "n", None)
    rng = np.random.default_rng(0)
    zs = rng.uniform(-0.6, 0.6, (4, 2))
    taus = (np.arange(sweep) + 0.5) / sweep

    def g(tau):
        tau = np.atleast_1d(tau)
        return _centered(m.f(np.column_stack([tau, np.zeros((len(tau), 2))]))[:, 0] - t0)

    for z in zs:
        other = _centered(m.f(np.column_stack([taus[::97], np.tile(z, (len(taus[::97]), 1))]))[:, 0] - t0)
        if np.abs(_centered(other - g(taus[::97]))).max() > 1e-12:
            raise OrbitError("the circle coordinate of f depends on the fiber point (not a skew product)")
    vals = g(taus)
    nxt = np.roll(vals, -1)
    cross = (np.sign(vals) != np.sign(nxt)) & (np.abs(nxt - vals) < 0.25)
    roots = []
    for i in np.flatnonzero(cross):
        a, b = taus[i], taus[i] + 1.0 / sweep
        if vals[i] == 0:
            roots.append(a)
            continue
        roots.append(brentq(lambda t: g(np.mod(t, 1.0))[0], a, b, xtol=1e-15, rtol=1e-15) % 1.0)
    roots = sorted(set(round(r, 13) for r in roots))
    if n is not None and len(roots) != abs(n):
        raise OrbitError(f"found {len(roots)} components, expected {abs(n)} (sweep too coarse?)")
    circle = np.linspace(0, 2 * np.pi, boundary_points, endpoint=False)
    circle = np.column_stack([np.cos(circle), np.sin(circle)]) * (1 - 1e-12)
    out = []
    for r in roots:
        c = m.f(np.array([[r, 0.0, 0.0]]))[0, 1:]
        bd = m.f(np.column_stack([np.full(len(circle), r), circle]))[:, 1:]
        role = "image" if abs(_centered(r - t0)) < 1e-9 else "other"
        out.append(DiskComponent(float(r), t0, c, bd, role, m))
    others = [c for c in out if c.role == "other"]
    if others:
        others[0].role = "delta"
    return out


@dataclass
class Hit:
    point: PointP
    param: float          # generator parameter of the crossing
    arclength: float

    def to_json(self) -> dict:
        return {"point": list(self.point.coords), "param": self.param, "arclength": self.arclength}


def first_hit(m: SmoothMap, seg: CurveSegment, delta: DiskComponent, tol: float = 1e-10) -> list[Hit]:
    """First transversal crossing of the leaf with Delta (bisection on the signed circle coordinate)."""
    P = seg.points
    gvals = _centered(P[:, 0] - delta.t0)
    arc = seg.arclength
    nxt = gvals[1:]
    cand = np.flatnonzero((np.sign(gvals[:-1]) != np.sign(nxt)) & (np.abs(nxt - gvals[:-1]) < 0.25))
    for i in cand:
        a, b = float(seg.param[i]), float(seg.param[i + 1])
        ga = gvals[i]
        if seg.gen is not None:
            at = lambda s: seg.gen(np.array([s]))[0][0]
        else:
            A, B = seg.local[i], seg.local[i + 1]
            at = lambda s, A=A, B=B, a=a, b=b: A + (s - a) / (b - a) * chart_diff(seg.chart, B, A) if seg.chart else A + (s - a) / (b - a) * (B - A)
        x = at(a)
        for _ in range(200):
            mid = 0.5 * (a + b)
            x = at(mid)
            gm = _centered(x[0] - delta.t0)
            if abs(gm) < tol or b - a < 1e-16 * max(1.0, abs(mid)):
                break
            if np.sign(gm) == np.sign(ga):
                a, ga = mid, gm
            else:
                b = mid
        x = np.asarray(x, dtype=float).copy()
        x[0] = delta.t0
        if seg.chart is not None:
            x = seg.chart.wrap(x[None, :])[0]
        if not delta.contains(x[1:])[0]:
            continue
        frac = (mid - seg.param[i]) / max(seg.param[i + 1] - seg.param[i], 1e-300)
        s_arc = float(arc[i] + frac * (arc[i + 1] - arc[i]))
        chart = seg.chart if seg.chart is not None else m.domain
        return [Hit(PointP(chart, tuple(float(v) for v in x)), float(mid), s_arc)]
    return []


# ---------------------------------------------------------------- stable direction fields

def _as_planar_map(disk_map) -> SmoothMap:
    return disk_map.phi if hasattr(disk_map, "phi") and not isinstance(disk_map, SmoothMap) else disk_map


def _canonical_sign(d: np.ndarray) -> np.ndarray:
    flip = (d[:, 0] < 0) | ((d[:, 0] == 0) & (d[:, 1] < 0))
    return np.where(flip[:, None], -d, d)


def finite_time_stable(phi: SmoothMap, x: np.ndarray, n: int,
                       check_domain: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Most contracted right singular direction of D phi^n and the relative singular gap."""
    J = np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()
    y = x
    for step in range(n):
        if check_domain and not phi.domain.contains(y, tol=1e-12).all():
            raise OrbitError(f"orbit left the disk at step {step}")
        J = phi.df(y) @ J
        y = phi.f(y)
    _, S, Vt = np.linalg.svd(J)
    gap = 1 - S[:, -1] / np.maximum(S[:, 0], 1e-300)
    return _canonical_sign(Vt[:, -1, :]), gap


@dataclass
class DirectionField:
    region: BoxSet
    directions: np.ndarray      # (N, 2) unit, canonical sign
    gap: np.ndarray
    reliable: np.ndarray
    discontinuous: np.ndarray   # box adjacent to a box whose line differs by more than angle_tol
    n: int
    gap_tol: float = 1e-6
    angle_tol_deg: float = 10.0
    phi: Optional[SmoothMap] = field(default=None, repr=False)
    check_domain: bool = True

    def at(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Direction and reliability at arbitrary points (exact finite-time evaluation if possible)."""
        x = np.atleast_2d(x)
        if self.phi is not None:
            d, gap = finite_time_stable(self.phi, x, self.n, self.check_domain)
            return d, gap >= self.gap_tol
        keys = point_keys(self.region.chart, self.region.depth, x, check=False)
        idx = self.region.index_of(_encode(keys, self.region.depth))
        ok = idx >= 0
        d = np.full((len(x), 2), np.nan)
        d[ok] = self.directions[idx[ok]]
        rel = np.zeros(len(x), dtype=bool)
        rel[ok] = self.reliable[idx[ok]]
        return d, rel

    def to_json(self) -> dict:
        return {"region": self.region.to_json(), "n": self.n, "gap_tol": self.gap_tol,
                "angle_tol_deg": self.angle_tol_deg, "directions": self.directions.tolist(),
                "gap": self.gap.tolist(), "reliable": self.reliable.tolist(),
                "discontinuous": self.discontinuous.tolist()}


def stable_directions(disk_map, region: BoxSet, n: int = 10, gap_tol: float = 1e-6,
                      angle_tol_deg: float = 10.0, check_domain: bool = True) -> DirectionField:
    """Finite-time stable direction at each box centre of a planar region."""
    phi = _as_planar_map(disk_map)
    c, _ = region.centers_radii()
    inside = phi.domain.contains(c) if check_domain else np.ones(len(c), dtype=bool)
    d = np.full((len(c), 2), np.nan)
    gap = np.zeros(len(c))
    if inside.any():
        d[inside], gap[inside] = finite_time_stable(phi, c[inside], n, check_domain)
    # boxes whose centre lies outside the disk carry no direction
    reliable = inside & (gap >= gap_tol)
    disc = np.zeros(len(region), dtype=bool)
    keys = region.keys
    cos_tol = np.cos(np.radians(angle_tol_deg))
    for off in ((1, 0), (0, 1), (1, 1), (1, -1)):
        idx = region.index_of(_encode(keys + np.array(off), region.depth)) if len(keys) else np.zeros(0, int)
        inb = ((keys + np.array(off)) >= 0).all(axis=1) & ((keys + np.array(off)) < 2 ** np.asarray(region.depth)).all(axis=1)
        j = np.flatnonzero((idx >= 0) & inb)
        k = idx[j]
        both = reliable[j] & reliable[k]
        bad = both & (np.abs(np.einsum("ij,ij->i", d[j], d[k])) < cos_tol)
        disc[j[bad]] = True
        disc[k[bad]] = True
    return DirectionField(region, d, gap, reliable, disc, n, gap_tol, angle_tol_deg, phi, check_domain)


# ---------------------------------------------------------------- tangencies

@dataclass
class Tangency:
    curve: int
    param: float
    point: np.ndarray           # absolute position
    local: np.ndarray           # position in the curve's local frame
    arclength: float            # local arclength from the curve start
    slope: float                # d s / d u at the root (u = local arclength)
    kind: str                   # "quadratic" or "degenerate"

    def to_json(self) -> dict:
        return {"curve": self.curve, "param": self.param, "point": self.point.tolist(),
                "local": self.local.tolist(), "arclength": self.arclength, "slope": self.slope,
                "kind": self.kind}


@dataclass
class TangencyReport:
    tangencies: list
    degenerate_stretches: list = field(default_factory=list)   # (curve, param_lo, param_hi)
    skipped_stretches: list = field(default_factory=list)      # unreliable field

    @property
    def quadratic(self) -> list:
        return [t for t in self.tangencies if t.kind == "quadratic"]

    def to_json(self) -> dict:
        return {"tangencies": [t.to_json() for t in self.tangencies],
                "degenerate_stretches": self.degenerate_stretches,
                "skipped_stretches": self.skipped_stretches}


def _abs_points(curve: CurveSegment, local: np.ndarray) -> np.ndarray:
    return local if curve.origin is None else curve.origin + curve.scale * local


def _planar(curve: CurveSegment, v: np.ndarray) -> np.ndarray:
    """Fiber (last two) coordinates of curve vectors."""
    return v[..., -2:]


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def find_tangencies(lam: Sequence[CurveSegment], field_: DirectionField, tol: float = 1e-10,
                    quad_tol: float = 1e-6, zero_tol: float = 1e-12) -> TangencyReport:
    """Sign changes of s(u) = cross(tangent(u), field(u)) along each curve, refined by bisection."""
    report = TangencyReport([])
    for ci, curve in enumerate(lam):
        L = curve.local
        T = _unit(_planar(curve, curve.tangents))
        E, rel = field_.at(_planar(curve, _abs_points(curve, L)))
        # orient the line field continuously along the curve
        for i in range(1, len(E)):
            if np.dot(E[i], E[i - 1]) < 0:
                E[i] = -E[i]
        s = _cross(T, E)
        arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(_planar(curve, L), axis=0), axis=1))])
        zero = np.abs(s) < zero_tol
        # degenerate stretches: consecutive near-zero samples
        i = 0
        while i < len(s):
            if zero[i]:
                j = i
                while j + 1 < len(s) and zero[j + 1]:
                    j += 1
                if j > i:
                    report.degenerate_stretches.append((ci, float(curve.param[i]), float(curve.param[j])))
                i = j + 1
            else:
                i += 1
        nz = np.flatnonzero(~zero)
        for a, b in zip(nz[:-1], nz[1:]):
            if b - a > 2 or np.sign(s[a]) == np.sign(s[b]):
                continue        # longer zero runs are degenerate stretches
            if not rel[a:b + 1].all():
                report.skipped_stretches.append((ci, float(curve.param[a]), float(curve.param[b])))
                continue
            p, loc, u_par, slope = _refine_tangency(curve, field_, a, b, E[a], s[a], tol)
            kind = "quadratic" if abs(slope) > quad_tol else "degenerate"
            j = min(int(np.searchsorted(curve.param, u_par, side="right")) - 1, len(arc) - 2)
            frac = (u_par - curve.param[j]) / max(curve.param[j + 1] - curve.param[j], 1e-300)
            report.tangencies.append(Tangency(ci, float(u_par), p, loc,
                                              float(arc[j] + frac * (arc[j + 1] - arc[j])), float(slope), kind))
    return report


def _eval_curve(curve: CurveSegment, u: float):
    if curve.gen is not None:
        P, T = curve.gen(np.array([u]))
        return P[0], T[0]
    i = int(np.clip(np.searchsorted(curve.param, u, side="right") - 1, 0, len(curve.param) - 2))
    a, b = curve.param[i], curve.param[i + 1]
    w = (u - a) / (b - a)
    return (1 - w) * curve.local[i] + w * curve.local[i + 1], (1 - w) * curve.tangents[i] + w * curve.tangents[i + 1]


def _refine_tangency(curve, field_, ia, ib, e_ref, s_a, tol):
    a, b = float(curve.param[ia]), float(curve.param[ib])
    span = b - a

    def sval(u):
        P, T = _eval_curve(curve, u)
        e, ok = field_.at(_planar(curve, _abs_points(curve, P))[None, :])
        e = e[0] if np.dot(e[0], e_ref) >= 0 else -e[0]
        t = _unit(_planar(curve, T))
        return float(_cross(t, e)), P

    Pa, _ = _eval_curve(curve, a)
    Pb, _ = _eval_curve(curve, b)
    for _ in range(200):
        mid = 0.5 * (a + b)
        sm, Pm = sval(mid)
        if sm == 0:
            a = b = mid
            break
        if np.sign(sm) == np.sign(s_a):
            a, Pa = mid, Pm
        else:
            b, Pb = mid, Pm
        if np.linalg.norm(_planar(curve, Pb - Pa)) < tol or not (a < 0.5 * (a + b) < b):
            break
    u = 0.5 * (a + b)
    P, _ = _eval_curve(curve, u)
    # slope ds/du with u the local arclength, by a symmetric difference
    h = max(1e-7 * max(abs(span), 1e-300), 4 * np.finfo(float).eps * max(abs(u), 1e-300))
    s1, P1 = sval(u - h)
    s2, P2 = sval(u + h)
    du = np.linalg.norm(_planar(curve, P2 - P1))
    slope = (s2 - s1) / du if du > 0 else 0.0
    return _abs_points(curve, P), P, u, slope


# ---------------------------------------------------------------- lamination of Delta(f)

def _circle_orbit(m: SmoothMap, phi_steps: int) -> np.ndarray:
    """Circle times tau_0 < ... < tau_K = 1/2 with exactly ``phi_steps`` of them in |tau| < eps/2."""
    psi, eps = m.psi, m.psi.eps
    taus = [0.5]
    inner = 0
    while inner < phi_steps:
        t = float(psi.inverse(np.array([taus[-1]]))[0])
        if t <= 0:
            raise OrbitError("circle orbit collapsed to 0")
        taus.append(t)
        inner += t < 0.5 * eps
        if len(taus) > 10000:
            raise OrbitError("circle orbit did not enter the isotopy zone")
    return np.array(taus[::-1])


def lamination_curves(m: SmoothMap, phi_steps: int = 4, sigma_length: float = 1e-5, h_max: float = 1e-3,
                      branches: Sequence[int] = (1, -1), max_turn_deg: float = 2.0,
                      saddle: Optional[PeriodicOrbit] = None) -> list[CurveSegment]:
    """First hits in Delta(f) of the strong unstable leaves through a local unstable curve of phi.

    For a realized solenoid the circle coordinate does not depend on z, so the
    leaf through (0, z) first returns to {0} x D^2 at the image of
    (tau_0, z) after K + 1 steps, where tau_K = 1/2.  Once |tau| >= eps/2 the
    fiber step is affine, z -> b + delta z, so each curve is stored in local
    coordinates: point = origin + delta^J * G(sigma(s)), with G the composite of
    the ``phi_steps`` non-affine fiber steps and sigma the unstable curve of phi
    at its marked saddle.
    """
    dm, braid = getattr(m, "disk_model", None), getattr(m, "braid", None)
    if dm is None or dm.marked_point is None:
        raise OrbitError("model is not a realized disk map with a marked saddle")
    phi = dm.phi
    n, eps = braid.n, m.psi.eps
    if saddle is None:
        saddle = find_periodic(phi, np.asarray(dm.marked_point, dtype=float))
    if saddle.kind != "saddle":
        raise OrbitError(f"marked point is a {saddle.kind}, not a saddle")
    taus = _circle_orbit(m, phi_steps)
    # final step tau = 1/2 -> t = 0 included in the tail
    svals = taus / eps
    first_affine = int(np.argmax(np.abs(svals) >= 0.5))
    head, tail = taus[:first_affine], taus[first_affine:]

    def offset(tau):
        return braid.z(np.atleast_1d(m.psi(np.atleast_1d(tau)) / n))[0]

    c = np.zeros(2)
    for tau in tail:
        c = offset(tau) + dm.delta * c
    scale = dm.delta ** len(tail)
    origin = np.array([0.0, c[0], c[1]])

    curves = []
    for b in branches:
        sig = unstable_segment(phi, saddle, None, sigma_length, h_max=sigma_length / 8,
                               seed_length=sigma_length / 100, branch=b)

        def gen(s, sg=sig.gen):
            z, T = sg(np.asarray(s, dtype=float))
            for tau in head:
                st = np.full(len(z), tau / eps)
                T = np.einsum("nij,nj->ni", dm.jac(z, st), T)
                z = offset(tau) + dm.ev(z, st)
            zeros = np.zeros((len(z), 1))
            return np.hstack([zeros, z]), np.hstack([zeros, T])

        s0 = np.linspace(0.0, 1.0, 17)
        sv, P, T = resample(gen, s0, lambda a, b_: a - b_, h_max, max_turn_deg)
        curves.append(CurveSegment(P, _unit(T), sv, m.domain, origin=origin, scale=scale, gen=gen,
                                   meta={"branch": int(b), "phi_steps": phi_steps, "sigma_length": sigma_length,
                                         "circle_steps": len(taus), "affine_steps": len(tail),
                                         "tau0": float(taus[0]), "h_max": h_max}))
    return curves


def tangency_field(m: SmoothMap, depth: int = 6, n: int = 10, center=None, radius=None) -> DirectionField:
    """Stable direction field of the fiber dynamics on the boxes of a disk around Delta(f)."""
    dm = m.disk_model
    ch = disk2()
    if center is None:
        comps = delta_components(m)
        d = next(cmp for cmp in comps if cmp.role == "delta")
        center, radius = d.center, dm.delta
    keys = point_keys(ch, (depth, depth), np.asarray(center, dtype=float)[None, :], check=False)[0]
    w = int(np.ceil(radius * 2 ** depth / 2)) + 1
    g = np.stack(np.meshgrid(np.arange(-w, w + 1), np.arange(-w, w + 1), indexing="ij"), -1).reshape(-1, 2) + keys
    g = g[((g >= 0) & (g < 2 ** depth)).all(axis=1)]
    region = BoxSet(ch, (depth, depth), g)
    return stable_directions(dm, region, n=n)


def tangency_neighborhood(m: SmoothMap, curve: CurveSegment, tangency: Tangency, N: int = 8,
                          depth: int = 6, radius: float = 1e-6, count: int = 64, transverse: float = 1e-12,
                          seed: int = 0) -> tuple[np.ndarray, BoxSet]:
    """Points on the leaf near a tangency plus a small fiber disk around it, and the boxes of their N-step orbits.

    ``transverse`` is the disk radius; it must stay tiny because backward
    iterates expand transverse offsets by the inverse contraction of phi.
    """
    rng = np.random.default_rng(seed)
    span = radius / max(curve.scale, 1e-300)
    u = tangency.param + np.linspace(-1.0, 1.0, count // 2) * span
    on_leaf = []
    for v in u:
        P, _ = _eval_curve(curve, float(v))
        on_leaf.append(_abs_points(curve, P))
    r = transverse * np.sqrt(rng.uniform(0, 1, count - len(u)))
    a = rng.uniform(0, 2 * np.pi, count - len(u))
    disk = np.tile(tangency.point, (len(r), 1))
    disk[:, -2] += r * np.cos(a)
    disk[:, -1] += r * np.sin(a)
    pts = np.vstack([tangency.point[None, :], np.array(on_leaf), disk])
    chart = m.domain
    codes = []
    y = pts
    for _ in range(N + 1):
        codes.append(_encode(point_keys(chart, (depth,) * chart.dim, y, check=False), (depth,) * chart.dim))
        y = m.f(y)
    region = BoxSet.from_codes(chart, (depth,) * chart.dim, np.concatenate(codes))
    return pts, region
