"""Sampled checks of cone invariance, expansion, dominated splittings and sectional expansion.

Every verdict here holds at sampled resolution only; the sample and fan
parameters are stored with each result.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .geometry import BoxSet, DomainError, _encode, keys_to_centers, point_keys
from .models.base import SmoothMap

SIGMA_MIN = 1e-12


class HyperbolicityError(ValueError):
    """Degenerate Jacobian, missing inverse, or orbits leaving the region."""

    def __init__(self, msg: str, boxes: Optional[list] = None):
        super().__init__(msg)
        self.boxes = boxes or []


@dataclass
class ConeField:
    """C_alpha(x) = {v : |v_perp| <= alpha |v_F|} around a bundle F.

    ``basis`` is a (d, k) array with orthonormal columns, or a callable
    returning an (N, d, k) array for N points.
    """

    basis: Union[np.ndarray, Callable]
    alpha: float

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ValueError("cone aperture must be positive and finite")

    def frames(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal frames of F and of its complement at each row of ``x``."""
        n, d = x.shape
        if callable(self.basis):
            F = np.asarray(self.basis(x), dtype=float)
        else:
            F = np.broadcast_to(np.asarray(self.basis, dtype=float), (n, d, np.shape(self.basis)[1]))
        F, _ = np.linalg.qr(F)
        k = F.shape[2]
        full, _ = np.linalg.qr(np.concatenate([F, np.broadcast_to(np.eye(d), (n, d, d))], axis=2))
        return F, full[:, :, k:d]

    @classmethod
    def axis(cls, dim: int, axes: Sequence[int], alpha: float) -> "ConeField":
        return cls(np.eye(dim)[:, list(axes)], alpha)


def _sphere_fan(k: int, count: int) -> np.ndarray:
    """Deterministic unit vectors in R^k (equispaced on the circle for k = 2)."""
    if k == 0:
        return np.zeros((1, 0))
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        a = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(a), np.sin(a)])
    v = np.random.default_rng(12345).normal(size=(count, k))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def cone_fan(k: int, d: int, alpha: float, count: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Extremal cone directions as (F-coefficients, complement-coefficients) pairs."""
    uf = _sphere_fan(k, count)
    if k == 1:
        uf = uf[:1]   # the cone is symmetric under v -> -v
    wp = _sphere_fan(d - k, count)
    u = np.repeat(uf, len(wp), axis=0)
    w = np.tile(wp, (len(uf), 1))
    return u, alpha * w


def sample_region(region: BoxSet, samples: int, seed: int = 0, domain=None) -> np.ndarray:
    """Uniform random points in randomly chosen boxes of ``region`` (inside the round domain)."""
    rng = np.random.default_rng(seed)
    chart = region.chart
    if len(region) == 0:
        raise DomainError("empty region")
    out = []
    need = samples
    for _ in range(50):
        idx = np.sort(rng.integers(0, len(region), size=2 * need))
        c, r = keys_to_centers(chart, region.depth, region.keys[idx])
        x = c + rng.uniform(-1, 1, c.shape) * r
        for k in chart.periodic_dims:
            x[:, k] = np.mod(x[:, k], 1.0)
        x = x[(domain or chart).contains(x)]
        out.append(x[:need])
        need -= len(x[:need])
        if need <= 0:
            break
    return np.concatenate(out)


def _orbit_jacobian(m: SmoothMap, x: np.ndarray, ell: int) -> tuple[np.ndarray, np.ndarray]:
    """(f^ell(x), Df^ell(x)); raises if an orbit leaves the domain."""
    J = np.broadcast_to(np.eye(m.domain.dim), (len(x), m.domain.dim, m.domain.dim)).copy()
    y = x
    for step in range(ell):
        bad = ~m.domain.contains(y, tol=1e-12)
        if bad.any():
            raise HyperbolicityError(f"orbit of {int(bad.sum())} sample(s) left the domain at step {step}")
        J = m.df(y) @ J
        y = m.f(y)
    return y, J


def _check_nondegenerate(J: np.ndarray):
    s = np.linalg.svd(J, compute_uv=False)
    if (s[:, -1] < SIGMA_MIN).any():
        raise HyperbolicityError(f"degenerate Jacobian: sigma_min = {s[:, -1].min():.3g}")


@dataclass
class ConeResult:
    ok: bool
    beta: float
    alpha: float
    ell: int
    n_points: int
    fan: int
    worst_point: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def _cone_images(m, cone, x, ell, fan):
    y, J = _orbit_jacobian(m, x, ell)
    _check_nondegenerate(J)
    F, P = cone.frames(x)
    Fy, Py = cone.frames(y)
    k, d = F.shape[2], x.shape[1]
    u, w = cone_fan(k, d, cone.alpha, fan)
    v = np.einsum("ndk,mk->nmd", F, u) + np.einsum("ndj,mj->nmd", P, w)   # (N, M, d)
    Jv = np.einsum("nij,nmj->nmi", J, v)
    comp_F = np.linalg.norm(np.einsum("ndk,nmd->nmk", Fy, Jv), axis=2)
    comp_P = np.linalg.norm(np.einsum("ndj,nmd->nmj", Py, Jv), axis=2)
    return u, comp_F, comp_P


def check_cone_invariance(m: SmoothMap, region: BoxSet, cone: ConeField, ell: int = 1,
                          samples: int = 2000, seed: int = 0, fan: int = 64,
                          points: Optional[np.ndarray] = None) -> ConeResult:
    """Smallest beta with Df^ell C_alpha(x) inside C_beta(f^ell x) over the samples; ok iff beta < alpha."""
    x = sample_region(region, samples, seed, m.domain) if points is None else np.atleast_2d(points)
    _, cF, cP = _cone_images(m, cone, x, ell, fan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cF > 0, cP / cF, np.inf)
    per_point = ratio.max(axis=1)
    i = int(np.argmax(per_point))
    beta = float(per_point[i])
    return ConeResult(bool(beta < cone.alpha), beta, cone.alpha, ell, len(x), fan, x[i].tolist())


def expansion_constant(m: SmoothMap, region: BoxSet, cone: ConeField, ell: int = 1,
                       samples: int = 2000, seed: int = 0, fan: int = 64,
                       points: Optional[np.ndarray] = None) -> float:
    """Infimum of |(Df^ell v)_F| / |v_F| over sampled points and extremal cone vectors."""
    x = sample_region(region, samples, seed, m.domain) if points is None else np.atleast_2d(points)
    u, cF, _ = _cone_images(m, cone, x, ell, fan)
    return float((cF / np.linalg.norm(u, axis=1)[None, :]).min())


# ---------------------------------------------------------------- dominated splittings

@dataclass
class DominationCertificate:
    chart: str
    depth: list
    dims: tuple
    N: int
    lambda_hat: float          # worst ratio over samples and steps n = 1..N
    rate: float                # worst per-step rate ratio_n ** (1/n)
    n_points: int
    box_ratios: dict           # box key (as string) -> worst ratio

    @property
    def valid(self) -> bool:
        return self.lambda_hat < 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["valid"] = self.valid
        return d


@dataclass
class DominationFailure:
    """Boxes where some n-step ratio (n <= N) reached 1: no dominated splitting with these dims is seen there."""

    dims: tuple
    N: int
    boxes: BoxSet
    worst_ratio: float
    witness: list
    n_points: int
    box_ratios: dict

    def to_json(self) -> dict:
        return {"dims": list(self.dims), "N": self.N, "worst_ratio": self.worst_ratio,
                "witness": self.witness, "n_points": self.n_points,
                "boxes": self.boxes.to_json(), "box_ratios": self.box_ratios}


def _intersect(P: np.ndarray, Q: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal bases of span(P) cap span(Q) (batched, expected dimension k)."""
    if P.shape[2] + Q.shape[2] - P.shape[1] == P.shape[2]:
        return P  # Q spans everything
    M = np.concatenate([P, -Q], axis=2)
    _, _, Wt = np.linalg.svd(M)
    A = np.transpose(Wt[:, -k:, :P.shape[2]], (0, 2, 1))
    B, _ = np.linalg.qr(P @ A)
    return B


def splitting_ratios(m: SmoothMap, x: np.ndarray, dims: tuple, N: int,
                     past: Optional[np.ndarray] = None, per_step: bool = False) -> np.ndarray:
    """Ratios ||Df^n|E1(x)|| / m(Df^n|E2(x)) for finite-time bundles at each point.

    E1 = the d1 most contracted right singular directions of Df^N(x) (future);
    E2 = the past-dominant (d - d1)-space (left singular directions of
    Df^N(f^-N x)) intersected with the future (d1 + d2) most contracted space.
    ``past`` gives f^-N x directly; otherwise the map inverse is used.
    Returns the n = N ratio, or with ``per_step`` an (points, N) array for n = 1..N.
    """
    d1, d2 = (int(v) for v in dims)
    d = m.domain.dim
    if d1 < 1 or d2 < 1 or d1 + d2 > d:
        raise ValueError(f"dims {dims} incompatible with dimension {d}")
    z = past
    if z is None:
        if m.inv is None:
            raise HyperbolicityError("points without a past orbit need an invertible map")
        z = x
        for step in range(N):
            z = m.inverse(z)
            if np.isnan(z).any():
                raise HyperbolicityError(f"past orbit left the image at step {step + 1}")
    _, Jpast = _orbit_jacobian(m, z, N)
    Js = []
    J = np.broadcast_to(np.eye(d), (len(x), d, d)).copy()
    y = x
    for step in range(N):
        if not m.domain.contains(y, tol=1e-12).all():
            raise HyperbolicityError(f"orbit left the domain at step {step}")
        D = m.df(y)
        _check_nondegenerate(D)  # per step: long products are legitimately tiny
        J = D @ J
        y = m.f(y)
        Js.append(J)
    _, _, Vt = np.linalg.svd(J)
    E1 = np.transpose(Vt[:, d - d1:, :], (0, 2, 1))
    U, _, _ = np.linalg.svd(Jpast)
    E2 = _intersect(U[:, :, :d - d1], np.transpose(Vt[:, d - d1 - d2:, :], (0, 2, 1)), d2)
    out = []
    for Jn in (Js if per_step else Js[-1:]):
        top = np.linalg.svd(Jn @ E1, compute_uv=False)[:, 0]
        low = np.linalg.svd(Jn @ E2, compute_uv=False)[:, -1]
        out.append(top / low)
    return np.stack(out, axis=1) if per_step else out[0]


def check_domination(m: SmoothMap, region: BoxSet, dims: tuple = (2, 1), N: int = 8,
                     samples: int = 2000, seed: int = 0,
                     points: Optional[np.ndarray] = None) -> Union[DominationCertificate, DominationFailure]:
    """Finite-time test of a dominated splitting with bundle dimensions ``dims`` (weak first).

    Bundles come from the N-step horizon; the ratio is checked at every n = 1..N.

    Random samples x0 are pushed N steps forward and the ratio is taken at
    f^N(x0), so x0 itself provides the past orbit; explicit ``points`` use
    the map inverse instead.
    """
    depth = region.depth
    if points is None:
        past = sample_region(region, samples, seed, m.domain)
        x = past
        for _ in range(N):
            x = m.f(x)
        start, steps = past, 2 * N
    else:
        x, past = np.atleast_2d(points), None
        start, steps = x, N

    def codes_of(y):
        return _encode(point_keys(region.chart, depth, y, check=False), depth)

    y, start_codes = start, codes_of(start)
    for step in range(steps + 1):
        if step:
            y = m.f(y)
        inside = region.contains_codes(codes_of(y))
        if not inside.all():
            bad = np.unique(start_codes[~inside])
            keys = BoxSet.from_codes(region.chart, depth, bad).keys.tolist()
            raise HyperbolicityError(f"{len(keys)} box(es) leave the region within {steps} steps", keys)
    # the bundles are fixed by the N-step horizon; domination must hold at every n <= N
    R = splitting_ratios(m, x, dims, N, past, per_step=True)
    r = R.max(axis=1)
    rate = float((R ** (1.0 / np.arange(1, N + 1))).max())
    src_codes = codes_of(x)
    order = np.argsort(src_codes, kind="stable")
    uc, first = np.unique(src_codes[order], return_index=True)
    worst = np.maximum.reduceat(r[order], first)
    keys = BoxSet.from_codes(region.chart, depth, uc).keys
    box_ratios = {",".join(map(str, k)): float(v) for k, v in zip(keys.tolist(), worst)}
    lam = float(r.max())
    if lam < 1:
        return DominationCertificate(region.chart.id, list(depth), tuple(dims), N, lam, rate,
                                     len(x), box_ratios)
    bad = uc[worst >= 1]
    i = int(np.argmax(r))
    return DominationFailure(tuple(dims), N, BoxSet.from_codes(region.chart, depth, bad), lam,
                             x[i].tolist(), len(x), box_ratios)


def sectional_expansion(multipliers: Sequence[float]) -> bool:
    """True iff every product of two distinct-index moduli exceeds 1."""
    mods = np.sort(np.abs(np.asarray(multipliers, dtype=float)))
    if mods.size == 0:
        raise ValueError("no multipliers given")
    if mods.size == 1:
        return True
    return bool(mods[0] * mods[1] > 1)
