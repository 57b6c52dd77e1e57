"""Disk maps with an isotopy to a homothety: the plug-in point of the realization.

Two models ship: the homothety itself and a Plykin-type map built from a
composition of explicit area-distorting flows on the round sphere, read in a
stereographic chart and pulled into a small disk by a radial conjugacy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..geometry import disk2
from .base import ConstructionError, SmoothMap


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def smoothstep_d(x):
    inside = (x > 0) & (x < 1)
    return np.where(inside, 6 * x * (1 - x), 0.0)


def smootherstep(x):
    """C^2 step 6x^5 - 15x^4 + 10x^3."""
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (x * (6 * x - 15) + 10)


def smootherstep_d(x):
    inside = (x > 0) & (x < 1)
    return np.where(inside, 30 * x * x * (1 - x) ** 2, 0.0)


@dataclass
class DiskMapModel:
    """A disk map phi with an isotopy s -> phi_s (s in [-1, 1]) ending at the homothety.

    ``ev(x, s)``, ``jac(x, s)`` and ``ds(x, s)`` take ``x`` of shape (N, 2)
    and ``s`` broadcastable to (N,); they return phi_s(x), D_x phi_s(x) and
    d phi_s(x) / ds.  phi_s equals phi at s = 0 and the homothety of ratio
    ``delta`` for |s| >= 1/2.
    """

    name: str
    delta: float
    ev: Callable
    jac: Callable
    ds: Callable
    params: dict = field(default_factory=dict)
    inv_s: Optional[Callable] = None
    marked_point: Optional[np.ndarray] = None
    C: float = 0.0
    s_seams: tuple = ()  # isotopy parameters where phi_s is only C^1 in s

    def __post_init__(self):
        if self.C <= 0:
            self.C = estimate_C(self)

    @property
    def phi(self) -> SmoothMap:
        ch = disk2()
        z = lambda x: np.zeros(len(x))
        inv = None
        if self.inv_s is not None:
            inv = lambda y: self.inv_s(y, np.zeros(len(y)))
        return SmoothMap(f"{self.name}.phi", ch, ch, lambda x: self.ev(x, z(x)),
                         lambda x: self.jac(x, z(x)), np.full((2, 2), self.C), self.params,
                         inv=inv)

    def to_json(self) -> dict:
        return {"name": self.name, "delta": self.delta, "C": self.C, **self.params}


def estimate_C(dm: DiskMapModel, n_x: int = 20000, n_s: int = 9, seed: int = 0) -> float:
    """Sampled max of ||D_x phi_s|| inflated by the largest neighbour variation."""
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform(0, 1, n_x))
    a = rng.uniform(0, 2 * np.pi, n_x)
    x = np.column_stack([r * np.cos(a), r * np.sin(a)])
    best = 0.0
    for s in np.linspace(0.0, 0.5, n_s):
        j = dm.jac(x, np.full(n_x, s))
        nrm = np.linalg.norm(j, ord=2, axis=(1, 2))
        best = max(best, nrm.max())
    # slack from nearby points: ||J|| at the max changes by at most this much on grid scale
    h = 1.0 / np.sqrt(n_x)
    j0 = dm.jac(x, np.zeros(n_x))
    j1 = dm.jac(x + h, np.zeros(n_x))
    slack = np.linalg.norm(j1 - j0, ord=2, axis=(1, 2)).max()
    return float(best + slack)


def homothety_model(delta: float) -> DiskMapModel:
    """The trivial model phi_s = h_delta for every s."""
    if not 0 < delta < 1:
        raise ConstructionError("homothety ratio must lie in (0, 1)")
    ev = lambda x, s: delta * x
    jac = lambda x, s: np.broadcast_to(delta * np.eye(2), (len(x), 2, 2)).copy()
    ds = lambda x, s: np.zeros_like(x)
    inv = lambda y, s: y / delta
    return DiskMapModel("homothety", delta, ev, jac, ds, {"delta": delta}, inv, None, C=delta)



def shear_model(delta: float = 0.15, c0: float = 0.12, b0: float = 0.03, k: float = 100.0) -> DiskMapModel:
    """phi(z) = (c0 z1, c0 z2 + b0 sin(k z1)), a triangular embedding with ||D phi|| near b0 k.

    The isotopy moves c0 to delta and b0 to 0 over |s| <= 1/2.
    """
    if not (0 < c0 and 0 <= b0 and c0 + b0 <= delta < 1):
        raise ConstructionError("shear model needs 0 < c0, 0 <= b0 and c0 + b0 <= delta < 1")

    def coef(s):
        s = np.asarray(s, dtype=float)
        a = np.clip(2 * np.abs(s), 0, 1)
        S, dS = smootherstep(a), 2 * smootherstep_d(a) * np.sign(s)
        return c0 + (delta - c0) * S, b0 * (1 - S), (delta - c0) * dS, -b0 * dS

    def ev(x, s):
        c, b, _, _ = coef(np.broadcast_to(s, (len(x),)))
        return np.column_stack([c * x[:, 0], c * x[:, 1] + b * np.sin(k * x[:, 0])])

    def jac(x, s):
        c, b, _, _ = coef(np.broadcast_to(s, (len(x),)))
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 0] = J[:, 1, 1] = c
        J[:, 1, 0] = b * k * np.cos(k * x[:, 0])
        return J

    def ds(x, s):
        _, _, dc, db = coef(np.broadcast_to(s, (len(x),)))
        return np.column_stack([dc * x[:, 0], dc * x[:, 1] + db * np.sin(k * x[:, 0])])

    def inv(y, s):
        c, b, _, _ = coef(np.broadcast_to(s, (len(y),)))
        z1 = y[:, 0] / c
        return np.column_stack([z1, (y[:, 1] - b * np.sin(k * z1)) / c])

    # sigma_max of [[c, 0], [m, c]] is (m + sqrt(m^2 + 4 c^2)) / 2
    c, b, _, _ = coef(np.linspace(0, 0.5, 2001))
    m = b * k
    C = float(((m + np.sqrt(m * m + 4 * c * c)) / 2).max()) * (1 + 1e-6)
    return DiskMapModel("shear", delta, ev, jac, ds,
                        {"delta": delta, "c0": c0, "b0": b0, "k": k}, inv, None, C=C)

# ---------------------------------------------------------------------------
# sphere-flow building blocks (value, Jacobian) on arrays of shape (N, k)

def _g_series(u, k):
    """g(u) = (exp(2ku) - 1)/u and g'(u), with a series near u = 0."""
    small = u < 1e-4
    us = np.where(small, 1.0, u)
    e = np.expm1(2 * k * us)
    g = np.where(small, 2 * k + 2 * k**2 * u + (4 / 3) * k**3 * u**2 + (2 / 3) * k**4 * u**3, e / us)
    gp = np.where(small, 2 * k**2 + (8 / 3) * k**3 * u + 2 * k**4 * u**2,
                  (2 * k * (e + 1) * us - e) / us**2)
    return g, gp


def push(a, b, k):
    """Time-k map of a' = -a b^2, b' = a^2 b (closed form); returns values and 2x2 Jacobian."""
    u = a * a + b * b
    g, gp = _g_series(u, k)
    E = np.exp(k * u)
    Q = 1.0 + b * b * g
    qa = b * b * gp * 2 * a
    qb = 2 * b * g + b * b * gp * 2 * b
    iq = 1.0 / np.sqrt(Q)
    iq3 = iq / Q
    a1 = a * iq
    b1 = b * E * iq
    J = np.empty(a.shape + (2, 2))
    J[..., 0, 0] = iq - 0.5 * a * iq3 * qa
    J[..., 0, 1] = -0.5 * a * iq3 * qb
    J[..., 1, 0] = b * E * 2 * k * a * iq - 0.5 * b * E * iq3 * qa
    J[..., 1, 1] = E * iq + b * E * 2 * k * b * iq - 0.5 * b * E * iq3 * qb
    return a1, b1, J


def push_val(a, b, k):
    u = a * a + b * b
    g, _ = _g_series(u, abs(k)) if k >= 0 else _g_neg(u, k)
    Q = 1.0 + b * b * g
    iq = 1.0 / np.sqrt(Q)
    return a * iq, b * np.exp(k * u) * iq


def _g_neg(u, k):
    small = u < 1e-4
    us = np.where(small, 1.0, u)
    g = np.where(small, 2 * k + 2 * k**2 * u + (4 / 3) * k**3 * u**2, np.expm1(2 * k * us) / us)
    return g, None


class SphereFlow:
    """Composition of two area-distorting pushes and two twists on S^2 in R^3."""

    def __init__(self, K: float, w: float):
        self.K, self.w = K, w

    def __call__(self, X):
        """Values and 3x3 Jacobians (ambient) of the composition."""
        K, w = self.K, self.w
        x, y, z = X[:, 0], X[:, 1], X[:, 2]
        n = len(X)
        J = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()

        def stage(J, idx, vals, Jloc):
            S = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
            for a, ia in enumerate(idx):
                for b, ib in enumerate(idx):
                    S[:, ia, ib] = Jloc[:, a, b]
            return S @ J

        # 1: push in (x, y)
        x1, y1, Jp = push(x, y, K)
        J = stage(J, (0, 1), None, Jp)
        # 2: rotate (x, y) by w z
        c, s = np.cos(w * z), np.sin(w * z)
        x2, y2 = x1 * c - y1 * s, x1 * s + y1 * c
        R = np.zeros((n, 3, 3))
        R[:, 0, 0], R[:, 0, 1], R[:, 0, 2] = c, -s, -w * y2
        R[:, 1, 0], R[:, 1, 1], R[:, 1, 2] = s, c, w * x2
        R[:, 2, 2] = 1.0
        J = R @ J
        # 3: push in (z, y)
        z3, y3, Jp = push(z, y2, K)
        J = stage(J, (2, 1), None, Jp)
        x3 = x2
        # 4: rotate (z, x) by w y
        c, s = np.cos(w * y3), np.sin(w * y3)
        z4, x4 = z3 * c - x3 * s, z3 * s + x3 * c
        R = np.zeros((n, 3, 3))
        R[:, 2, 2], R[:, 2, 0], R[:, 2, 1] = c, -s, -w * x4
        R[:, 0, 2], R[:, 0, 0], R[:, 0, 1] = s, c, w * z4
        R[:, 1, 1] = 1.0
        J = R @ J
        return np.column_stack([x4, y3, z4]), J

    def inverse(self, X):
        K, w = self.K, self.w
        x4, y3, z4 = X[:, 0], X[:, 1], X[:, 2]
        c, s = np.cos(w * y3), np.sin(w * y3)
        z3, x3 = z4 * c + x4 * s, -z4 * s + x4 * c
        z, y2 = push_val(z3, y3, -K)
        c, s = np.cos(w * z), np.sin(w * z)
        x1, y1 = x3 * c + y2 * s, -x3 * s + y2 * c
        x, y = push_val(x1, y1, -K)
        return np.column_stack([x, y, z])


def stereo_inv(u):
    """Chart R^2 -> S^2 from the pole (1, 0, 0)."""
    s = (u ** 2).sum(1)
    d = s + 1
    X = np.column_stack([(s - 1) / d, 2 * u[:, 0] / d, 2 * u[:, 1] / d])
    J = np.zeros((len(u), 3, 2))
    J[:, 0, :] = 4 * u / d[:, None] ** 2
    for i in range(2):
        for j in range(2):
            J[:, i + 1, j] = (2.0 * (i == j)) / d - 4 * u[:, i] * u[:, j] / d ** 2
    return X, J


def stereo(X):
    m = 1.0 / (1.0 - X[:, 0])
    u = X[:, 1:] * m[:, None]
    J = np.zeros((len(X), 2, 3))
    J[:, 0, 0] = X[:, 1] * m * m
    J[:, 1, 0] = X[:, 2] * m * m
    J[:, 0, 1] = J[:, 1, 2] = m
    return u, J


def _blow_factor(rho, a, r):
    s = np.clip(rho / r, 0.0, 1.0)
    m = 1 + (a - 1) * (1 - s) ** 3
    dm = np.where(rho < r, -3 * (a - 1) * (1 - s) ** 2 / r, 0.0)
    return m, dm


def _radial_inverse(target, a, r):
    """Solve rho * m(rho) = target for rho in [0, r] (identity beyond r)."""
    target = np.asarray(target, dtype=float)
    out = target.copy()
    inside = target < r
    if inside.any():
        tg = target[inside]
        lo = np.zeros_like(tg)
        hi = np.full_like(tg, r)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            m, _ = _blow_factor(mid, a, r)
            big = mid * m > tg
            hi = np.where(big, mid, hi)
            lo = np.where(big, lo, mid)
        out[inside] = 0.5 * (lo + hi)
    return out


def blow(u, c, a, r):
    """Local radial blow-up about c: factor a at c, identity outside radius r."""
    d = u - c
    rho = np.linalg.norm(d, axis=1)
    m, dm = _blow_factor(rho, a, r)
    safe = np.where(rho > 0, rho, 1.0)
    J = m[:, None, None] * np.eye(2) + (dm / safe)[:, None, None] * d[:, :, None] * d[:, None, :]
    return c + m[:, None] * d, J


def blow_inv(v, c, a, r):
    d = v - c
    rho1 = np.linalg.norm(d, axis=1)
    rho = _radial_inverse(rho1, a, r)
    scale = np.where(rho1 > 0, rho / np.where(rho1 > 0, rho1, 1.0), 1.0 / a)
    return c + scale[:, None] * d


def blow_infinity(u, a, r):
    """Blow-up at the point at infinity: conjugate of ``blow`` by inversion."""
    n = np.linalg.norm(u, axis=1)
    sn = np.maximum(n, 1e-300)
    m, dm = _blow_factor(1.0 / sn, a, r)
    mu = 1.0 / m
    near = dm != 0
    dmu = np.where(near, dm / np.where(near, sn ** 2 * m ** 2, 1.0), 0.0)
    J = mu[:, None, None] * np.eye(2) + (dmu / sn)[:, None, None] * u[:, :, None] * u[:, None, :]
    return mu[:, None] * u, J


def blow_infinity_inv(v, a, r):
    n1 = np.linalg.norm(v, axis=1)
    # |out| = n / m(1/n)  <=>  sigma m(sigma) = 1/|out| with sigma = 1/n
    sig = _radial_inverse(1.0 / np.maximum(n1, 1e-300), a, r)
    n = 1.0 / sig
    return (n / np.maximum(n1, 1e-300))[:, None] * v


class PlykinChartMap:
    """H: R^2 -> R^2, the sphere flow read in the chart plus three local blow-ups."""

    def __init__(self, K=1.4, w=np.pi / np.sqrt(2), a=4.3, r=0.3, ax=4.5, rx=0.3):
        if not (1 < a < 5 and 1 < ax < 5):
            raise ConstructionError("blow-up factors must lie in (1, 5) to stay monotone")
        self.G = SphereFlow(K, w)
        self.a, self.r, self.ax, self.rx = a, r, ax, rx
        self.cp = np.array([1.0, 0.0])
        self.cm = np.array([-1.0, 0.0])

    def __call__(self, u):
        X, J1 = stereo_inv(u)
        Y, J2 = self.G(X)
        v, J3 = stereo(Y)
        v, J4 = blow_infinity(v, self.ax, self.rx)
        v, J5 = blow(v, self.cp, self.a, self.r)
        v, J6 = blow(v, self.cm, self.a, self.r)
        return v, J6 @ J5 @ J4 @ J3 @ J2 @ J1

    def inverse(self, v):
        v = blow_inv(v, self.cm, self.a, self.r)
        v = blow_inv(v, self.cp, self.a, self.r)
        v = blow_infinity_inv(v, self.ax, self.rx)
        X, _ = stereo_inv(v)
        Y = self.G.inverse(X)
        u, _ = stereo(Y)
        return u


class RadialConjugacy:
    """kappa^{-1}: D(1) -> D(R), linear of slope R_in/s1 up to s1, then compressing to R at 1."""

    def __init__(self, R=6.0, R_in=5.2, s1=0.1425, c=0.5):
        self.R, self.R_in, self.s1, self.c = R, R_in, s1, c
        slope = R_in / s1
        self.k = (slope * (1 - s1) / (R - R_in) - c) / (1 - c)
        if self.k < 1:
            raise ConstructionError("radial conjugacy parameters give a non-C^1 profile")

    def q(self, s):
        s = np.asarray(s, dtype=float)
        tau = np.clip((s - self.s1) / (1 - self.s1), 0, 1)
        outer = self.R_in + (self.R - self.R_in) * ((1 - self.c) * (1 - (1 - tau) ** self.k) + self.c * tau)
        return np.where(s <= self.s1, self.R_in / self.s1 * s, outer)

    def dq(self, s):
        s = np.asarray(s, dtype=float)
        tau = np.clip((s - self.s1) / (1 - self.s1), 0, 1)
        outer = (self.R - self.R_in) * ((1 - self.c) * self.k * (1 - tau) ** (self.k - 1) + self.c) / (1 - self.s1)
        return np.where(s <= self.s1, self.R_in / self.s1, outer)

    def q_inv(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = rho * self.s1 / self.R_in
        big = rho > self.R_in
        if big.any():
            lo = np.full(big.sum(), self.s1)
            hi = np.ones(big.sum())
            tg = rho[big]
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                over = self.q(mid) > tg
                hi = np.where(over, mid, hi)
                lo = np.where(over, lo, mid)
            out[big] = 0.5 * (lo + hi)
        return out

    def to_chart(self, x):
        """kappa^{-1}(x) and its Jacobian."""
        s = np.linalg.norm(x, axis=1)
        ss = np.where(s > 0, s, 1.0)
        q = self.q(s)
        Q = np.where(s > 0, q / ss, self.R_in / self.s1)
        dQ = np.where(s > 0, (self.dq(s) * ss - q) / ss ** 2, 0.0)
        J = Q[:, None, None] * np.eye(2) + (dQ / ss)[:, None, None] * x[:, :, None] * x[:, None, :]
        return Q[:, None] * x, J

    def from_chart(self, u):
        rho = np.linalg.norm(u, axis=1)
        s = self.q_inv(rho)
        scale = np.where(rho > 0, s / np.where(rho > 0, rho, 1.0), self.s1 / self.R_in)
        return scale[:, None] * u


def plykin_model(delta: float = 0.15, K: float = 1.4, a: float = 4.3, ax: float = 4.5,
                 u0: float | None = None) -> DiskMapModel:
    """Plykin-type disk map phi = kappa o H o H o kappa^{-1} with its isotopy to h_delta.

    The chart map H has fixed saddles at (+-1, 0), whose images under kappa
    are the marked points; det D(H o H) there exceeds 1.
    """
    H = PlykinChartMap(K=K, a=a, ax=ax)
    R, R_in = 6.0, 5.2
    kap = RadialConjugacy(R=R, R_in=R_in, s1=0.95 * delta)
    lin = kap.s1 / R_in  # kappa is linear with this slope on D(R_in)

    def phi0(x):
        u, J0 = kap.to_chart(x)
        v, J1 = H(u)
        w, J2 = H(v)
        if (np.linalg.norm(w, axis=1) > R_in).any():
            raise ConstructionError("H o H leaves the linear zone of the conjugacy")
        return lin * w, lin * (J2 @ J1 @ J0)

    def phi0_inv(y):
        u = y / lin
        return kap.from_chart(H.inverse(H.inverse(u)))

    M = phi0(np.zeros((1, 2)))[1][0]
    if np.linalg.det(M) <= 0:
        raise ConstructionError("phi reverses orientation at the isotopy base point")
    U, S, Vt = np.linalg.svd(M)
    Q = U @ Vt
    P = Vt.T @ np.diag(S) @ Vt
    theta0 = float(np.arctan2(Q[1, 0], Q[0, 0]))
    if u0 is None:
        # shrink until phi is close to its linear part on D(u0): keeps the isotopy injective
        u0 = 0.5 * delta / S[0]
        ring = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        ring = np.column_stack([np.cos(ring), np.sin(ring)])
        probe = np.concatenate([ring, 0.5 * ring])
        while np.linalg.norm(phi0(u0 * probe)[1] - M, ord=2, axis=(1, 2)).max() > 0.25 * S[1]:
            u0 *= 0.5
            if u0 < 1e-12:
                raise ConstructionError("phi is not differentiable at the isotopy base point")
    Jrot = np.array([[0.0, -1.0], [1.0, 0.0]])

    def rot(th):
        c, s = np.cos(th), np.sin(th)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)

    def parts(s):
        s = np.abs(np.asarray(s, dtype=float))
        ua = 1 + (u0 - 1) * smoothstep(4 * s)
        dua = (u0 - 1) * 4 * smoothstep_d(4 * s)
        w = smoothstep(4 * s - 1)
        dw = 4 * smoothstep_d(4 * s - 1)
        return s, ua, dua, w, dw

    def Lw(w):
        base = (1 - w)[:, None, None] * u0 * P + w[:, None, None] * delta * np.eye(2)
        return rot(theta0 * (1 - w)) @ base, base

    def ev(x, s):
        y, _, _ = _all(x, s, need_ds=False)
        return y

    def jac(x, s):
        _, J, _ = _all(x, s, need_ds=False)
        return J

    def ds(x, s):
        _, _, d = _all(x, s, need_ds=True)
        return d

    def _all(x, s, need_ds):
        x = np.atleast_2d(x)
        sgn = np.sign(np.broadcast_to(np.asarray(s, dtype=float), (len(x),)))
        s, ua, dua, w, dw = parts(np.broadcast_to(s, (len(x),)))
        y = np.empty_like(x)
        J = np.empty((len(x), 2, 2))
        d = np.zeros_like(x)
        A = s <= 0.25
        B = (s > 0.25) & (s < 0.5)
        Cz = s >= 0.5
        if A.any():
            xa = ua[A, None] * x[A]
            v, Jv = phi0(xa)
            y[A] = v
            J[A] = ua[A, None, None] * Jv
            if need_ds:
                d[A] = sgn[A, None] * dua[A, None] * np.einsum("nij,nj->ni", Jv, x[A])
        if B.any():
            xb = u0 * x[B]
            v, Jv = phi0(xb)
            E = v - xb @ M.T  # A(x) - u0 M x
            DE = u0 * Jv - u0 * M
            L, base = Lw(w[B])
            y[B] = (1 - w[B])[:, None] * E + np.einsum("nij,nj->ni", L, x[B])
            J[B] = (1 - w[B])[:, None, None] * DE + L
            if need_ds:
                R = rot(theta0 * (1 - w[B]))
                dL = R @ (-theta0 * (Jrot @ base) + (delta * np.eye(2) - u0 * P))
                d[B] = sgn[B, None] * dw[B, None] * (-E + np.einsum("nij,nj->ni", dL, x[B]))
        if Cz.any():
            y[Cz] = delta * x[Cz]
            J[Cz] = delta * np.eye(2)
        return y, J, d

    def inv_s(y, s):
        y = np.atleast_2d(y)
        s, ua, _, w, _ = parts(np.broadcast_to(s, (len(y),)))
        x = np.empty_like(y)
        A = s <= 0.25
        B = (s > 0.25) & (s < 0.5)
        Cz = s >= 0.5
        if A.any():
            x[A] = phi0_inv(y[A]) / ua[A, None]
        if Cz.any():
            x[Cz] = y[Cz] / delta
        if B.any():
            L, _ = Lw(w[B])
            xb = np.linalg.solve(L, y[B][:, :, None])[:, :, 0]
            for _ in range(50):
                r = _all(xb, s[B], False)
                xb = xb - np.linalg.solve(r[1], (r[0] - y[B])[:, :, None])[:, :, 0]
            x[B] = xb
        return x

    marked = np.array([lin * 1.0, 0.0])
    params = {"kind": "plykin", "K": K, "a": a, "ax": ax, "u0": u0, "R": R, "R_in": R_in,
              "s1": kap.s1}
    return DiskMapModel("plykin", delta, ev, jac, ds, params, inv_s, marked, s_seams=(0.25, 0.5))
