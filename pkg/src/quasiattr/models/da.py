"""Derived-from-Anosov modification of a canonical solenoid at its fixed point."""
from __future__ import annotations

import numpy as np

from .base import ConstructionError, SmoothMap, sampled_local_lipschitz


def _bump(s):
    """(1 - s^2)^2 on [0, 1), zero beyond; C^1 at s = 1."""
    s = np.abs(s)
    return np.where(s < 1, (1 - s * s) ** 2, 0.0)


def _bump_d(s):
    a = np.abs(s)
    return np.where(a < 1, -4 * s * (1 - s * s), 0.0)


def da_solenoid(base: SmoothMap, rho_u: float = 0.2, rho_v: float = 0.3) -> SmoothMap:
    """g = f o Theta, where Theta is supported in a box around the fixed point omega of f.

    In eigen-coordinates (u, v) of Df(omega) the modification first slows the
    expanding coordinate near u = 0 (slope 1/(2n) at the origin), which splits
    omega into a sink and two saddles at u ~ +-0.65 rho_u, then expands the
    stable disk radially (slope 1/(2 delta)), so that Dg(omega) = I/2.
    Outside |u| < rho_u, |v| < rho_v the map equals f.
    """
    braid = getattr(base, "braid", None)
    delta = getattr(base, "delta", None)
    if braid is None or delta is None:
        raise ConstructionError("da_solenoid needs a canonical solenoid as base")
    n = braid.n
    if n < 2:
        raise ConstructionError("da_solenoid needs an expanding base (n >= 2)")
    a0 = 1.0 / (2 * n)
    b0 = 1.0 / (2 * delta)
    # radial profile r (1 + (b0-1)(1-r/rho)^5) is monotone iff (b0-1) * 0.1975 < 1
    if (b0 - 1) * (2.0 / 3.0) ** 4 >= 0.95:
        raise ConstructionError(f"delta={delta:g} too small for the radial normal form (need delta > 0.0825)")
    z0 = braid.z(np.zeros(1))[0]
    w = braid.dz(np.zeros(1))[0] / (n - delta)
    omega = np.concatenate([[0.0], z0 / (1 - delta)])
    if not 0 < rho_u < 1.0 / (2 * n):
        raise ConstructionError(f"modification radius rho_u={rho_u:g} must lie in (0, 1/(2n))")
    reach = np.linalg.norm(omega[1:]) + rho_u * np.linalg.norm(w) + rho_v
    if reach >= 1 - 1e-9:
        raise ConstructionError(f"modification box reaches the torus boundary (|z| up to {reach:.3f})")

    A = np.eye(3)
    A[1:, 0] = w
    Ainv = np.eye(3)
    Ainv[1:, 0] = -w

    def to_eig(x):
        d = x - omega
        d[:, 0] = np.mod(d[:, 0] + 0.5, 1.0) - 0.5
        return d @ Ainv.T

    def from_eig(q):
        x = q @ A.T + omega
        x[:, 0] = np.mod(x[:, 0], 1.0)
        return x

    def alpha(u):
        s = u / rho_u
        s4 = s ** 4
        inside = np.abs(s) < 1
        # flat-topped bump (1-s^4)^2 keeps the slope near a0 over most of the box
        g = np.where(inside, (1 - s4) ** 2, 0.0)
        gd = np.where(inside, (1 - s4) * (1 - 9 * s4), 0.0)  # d/du [u g(u/rho_u)]
        return u * (1 + (a0 - 1) * g), 1 + (a0 - 1) * gd

    def radial(r):
        x = r / rho_v
        inside = x < 1
        p5 = np.where(inside, (1 - x) ** 5, 0.0)
        p4 = np.where(inside, (1 - x) ** 4, 0.0)
        return 1 + (b0 - 1) * p5, -(b0 - 1) * 5 * p4 / rho_v  # R(r)/r and its r-derivative

    def theta(q, need_jac=True):
        u, v = q[:, 0], q[:, 1:]
        r = np.linalg.norm(v, axis=1)
        cv = _bump(r / rho_v)
        al, dal = alpha(u)
        u1 = u + cv * (al - u)
        cu = _bump(u1 / rho_u)
        m, dm = radial(r)
        scale = 1 + cu * (m - 1)
        out = np.column_stack([u1, scale[:, None] * v])
        if not need_jac:
            return out, None
        safe = np.where(r > 0, r, 1.0)
        vhat = np.where(r[:, None] > 0, v / safe[:, None], 0.0)
        J1 = np.zeros((len(q), 3, 3))
        J1[:, 0, 0] = 1 + cv * (dal - 1)
        J1[:, 0, 1:] = (_bump_d(r / rho_v) / rho_v * (al - u))[:, None] * vhat
        J1[:, 1, 1] = J1[:, 2, 2] = 1.0
        J2 = np.zeros((len(q), 3, 3))
        J2[:, 0, 0] = 1.0
        J2[:, 1:, 0] = (_bump_d(u1 / rho_u) / rho_u * (m - 1))[:, None] * v
        J2[:, 1:, 1:] = scale[:, None, None] * np.eye(2) + (cu * dm * r)[:, None, None] * vhat[:, :, None] * vhat[:, None, :]
        return out, J2 @ J1

    def theta_inv(q):
        u1, v1 = q[:, 0], q[:, 1:]
        r1 = np.linalg.norm(v1, axis=1)
        cu = _bump(u1 / rho_u)
        # radial part: r1 = r (1 + cu (R(r)/r - 1)) is increasing in r
        lo, hi = np.zeros_like(r1), r1.copy()
        hi = np.maximum(hi, r1)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            val = mid * (1 + cu * (radial(mid)[0] - 1))
            big = val > r1
            hi = np.where(big, mid, hi)
            lo = np.where(big, lo, mid)
        r = 0.5 * (lo + hi)
        v = np.where(r1[:, None] > 0, v1 * (r / np.where(r1 > 0, r1, 1.0))[:, None], 0.0)
        cv = _bump(r / rho_v)
        lo, hi = np.full_like(u1, -0.5), np.full_like(u1, 0.5)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            val = mid + cv * (alpha(mid)[0] - mid)
            big = val > u1
            hi = np.where(big, mid, hi)
            lo = np.where(big, lo, mid)
        return np.column_stack([0.5 * (lo + hi), v])

    def support(q):
        return (np.abs(q[:, 0]) < rho_u) & (np.linalg.norm(q[:, 1:], axis=1) < rho_v)

    def modify(x):
        q = to_eig(x)
        inside = support(q)
        y = x.copy()
        if inside.any():
            y[inside] = from_eig(theta(q[inside], False)[0])
        return y

    def f(x):
        return base.f(modify(x))

    def df(x):
        q = to_eig(x)
        inside = support(q)
        y = x.copy()
        Jt = np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy()
        if inside.any():
            out, J = theta(q[inside])
            y[inside] = from_eig(out)
            Jt[inside] = A @ J @ Ainv
        return base.df(y) @ Jt

    def inv(y):
        x = base.inverse(y)
        ok = ~np.isnan(x).any(axis=1)
        q = to_eig(np.where(ok[:, None], x, 0.0))
        inside = ok & support(q)
        if inside.any():
            x[inside] = from_eig(theta_inv(q[inside]))
        return x

    # entrywise bound: base bound outside the support, dense samples (x 1.25) inside
    rng = np.random.default_rng(0)
    qs = rng.uniform(-1, 1, (40000, 3)) * np.array([rho_u, rho_v, rho_v])
    lip = np.maximum(base.lipschitz, 1.25 * np.abs(df(from_eig(qs))).max(axis=0))
    params = {"base": base.params, "rho_u": rho_u, "rho_v": rho_v,
              "omega": omega.tolist(), "a0": a0, "b0": b0}
    g = SmoothMap("da_solenoid", base.domain, base.codomain, f, df, lip, params,
                  local_lipschitz=sampled_local_lipschitz(df, k=3, safety=1.5, cap=lip), inv=inv)
    g.omega, g.base, g.braid, g.delta = omega, base, braid, delta
    g.saddle_u = rho_u * (1 - np.sqrt((1 - 1.0 / n) / (1 - a0))) ** 0.25
    g.to_eig, g.from_eig, g.in_support = to_eig, from_eig, lambda x: support(to_eig(np.atleast_2d(x)))
    return g
