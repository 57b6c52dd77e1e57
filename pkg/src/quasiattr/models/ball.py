"""Extending a solid-torus map to the 3-ball, and normally contracting products."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..geometry import ball3, ball_d
from .base import ConstructionError, SmoothMap, sampled_local_lipschitz
from .diskmaps import smoothstep, smoothstep_d


@dataclass(frozen=True)
class ShellParams:
    """Placement of the solid torus in D^3 and the homothety shell around it.

    The torus is E(S^1 x D^2) with core circle of radius ``R0`` in the
    xy-plane and tube radius ``a``. The composed map is the torus map on the
    tube of relative radius ``core`` and blends into the outer map on
    ``core <= |z| <= 1``. For ``|p| >= mu_end`` the outer map is the
    homothety of ratio ``ratio``; ``shell`` is the radius from which that is
    advertised. The outer map fixes the circle of radius ``r_fix`` in the
    xy-plane.
    """

    R0: float = 0.4
    a: float = 0.2
    core: float = 0.75
    mu_end: float = 0.85
    shell: float = 0.9
    ratio: float = 0.5
    r_fix: float = 0.3

    def validate(self) -> None:
        if not 0 < self.ratio < 1:
            raise ConstructionError("shell contraction ratio must lie in (0, 1)")
        if not 0 < self.a < self.R0:
            raise ConstructionError("tube radius must be positive and below the core radius")
        if not self.R0 + self.a < self.mu_end <= self.shell < 1:
            raise ConstructionError("torus must lie strictly inside the homothety shell: "
                                    f"R0 + a = {self.R0 + self.a:g}, mu_end = {self.mu_end:g}, shell = {self.shell:g}")
        if not 0 < self.core < 1:
            raise ConstructionError("core fraction must lie in (0, 1)")
        # r mu(r) is increasing iff ratio > (1 - ratio) kappa / 4
        kappa = 1.0 / (1 - self.r_fix / self.mu_end) ** 3
        if not (0 < self.r_fix < self.mu_end and self.ratio > (1 - self.ratio) * kappa / 4):
            raise ConstructionError(f"r_fix={self.r_fix:g} makes the outer radial profile fold")


def torus_embedding(sp: ShellParams):
    """E(t, z) and E^{-1}(p) with their Jacobians."""
    R0, a = sp.R0, sp.a

    def E(q):
        c, s = np.cos(2 * np.pi * q[:, 0]), np.sin(2 * np.pi * q[:, 0])
        P = R0 + a * q[:, 1]
        p = np.column_stack([P * c, P * s, a * q[:, 2]])
        J = np.zeros((len(q), 3, 3))
        J[:, 0, 0], J[:, 1, 0] = -2 * np.pi * P * s, 2 * np.pi * P * c
        J[:, 0, 1], J[:, 1, 1] = a * c, a * s
        J[:, 2, 2] = a
        return p, J

    def Einv(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        rho = np.hypot(x, y)
        r2 = np.maximum(rho * rho, 1e-300)
        q = np.column_stack([np.mod(np.arctan2(y, x) / (2 * np.pi), 1.0), (rho - R0) / a, z / a])
        J = np.zeros((len(p), 3, 3))
        J[:, 0, 0], J[:, 0, 1] = -y / (2 * np.pi * r2), x / (2 * np.pi * r2)
        rs = np.maximum(rho, 1e-300)
        J[:, 1, 0], J[:, 1, 1] = x / (a * rs), y / (a * rs)
        J[:, 2, 2] = 1 / a
        return q, J

    return E, Einv


def _outer_parts(sp: ShellParams):
    ratio = sp.ratio
    kappa = 1.0 / (1 - sp.r_fix / sp.mu_end) ** 3

    def mu(r):
        # mu = ratio + (1 - ratio) kappa (1 - r/mu_end)^3, equal to 1 at r_fix
        x = np.clip(r / sp.mu_end, 0.0, 1.0)
        return ratio + (1 - ratio) * kappa * (1 - x) ** 3, -3 * (1 - ratio) * kappa * (1 - x) ** 2 / sp.mu_end

    def outer(p):
        r = np.linalg.norm(p, axis=1)
        m, dm = mu(r)
        y = np.column_stack([m * p[:, 0], m * p[:, 1], ratio * p[:, 2]])
        J = np.zeros((len(p), 3, 3))
        J[:, 0, 0] = J[:, 1, 1] = m
        J[:, 2, 2] = ratio
        g = np.where(r[:, None] > 0, p / np.where(r > 0, r, 1.0)[:, None], 0.0) * dm[:, None]
        J[:, :2, :] += p[:, :2, None] * g[:, None, :]
        return y, J

    return outer


def outer_map(shell: ShellParams = ShellParams()) -> SmoothMap:
    """G(p) = (mu(|p|) x, mu(|p|) y, ratio z) on D^3: a saddle at 0 and an attracting
    circle of fixed points at radius r_fix, the homothety for |p| >= mu_end."""
    shell.validate()
    outer = _outer_parts(shell)
    f = lambda p: outer(np.atleast_2d(p))[0]
    df = lambda p: outer(np.atleast_2d(p))[1]
    rng = np.random.default_rng(0)
    qs = rng.uniform(-1, 1, (40000, 3))
    qs = qs[np.linalg.norm(qs, axis=1) <= 1]
    J = df(qs)
    if (np.linalg.det(J) <= 0).any():
        raise ConstructionError("outer map profile is not orientation preserving; widen mu_end")
    ch = ball3()
    m = SmoothMap("outer_map", ch, ch, f, df, 1.25 * np.abs(J).max(axis=0), {"shell": asdict(shell)},
                  local_lipschitz=sampled_local_lipschitz(df, k=3, safety=1.5, cap=1.25 * np.abs(J).max(axis=0)),
                  seams=(shell.mu_end,), seam_coord=lambda p: np.linalg.norm(p, axis=1))
    m.shell = shell
    return m


def ball3_compose(torus_map: SmoothMap, shell: ShellParams = ShellParams()) -> SmoothMap:
    """C^1 map of D^3: the torus map inside a solid torus, z -> ratio*z near the sphere.

    Outside the torus the map is G(p) = (mu(|p|) x, mu(|p|) y, ratio z) with
    mu = ratio for |p| >= mu_end and mu(r_fix) = 1, so the origin is a saddle
    whose unstable plane feeds the torus. Injectivity of the blend on the
    collar core <= |z| <= 1 is not guaranteed: for a doubling braid the
    blend folds (det Df changes sign), so the result is C^1 but not an embedding.
    """
    sp = shell
    sp.validate()
    if torus_map.domain.id != "Torus3":
        raise ConstructionError("ball3_compose needs a map of the solid torus")
    rng = np.random.default_rng(0)
    probe = rng.uniform(-1, 1, (20000, 3))
    probe[:, 0] = np.mod(probe[:, 0], 1.0)
    probe = probe[np.linalg.norm(probe[:, 1:], axis=1) <= 1]
    reach = np.linalg.norm(torus_map.f(probe)[:, 1:], axis=1).max()
    if reach >= sp.core:
        raise ConstructionError(f"torus map image reaches |z| = {reach:.3f} >= core fraction {sp.core:g}")
    E, Einv = torus_embedding(sp)
    outer = _outer_parts(sp)

    def tube(p):
        rho = np.hypot(p[:, 0], p[:, 1])
        return np.hypot(rho - sp.R0, p[:, 2]) / sp.a

    def blend_weight(p):
        rho = np.hypot(p[:, 0], p[:, 1])
        d = np.hypot(rho - sp.R0, p[:, 2])
        w = (d / sp.a - sp.core) / (1 - sp.core)
        chi = 1 - smoothstep(w)
        dchi = -smoothstep_d(w) / ((1 - sp.core) * sp.a)
        ds = np.where(d > 0, 1 / np.where(d > 0, d, 1.0), 0.0)
        rs = np.where(rho > 0, 1 / np.where(rho > 0, rho, 1.0), 0.0)
        grad = np.column_stack([(rho - sp.R0) * ds * p[:, 0] * rs, (rho - sp.R0) * ds * p[:, 1] * rs, p[:, 2] * ds])
        return chi, dchi[:, None] * grad

    def inner(p):
        q, J1 = Einv(p)
        fq = torus_map.f(q)
        y, J3 = E(fq)
        return y, J3 @ torus_map.df(q) @ J1

    def _all(p, need_jac):
        p = np.atleast_2d(p)
        y, J = outer(p)
        T = tube(p) < 1
        if T.any():
            yi, Ji = inner(p[T])
            chi, gchi = blend_weight(p[T])
            yo, Jo = y[T], J[T]
            y[T] = chi[:, None] * yi + (1 - chi)[:, None] * yo
            if need_jac:
                J[T] = chi[:, None, None] * Ji + (1 - chi)[:, None, None] * Jo + (yi - yo)[:, :, None] * gchi[:, None, :]
        return y, J

    f = lambda p: _all(p, False)[0]
    df = lambda p: _all(p, True)[1]
    qs = rng.uniform(-1, 1, (40000, 3))
    qs = qs[np.linalg.norm(qs, axis=1) <= 1]
    lip = 1.25 * np.abs(df(qs)).max(axis=0)
    params = {"torus_map": torus_map.params, "shell": asdict(sp)}

    def seam_coord(p):
        return np.column_stack([tube(p), np.linalg.norm(p, axis=1)])

    ch = ball3()
    m = SmoothMap("ball3_compose", ch, ch, f, df, lip, params,
                  local_lipschitz=sampled_local_lipschitz(df, k=3, safety=1.5, cap=lip),
                  seams=((sp.core, 1.0), (sp.mu_end,)), seam_coord=seam_coord)
    m.shell, m.torus_map, m.embed, m.embed_inv, m.tube_radius = sp, torus_map, E, Einv, tube
    return m


def collar_decrease(m: SmoothMap, samples: int = 10000, seed: int = 0) -> dict:
    """Sample the collar (outside the torus, inside the shell) and test whether the
    distance to the torus strictly decreases under the map."""
    sp = m.shell
    rng = np.random.default_rng(seed)
    pts = []
    while sum(len(x) for x in pts) < samples:
        p = rng.uniform(-sp.shell, sp.shell, (4 * samples, 3))
        keep = (np.linalg.norm(p, axis=1) < sp.shell) & (m.tube_radius(p) > 1)
        pts.append(p[keep])
    p = np.concatenate(pts)[:samples]

    def dist(q):
        return sp.a * np.maximum(m.tube_radius(q) - 1, 0.0)

    d0, d1 = dist(p), dist(m.f(p))
    bad = ~(d1 < d0)
    return {"samples": int(len(p)), "violations": int(bad.sum()),
            "worst": p[bad][np.argmax((d1 - d0)[bad])].tolist() if bad.any() else None}


def product_extend(m3: SmoothMap, mu: float, d: int, samples: int = 20000, seed: int = 0) -> SmoothMap:
    """F(x, y) = (m3(x), mu y) on D^3 x D^{d-3}."""
    if d <= 3:
        raise ConstructionError("product_extend needs d > 3")
    if not 0 < mu < 1:
        raise ConstructionError("normal contraction mu must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (3 * samples, 3))
    x = x[np.linalg.norm(x, axis=1) <= 1][:samples]
    smin = float(np.linalg.svd(m3.df(x), compute_uv=False)[:, -1].min())
    if not mu < smin:
        raise ConstructionError(f"mu={mu:g} violates normal domination: smallest sampled singular value is {smin:.4g}")
    k = d - 3

    def f(p):
        return np.column_stack([m3.f(p[:, :3]), mu * p[:, 3:]])

    def df(p):
        J = np.zeros((len(p), d, d))
        J[:, :3, :3] = m3.df(p[:, :3])
        J[:, 3:, 3:] = mu * np.eye(k)
        return J

    lip = np.zeros((d, d))
    lip[:3, :3] = m3.lipschitz
    lip[3:, 3:] = mu * np.eye(k)

    def local(c, r):
        out = np.zeros((len(c), d, d))
        if m3.local_lipschitz is not None:
            out[:, :3, :3] = m3.local_lipschitz(c[:, :3], r[:, :3])
        else:
            out[:, :3, :3] = m3.lipschitz
        out[:, 3:, 3:] = mu * np.eye(k)
        return out

    seam_coord = None
    if m3.seams:
        seam_coord = (lambda p: m3.seam_coord(p[:, :3])) if m3.seam_coord is not None else None
    ch = ball_d(d)
    F = SmoothMap(f"product_extend{d}", ch, ch, f, df, lip,
                  {"base": m3.params, "mu": mu, "d": d, "min_singular": smin},
                  local_lipschitz=local, seams=m3.seams, seam_coord=seam_coord)
    F.base, F.mu = m3, mu
    return F
