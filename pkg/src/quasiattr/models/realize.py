"""Realization of a disk map as the dynamics on an invariant fiber of a solenoid map."""
from __future__ import annotations

import numpy as np

from ..geometry import torus3
from .base import ConstructionError, SmoothMap, sampled_local_lipschitz
from .diskmaps import DiskMapModel
from .psi import PsiProfile
from .solenoid import Braid, validate_separation


def _centered(t):
    """Circle coordinate in [-1/2, 1/2), exact for t in (-1/2, 1)."""
    t = np.asarray(t, dtype=float)
    # the plain mod formula loses all relative precision for tiny |t|
    c = np.where((t >= 0.5) & (t < 1.0), t - 1.0, np.mod(t + 0.5, 1.0) - 0.5)
    return np.where(np.abs(t) < 0.5, t, c)


def realize_disk_map(dm: DiskMapModel, braid: Braid, psi: PsiProfile,
                     seam_tol: float = 1e-8) -> SmoothMap:
    """Three-piece solenoid map whose fiber {0} x D^2 is invariant with dynamics z(0) + phi.

    On |t| <= eps the fiber map follows the isotopy phi_{t/eps}; on
    eps <= |t| <= 1/n it is the homothety and the circle is reparametrized
    by psi; elsewhere the map is the canonical solenoid.
    """
    n = braid.n
    if n != psi.n:
        raise ConstructionError(f"psi built for n={psi.n} but braid has n={n}")
    if n < 2:
        raise ConstructionError("realization supports n >= 2")
    if psi.C < dm.C * (1 - 1e-12):
        raise ConstructionError(f"psi built against C={psi.C:g} < model C={dm.C:g}")
    rep = validate_separation(braid, dm.delta)
    if not rep.ok:
        raise ConstructionError("; ".join(rep.failing))
    eps, delta = psi.eps, dm.delta
    zb, dzb = braid.z, braid.dz
    ch = torus3()

    def zones(tau):
        a = np.abs(tau)
        return a <= eps, (a > eps) & (a <= 1.0 / n), a > 1.0 / n

    def f(x):
        tau = _centered(x[:, 0])
        z = x[:, 1:]
        A, B, Cz = zones(tau)
        out = np.empty_like(x)
        p = psi(np.where(Cz, 0.0, tau))
        out[:, 0] = np.where(Cz, n * tau, p)
        out[:, 1:] = np.where(Cz[:, None], zb(tau) + delta * z, zb(p / n) + delta * z)
        if A.any():
            out[A, 1:] = zb(p[A] / n) + dm.ev(z[A], tau[A] / eps)
        out[:, 0] = np.mod(out[:, 0], 1.0)
        return out

    def df(x):
        tau = _centered(x[:, 0])
        z = x[:, 1:]
        A, B, Cz = zones(tau)
        J = np.zeros((len(x), 3, 3))
        tt = np.where(Cz, 0.0, tau)
        p, dp = psi(tt), psi.deriv(tt)
        J[:, 0, 0] = np.where(Cz, n, dp)
        J[:, 1:, 0] = np.where(Cz[:, None], dzb(tau), dzb(p / n) * (dp / n)[:, None])
        J[:, 1, 1] = J[:, 2, 2] = delta
        if A.any():
            s = tau[A] / eps
            J[A, 1:, 0] += dm.ds(z[A], s) / eps
            J[A, 1:, 1:] = dm.jac(z[A], s)
        return J

    def inv(y):
        out = np.full_like(y, np.nan)
        best = np.full(len(y), np.inf)
        cands = []
        for shift in (0.0, -1.0):
            tau = psi.inverse(np.clip(y[:, 0] + shift, -1.0, 1.0))
            cands.append((tau, zb(psi(tau) / n)))
        for k in range(n):
            tau = _centered((y[:, 0] + k) / n)
            ok = np.abs(tau) > 1.0 / n
            cands.append((np.where(ok, tau, np.nan), zb(tau)))
        for tau, c in cands:
            d = np.linalg.norm(y[:, 1:] - c, axis=1)
            d = np.where(np.isnan(tau), np.inf, d)
            better = d < best
            best = np.where(better, d, best)
            out[better, 0] = tau[better]
            out[better, 1:] = c[better]
        ok = best <= delta * (1 + 1e-9)
        tau = out[:, 0]
        w = y[:, 1:] - out[:, 1:]
        A = ok & (np.abs(tau) <= eps)
        z = w / delta
        if A.any():
            z[A] = dm.inv_s(w[A], tau[A] / eps) if dm.inv_s is not None else np.nan
        res = np.column_stack([np.mod(tau, 1.0), z])
        res[~ok] = np.nan
        return res

    # global Jacobian bounds
    rng = np.random.default_rng(0)
    zs = rng.uniform(-1, 1, (4000, 2))
    zs = zs[np.linalg.norm(zs, axis=1) <= 1]
    speed = max(np.abs(dm.ds(zs, np.full(len(zs), s))).max() for s in np.linspace(-0.5, 0.5, 41))
    smax = max(psi.slopes.values())
    lz = braid.lip_z * smax / n + speed / eps * 1.5
    lip = np.array([[smax, 0, 0], [lz, dm.C, dm.C], [lz, dm.C, dm.C]], dtype=float)

    seams = [eps, 1.0 / n] + [float(b) for b in psi.breaks[1:-1]] + [eps * abs(v) for v in dm.s_seams]
    m = SmoothMap("realized", ch, ch, f, df, lip,
                  {"disk_model": dm.to_json(), "braid": braid.to_json(), "psi": psi.to_json()},
                  local_lipschitz=sampled_local_lipschitz(df, k=3, safety=1.5, cap=lip),
                  inv=inv, seams=tuple(sorted(set(seams))))
    m.disk_model, m.braid, m.psi = dm, braid, psi
    err = seam_mismatch(m)
    if err > seam_tol:
        raise ConstructionError(f"seam C^1 mismatch {err:.3g} exceeds {seam_tol:g}")
    return m


def seam_mismatch(m: SmoothMap, samples: int = 200) -> float:
    """Largest jump of value or Jacobian across the piece boundaries |t| = eps and |t| = 1/n."""
    dm, braid, psi = m.disk_model, m.braid, m.psi
    n, eps, delta = braid.n, psi.eps, dm.delta
    rng = np.random.default_rng(1)
    z = rng.uniform(-1, 1, (4 * samples, 2))
    z = z[np.linalg.norm(z, axis=1) <= 1][:samples]
    worst = 0.0
    for sgn in (1.0, -1.0):
        inner = dm.ev(z, np.full(len(z), sgn))
        outer = delta * z
        worst = max(worst, np.abs(inner - outer).max())
        worst = max(worst, np.abs(dm.jac(z, np.full(len(z), sgn)) - delta * np.eye(2)).max())
        worst = max(worst, np.abs(dm.ds(z, np.full(len(z), sgn)) / eps).max())
        if n > 2:
            tau = sgn / n
            worst = max(worst, abs(psi(tau) - n * tau), abs(psi.deriv(tau) - n))
    return float(worst)


def induced_fiber_map(m: SmoothMap, z: np.ndarray) -> np.ndarray:
    """The map the realization induces on {0} x D^2, namely z(0) + phi(z)."""
    return m.braid.z(np.zeros(1))[0] + m.disk_model.ev(z, np.zeros(len(z)))
