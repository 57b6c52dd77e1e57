"""Odd piecewise-polynomial circle reparametrizations used by the realization."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import bisect

from .base import ConstructionError


@dataclass
class PsiProfile:
    """An odd, increasing C^1 map psi: [-1/n, 1/n] -> [-1, 1].

    Stored for t >= 0 as polynomial pieces ``coeffs[i]`` (ascending powers of
    ``t - breaks[i]``) on ``[breaks[i], breaks[i+1]]``.
    """

    n: int
    eps: float
    C: float
    breaks: np.ndarray
    coeffs: np.ndarray
    slopes: dict = field(default_factory=dict)

    def _piece(self, a: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.breaks, a, side="right") - 1, 0, len(self.coeffs) - 1)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        a = np.abs(t)
        i = self._piece(a)
        u = a - self.breaks[i]
        c = self.coeffs[i]
        v = c[..., 0] + u * (c[..., 1] + u * (c[..., 2] + u * c[..., 3]))
        return np.sign(t) * v

    def deriv(self, t) -> np.ndarray:
        a = np.abs(np.asarray(t, dtype=float))
        i = self._piece(a)
        u = a - self.breaks[i]
        c = self.coeffs[i]
        return c[..., 1] + u * (2 * c[..., 2] + u * 3 * c[..., 3])

    def inverse(self, s) -> np.ndarray:
        """psi^{-1} on [-1, 1] (Newton inside the bracketing piece)."""
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        vals = np.array([c[0] for c in self.coeffs] + [1.0])
        i = np.clip(np.searchsorted(vals, a, side="right") - 1, 0, len(self.coeffs) - 1)
        lo, hi = self.breaks[i], self.breaks[i + 1]
        t = lo + (a - vals[i]) / np.maximum(vals[i + 1] - vals[i], 1e-300) * (hi - lo)
        for _ in range(60):
            r = self(t) - a
            t_new = np.clip(t - r / self.deriv(t), lo, hi)
            if np.all(np.abs(t_new - t) <= 1e-17 + 1e-15 * np.abs(t)):
                t = t_new
                break
            t = t_new
        return np.sign(s) * t

    def check_invariants(self, samples: int = 10000) -> dict:
        n = abs(self.n)
        t = np.linspace(-1.0 / n, 1.0 / n, samples)
        d = self.deriv(t)
        mid = np.abs(t) <= self.eps
        end = np.abs(t) >= 1.0 / n - self.eps
        # C^1 continuity at the breakpoints
        jumps = []
        for k in range(1, len(self.breaks) - 1):
            b = self.breaks[k]
            cl, cr = self.coeffs[k - 1], self.coeffs[k]
            ul = b - self.breaks[k - 1]
            vl = cl[0] + ul * (cl[1] + ul * (cl[2] + ul * cl[3]))
            dl = cl[1] + ul * (2 * cl[2] + 3 * ul * cl[3])
            jumps.append(max(abs(vl - cr[0]), abs(dl - cr[1])))
        return {
            "endpoints": (float(self(1.0 / n)), float(self(-1.0 / n))),
            "min_slope": float(d.min()),
            "min_slope_middle": float(d[mid].min()),
            "end_slope_dev": float(np.abs(d[end] - n).max()),
            "monotone": bool(np.all(np.diff(self(t)) > 0)),
            "c1_jump": float(max(jumps) if jumps else 0.0),
            "ok": bool(abs(self(1.0 / n) - 1) < 1e-12 and d.min() > 1
                       and d[mid].min() > 2 * self.C
                       and np.abs(d[end] - n).max() < 1e-9
                       and np.all(np.diff(self(t)) > 0)),
        }

    def to_json(self) -> dict:
        return {"n": self.n, "eps": self.eps, "C": self.C,
                "breaks": self.breaks.tolist(), "coeffs": self.coeffs.tolist()}


def _ramp_profile(n: int, eps: float, s_mid: float, s_rest: float) -> tuple[np.ndarray, np.ndarray]:
    """Slope s_mid on [0, eps], linear ramps of width eps, slope n on the end zone."""
    e = 1.0 / n
    b = np.array([0.0, eps, 2 * eps, e - 2 * eps, e - eps, e])
    sl = [(s_mid, s_mid), (s_mid, s_rest), (s_rest, s_rest), (s_rest, n), (n, n)]
    coeffs = np.zeros((5, 4))
    v = 0.0
    for i, (s0, s1) in enumerate(sl):
        w = b[i + 1] - b[i]
        coeffs[i] = [v, s0, (s1 - s0) / (2 * w) if w > 0 else 0.0, 0.0]
        v += w * (s0 + s1) / 2
    return b, coeffs


def _rest_slope(n: int, eps: float, s_mid: float) -> float:
    # half-interval integral: eps*s_mid + eps*(s_mid+s)/2 + s*(1/n-4eps) + eps*(s+n)/2 + eps*n = 1
    return (1.0 - 1.5 * eps * (s_mid + n)) / (1.0 / n - 3 * eps)


def build_psi(n: int, C: float, eps_hint: Optional[float] = None, gain: float = 1.25) -> PsiProfile:
    """Construct psi with |psi'| > 1, |psi'| > 2C on [-eps, eps] and |psi'| = |n| near the ends.

    ``gain`` sets the middle slope to ``gain * 2C`` (must exceed 1).
    """
    if abs(n) < 2:
        raise ConstructionError(f"need |n| >= 2, got {n}")
    if n < 0:
        raise ConstructionError("orientation-reversing covering (n < 0) is not supported")
    if not C > 0:
        raise ConstructionError(f"C must be positive, got {C}")
    if not gain > 1:
        raise ConstructionError("gain must exceed 1")
    if eps_hint is not None:
        budget = 2 * eps_hint * 2 * C + 2 * eps_hint * n + max(2.0 / n - 4 * eps_hint, 0.0)
        if not (0 < eps_hint < 1.0 / (2 * n)) or budget >= 2.0:
            raise ConstructionError(
                f"integral budget violated: 2*eps*2C + 2*eps*|n| + (2/|n| - 4 eps)*1 = {budget:g} "
                f"must be < 2 = int psi' (eps={eps_hint}, C={C}, n={n})")

    if 2 * C * gain <= n:
        # the linear profile psi(t) = n t already beats 2C
        eps = eps_hint if eps_hint is not None else 1.0 / (4 * n)
        b = np.array([0.0, 1.0 / n])
        coeffs = np.array([[0.0, float(n), 0.0, 0.0]])
        return PsiProfile(n, eps, C, b, coeffs, {"middle": n, "rest": n, "end": n})

    s_mid = gain * 2 * C
    e_max = 1.0 / (4 * n)
    if eps_hint is not None:
        eps = eps_hint
        if eps > e_max or _rest_slope(n, eps, s_mid) <= 1.0:
            raise ConstructionError(
                f"integral budget violated for the ramp layout at eps={eps}: remaining slope "
                f"{_rest_slope(n, min(eps, e_max), s_mid):g} must exceed 1")
    else:
        target = 1.0 + 0.5 * (n - 1.0)
        if _rest_slope(n, e_max, s_mid) >= target:
            eps = e_max
        else:
            eps = bisect(lambda e: _rest_slope(n, e, s_mid) - target, 0.0, e_max, xtol=1e-16, rtol=1e-15)
    s_rest = _rest_slope(n, eps, s_mid)
    b, coeffs = _ramp_profile(n, eps, s_mid, s_rest)
    # pin psi(1/n) = 1 exactly against rounding in the piece offsets
    last = coeffs[-1]
    w = b[-1] - b[-2]
    coeffs[-1, 0] = 1.0 - w * last[1] - w * w * last[2]
    return PsiProfile(n, float(eps), C, b, coeffs, {"middle": s_mid, "rest": s_rest, "end": n})
