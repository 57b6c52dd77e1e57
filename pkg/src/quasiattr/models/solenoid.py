"""Braids and the canonical solenoid maps of the solid torus."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..geometry import torus3
from .base import ConstructionError, SmoothMap


@dataclass
class Braid:
    """A closed curve t -> (n t, z(t)) in the solid torus, transverse to the disk fibers.

    ``z`` and ``dz`` map an array of circle parameters to ``(N, 2)`` arrays.
    ``lip_z`` bounds |z'| and is used to turn sampled minima into certified
    lower bounds; when ``exact_bounds`` is given (closed-form braids) those
    values are used instead.
    """

    n: int
    z: Callable[[np.ndarray], np.ndarray]
    dz: Callable[[np.ndarray], np.ndarray]
    lip_z: float
    params: dict
    exact_bounds: Optional[tuple[float, float]] = None
    samples: int = 20000

    def __post_init__(self):
        if self.n == 0:
            raise ConstructionError("braid covering order n must be nonzero")
        if self.exact_bounds is not None:
            self.r_min_boundary, self.sep_min = self.exact_bounds
        else:
            self.r_min_boundary, self.sep_min = self._sampled_bounds()
        t = np.linspace(0.0, 1.0, 1001)
        if (np.linalg.norm(self.z(t), axis=1) >= 1.0).any():
            raise ConstructionError("braid leaves the open unit disk")

    def _sampled_bounds(self) -> tuple[float, float]:
        m = self.samples
        t = np.arange(m) / m
        h = 1.0 / m
        zt = self.z(t)
        r = (1.0 - np.linalg.norm(zt, axis=1)).min() - self.lip_z * h / 2
        sep = np.inf
        for k in range(1, abs(self.n)):
            d = np.linalg.norm(zt - self.z(np.mod(t + k / abs(self.n), 1.0)), axis=1)
            sep = min(sep, d.min() - self.lip_z * h)
        return float(r), float(sep)

    def to_json(self) -> dict:
        return {"n": self.n, **self.params}


def circle_braid(n: int = 2, r: float = 0.5, center: tuple[float, float] = (0.0, 0.0)) -> Braid:
    """z(t) = center + r (cos 2 pi t, sin 2 pi t)."""
    c = np.asarray(center, dtype=float)

    def z(t):
        t = np.asarray(t, dtype=float)
        return c + r * np.stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)], axis=-1)

    def dz(t):
        t = np.asarray(t, dtype=float)
        return 2 * np.pi * r * np.stack([-np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)], axis=-1)

    bnd = 1.0 - (np.linalg.norm(c) + r)
    # chord between parameters k/|n| apart, minimized over k
    sep = min(2 * r * abs(np.sin(np.pi * k / abs(n))) for k in range(1, abs(n))) if abs(n) > 1 else np.inf
    return Braid(n, z, dz, 2 * np.pi * r,
                 {"kind": "circle", "r": r, "center": [float(c[0]), float(c[1])]},
                 exact_bounds=(float(bnd), float(sep)))


@dataclass
class SeparationReport:
    ok: bool
    margins: tuple[float, float]
    failing: list[str]


def validate_separation(braid: Braid, delta: float) -> SeparationReport:
    """Check 2*delta < boundary margin and 2*delta < self-separation of the braid."""
    mb = braid.r_min_boundary - 2 * delta
    ms = braid.sep_min - 2 * delta
    failing = []
    if not mb > 0:
        failing.append(f"2*delta < r_min_boundary fails: 2*{delta} = {2 * delta:g} >= {braid.r_min_boundary:g}")
    if not ms > 0:
        failing.append(f"2*delta < sep_min fails: 2*{delta} = {2 * delta:g} >= {braid.sep_min:g}")
    return SeparationReport(not failing, (float(mb), float(ms)), failing)


def canonical_solenoid(braid: Braid, delta: float) -> SmoothMap:
    """(t, z) -> (n t mod 1, delta z + z(t)) on S^1 x D^2."""
    if not delta > 0:
        raise ConstructionError(f"delta must be positive, got {delta}")
    rep = validate_separation(braid, delta)
    if not rep.ok:
        raise ConstructionError("; ".join(rep.failing))
    n = braid.n
    ch = torus3()

    def f(x):
        t = x[:, 0]
        return np.column_stack([np.mod(n * t, 1.0), delta * x[:, 1:] + braid.z(t)])

    def df(x):
        j = np.zeros((len(x), 3, 3))
        j[:, 0, 0] = n
        j[:, 1:, 0] = braid.dz(x[:, 0])
        j[:, 1, 1] = j[:, 2, 2] = delta
        return j

    def inv(y):
        best = np.full(len(y), np.inf)
        out = np.full((len(y), 3), np.nan)
        for k in range(abs(n)):
            t = np.mod((y[:, 0] + k) / n, 1.0)
            d = np.linalg.norm(y[:, 1:] - braid.z(t), axis=1)
            better = d < best
            best = np.where(better, d, best)
            out[better, 0] = t[better]
            out[better, 1:] = (y[better, 1:] - braid.z(t[better])) / delta
        out[best > delta * (1 + 1e-9)] = np.nan
        return out

    lz = braid.lip_z
    lip = np.array([[abs(n), 0, 0], [lz, delta, 0], [lz, 0, delta]], dtype=float)

    def local(c, r):
        # the z'(t) column is the only non-constant entry
        tt = c[:, 0:1] + np.linspace(-1, 1, 5)[None, :] * r[:, 0:1]
        d = np.abs(braid.dz(tt.ravel())).reshape(len(c), 5, 2).max(axis=1)
        d = np.minimum(d + (2 * np.pi) ** 2 * braid.params.get("r", 1.0) * r[:, 0:1] / 4, lz)
        out = np.broadcast_to(lip, (len(c), 3, 3)).copy()
        out[:, 1:, 0] = d
        return out

    local_fn = local if braid.params.get("kind") == "circle" else None
    m = SmoothMap("canonical_solenoid", ch, ch, f, df, lip,
                  {"braid": braid.to_json(), "delta": delta},
                  local_lipschitz=local_fn, inv=inv)
    m.braid, m.delta = braid, delta
    return m
