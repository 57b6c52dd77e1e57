"""The evaluable-map abstraction shared by every model in the zoo."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..geometry import Chart, PointP


class ConstructionError(ValueError):
    """A model could not be built because a precondition of its construction fails."""


@dataclass
class SmoothMap:
    """A C^1 map between charts with an analytic Jacobian.

    ``eval`` and ``jacobian`` are vectorized over the leading axis: they take
    an ``(N, dim)`` array and return ``(N, dim)`` and ``(N, dim, dim)``.
    ``lipschitz`` is a matrix of bounds on ``|d f_i / d x_j|`` valid on the
    whole domain; ``box_lipschitz`` may return tighter per-box bounds.
    """

    name: str
    domain: Chart
    codomain: Chart
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    lipschitz: np.ndarray
    params: dict = field(default_factory=dict)
    local_lipschitz: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    inv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    seams: tuple = ()
    # coordinate whose level sets ``seams`` are the piece boundaries; default |t|.
    # May return (N, k), in which case ``seams`` holds one tuple of levels per column.
    seam_coord: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        self.lipschitz = np.asarray(self.lipschitz, dtype=float)

    def eval(self, x) -> np.ndarray:
        if isinstance(x, PointP):
            return self.codomain.wrap(self.f(x.array[None, :]))[0]
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        y = self.codomain.wrap(self.f(np.atleast_2d(x)))
        return y[0] if single else y

    def __call__(self, x) -> np.ndarray:
        return self.eval(x)

    def jacobian(self, x) -> np.ndarray:
        if isinstance(x, PointP):
            x = x.array
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        j = self.df(np.atleast_2d(x))
        return j[0] if single else j

    def inverse(self, y) -> np.ndarray:
        """Preimage of points in the image (NaN rows where there is none)."""
        if self.inv is None:
            raise NotImplementedError(f"model {self.name} provides no inverse")
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        x = self.inv(np.atleast_2d(y))
        return x[0] if single else x

    @property
    def has_inverse(self) -> bool:
        return self.inv is not None

    def box_lipschitz(self, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
        """Per-box bound matrices ``(N, dim, dim)`` on the Jacobian entries."""
        if self.local_lipschitz is not None:
            return self.local_lipschitz(centers, radii)
        return np.broadcast_to(self.lipschitz, (len(centers),) + self.lipschitz.shape)

    def seam_distance(self, x) -> np.ndarray:
        """Distance (in the seam coordinate) from each row of ``x`` to the nearest seam."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.seams:
            return np.full(len(x), np.inf)
        if self.seam_coord is not None:
            c = self.seam_coord(x)
        elif 0 in self.domain.periodic_dims:
            c = np.abs(np.mod(x[:, 0] + 0.5, 1.0) - 0.5)
        else:
            c = x[:, 0]
        if c.ndim == 1:
            c, levels = c[:, None], (self.seams,)
        else:
            levels = self.seams  # one tuple of levels per column of the seam coordinate
        d = np.full(len(x), np.inf)
        for j, lv in enumerate(levels):
            if len(lv):
                d = np.minimum(d, np.abs(c[:, j:j + 1] - np.asarray(lv, dtype=float)[None, :]).min(axis=1))
        return d

    def params_json(self) -> str:
        return json.dumps({"name": self.name, "params": self.params}, sort_keys=True,
                          separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "to_json"):
        return o.to_json()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def sampled_local_lipschitz(df: Callable[[np.ndarray], np.ndarray], k: int = 3,
                            safety: float = 1.5, cap: np.ndarray | None = None):
    """Per-box Jacobian bounds from a k^dim grid of Jacobian samples (inflated by ``safety``).

    Not rigorous: meant for models whose global bound is far too coarse.
    """
    def bound(centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
        n, dim = centers.shape
        ax = np.linspace(-1.0, 1.0, k)
        off = np.array(np.meshgrid(*[ax] * dim, indexing="ij")).reshape(dim, -1).T
        pts = (centers[:, None, :] + off[None, :, :] * radii[:, None, :]).reshape(-1, dim)
        j = np.abs(df(pts)).reshape(n, len(off), dim, dim).max(axis=1) * safety
        if cap is not None:
            j = np.minimum(j, cap)
        return j
    return bound


def jacobian_fd(m: SmoothMap, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobians at the rows of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, dim = x.shape
    out = np.empty((n, m.codomain.dim, dim))
    per = list(m.codomain.periodic_dims)
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = h
        yp, ym = m.f(x + e), m.f(x - e)
        d = yp - ym
        if per:
            d[:, per] = d[:, per] - np.round(d[:, per])
        out[:, :, j] = d / (2 * h)
    return out


def jacobian_errors(m: SmoothMap, points: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Per-point ||J - J_fd|| / max(1, ||J||) in the spectral norm."""
    ja = m.jacobian(points)
    jf = jacobian_fd(m, points, h)
    num = np.linalg.norm(ja - jf, ord=2, axis=(1, 2))
    return num / np.maximum(1.0, np.linalg.norm(ja, ord=2, axis=(1, 2)))


def jacobian_check(m: SmoothMap, trials: int = 1000, seed: int = 0,
                   points: np.ndarray | None = None, h: float = 1e-6,
                   split: bool = False):
    """Max relative Jacobian error over sampled points.

    With ``split=True`` returns ``(off_seam, at_seam)``: points whose
    difference stencil reaches a seam (within ``2 h``) are reported apart,
    since the maps are only C^1 there. An empty group reports 0.
    """
    if points is None:
        points = random_domain_points(m.domain, trials, seed, margin=2 * h)
    err = jacobian_errors(m, points, h)
    if not split:
        return float(err.max())
    near = m.seam_distance(points) < 2 * h
    off = float(err[~near].max()) if (~near).any() else 0.0
    at = float(err[near].max()) if near.any() else 0.0
    return off, at


def random_domain_points(chart: Chart, m: int, seed: int = 0, margin: float = 0.0) -> np.ndarray:
    """Uniform points of the round product domain (rejection sampling in the cube)."""
    rng = np.random.default_rng(seed)
    out = []
    need = m
    while need > 0:
        x = rng.uniform(chart.lo_arr, chart.hi_arr, size=(2 * need + 16, chart.dim))
        ok = chart.contains(x, tol=-margin)
        for k in chart.periodic_dims:
            x[:, k] = np.mod(x[:, k], 1.0)
        x = x[ok][:need]
        out.append(x)
        need -= len(x)
    return np.concatenate(out)
