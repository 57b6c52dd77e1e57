"""Small explicit maps used as fixtures and oracles."""
from __future__ import annotations

import numpy as np

from ..geometry import Chart, ball3, cube
from .base import ConstructionError, SmoothMap


def linear_map(A, chart: Chart | None = None, name: str = "linear") -> SmoothMap:
    """x -> A x on ``chart`` (default: the cube of matching dimension)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ConstructionError("linear map needs a square matrix")
    ch = chart or cube(A.shape[0])
    if ch.dim != A.shape[0]:
        raise ConstructionError(f"matrix size {A.shape[0]} does not match chart dimension {ch.dim}")
    inv = None
    if abs(np.linalg.det(A)) > 1e-300:
        Ai = np.linalg.inv(A)
        inv = lambda y: y @ Ai.T
    J = np.broadcast_to(A, (1,) + A.shape)
    m = SmoothMap(name, ch, ch, lambda x: x @ A.T,
                  lambda x: np.broadcast_to(J, (len(x),) + A.shape).copy(),
                  np.abs(A), {"A": A.tolist()}, inv=inv)
    m.matrix = A
    return m


def diagonal_map(diag, chart: Chart | None = None) -> SmoothMap:
    return linear_map(np.diag(np.asarray(diag, dtype=float)), chart, name="diagonal")


def homothety(ratio: float = 0.5, chart: Chart | None = None) -> SmoothMap:
    """p -> ratio p, by default on D^3."""
    ch = chart or ball3()
    m = linear_map(ratio * np.eye(ch.dim), ch, name="homothety")
    m.params = {"ratio": ratio, "chart": ch.id}
    return m


def identity(chart: Chart | None = None) -> SmoothMap:
    ch = chart or ball3()
    m = linear_map(np.eye(ch.dim), ch, name="identity")
    m.params = {"chart": ch.id}
    return m


def two_sink(c: float = 0.1, contraction: float = 0.5) -> SmoothMap:
    """(x, y) -> (x + c sin(2 pi x), contraction * y) on [-1, 1]^2.

    Gradient-like: sinks at (+-1/2, 0), a saddle at the origin whose stable
    set is the line x = 0, and saddles at (+-1, 0) on the boundary.
    """
    if not 0 < c < 1 / (2 * np.pi):
        raise ConstructionError("two_sink needs 0 < c < 1/(2 pi) to stay a diffeomorphism")
    w = 2 * np.pi

    def f(x):
        return np.column_stack([x[:, 0] + c * np.sin(w * x[:, 0]), contraction * x[:, 1]])

    def df(x):
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 0] = 1 + c * w * np.cos(w * x[:, 0])
        J[:, 1, 1] = contraction
        return J

    def inv(y):
        x = y[:, 0].copy()
        for _ in range(60):
            x = x - (x + c * np.sin(w * x) - y[:, 0]) / (1 + c * w * np.cos(w * x))
        return np.column_stack([x, y[:, 1] / contraction])

    ch = cube(2)
    lip = np.array([[1 + c * w, 0.0], [0.0, contraction]])

    def local(centers, radii):
        # |1 + c w cos(w x)| over the box, exact up to the cosine's extremes
        lo, hi = centers[:, 0] - radii[:, 0], centers[:, 0] + radii[:, 0]
        grid = np.linspace(0, 1, 9)[None, :]
        xs = lo[:, None] + (hi - lo)[:, None] * grid
        v = np.abs(1 + c * w * np.cos(w * xs)).max(axis=1) + c * w * w * (hi - lo) / 16
        out = np.zeros((len(centers), 2, 2))
        out[:, 0, 0] = np.minimum(v, lip[0, 0])
        out[:, 1, 1] = contraction
        return out

    m = SmoothMap("two_sink", ch, ch, f, df, lip, {"c": c, "contraction": contraction},
                  local_lipschitz=local, inv=inv)
    m.sinks = np.array([[-0.5, 0.0], [0.5, 0.0]])
    return m
