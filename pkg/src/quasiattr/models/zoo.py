"""Model zoo: every shipped map addressable by name and JSON-able parameters."""
from __future__ import annotations

from typing import Callable

from ..geometry import chart_from_id
from .ball import ShellParams, ball3_compose, outer_map, product_extend
from .base import ConstructionError, SmoothMap
from .da import da_solenoid
from .diskmaps import homothety_model, plykin_model, shear_model
from .linear import diagonal_map, homothety, identity, linear_map, two_sink
from .psi import build_psi
from .realize import realize_disk_map
from .solenoid import canonical_solenoid, circle_braid

DISK_MODELS: dict[str, Callable] = {
    "homothety": homothety_model,
    "plykin": plykin_model,
    "shear": shear_model,
}


def _canonical(n=2, r=0.5, center=(0.0, 0.0), delta=0.1):
    return canonical_solenoid(circle_braid(n, r, tuple(center)), delta)


def _realized(disk="shear", disk_params=None, n=2, r=0.3, center=None, gain=1.25):
    if disk not in DISK_MODELS:
        raise ConstructionError(f"unknown disk model {disk!r}; known: {sorted(DISK_MODELS)}")
    dm = DISK_MODELS[disk](**(disk_params or {}))
    # default braid passes through the origin at t = 0 so that {0} x D^2 is invariant
    c = (-r, 0.0) if center is None else tuple(center)
    return realize_disk_map(dm, circle_braid(n, r, c), build_psi(n, dm.C, gain=gain))


def _da(base=None, rho_u=0.2, rho_v=0.3):
    # thin braid: small unstable shear w keeps the sink separable from the saddles at depth 6
    base = base or {"name": "canonical_solenoid", "params": {"r": 0.15}}
    return da_solenoid(build_model(base), rho_u, rho_v)


def _ball(torus=None, shell=None):
    return ball3_compose(build_model(torus or {"name": "canonical_solenoid"}), ShellParams(**(shell or {})))


def _outer(shell=None):
    return outer_map(ShellParams(**(shell or {})))


def _product(base=None, mu=0.02, d=4):
    return product_extend(build_model(base or {"name": "outer_map"}), mu, d)


def _chart(kw):
    kw = dict(kw)
    if "chart" in kw:
        kw["chart"] = chart_from_id(kw["chart"])
    return kw


ZOO: dict[str, Callable[..., SmoothMap]] = {
    "canonical_solenoid": _canonical,
    "realized": _realized,
    "da_solenoid": _da,
    "ball3_compose": _ball,
    "outer_map": _outer,
    "product_extend": _product,
    "homothety": lambda **kw: homothety(**_chart(kw)),
    "identity": lambda **kw: identity(**_chart(kw)),
    "linear": lambda **kw: linear_map(**_chart(kw)),
    "diagonal": lambda **kw: diagonal_map(**_chart(kw)),
    "two_sink": two_sink,
}

# one representative configuration per zoo entry (used for Jacobian checks)
DEFAULTS: dict[str, dict] = {
    "canonical_solenoid": {},
    "realized_shear": {"name": "realized", "params": {"disk": "shear"}},
    "realized_plykin": {"name": "realized", "params": {"disk": "plykin"}},
    "realized_homothety": {"name": "realized", "params": {"disk": "homothety", "disk_params": {"delta": 0.15}}},
    "da_solenoid": {},
    "ball3_compose": {},
    "outer_map": {},
    "product_extend": {},
    "homothety": {},
    "identity": {},
    "linear": {"params": {"A": [[0.9, 0.2], [-0.1, 0.5]]}},
    "diagonal": {"params": {"diag": [2.0, 0.5, 0.5]}},
    "two_sink": {},
}


def build_model(spec: dict) -> SmoothMap:
    """Build from ``{"name": ..., "params": {...}}``."""
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConstructionError("model spec needs a 'name'")
    name = spec["name"]
    if name not in ZOO:
        raise ConstructionError(f"unknown model {name!r}; known: {sorted(ZOO)}")
    m = ZOO[name](**(spec.get("params") or {}))
    m.spec = {"name": name, "params": spec.get("params") or {}}
    return m


def default_specs() -> dict[str, dict]:
    out = {}
    for key, s in DEFAULTS.items():
        out[key] = {"name": s.get("name", key), "params": s.get("params", {})}
    return out
