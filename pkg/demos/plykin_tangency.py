"""Tangencies between the strong unstable lamination and the stable direction
field of a realized Plykin-type disk map, and what they do to domination.

    python3 demos/plykin_tangency.py
"""
from __future__ import annotations

from quasiattr.hyperbolicity import check_domination
from quasiattr.models.zoo import build_model
from quasiattr.orbits import find_tangencies, lamination_curves, tangency_field, tangency_neighborhood

m = build_model({"name": "realized", "params": {"disk": "plykin"}})
field = tangency_field(m)
print(f"stable field on {len(field.region)} boxes, {int(field.reliable.sum())} reliable")

curves = lamination_curves(m, phi_steps=4, sigma_length=1e-5, h_max=1e-3)
report = find_tangencies(curves, field)
for t in report.quadratic:
    print(f"curve {t.curve}: quadratic tangency at {t.point.round(8)}, slope {t.slope:.2f}")

# Near a tangency the centre-stable plane has no one-dimensional invariant
# splitting, while the 2+1 splitting survives.
t = report.quadratic[0]
pts, region = tangency_neighborhood(m, curves[t.curve], t)
for dims in ((1, 1), (2, 1)):
    res = check_domination(m, region, dims, 8, points=pts)
    print(dims, type(res).__name__)
