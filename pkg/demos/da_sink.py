"""A derived-from-solenoid map: a sink is opened at the fixed point and the
engine has to tell it apart from the saddles that are pushed out of it.

    python3 demos/da_sink.py
"""
from __future__ import annotations

from quasiattr.conley import refine_loop
from quasiattr.geometry import _encode, point_keys
from quasiattr.models.zoo import build_model
from quasiattr.orbits import find_periodic

m = build_model({"name": "da_solenoid"})
print("omega =", m.omega.round(6))

q = refine_loop(m, [3, 4, 5, 6])
md = q.decompositions[-1]
depth = md.graph.boxes.depth
code = _encode(point_keys(m.domain, depth, m.omega[None]), depth)
for k, s in enumerate(md.sets):
    tag = " <- contains omega" if s.contains_codes(code)[0] else ""
    print(f"Morse set {k}: {md.kind(k):22s} {len(s):5d} boxes{tag}")

orb = find_periodic(m, m.omega)
print("multipliers at omega:", orb.multipliers)
