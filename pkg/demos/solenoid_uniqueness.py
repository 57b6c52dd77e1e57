"""Refine a box cover of the solenoid attractor and check its hyperbolic structure.

    python3 demos/solenoid_uniqueness.py
"""
from __future__ import annotations

import numpy as np

from quasiattr.conley import attractor_evidence, condense, refine_loop
from quasiattr.geometry import BoxSet
from quasiattr.hyperbolicity import ConeField, check_cone_invariance, check_domination, expansion_constant
from quasiattr.models.zoo import build_model
from quasiattr.orbits import find_periodic
from quasiattr.transition import build_graph

m = build_model({"name": "canonical_solenoid", "params": {"n": 2, "r": 0.5, "delta": 0.1}})

# Each level keeps only the attracting Morse sets plus a one-cell collar,
# so the cover shrinks onto the attractor while the depth goes up.
q = refine_loop(m, [3, 4, 5, 6], log=lambda r: print(f"depth {r.depth}: {r.n_boxes} boxes, "
                                                    f"{r.n_attracting} attracting of {r.n_morse} Morse sets"))
print("nested:", q.is_nested())

g = build_graph(m, BoxSet.full(m.domain, (4, 4, 4)))
md = condense(g)
ev = attractor_evidence(g, md.sets[int(np.argmax(md.attracting))], md)
print("isolated attracting set at depth 4:", ev.isolated)

# The circle direction is uniformly expanded: a cone of aperture 2 around it
# is mapped strictly inside itself.
cone = ConeField.axis(3, [0], 2.0)
region = BoxSet.full(m.domain, (4, 4, 4))
res = check_cone_invariance(m, region, cone)
print(f"cone image aperture {res.beta:.4f} < 2, expansion {expansion_constant(m, region, cone):.4f}")

cert = check_domination(m, q.union(-1), (2, 1), 8)
print(type(cert).__name__, f"worst ratio {cert.lambda_hat:.3g}")

orb = find_periodic(m, np.array([0.0, 0.5, 0.0]))
print("fixed point", orb.points[0].round(6), "multipliers", orb.multipliers.round(6))
