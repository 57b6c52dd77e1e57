"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the terminal summary under "acceptance criteria".
"""
from __future__ import annotations

import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from quasiattr.cli import EXIT_OK, main
from quasiattr.conley import (Path as GraphPath, SeparatingRegion, chain_recurrent_boxes, condense, dichotomy,
                              refine_loop)
from quasiattr.geometry import BoxSet, _encode, cube, point_keys
from quasiattr.hyperbolicity import (ConeField, DominationCertificate, DominationFailure, check_cone_invariance,
                                     check_domination, expansion_constant)
from quasiattr.models.ball import ball3_compose, outer_map, product_extend
from quasiattr.models.base import jacobian_check, random_domain_points
from quasiattr.models.linear import two_sink
from quasiattr.models.realize import seam_mismatch
from quasiattr.models.zoo import build_model, default_specs
from quasiattr.orbits import find_periodic, find_tangencies, lamination_curves, tangency_field, tangency_neighborhood
from quasiattr.transition import EnclosureConfig, build_graph, graph_from_adjacency, verify_outer

ROOT = Path(__file__).resolve().parents[1]
SOLENOID = {"name": "canonical_solenoid", "params": {"n": 2, "r": 0.5, "delta": 0.1}}


def reach0(indptr, indices, n):
    """Reflexive-transitive reachability by repeated squaring."""
    R = np.eye(n, dtype=bool)
    for i in range(n):
        R[i, indices[indptr[i]:indptr[i + 1]]] = True
    while True:
        R2 = (R.astype(np.int32) @ R.astype(np.int32)) > 0
        if (R2 == R).all():
            return R
        R = R2


def box_points(boxes: BoxSet, k: int = 5) -> np.ndarray:
    """A k^dim grid in every box, faces included: shape (len, k^dim, dim)."""
    c, r = boxes.centers_radii()
    g = np.linspace(-1.0, 1.0, k)
    off = np.stack(np.meshgrid(*[g] * c.shape[1], indexing="ij"), -1).reshape(-1, c.shape[1])
    return c[:, None, :] + off[None] * r[:, None, :]


# -- 1 ----------------------------------------------------------------------

def test_ac1_solenoid_uniqueness(verdict):
    m = build_model(SOLENOID)
    t0 = time.perf_counter()
    q = refine_loop(m, [3, 4, 5, 6])
    wall = time.perf_counter() - t0
    counts, n6 = q.counts, q.reports[-1].n_boxes
    ok = not q.partial and counts == [1, 1, 1, 1] and n6 < 10**6 and wall < 600
    verdict("AC1", ok, f"attracting sets per depth {counts}, depth-6 boxes {n6}, wall {wall:.1f}s")
    assert ok


# -- 2 ----------------------------------------------------------------------

def test_ac2_cone_verification(verdict):
    m = build_model(SOLENOID)
    region = BoxSet.full(m.domain, (4, 4, 4))
    cone = ConeField.axis(3, [0], 2.0)
    res = check_cone_invariance(m, region, cone, ell=1)
    lam = expansion_constant(m, region, cone, ell=1)
    beta_exact, lam_exact = (np.pi + 0.2) / 2, 2.0
    ok = (res.ok and res.beta <= 1.70 and lam >= 1.99
          and abs(res.beta - beta_exact) <= 0.01 * beta_exact and abs(lam - lam_exact) <= 0.01 * lam_exact)
    verdict("AC2", ok, f"beta {res.beta:.5f} (exact {beta_exact:.5f}), lambda {lam:.5f} (exact 2)")
    assert ok


# -- 3 ----------------------------------------------------------------------

def test_ac3_outer_approximation_soundness(verdict):
    m = build_model(SOLENOID)
    g = build_graph(m, BoxSet.full(m.domain, (5, 5, 5)))
    sound = verify_outer(m, g, 100000, seed=0)
    # centre-only sampling makes the padding carry soundness alone, so halving it must show up
    half = EnclosureConfig(scheme="grid(1)", padding_scale=0.5, allow_unsound=True)
    gh = build_graph(m, BoxSet.full(m.domain, (4, 4, 4)), half)
    caught = verify_outer(m, gh, 100000, seed=0)
    ok = len(sound) == 0 and len(caught) >= 1
    verdict("AC3", ok, f"depth-5 violations {len(sound)}, half-padding fixture violations {len(caught)}")
    assert ok


# -- 4 ----------------------------------------------------------------------

def test_ac4_conley_dichotomy(verdict):
    g = build_graph(two_sink(), BoxSet.full(cube(2), (4, 3)))
    n = g.n
    assert n <= 200
    R = reach0(g.indptr, g.indices, n)
    agree = 0
    for i in range(n):
        for j in range(n):
            res = dichotomy(g, i, j)
            if isinstance(res, GraphPath):
                nodes = res.nodes
                good = (R[i, j] and nodes[0] == i and nodes[-1] == j
                        and all(b in g.targets(a) for a, b in zip(nodes, nodes[1:])))
            else:
                U = np.zeros(n, bool)
                U[res.nodes] = True
                src, dst = g.edges()
                good = (isinstance(res, SeparatingRegion) and not R[i, j] and U[i] and not U[j]
                        and not (U[src] & ~U[dst]).any())
            agree += bool(good)
    ok = agree == n * n
    verdict("AC4", ok, f"{agree}/{n * n} ordered pairs agree on a {n}-box two-sink graph")
    assert ok


# -- 5 ----------------------------------------------------------------------

def test_ac5_scc_oracle(verdict):
    rng = np.random.default_rng(2024)
    boxes_cache = {}
    agree = 0
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        p = rng.uniform(0.05, 0.5)
        A = rng.random((n, n)) < p
        adj = [np.flatnonzero(A[i]).tolist() for i in range(n)]
        if n not in boxes_cache:
            boxes_cache[n] = BoxSet(cube(1), (4,), [[i] for i in range(n)])
        md = condense(graph_from_adjacency(boxes_cache[n], adj))
        R = reach0(np.concatenate([[0], np.cumsum(A.sum(1))]), np.flatnonzero(A.ravel()) % n, n)
        same = R & R.T
        labels = md.labels
        scc_ok = ((labels[:, None] == labels[None, :]) == same).all()
        # recurrent: on a cycle (length >= 1)
        Rp = (A.astype(int) @ R.astype(int)) > 0
        rec = np.diag(Rp)
        agree += bool(scc_ok and (md.recurrent_mask == rec).all())
    ok = agree == 1000
    verdict("AC5", ok, f"{agree}/1000 random digraphs agree with brute-force reachability")
    assert ok


# -- 6 ----------------------------------------------------------------------

def test_ac6_realization_fidelity(verdict, shear_realized, plykin_realized):
    rng = np.random.default_rng(6)
    z = rng.uniform(-1, 1, (4000, 2))
    z = z[np.linalg.norm(z, axis=1) <= 1][:1000]
    rows, ok = [], len(z) == 1000
    for name, m in (("shear", shear_realized), ("plykin", plykin_realized)):
        y = m.f(np.column_stack([np.zeros(len(z)), z]))
        err = float(max(np.abs(y[:, 1:] - m.disk_model.phi.eval(z)).max(), np.abs(y[:, 0]).max()))
        inv = m.psi.check_invariants(10000)
        seam = seam_mismatch(m)
        ok &= err <= 1e-12 and inv["ok"] and seam < 1e-8
        rows.append(f"{name}: fiber error {err:.1e}, psi invariants {inv['ok']}, seam mismatch {seam:.1e}")
    verdict("AC6", ok, "; ".join(rows))
    assert ok


# -- 7 ----------------------------------------------------------------------

def test_ac7_ball_and_product_confinement(verdict, solenoid):
    # ball part
    m = ball3_compose(solenoid)
    g = build_graph(m, BoxSet.full(m.domain, (5, 5, 5)))
    cr = chain_recurrent_boxes(g)
    pts = box_points(cr)
    outside = int((m.tube_radius(pts.reshape(-1, 3)).reshape(len(cr), -1) > 1).any(axis=1).sum())
    P = random_domain_points(m.domain, 20000, seed=7)
    P = P[np.linalg.norm(P, axis=1) >= m.shell.shell]
    shell_exact = bool(np.array_equal(m.f(P), 0.5 * P))
    ball_ok = outside == 0 and shell_exact
    # product part
    F = product_extend(outer_map(), 0.02, 4)
    gp = build_graph(F, BoxSet.full(F.domain, (4, 4, 4, 4)))
    crp = chain_recurrent_boxes(gp)
    c, r = crp.centers_radii()
    far = int((np.abs(c[:, 3]) > 2 * r[:, 3]).sum())
    prod_ok = far == 0 and len(crp) > 0
    ok = ball_ok and prod_ok
    verdict("AC7", ok, f"ball: {outside}/{len(cr)} chain-recurrent boxes leave the torus, shell exact {shell_exact}; "
                       f"product d=4: {far}/{len(crp)} boxes beyond 2 radii")
    assert ok


# -- 8 ----------------------------------------------------------------------

def test_ac8_da_model(verdict):
    m = build_model({"name": "da_solenoid"})
    q = refine_loop(m, [3, 4, 5, 6])
    md = q.decompositions[-1]
    depth = md.graph.boxes.depth
    code = _encode(point_keys(m.domain, depth, m.omega[None]), depth)
    att_with = [k for k in range(md.n_sets) if md.attracting[k] and md.sets[k].contains_codes(code)[0]]
    n_att = int(md.attracting.sum())
    non_att = int((~md.attracting).sum())
    orb = find_periodic(m, m.omega)
    mult_err = float(np.abs(orb.multipliers - 0.5).max())
    ok = len(att_with) == 1 and n_att == 1 and non_att >= 1 and mult_err <= 1e-8
    verdict("AC8", ok, f"attracting sets {n_att} (containing omega {len(att_with)}), non-attracting classes "
                       f"{non_att}, multipliers {np.round(orb.multipliers, 10).tolist()}")
    assert ok


# -- 9 / 10 -----------------------------------------------------------------

@pytest.fixture(scope="module")
def plykin_tangencies(plykin_realized):
    m = plykin_realized
    fld = tangency_field(m)
    out = {}
    for h in (1e-3, 5e-4):
        cs = lamination_curves(m, phi_steps=4, sigma_length=1e-5, h_max=h)
        out[h] = (cs, find_tangencies(cs, fld))
    return out


def test_ac9_tangency_existence(verdict, plykin_tangencies):
    (_, a), (_, b) = plykin_tangencies[1e-3], plykin_tangencies[5e-4]
    qa, qb = a.quadratic, b.quadratic
    shift = float("inf")
    if qa and len(qa) == len(qb):
        shift = max(float(np.linalg.norm(x.point - y.point)) for x, y in zip(qa, qb))
    ok = len(qa) >= 1 and len(qa) == len(qb) and shift <= 1e-6
    verdict("AC9", ok, f"quadratic tangencies {len(qa)} (halved step: {len(qb)}), max position shift {shift:.2e}")
    assert ok


def test_ac10_domination_failure_in_ecs(verdict, plykin_realized, plykin_tangencies):
    cs, rep = plykin_tangencies[1e-3]
    assert rep.quadratic
    rows, ok = [], True
    for t in rep.quadratic:
        pts, region = tangency_neighborhood(plykin_realized, cs[t.curve], t)
        r11 = check_domination(plykin_realized, region, (1, 1), 8, points=pts)
        r21 = check_domination(plykin_realized, region, (2, 1), 8, points=pts)
        good = isinstance(r11, DominationFailure) and isinstance(r21, DominationCertificate)
        ok &= good
        rows.append(f"curve {t.curve}: (1,1) {type(r11).__name__}, (2,1) {type(r21).__name__}")
    verdict("AC10", ok, "; ".join(rows))
    assert ok


# -- 11 ---------------------------------------------------------------------

SCENARIOS = ("solenoid_uniqueness", "da_sink", "plykin_tangency")


def _tree(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p for p in sorted(d.rglob("*")) if p.is_file()}


def test_ac11_determinism(verdict, tmp_path):
    diffs = []
    for name in SCENARIOS:
        sc = str(ROOT / "scenarios" / f"{name}.yaml")
        outs = []
        for tag, w in (("a", 1), ("b", 1), ("c", 8)):
            out = tmp_path / tag / name
            # fresh cache per run so nothing is reused between runs
            code = main(["run", "--scenario", sc, "--workers", str(w), "--output", str(out),
                         "--cache-dir", str(tmp_path / f"cache_{tag}")])
            assert code == EXIT_OK, name
            outs.append(_tree(out))
        ref = outs[0]
        for other in outs[1:]:
            if set(ref) != set(other):
                diffs.append(f"{name}: file sets differ")
                continue
            for rel, p in ref.items():
                if rel != "manifest.json" and not filecmp.cmp(p, other[rel], shallow=False):
                    diffs.append(f"{name}/{rel}")
    ok = not diffs
    verdict("AC11", ok, f"{len(SCENARIOS)} scenarios x 3 runs (workers 1, 1, 8): "
                        + ("all artifacts byte-identical" if ok else "differ: " + ", ".join(diffs)))
    assert ok


# -- 12 ---------------------------------------------------------------------

def test_ac12_jacobian_correctness(verdict):
    rows, bad = [], []
    for key, spec in default_specs().items():
        m = build_model(spec)
        off, at = jacobian_check(m, 1000, seed=0, split=True)
        rows.append(f"{key} {off:.1e}/{at:.1e}")
        if not (off < 1e-5 and at < 1e-4):
            bad.append(key)
    ok = not bad
    verdict("AC12", ok, ("all zoo models within tolerance" if ok else "failing: " + ", ".join(bad))
            + " [off-seam/at-seam: " + ", ".join(rows) + "]")
    assert ok
