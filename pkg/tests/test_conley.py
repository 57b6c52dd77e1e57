from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasiattr.conley import (Path, SeparatingRegion, attracting_morse_sets, attractor_evidence, basin_boxes,
                              chain_recurrent_boxes, condense, dichotomy, find_attracting_region, refine_loop)
from quasiattr.geometry import BoxSet, ball3, cube, point_keys, torus3
from quasiattr.models.base import SmoothMap, sampled_local_lipschitz
from quasiattr.models.linear import homothety, identity, linear_map, two_sink
from quasiattr.transition import TransitionGraph, build_graph, graph_from_adjacency


def line_graph(adj, escape=None):
    boxes = BoxSet(cube(1), (6,), [[i] for i in range(len(adj))])
    g = graph_from_adjacency(boxes, adj)
    if escape is not None:
        g = TransitionGraph(g.boxes, g.indptr, g.indices, np.asarray(escape, bool), {})
    return g


def reach_matrix(adj):
    n = len(adj)
    R = np.zeros((n, n), bool)
    for i, ts in enumerate(adj):
        R[i, list(ts)] = True
    # paths of length >= 1
    for k in range(n):
        R |= R[:, [k]] & R[[k], :]
    return R


@pytest.fixture(scope="module")
def two_sink_graph():
    g = build_graph(two_sink(), BoxSet.full(cube(2), (5, 5)))
    return g, condense(g)


@pytest.fixture(scope="module")
def contraction_graph():
    g = build_graph(homothety(0.5), BoxSet.full(ball3(), (4, 4, 4)))
    return g, condense(g)


# -- condensation -----------------------------------------------------------

def test_three_cycle():
    md = condense(line_graph([[1], [2], [0]]))
    assert md.n_sets == 1 and md.kind(0) == "attracting+repelling"
    assert len(attracting_morse_sets(md)) == 1


def test_contraction_single_attractor(contraction_graph):
    g, md = contraction_graph
    att = attracting_morse_sets(md)
    assert len(att) == 1
    c, r = att[0].centers_radii()
    assert ((np.abs(c) <= r + 1e-15).all(axis=1)).any()
    # recurrence stays within two cells of the fixed point
    cr, rr = chain_recurrent_boxes(g).centers_radii()
    assert (np.abs(cr) <= 2 * 2 * rr).all()


def test_two_sink_has_two_attractors(two_sink_graph):
    g, md = two_sink_graph
    att = attracting_morse_sets(md)
    assert len(att) == 2
    xs = sorted(float(s.centers_radii()[0][:, 0].mean()) for s in att)
    assert xs[0] == pytest.approx(-0.5, abs=0.1) and xs[1] == pytest.approx(0.5, abs=0.1)


def test_identity_and_swap_recurrence():
    g = build_graph(identity(), BoxSet.full(ball3(), (2, 2, 2)))
    assert chain_recurrent_boxes(g) == g.boxes
    g = build_graph(linear_map([[-1.0]]), BoxSet(cube(1), (2,), [[0], [3]]))
    assert len(chain_recurrent_boxes(g)) == 2


def test_trivial_scc_needs_self_loop():
    md = condense(line_graph([[1], [1], [1, 2]]))
    assert md.recurrent_mask.tolist() == [False, True, True]


def test_morse_json_order():
    md = condense(line_graph([[0], [2], [1], [3]]))
    js = md.to_json()
    firsts = [s["keys"][0] for s in js["morse_sets"]]
    assert firsts == sorted(firsts)


graphs = st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.lists(st.lists(st.integers(0, n - 1), max_size=3), min_size=n, max_size=n),
                        st.lists(st.booleans(), min_size=n, max_size=n)))


@given(graphs)
def test_condense_matches_brute_force(data):
    adj, esc = data
    n = len(adj)
    g = line_graph(adj, esc)
    md = condense(g)
    R = reach_matrix(adj)
    rec = np.diag(R)
    assert md.recurrent_mask.tolist() == rec.tolist()
    for i in range(n):
        for j in range(n):
            same = i == j or (R[i, j] and R[j, i])
            if rec[i] and rec[j]:
                assert (md.morse_label[i] == md.morse_label[j]) == same
    for k, mem in enumerate(md.members):
        reach = R[mem].any(axis=0)
        others = rec & (md.morse_label != k)
        assert md.attracting[k] == (not (reach & others).any() and not (reach | np.isin(np.arange(n), mem))[np.asarray(esc)].any())
        assert md.repelling[k] == (not R[others][:, mem].any())


# -- regions, dichotomy, basins ----------------------------------------------

def test_attracting_region_examples(solenoid):
    g = build_graph(solenoid, BoxSet.full(torus3(), (5, 4, 4)))
    md = condense(g)
    (M,) = attracting_morse_sets(md)
    U = find_attracting_region(g, M)
    assert U is not None and U.collar and M.issubset(U.boxes)
    assert not g.escape[U.nodes].any()
    # soundness: 10^4 points of U land in U
    rng = np.random.default_rng(0)
    c, r = U.boxes.centers_radii()
    i = rng.integers(0, len(c), 10000)
    x = c[i] + rng.uniform(-1, 1, (10000, 3)) * r[i]
    x[:, 0] %= 1.0
    x = x[torus3().contains(x)]
    keys = point_keys(torus3(), U.boxes.depth, solenoid.eval(x))
    assert U.boxes.contains_codes(BoxSet(torus3(), U.boxes.depth, keys).codes).all()
    # the whole space qualifies only because the solenoid is a strict embedding
    assert find_attracting_region(g, np.ones(g.n, bool)) is not None
    gi = build_graph(identity(), BoxSet.full(ball3(), (2, 2, 2)))
    assert find_attracting_region(gi, np.ones(gi.n, bool)) is None


def test_region_from_repeller_contains_attractor():
    # x -> x + 0.1 sin(2 pi x): interior repeller at 0, sinks at +-1/2
    c = 0.1
    df = lambda x: (1 + 2 * np.pi * c * np.cos(2 * np.pi * x))[:, :, None]
    m = SmoothMap("bistable", cube(1), cube(1), lambda x: x + c * np.sin(2 * np.pi * x), df,
                  [[1 + 2 * np.pi * c]], local_lipschitz=sampled_local_lipschitz(df))
    g = build_graph(m, BoxSet.full(cube(1), (6,)))
    md = condense(g)
    origin = int(np.flatnonzero(g.boxes.keys[:, 0] == 32)[0])
    k = md.morse_label[origin]
    assert md.kind(k) == "repelling"
    U = find_attracting_region(g, md.sets[k])
    assert U is not None and U.collar
    att = attracting_morse_sets(md)
    assert len(att) == 2 and all(a.issubset(U.boxes) for a in att)


def test_dichotomy_examples(two_sink_graph):
    g, md = two_sink_graph
    att = attracting_morse_sets(md)
    sink = int(g.boxes.index_of(att[0].codes[:1])[0])
    basin = basin_boxes(g, att[0], md)
    start = int(np.flatnonzero(basin.definitely_mask & ~md.recurrent_mask)[0])
    p = dichotomy(g, start, sink)
    assert isinstance(p, Path) and int(p.nodes[0]) == start and int(p.nodes[-1]) == sink
    rep = md.members[[k for k in range(md.n_sets) if md.kind(k) == "repelling"][0]][0]
    s = dichotomy(g, sink, int(rep))
    assert isinstance(s, SeparatingRegion) and sink in s.nodes and rep not in s.nodes
    assert dichotomy(g, sink, sink).length == 0


@given(st.lists(st.lists(st.integers(0, 29), max_size=3), min_size=30, max_size=30))
def test_dichotomy_totality(adj):
    g = line_graph(adj)
    R = reach_matrix(adj)
    for i in range(30):
        for j in range(30):
            out = dichotomy(g, i, j)
            if i == j or R[i, j]:
                assert isinstance(out, Path)
                assert all(b in adj[a] for a, b in zip(out.nodes, out.nodes[1:]))
            else:
                assert isinstance(out, SeparatingRegion)
                assert j not in out.nodes and i in out.nodes
                closed = set(out.nodes.tolist())
                assert all(set(adj[a]) <= closed for a in closed)


def test_basin_examples(contraction_graph, two_sink_graph):
    g, md = contraction_graph
    (M,) = attracting_morse_sets(md)
    assert basin_boxes(g, M, md).definitely_mask.all()
    g, md = two_sink_graph
    a, b = attracting_morse_sets(md)
    ba, bb = basin_boxes(g, a, md), basin_boxes(g, b, md)
    assert not (ba.definitely_mask & bb.definitely_mask).any()
    # cells over the stable line x = 0 of the saddle can reach either sink
    c, r = g.boxes.centers_radii()
    on_line = np.abs(c[:, 0]) <= r[:, 0]
    assert (ba.possibly_mask[on_line] & ~ba.definitely_mask[on_line]).any()


@given(graphs)
def test_basin_consistency(data):
    adj, esc = data
    g = line_graph(adj, esc)
    md = condense(g)
    att = attracting_morse_sets(md)
    masks = [basin_boxes(g, s, md).definitely_mask for s in att]
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            assert not (masks[i] & masks[j]).any()


def test_evidence(two_sink_graph):
    g, md = two_sink_graph
    ev = attractor_evidence(g, attracting_morse_sets(md)[0], md)
    assert ev.isolated and ev.region_found
    # a recurrent class one cell away that never drains into M
    adj = [[0], [1], [0]]
    ev = attractor_evidence(line_graph(adj), [0])
    assert not ev.isolated and ev.min_distance_to_foreign == 1


# -- refinement --------------------------------------------------------------

def test_refine_two_sink_stable():
    q = refine_loop(two_sink(), [4, 5, 6])
    assert q.counts == [2, 2, 2] and q.is_nested() and not q.partial


def test_refine_solenoid_nested(solenoid, tmp_path):
    q = refine_loop(solenoid, [3, 4, 5], csv_path=tmp_path / "r.csv")
    assert q.counts == [1, 1, 1] and q.is_nested()
    diam = [r.max_diameter for r in q.reports]
    assert diam[-1] <= diam[0]
    assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("depth,n_boxes")


def test_refine_budget_flag(solenoid):
    q = refine_loop(solenoid, [3, 4], budget=100)
    assert q.partial and "budget" in q.reason
