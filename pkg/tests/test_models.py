from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasiattr.geometry import ball_d
from quasiattr.models.ball import ShellParams, ball3_compose, collar_decrease, outer_map, product_extend
from quasiattr.models.base import ConstructionError, jacobian_check, random_domain_points
from quasiattr.models.da import da_solenoid
from quasiattr.models.diskmaps import homothety_model, shear_model
from quasiattr.models.linear import homothety
from quasiattr.models.psi import build_psi
from quasiattr.models.realize import induced_fiber_map, realize_disk_map, seam_mismatch
from quasiattr.models.solenoid import canonical_solenoid, circle_braid, validate_separation
from quasiattr.models.zoo import build_model, default_specs


def _disk_points(m, seed=0, radius=1.0):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1, 1, (4 * m, 2))
    return radius * z[np.linalg.norm(z, axis=1) <= 1][:m]


# -- separation and the canonical solenoid ---------------------------------

def test_separation_margins_for_circle_braid():
    rep = validate_separation(circle_braid(2, 0.5), 0.1)
    assert rep.ok
    np.testing.assert_allclose(rep.margins, (0.3, 0.8), atol=1e-9)


def test_separation_degenerate_and_failing():
    assert validate_separation(circle_braid(2, 0.5), 0.0).ok
    rep = validate_separation(circle_braid(2, 0.5), 0.5)
    assert not rep.ok and rep.failing


def test_canonical_rejects_wide_delta():
    with pytest.raises(ConstructionError, match="r_min_boundary"):
        canonical_solenoid(circle_braid(2, 0.5), 0.3)


def test_canonical_formula(solenoid):
    np.testing.assert_allclose(solenoid.eval(np.zeros((1, 3))), [[0.0, 0.5, 0.0]], atol=1e-15)
    x = random_domain_points(solenoid.domain, 50, seed=3)
    J = solenoid.jacobian(x)
    np.testing.assert_allclose(J[:, 0, 0], 2.0)
    np.testing.assert_allclose(J[:, 0, 1:], 0.0)
    np.testing.assert_allclose(J[:, 1:, 1:], np.broadcast_to(0.1 * np.eye(2), (50, 2, 2)))
    dz = 0.5 * 2 * np.pi * np.column_stack([-np.sin(2 * np.pi * x[:, 0]), np.cos(2 * np.pi * x[:, 0])])
    np.testing.assert_allclose(J[:, 1:, 0], dz, rtol=1e-12)


def test_canonical_embedding_and_injectivity(solenoid):
    x = random_domain_points(solenoid.domain, 10000, seed=1)
    y = solenoid.eval(x)
    assert solenoid.domain.boundary_distance(y).min() > 0
    # fibers over t and t + 1/2 land in disks of radius 0.1 whose centres are 1.0 apart
    t = x[:5000, 0] % 0.5
    c1 = solenoid.eval(np.column_stack([t, np.zeros((5000, 2))]))[:, 1:]
    c2 = solenoid.eval(np.column_stack([t + 0.5, np.zeros((5000, 2))]))[:, 1:]
    assert np.linalg.norm(c1 - c2, axis=1).min() >= 1.0 - 1e-12
    p, q = x[:5000], x[5000:]
    assert (np.abs(solenoid.eval(p) - solenoid.eval(q)).max(axis=1) > 0).all()


# -- psi ---------------------------------------------------------------------

def test_psi_linear_when_cheap():
    psi = build_psi(2, 0.5)
    t = np.linspace(-0.5, 0.5, 101)
    np.testing.assert_allclose(psi(t), 2 * t, atol=1e-12)


def test_psi_steep_middle():
    psi = build_psi(2, 3.0)
    inv = psi.check_invariants()
    assert inv["min_slope_middle"] > 6
    assert inv["monotone"] and inv["min_slope"] > 1
    t = np.linspace(-0.5, 0.5, 200001)
    d = psi.deriv(t)
    integral = np.sum((d[1:] + d[:-1]) / 2 * np.diff(t))
    assert integral == pytest.approx(2.0, abs=1e-9)


def test_psi_infeasible_hint():
    with pytest.raises(ConstructionError, match="budget|integral"):
        build_psi(2, 3.0, eps_hint=0.2)


@given(st.integers(2, 5), st.floats(0.2, 40.0))
def test_psi_invariants(n, C):
    psi = build_psi(n, C)
    inv = psi.check_invariants()
    np.testing.assert_allclose(inv["endpoints"], (1.0, -1.0), atol=1e-12)
    assert inv["monotone"] and inv["min_slope"] > 1
    assert inv["min_slope_middle"] > 2 * C
    assert inv["end_slope_dev"] < 1e-9 and inv["c1_jump"] < 1e-9
    t = np.linspace(-1.0 / n, 1.0 / n, 501)
    np.testing.assert_allclose(psi(-t), -psi(t), atol=1e-14)


# -- realization ------------------------------------------------------------

def test_realized_fiber_is_the_disk_map(shear_realized):
    m = shear_realized
    z = _disk_points(1000, seed=5)
    y = m.eval(np.column_stack([np.zeros(len(z)), z]))
    np.testing.assert_allclose(y[:, 0], 0.0, atol=1e-15)
    np.testing.assert_allclose(y[:, 1:], induced_fiber_map(m, z), atol=1e-12)
    np.testing.assert_allclose(y[:, 1:], m.disk_model.phi.eval(z), atol=1e-12)


def test_realized_with_trivial_isotopy_is_time_changed_canonical():
    braid = circle_braid(2, 0.3, (-0.3, 0.0))
    dm = homothety_model(0.15)
    psi = build_psi(2, dm.C)
    m = realize_disk_map(dm, braid, psi)
    can = canonical_solenoid(braid, 0.15)
    x = random_domain_points(m.domain, 1000, seed=2)
    tau = np.where(x[:, 0] >= 0.5, x[:, 0] - 1, x[:, 0])
    inner = np.abs(tau) <= 0.5
    t2 = np.where(inner, psi(np.where(inner, tau, 0.0)) / 2, tau)
    np.testing.assert_allclose(m.eval(x), can.eval(np.column_stack([np.mod(t2, 1.0), x[:, 1:]])), atol=1e-12)


def test_realized_seams_are_c1(shear_realized):
    assert seam_mismatch(shear_realized) < 1e-8
    off, at = jacobian_check(shear_realized, trials=2000, split=True)
    assert off < 1e-4


def test_realized_rejects_mismatched_psi():
    dm = shear_model()
    with pytest.raises(ConstructionError):
        realize_disk_map(dm, circle_braid(3, 0.3, (-0.3, 0.0)), build_psi(2, dm.C))


# -- derived from Anosov --------------------------------------------------

@pytest.fixture(scope="module")
def da():
    return build_model({"name": "da_solenoid"})


def test_da_sink(da):
    w = da.omega[None]
    np.testing.assert_allclose(da.eval(w), w, atol=1e-12)
    ev = np.linalg.eigvals(da.jacobian(w)[0])
    np.testing.assert_allclose(np.abs(ev), 0.5, atol=1e-10)


def test_da_equals_base_off_support(da):
    x = random_domain_points(da.domain, 5000, seed=4)
    x = x[~da.in_support(x)]
    collar = x[np.linalg.norm(x[:, 1:], axis=1) > 0.9][:1000]
    assert len(collar) > 100
    np.testing.assert_array_equal(da.eval(collar), da.base.eval(collar))


def test_da_rejects_large_radius(solenoid):
    with pytest.raises(ConstructionError, match="rho_u"):
        da_solenoid(solenoid, rho_u=0.4)


# -- ball and product -------------------------------------------------------

def test_outer_shell_is_half_homothety():
    m = outer_map()
    rng = np.random.default_rng(0)
    u = rng.normal(size=(500, 3))
    p = u / np.linalg.norm(u, axis=1)[:, None] * rng.uniform(0.9, 1.0, (500, 1))
    np.testing.assert_array_equal(m.eval(p), p / 2)


def test_ball_compose_shell_and_collar(solenoid):
    m = ball3_compose(solenoid)
    rng = np.random.default_rng(1)
    u = rng.normal(size=(500, 3))
    p = u / np.linalg.norm(u, axis=1)[:, None] * rng.uniform(0.9, 1.0, (500, 1))
    np.testing.assert_array_equal(m.eval(p), p / 2)
    rep = collar_decrease(m, samples=10000)
    assert rep["violations"] == 0


def test_shell_geometry_rejected():
    with pytest.raises(ConstructionError, match="inside the homothety shell"):
        ShellParams(R0=0.7, a=0.25).validate()


def test_product_extend_slice_and_contraction():
    base = outer_map()
    F = product_extend(base, 0.02, 4)
    assert F.domain == ball_d(4)
    x = random_domain_points(F.domain, 300, seed=6)
    y = F.eval(x)
    np.testing.assert_allclose(y[:, 3:], 0.02 * x[:, 3:], rtol=0, atol=1e-15)
    x0 = x.copy()
    x0[:, 3:] = 0
    np.testing.assert_array_equal(F.eval(x0)[:, :3], base.eval(x0[:, :3]))
    np.testing.assert_array_equal(F.eval(x0)[:, 3:], 0.0)


def test_product_extend_rejects_weak_domination():
    with pytest.raises(ConstructionError, match="domination|mu"):
        product_extend(outer_map(), 0.9, 4)


# -- Jacobians ---------------------------------------------------------------

def test_jacobian_check_examples(solenoid):
    assert jacobian_check(solenoid, trials=1000) < 1e-5
    assert jacobian_check(homothety(0.5), trials=200) < 1e-10


@pytest.mark.parametrize("key", sorted(k for k in default_specs() if k != "realized_plykin"))
def test_zoo_embeddings_and_jacobians(key):
    m = build_model(default_specs()[key])
    x = random_domain_points(m.domain, 2000, seed=0)
    y = m.eval(x)
    assert np.isfinite(y).all()
    if key not in ("linear", "diagonal"):  # bare linear fixtures are not self-maps of the cube
        assert m.domain.boundary_distance(y).min() > 0
    off, _ = jacobian_check(m, trials=300, split=True)
    assert off < 1e-4
