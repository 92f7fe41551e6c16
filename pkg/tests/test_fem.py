"""Biquadratic elements, hanging-node constraints, and exact solutions."""

import numpy as np
import pytest

from twoscale.fem import (
    GAUSS3_PTS,
    GAUSS3_WTS,
    QUAD_PTS,
    QUAD_WTS,
    DisplacementField,
    MacroProblem,
    REF_KERNEL,
    shape_grads,
    shape_vals,
)
from twoscale.mesh import QuadMesh, UNIT_SQUARE
from twoscale.scenario import make_scenario
from twoscale.tensor import ElasticTensor2D, entries_to_voigt


def _problem(name="carrier", level=2, refine_keys=()):
    sc = make_scenario(name)
    mesh = QuadMesh.uniform(sc.domain, level)
    for key in refine_keys:
        mesh.refine([mesh.id_of[key]])
    return MacroProblem(mesh, sc), sc


def _full_entries(sc, n):
    return np.tile(sc.material.tensor().entries, (n, 1))


def test_shape_functions_partition_of_unity():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(7, 2))
    vals = shape_vals(pts)
    assert np.allclose(vals.sum(axis=1), 1.0)
    grads = shape_grads(pts)
    assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-13)


def test_shape_functions_nodal_delta():
    # local layout 3*jy + jx over the tensor grid (-1, 0, 1)^2
    nodes = np.array([(x, y) for y in (-1.0, 0.0, 1.0) for x in (-1.0, 0.0, 1.0)])
    vals = shape_vals(nodes)
    assert np.allclose(vals, np.eye(9), atol=1e-14)


def test_quadrature_integrates_degree_five():
    # tensor 3-point Gauss: exact for x^5 y^4 type monomials
    f = QUAD_PTS[:, 0] ** 4 * QUAD_PTS[:, 1] ** 2
    assert QUAD_WTS @ f == pytest.approx((2.0 / 5.0) * (2.0 / 3.0), abs=1e-14)
    g = QUAD_PTS[:, 0] ** 5 * QUAD_PTS[:, 1] ** 3
    assert QUAD_WTS @ g == pytest.approx(0.0, abs=1e-14)
    assert QUAD_WTS.sum() == pytest.approx(4.0)


def test_element_kernel_annihilates_rigid_modes():
    c = ElasticTensor2D.isotropic(1.3, 0.8).entries
    d = entries_to_voigt(c)
    ke = np.einsum("ab,abmn->mn", d, REF_KERNEL)
    # translations and the infinitesimal rotation have zero strain
    nodes = np.array([(x, y) for y in (-1.0, 0.0, 1.0) for x in (-1.0, 0.0, 1.0)])
    tx = np.zeros(18)
    tx[0::2] = 1.0
    ty = np.zeros(18)
    ty[1::2] = 1.0
    rot = np.empty(18)
    rot[0::2] = -nodes[:, 1]
    rot[1::2] = nodes[:, 0]
    for mode in (tx, ty, rot):
        assert np.abs(ke @ mode).max() < 1e-13
    # but not a uniaxial stretch
    stretch = np.zeros(18)
    stretch[0::2] = nodes[:, 0]
    assert np.abs(ke @ stretch).max() > 0.1


def test_carrier_full_material_is_exact_shear():
    # clamped base, guided sides, unit tangential top load, mu = 1:
    # the continuum solution u = (y, 0) lies in the Q2 space
    pr, sc = _problem("carrier", level=2)
    c = _full_entries(sc, pr.n_elements)
    u = pr.solve(c)
    assert u.compliance == pytest.approx(1.0, abs=1e-10)
    expect = np.stack([pr.node_coords[:, 1], np.zeros(pr.n_nodes)], axis=-1)
    assert np.abs(u.values - expect).max() < 1e-9


def test_carrier_exactness_survives_hanging_nodes():
    pr, sc = _problem("carrier", level=2, refine_keys=[(2, 1, 1), (3, 2, 2)])
    assert pr.mesh.max_level() == 4
    c = _full_entries(sc, pr.n_elements)
    u = pr.solve(c)
    assert u.compliance == pytest.approx(1.0, abs=1e-10)
    expect = np.stack([pr.node_coords[:, 1], np.zeros(pr.n_nodes)], axis=-1)
    assert np.abs(u.values - expect).max() < 1e-9


def test_compliance_equals_energy_and_load():
    pr, sc = _problem("cantilever", level=2)
    c = 0.3 * _full_entries(sc, pr.n_elements)
    u = pr.solve(c)
    j = u.compliance
    assert pr.load_functional(u) == pytest.approx(j, rel=1e-12)
    assert pr.a_form(c, u, u) == pytest.approx(j, rel=1e-9)
    assert u.residual_rel < 1e-10


def test_total_load_matches_traction_resultant():
    pr, sc = _problem("cantilever", level=3)
    f = pr.F_raw.reshape(-1, 2)
    patch = sc.loads[0]
    length = patch.segment.hi - patch.segment.lo
    assert f[:, 0].sum() == pytest.approx(0.0, abs=1e-13)
    assert f[:, 1].sum() == pytest.approx(-length, rel=1e-12)


def test_hanging_interface_stays_conforming():
    pr, sc = _problem("carrier", level=2, refine_keys=[(2, 0, 0)])
    rng = np.random.default_rng(1)
    c = _full_entries(sc, pr.n_elements) * rng.uniform(0.5, 1.5, (pr.n_elements, 1))
    u = pr.solve(c)
    # coarse element (2,1,0) faces two fine elements across x = 0.5
    pos = pr.mesh.leaf_index()
    coarse = pos[pr.mesh.id_of[(2, 1, 0)]]
    fine_lo = pos[pr.mesh.id_of[(3, 1, 0)]]
    ts = np.linspace(-0.9, 0.9, 7)
    # lower half of the coarse west edge in each side's reference frame
    ref_coarse = np.stack([-np.ones_like(ts), 0.5 * (ts - 1.0)], axis=-1)
    ref_fine = np.stack([np.ones_like(ts), ts], axis=-1)
    v_coarse = u.values_at(ref_coarse, elements=np.array([coarse]))[0]
    v_fine = u.values_at(ref_fine, elements=np.array([fine_lo]))[0]
    assert np.abs(v_coarse - v_fine).max() < 1e-12


def test_constraint_masters_never_slaved():
    pr, _ = _problem("carrier", level=2,
                     refine_keys=[(2, 0, 0), (2, 3, 3)])
    for slave, masters in pr.slave_of.items():
        for m, _w in masters:
            assert m not in pr.slave_of
    # constraint rows of T reproduce the quarter-point weights
    t = pr.T.toarray()
    for slave, masters in pr.slave_of.items():
        for comp in (0, 1):
            row = t[2 * slave + comp]
            expect = np.zeros(pr.n_free)
            for m, w in masters:
                col = pr.free_cols.get(2 * m + comp)
                if col is not None:
                    expect[col] = w
            assert np.allclose(row, expect)


def test_preconditioner_reuse_matches_direct_solve():
    pr, sc = _problem("lshape", level=2)
    rng = np.random.default_rng(2)
    c_a = _full_entries(sc, pr.n_elements)
    c_b = c_a * rng.uniform(0.4, 1.6, (pr.n_elements, 1))
    pr.solve(c_a)  # primes the stored factorization
    u_fast = pr.solve(c_b)  # preconditioned iterative path
    fresh = MacroProblem(pr.mesh, sc)
    u_ref = fresh.solve(c_b)  # cold direct path
    assert np.abs(u_fast.values - u_ref.values).max() < 1e-9
    assert u_fast.compliance == pytest.approx(u_ref.compliance, rel=1e-11)


def test_stress_divergence_of_manufactured_field():
    pr, sc = _problem("carrier", level=1)
    lam, mu = sc.material.lam, sc.material.mu
    c = _full_entries(sc, pr.n_elements)
    # u = (x^2, 0): div sigma = (2 (lam + 2 mu), 0), constant
    vals = np.stack([pr.node_coords[:, 0] ** 2,
                     np.zeros(pr.n_nodes)], axis=-1)
    u = DisplacementField(pr, vals)
    div = pr.stress_divergence(c, u, QUAD_PTS)
    assert np.allclose(div[..., 0], 2.0 * (lam + 2.0 * mu), atol=1e-10)
    assert np.allclose(div[..., 1], 0.0, atol=1e-10)


def test_strains_of_linear_field():
    pr, _ = _problem("carrier", level=2, refine_keys=[(2, 2, 2)])
    a = np.array([[0.3, -0.1], [0.7, 0.2]])
    vals = pr.node_coords @ a.T
    u = DisplacementField(pr, vals)
    eps = u.strains_at(QUAD_PTS)
    expect = 0.5 * (a + a.T)
    assert np.abs(eps - expect).max() < 1e-12


def test_boundary_edges_cover_perimeter():
    for name, perim in (("carrier", 4.0), ("cantilever", 3.0),
                        ("lshape", 4.0)):
        pr, _ = _problem(name, level=2)
        total = sum(hi - lo for _e, _s, _ax, _c, lo, hi in pr.boundary_edges())
        assert total == pytest.approx(perim), name


def test_von_mises_field_shape():
    pr, sc = _problem("bridge", level=2)
    c = _full_entries(sc, pr.n_elements)
    u = pr.solve(c)
    vm = pr.von_mises(c, u)
    assert vm.shape == (pr.n_elements,)
    assert np.all(vm >= 0.0)
    assert vm.max() > 0.0


def test_gauss3_rule_constants():
    assert GAUSS3_WTS.sum() == pytest.approx(2.0)
    assert GAUSS3_PTS @ GAUSS3_WTS == pytest.approx(0.0, abs=1e-15)
    assert GAUSS3_WTS @ GAUSS3_PTS ** 4 == pytest.approx(2.0 / 5.0)
