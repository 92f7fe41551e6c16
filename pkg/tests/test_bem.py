"""Boundary-element backend: kernels, panel integrals, cell solves."""

import numpy as np
import pytest
from scipy.integrate import quad

from twoscale.bem import (CellBEM, cell_energies, effective_tensor_bem,
                          kelvin, panel_integrals, solve_cell_bem,
                          traction_kernel)
from twoscale.tensor import IsotropicMaterial, entries_to_full

MAT = IsotropicMaterial(1.0, 1.0)


def _square_loop(nseg):
    corners = [np.array(v, float) for v in [(0, 0), (1, 0), (1, 1), (0, 1)]]
    panels = []
    for c0, c1 in zip(corners, corners[1:] + corners[:1]):
        for k in range(nseg):
            panels.append((c0 + (c1 - c0) * k / nseg,
                           c0 + (c1 - c0) * (k + 1) / nseg))
    return panels


def test_kelvin_hand_value():
    u = kelvin((0.0, 0.0), (1.0, 0.0), MAT)
    assert abs(u[0, 0] - 1.0 / (6.0 * np.pi)) < 1e-15
    assert abs(u[1, 1]) < 1e-15  # log r = 0, dyadic has no yy part
    assert abs(u[0, 1]) < 1e-15


def test_kelvin_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p, q = rng.normal(size=2), rng.normal(size=2)
        u = kelvin(p, q, MAT)
        assert np.allclose(u, u.T, atol=1e-14)
        assert np.allclose(u, kelvin(q, p, MAT).T, atol=1e-14)


def test_kelvin_log_scaling():
    # scaling both points only shifts the log term
    lam, mu = 1.4, 0.7
    mat = IsotropicMaterial(lam, mu)
    k1 = (lam + mu) / (4.0 * np.pi * mu * (lam + 2.0 * mu))
    k2 = (lam + 3.0 * mu) / (lam + mu)
    p, q = np.array([0.2, -0.1]), np.array([0.9, 0.4])
    s = 3.7
    diff = kelvin(s * p, s * q, mat) - kelvin(p, q, mat)
    assert np.allclose(diff, -k1 * k2 * np.log(s) * np.eye(2), atol=1e-14)


def test_kelvin_rejects_coincident():
    with pytest.raises(ValueError):
        kelvin((0.3, 0.3), (0.3, 0.3), MAT)


def test_panel_rejects_zero_length():
    with pytest.raises(ValueError):
        panel_integrals((0.1, 0.2), (0.1, 0.2), (1.0, 1.0), MAT)


def test_panel_integrals_match_quadrature():
    mat = IsotropicMaterial(1.3, 0.8)
    a, b = np.array([0.2, 0.1]), np.array([0.9, 0.5])
    x = np.array([-0.3, 0.7])
    length = np.linalg.norm(b - a)
    tau = (b - a) / length
    nrm = np.array([tau[1], -tau[0]])
    sla, slb, dla, dlb = panel_integrals(a, b, x, mat)

    def block(kern, which):
        out = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                def f(u, i=i, j=j):
                    y = a + u * tau
                    phi = 1.0 - u / length if which == 0 else u / length
                    return kern(x, y)[i, j] * phi
                out[i, j] = quad(f, 0.0, length, epsabs=1e-13, epsrel=1e-13)[0]
        return out

    assert abs(sla - block(lambda p, q: kelvin(p, q, mat), 0)).max() < 1e-10
    assert abs(slb - block(lambda p, q: kelvin(p, q, mat), 1)).max() < 1e-10
    tk = lambda p, q: traction_kernel(p, q, nrm, mat)
    assert abs(dla - block(tk, 0)).max() < 1e-10
    assert abs(dlb - block(tk, 1)).max() < 1e-10


def test_panel_translation_invariance():
    a, b = np.array([0.2, 0.1]), np.array([0.9, 0.5])
    x = np.array([0.4, 0.9])
    shift = np.array([-2.3, 0.7])
    ref = panel_integrals(a, b, x, MAT)
    moved = panel_integrals(a + shift, b + shift, x + shift, MAT)
    for r, m in zip(ref, moved):
        assert np.allclose(r, m, atol=1e-13)


def test_double_layer_loop_identities():
    # constant density over a closed loop: -I inside, -I/2 at a smooth
    # boundary point (principal value), 0 outside
    def loop(x):
        total = np.zeros((2, 2))
        for pa, pb in _square_loop(7):
            _, _, da, db = panel_integrals(pa, pb, x, MAT)
            total += da + db
        return total

    assert np.allclose(loop(np.array([0.33, 0.41])), -np.eye(2), atol=1e-12)
    assert np.allclose(loop(np.array([1.7, -0.2])), np.zeros((2, 2)), atol=1e-12)
    assert np.allclose(loop(np.array([3.0 / 7.0, 0.0])), -0.5 * np.eye(2),
                       atol=1e-12)


def test_affine_field_representation():
    # an affine displacement field is reproduced exactly from its
    # boundary data: the end-to-end check of kernels, signs and the
    # finite-part values
    lam, mu = 1.3, 0.8
    mat = IsotropicMaterial(lam, mu)
    xi = np.array([[0.37, 0.21], [0.21, -0.53]])
    c = np.array([0.11, -0.29])
    sig = lam * np.trace(xi) * np.eye(2) + 2.0 * mu * xi
    panels = _square_loop(5)

    def defect(x, cfac):
        acc = np.zeros(2)
        for pa, pb in panels:
            d = pb - pa
            length = np.hypot(d[0], d[1])
            nu = np.array([d[1], -d[0]]) / length
            t = sig @ nu
            sla, slb, dla, dlb = panel_integrals(pa, pb, x, mat)
            acc += sla @ t + slb @ t - dla @ (xi @ pa + c) - dlb @ (xi @ pb + c)
        return np.abs(acc - cfac * (xi @ x + c)).max()

    assert defect(np.array([0.63, 0.27]), 1.0) < 1e-13
    assert defect(np.array([0.4, 0.0]), 0.5) < 1e-13
    assert defect(np.array([1.0, 0.6]), 0.5) < 1e-13
    assert defect(np.array([2e-7, 2e-7]), 1.0) < 1e-10  # near-corner inset


def test_vanishing_hole_limit():
    # hole shrinks away: energies approach the base material
    gaps = []
    for d in (0.9, 0.95, 0.98):
        e11, e22, e12 = cell_energies(d, d, MAT, panels_per_edge=16)
        gaps.append(abs(e11 - 3.0))
        assert abs(e11 - e22) < 1e-8
        assert e11 < 3.0 + 1e-8
        assert e12 < 1.0 + 1e-8
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.01


def test_zero_strain_gives_zero():
    sol = solve_cell_bem(0.5, 0.5, np.zeros((2, 2)), MAT, panels_per_edge=8)
    assert sol.energy == 0.0
    assert np.all(sol.w == 0.0)
    assert np.all(sol.t == 0.0)


def test_cell_energies_match_fem_oracle():
    # frozen fine-grid FEM values (resolution 256, weak-phase factor 1e-4)
    oracle = {
        (0.3, 0.3): (0.85054966, 0.85054966, 0.04988188),
        (0.5, 0.5): (1.50570146, 1.50570146, 0.26636615),
        (0.7, 0.4): (1.36755212, 2.04070835, 0.36081916),
    }
    for (d1, d2), ref in oracle.items():
        e = cell_energies(d1, d2, MAT)
        for have, want in zip(e, ref):
            assert abs(have - want) <= 0.03 * abs(want)


def test_effective_tensor_structure():
    entries = effective_tensor_bem(0.6, 0.4, MAT, panels_per_edge=24)
    # axis-aligned cell: orthotropic, no normal-shear coupling
    assert abs(entries[4]) < 1e-8 * entries[0]
    assert abs(entries[5]) < 1e-8 * entries[0]
    full = entries_to_full(entries)
    rng = np.random.default_rng(11)
    for _ in range(20):
        v = rng.normal(size=3)
        xi = np.array([[v[0], v[2]], [v[2], v[1]]])
        q = np.einsum("ijkl,kl,ij->", full, xi, xi)
        assert q > 0.0


def test_panel_refinement_trend():
    vals = [cell_energies(0.5, 0.5, MAT, panels_per_edge=P)[0]
            for P in (8, 16, 32)]
    assert abs(vals[1] - vals[0]) > abs(vals[2] - vals[1])


def test_solution_respects_prescribed_hole_traction():
    xi = np.array([[1.0, 0.0], [0.0, 0.0]])
    sol = solve_cell_bem(0.5, 0.5, xi, MAT, panels_per_edge=16)
    assert sol.residual < 1e-8
    sig = MAT.lam * np.trace(xi) * np.eye(2) + 2.0 * MAT.mu * xi
    # hole-left panels carry t = -(sig e1)
    on_left = np.abs(sol.points[:, 0] - 0.25) < 1e-12
    inner = on_left & (np.abs(sol.points[:, 1] - 0.5) < 0.2)
    assert inner.any()
    want = -(sig @ np.array([1.0, 0.0]))
    assert np.allclose(sol.t[inner], want, atol=1e-12)
