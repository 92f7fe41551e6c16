"""Periodic cross-cell homogenization: limits, symmetries, sensitivities."""

import numpy as np
import pytest

from twoscale.microcell import (
    DELTA_MAX,
    DELTA_MIN,
    MicroParams,
    UNIT_STRAINS,
    axis_tensor,
    density,
    density_gradient,
    effective_tensor,
    export_cell_database,
    solve_cell,
    tensor_sensitivities,
)
from twoscale.tensor import (
    ElasticTensor2D,
    IsotropicMaterial,
    entries_to_mandel,
    rotate_entries,
)

MAT = IsotropicMaterial(1.0, 1.0)
RES = 16  # keep unit tests cheap; the acceptance suite runs the fine grids


def test_density_formula_and_gradient():
    assert density(0.3, 0.5) == pytest.approx(0.3 + 0.5 - 0.15)
    assert density(1.0, 0.2) == pytest.approx(1.0)
    g1, g2 = density_gradient(0.3, 0.5)
    h = 1e-7
    assert g1 == pytest.approx((density(0.3 + h, 0.5) - density(0.3 - h, 0.5))
                               / (2 * h), abs=1e-6)
    assert g2 == pytest.approx((density(0.3, 0.5 + h) - density(0.3, 0.5 - h))
                               / (2 * h), abs=1e-6)


def test_params_clamped_to_box():
    p = MicroParams(0.4, -1.0, 2.0).clamped()
    assert p.delta1 == DELTA_MIN
    assert p.delta2 == DELTA_MAX
    assert p.alpha == 0.4


def test_full_width_cell_recovers_material():
    sol = solve_cell(1.0, 1.0, MAT, resolution=8)
    assert np.abs(sol.entries - MAT.tensor().entries).max() < 1e-10
    assert np.abs(sol.correctors).max() < 1e-10


def test_solve_cell_rejects_bad_widths():
    with pytest.raises(ValueError):
        solve_cell(0.0, 0.5, MAT)
    with pytest.raises(ValueError):
        solve_cell(0.5, 1.5, MAT)


def test_cell_residuals_small():
    sol = solve_cell(0.37, 0.58, MAT, resolution=RES)
    assert sol.residuals.max() < 1e-10


def test_energies_symmetric_positive_definite():
    sol = solve_cell(0.45, 0.3, MAT, resolution=RES)
    e = sol.energies
    assert np.allclose(e, e.T, atol=1e-12)
    assert np.linalg.eigvalsh(e).min() > 0.0


def test_axis_cell_is_orthotropic():
    entries, _ = axis_tensor(0.35, 0.6, MAT, resolution=RES)
    assert abs(entries[4]) < 1e-12  # C1112
    assert abs(entries[5]) < 1e-12  # C2212


def test_width_swap_swaps_axes():
    a, _ = axis_tensor(0.3, 0.62, MAT, resolution=RES)
    b, _ = axis_tensor(0.62, 0.3, MAT, resolution=RES)
    assert b[0] == pytest.approx(a[1], rel=1e-12)  # C1111 <-> C2222
    assert b[1] == pytest.approx(a[0], rel=1e-12)
    assert b[2] == pytest.approx(a[2], rel=1e-12)  # C1122 invariant
    assert b[3] == pytest.approx(a[3], rel=1e-12)  # C1212 invariant


def test_equal_widths_square_symmetric():
    entries, _ = axis_tensor(0.44, 0.44, MAT, resolution=RES)
    assert entries[0] == pytest.approx(entries[1], rel=1e-12)
    # square symmetry also makes the tensor invariant under 90 degrees
    rot = rotate_entries(entries, np.pi / 2)
    assert np.abs(rot - entries).max() < 1e-10


def test_wider_bar_is_stiffer():
    lo, _ = axis_tensor(0.3, 0.4, MAT, resolution=RES)
    hi, _ = axis_tensor(0.6, 0.4, MAT, resolution=RES)
    diff = entries_to_mandel(hi - lo)
    assert np.linalg.eigvalsh(diff).min() > -1e-12
    assert hi[0] > lo[0] + 0.1


def test_effective_tensor_definite_even_when_thin():
    t = effective_tensor(MicroParams(0.0, DELTA_MIN, DELTA_MIN), MAT,
                         resolution=RES)
    assert t.is_positive_definite()
    assert t.entries[0] < 0.1 * MAT.tensor().entries[0]


def test_voigt_average_bounds_response():
    # theta A + (1 - theta) soft A dominates the periodic response
    for d1, d2 in ((0.3, 0.3), (0.5, 0.25), (0.7, 0.6)):
        entries, _ = axis_tensor(d1, d2, MAT, soft_factor=1e-4,
                                 resolution=RES)
        theta = density(d1, d2)
        avg = (theta + (1.0 - theta) * 1e-4) * MAT.tensor().entries
        gap = entries_to_mandel(avg - entries)
        assert np.linalg.eigvalsh(gap).min() > -1e-10, (d1, d2)


def test_rotation_consistency():
    p = MicroParams(0.6, 0.35, 0.52)
    axis, _ = axis_tensor(p.delta1, p.delta2, MAT, resolution=RES)
    rot = effective_tensor(p, MAT, resolution=RES)
    assert np.allclose(rot.entries, rotate_entries(axis, 0.6), atol=1e-13)
    assert isinstance(rot, ElasticTensor2D)


def test_alpha_sensitivity_matches_rotation_fd():
    p = MicroParams(0.47, 0.4, 0.55)
    d_alpha, _, _ = tensor_sensitivities(p, MAT, resolution=RES)
    h = 1e-6
    up = effective_tensor(MicroParams(p.alpha + h, p.delta1, p.delta2),
                          MAT, resolution=RES).entries
    dn = effective_tensor(MicroParams(p.alpha - h, p.delta1, p.delta2),
                          MAT, resolution=RES).entries
    assert np.abs(d_alpha - (up - dn) / (2 * h)).max() < 1e-7


def test_width_sensitivity_analytic_close_to_fd():
    # stationarity-based width derivatives against finite differences,
    # away from pixel-boundary kinks of the discrete cell
    p = MicroParams(0.0, 9.6 / RES, 6.4 / RES)
    _, an1, an2 = tensor_sensitivities(p, MAT, resolution=RES,
                                       method="analytic")
    _, fd1, fd2 = tensor_sensitivities(p, MAT, resolution=RES, method="fd")
    scale = np.abs(fd1).max() + np.abs(fd2).max()
    assert np.abs(an1 - fd1).max() < 0.08 * scale
    assert np.abs(an2 - fd2).max() < 0.08 * scale


def test_cache_rounds_keys_and_clears():
    from twoscale.microcell import clear_cache
    a1 = axis_tensor(0.41230, 0.5, MAT, resolution=8)
    a2 = axis_tensor(0.41232, 0.5, MAT, resolution=8)  # same rounded key
    assert a1[0] is a2[0]
    clear_cache()
    a3 = axis_tensor(0.41230, 0.5, MAT, resolution=8)
    assert a3[0] is not a1[0]
    assert np.allclose(a3[0], a1[0])


def test_unit_strain_order():
    assert np.allclose(UNIT_STRAINS[0], [[1, 0], [0, 0]])
    assert np.allclose(UNIT_STRAINS[1], [[0, 0], [0, 1]])
    assert np.allclose(UNIT_STRAINS[2], [[0, 0.5], [0.5, 0]])


def test_export_cell_database(tmp_path):
    path = tmp_path / "cells.csv"
    export_cell_database(path, [0.3, 0.6], MAT, resolution=8)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("delta1,delta2,C1111")
    assert len(lines) == 1 + 4
    row = lines[1].split(",")
    assert float(row[0]) == pytest.approx(0.3)
    assert float(row[2]) > 0.0
