"""Effective elasticity of a periodic cell holding a rotated truss cross.

The unshifted microcell is a cross of two orthogonal bars of relative
widths delta1 (vertical bar) and delta2 (horizontal bar), rotated by
alpha.  Shifting by half a period moves the cross onto the cell frame,
leaving a single rectangular soft inclusion

    (delta1/2, 1 - delta1/2) x (delta2/2, 1 - delta2/2)

inside the unit cell.  Only axis-aligned cells are ever solved; the
rotation acts analytically on the resulting tensor, which is exact for
isotropic constituents.

Discretization: N x N bilinear elements with periodic node pairing and a
zero-mean gauge.  Grid cells cut by the bar boundary get the exact
area-weighted average of the two material tensors, which keeps the
effective tensor differentiable in (delta1, delta2); the derivative
itself comes for free from the stationarity of the cell problem
(differentiating the energy only hits the explicit material dependence).
Central finite differences remain available as a cross check.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .tensor import (
    ElasticTensor2D,
    IsotropicMaterial,
    entries_to_voigt,
    rotate_entries,
    rotation_derivative_entries,
)

DELTA_MIN = 0.01
DELTA_MAX = 0.99
DEFAULT_RESOLUTION = 64
DEFAULT_SOFT_FACTOR = 1e-4
FD_STEP = 1e-3

# unit strains the cell problem is solved for, in fixed order
UNIT_STRAINS = np.array([
    [[1.0, 0.0], [0.0, 0.0]],   # e11
    [[0.0, 0.0], [0.0, 1.0]],   # e22
    [[0.0, 0.5], [0.5, 0.0]],   # e12 (symmetrized)
])


@dataclass(frozen=True)
class MicroParams:
    """Design of one microcell: rotation and the two bar widths."""

    alpha: float
    delta1: float
    delta2: float

    def clamped(self) -> "MicroParams":
        return MicroParams(
            self.alpha,
            min(max(self.delta1, DELTA_MIN), DELTA_MAX),
            min(max(self.delta2, DELTA_MIN), DELTA_MAX),
        )


def density(delta1, delta2):
    """Hard-phase area fraction of the cross."""
    return delta1 + delta2 - delta1 * delta2


def density_gradient(delta1, delta2):
    return 1.0 - delta2, 1.0 - delta1


# --- Q1 reference element --------------------------------------------------

def _q1_reference():
    """Gradient integral tables on the unit square, nodes SW SE NE NW."""
    gp = (np.array([-1, 1]) / np.sqrt(3.0) + 1.0) / 2.0
    pts = np.array([(x, y) for y in gp for x in gp])
    wts = np.full(4, 0.25)
    # N = [(1-x)(1-y), x(1-y), xy, (1-x)y]
    def grads(p):
        x, y = p
        return np.array([
            [-(1 - y), -(1 - x)],
            [(1 - y), -x],
            [y, x],
            [-y, 1 - x],
        ])  # (node, direction)
    g = np.array([grads(p) for p in pts])          # (q, 4, 2)
    s = np.einsum("q,qil,qjn->linj", wts, g, g)    # S[l,i,n,j] -> reorder on use
    t = np.einsum("q,qil->li", wts, g)             # T[l,i] = int dN_i/dx_l
    return pts, wts, g, s, t


_Q1_PTS, _Q1_WTS, _Q1_GRADS, _Q1_S, _Q1_T = _q1_reference()


def _material_element_matrix(c: ElasticTensor2D) -> np.ndarray:
    """8x8 element stiffness for a constant tensor on any square cell."""
    full = c.full()
    # K[(i,a),(j,b)] = C_albn * int dN_i/dx_l dN_j/dx_n
    k = np.einsum("albn,linj->iajb", full, _Q1_S)
    return k.reshape(8, 8)


def _hard_fractions(delta1: float, delta2: float, n: int):
    """Exact per-cell hard-phase area fractions and their delta derivatives.

    The soft rectangle is separable, so fractions factor into per-column
    and per-row overlaps.  Returns (frac (n,n) [iy, ix], dfrac_d1, dfrac_d2).
    """
    h = 1.0 / n
    edges = np.arange(n + 1) * h
    x0, x1 = edges[:-1], edges[1:]

    def overlap(a, b):
        lo = np.maximum(x0, a)
        hi = np.minimum(x1, b)
        ov = np.clip(hi - lo, 0.0, None)
        inside = ov > 0.0
        # d(ov)/da and d(ov)/db where the clip is active
        d_a = np.where(inside & (a > x0), -1.0, 0.0)
        d_b = np.where(inside & (b < x1), 1.0, 0.0)
        return ov, d_a, d_b

    a1, b1 = delta1 / 2.0, 1.0 - delta1 / 2.0
    a2, b2 = delta2 / 2.0, 1.0 - delta2 / 2.0
    ox, ox_a, ox_b = overlap(a1, b1)
    oy, oy_a, oy_b = overlap(a2, b2)
    # da1/dd1 = 1/2, db1/dd1 = -1/2
    dox = 0.5 * ox_a - 0.5 * ox_b
    doy = 0.5 * oy_a - 0.5 * oy_b
    soft = np.outer(oy, ox) / (h * h)
    frac = 1.0 - soft
    dfrac_d1 = -np.outer(oy, dox) / (h * h)
    dfrac_d2 = -np.outer(doy, ox) / (h * h)
    return frac, dfrac_d1, dfrac_d2


@dataclass
class CellSolution:
    """Correctors and energies of one axis-aligned cell problem."""

    delta1: float
    delta2: float
    resolution: int
    correctors: np.ndarray      # (3, n_nodes, 2)
    energies: np.ndarray        # (3, 3) bilinear effective energies
    entries: np.ndarray         # (6,) effective tensor entries
    d_entries: np.ndarray       # (2, 6) derivatives wrt delta1, delta2
    residuals: np.ndarray       # (3,) relative linear-system residuals

    def tensor(self) -> ElasticTensor2D:
        return ElasticTensor2D(self.entries)


_GRID_CACHE: dict = {}


def _grid_tables(n: int):
    """Connectivity plus a precomputed scatter map into the pinned CSC matrix.

    The sparsity pattern of the periodic grid never changes for fixed n,
    so assembly reduces to one segmented sum of element-matrix values.
    """
    tab = _GRID_CACHE.get(n)
    if tab is not None:
        return tab
    ix, iy = np.meshgrid(np.arange(n), np.arange(n))
    ix, iy = ix.ravel(), iy.ravel()

    def node(jx, jy):
        return (jy % n) * n + (jx % n)

    conn = np.stack([node(ix, iy), node(ix + 1, iy),
                     node(ix + 1, iy + 1), node(ix, iy + 1)], axis=1)
    dofs = np.empty((n * n, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    ndof = 2 * n * n
    # the first two dofs (node 0) get pinned; build the reduced CSC pattern
    mask = (rows >= 2) & (cols >= 2)
    pr, pc = rows[mask] - 2, cols[mask] - 2
    order = np.lexsort((pr, pc))
    pr_s, pc_s = pr[order], pc[order]
    new_entry = np.empty(len(pr_s), dtype=bool)
    new_entry[0] = True
    new_entry[1:] = (pr_s[1:] != pr_s[:-1]) | (pc_s[1:] != pc_s[:-1])
    starts = np.flatnonzero(new_entry)
    indices = pr_s[starts]
    col_ids = pc_s[starts]
    indptr = np.zeros(ndof - 2 + 1, dtype=np.int64)
    np.add.at(indptr, col_ids + 1, 1)
    indptr = np.cumsum(indptr)
    tab = (conn, dofs, mask, order, starts, indices, indptr, ndof)
    _GRID_CACHE[n] = tab
    return tab


def solve_cell(delta1: float, delta2: float,
               material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
               soft_factor: float = DEFAULT_SOFT_FACTOR,
               resolution: int = DEFAULT_RESOLUTION) -> CellSolution:
    """Periodic cell problem for the three unit strains, axis aligned."""
    if not (0.0 < delta1 <= 1.0 and 0.0 < delta2 <= 1.0):
        raise ValueError("bar widths must lie in (0, 1]")
    n = resolution
    h = 1.0 / n
    mat_a = material.tensor()
    mat_b = mat_a * soft_factor

    frac, dfrac1, dfrac2 = _hard_fractions(delta1, delta2, n)
    frac_f = frac.ravel()  # cell (iy, ix) -> iy*n+ix

    conn, dofs, mask, order, starts, indices, indptr, ndof = _grid_tables(n)
    k_a = _material_element_matrix(mat_a)
    k_b = _material_element_matrix(mat_b)
    vals = frac_f[:, None, None] * (k_a - k_b)[None] + k_b[None]
    data = np.add.reduceat(vals.ravel()[mask][order], starts)
    k_pin = sp.csc_matrix((data, indices, indptr), shape=(ndof - 2, ndof - 2))

    # loads: f_(ia) = -h * (C_cell xi)_{al} T[l, i]
    sig_a = np.array([mat_a.apply(xi) for xi in UNIT_STRAINS])
    sig_b = np.array([mat_b.apply(xi) for xi in UNIT_STRAINS])
    load_a = -h * np.einsum("pal,li->pia", sig_a, _Q1_T).reshape(3, 8)
    load_b = -h * np.einsum("pal,li->pia", sig_b, _Q1_T).reshape(3, 8)
    f_elem = frac_f[None, :, None] * load_a[:, None] \
        + (1.0 - frac_f)[None, :, None] * load_b[:, None]         # (3, nc, 8)
    f = np.empty((3, ndof))
    flat = dofs.ravel()
    for p in range(3):
        f[p] = np.bincount(flat, weights=f_elem[p].ravel(), minlength=ndof)

    # rigid translations are the only kernel; pin node 0 and recenter after.
    # The loads are equilibrated (columns of T integrate gradients of a
    # partition of unity), so the pinned SPD system reproduces the periodic
    # solution up to a constant.  The two pinned equations are the negated
    # sums of the remaining ones, so the pinned residual covers the system.
    lu = spla.splu(k_pin, permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
    w = np.zeros((3, ndof))
    w[:, 2:] = lu.solve(f[:, 2:].T).T
    residuals = np.empty(3)
    for p in range(3):
        r = k_pin @ w[p, 2:] - f[p, 2:]
        residuals[p] = np.linalg.norm(r) / (np.linalg.norm(f[p]) + 1e-300)
    mean = w.reshape(3, n * n, 2).mean(axis=1)
    w = (w.reshape(3, n * n, 2) - mean[:, None, :]).reshape(3, ndof)

    # strains of correctors at the 2x2 Gauss points of every cell; collect
    # the engineering-Voigt total strain (e11, e22, 2 e12) per Gauss point
    w_nodes = w.reshape(3, n * n, 2)
    w_elem = w_nodes[:, conn]                               # (3, nc, 4, 2)
    gx = _Q1_GRADS[:, :, 0] / h                             # (q, 4)
    gy = _Q1_GRADS[:, :, 1] / h
    v = np.empty((3, n * n, 4, 3))
    v[..., 0] = np.einsum("pci,qi->pcq", w_elem[..., 0], gx)
    v[..., 1] = np.einsum("pci,qi->pcq", w_elem[..., 1], gy)
    v[..., 2] = np.einsum("pci,qi->pcq", w_elem[..., 0], gy) \
        + np.einsum("pci,qi->pcq", w_elem[..., 1], gx)
    xi_v = np.stack([UNIT_STRAINS[:, 0, 0], UNIT_STRAINS[:, 1, 1],
                     2.0 * UNIT_STRAINS[:, 0, 1]], axis=-1)
    v += xi_v[:, None, None, :]

    d_a = entries_to_voigt(mat_a.entries)
    d_b = entries_to_voigt(mat_b.entries)
    # per-cell quadratic forms against both phases, Gauss-averaged
    va = v @ d_a
    vb = v @ d_b
    pair_a = np.einsum("pcqa,rcqa->prc", va, v) / 4.0
    pair_b = np.einsum("pcqa,rcqa->prc", vb, v) / 4.0
    cell_area = h * h
    energies = cell_area * (pair_a @ frac_f + pair_b @ (1.0 - frac_f))
    d_en_1 = cell_area * ((pair_a - pair_b) @ dfrac1.ravel())
    d_en_2 = cell_area * ((pair_a - pair_b) @ dfrac2.ravel())

    def entries_from(e):
        return np.array([e[0, 0], e[1, 1], e[0, 1], e[2, 2], e[0, 2], e[1, 2]])

    return CellSolution(
        delta1=delta1, delta2=delta2, resolution=n,
        correctors=w_nodes, energies=energies,
        entries=entries_from(energies),
        d_entries=np.stack([entries_from(d_en_1), entries_from(d_en_2)]),
        residuals=residuals,
    )


# --- memoized axis-aligned tensors -----------------------------------------

_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()
CACHE_ROUND = 4  # deltas rounded to 1e-4 for cache keys


def _cache_key(delta1, delta2, material, soft_factor, resolution):
    return (round(delta1, CACHE_ROUND), round(delta2, CACHE_ROUND),
            material.lam, material.mu, soft_factor, resolution)


def axis_tensor(delta1: float, delta2: float,
                material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
                soft_factor: float = DEFAULT_SOFT_FACTOR,
                resolution: int = DEFAULT_RESOLUTION):
    """Cached (entries, d_entries) of the axis-aligned effective tensor."""
    key = _cache_key(delta1, delta2, material, soft_factor, resolution)
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    sol = solve_cell(key[0], key[1], material, soft_factor, resolution)
    result = (sol.entries, sol.d_entries)
    with _CACHE_LOCK:
        _CACHE[key] = result
    return result


def clear_cache():
    with _CACHE_LOCK:
        _CACHE.clear()


def effective_tensor(params: MicroParams,
                     material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
                     soft_factor: float = DEFAULT_SOFT_FACTOR,
                     resolution: int = DEFAULT_RESOLUTION) -> ElasticTensor2D:
    """Effective tensor of the rotated cross cell."""
    entries, _ = axis_tensor(params.delta1, params.delta2, material,
                             soft_factor, resolution)
    return ElasticTensor2D(rotate_entries(entries, params.alpha))


def tensor_sensitivities(params: MicroParams,
                         material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
                         soft_factor: float = DEFAULT_SOFT_FACTOR,
                         resolution: int = DEFAULT_RESOLUTION,
                         method: str = "analytic"):
    """(dC/dalpha, dC/ddelta1, dC/ddelta2) as entry arrays.

    method "analytic": rotation derivative for alpha plus the stationarity
    (Hellmann-Feynman) derivative of the discrete cell energy for the
    widths.  method "fd": central differences with step 1e-3 on the
    axis-aligned tensor, one sided at the width box.
    """
    entries, d_entries = axis_tensor(params.delta1, params.delta2, material,
                                     soft_factor, resolution)
    d_alpha = rotation_derivative_entries(entries, params.alpha)
    if method == "analytic":
        d_d1 = rotate_entries(d_entries[0], params.alpha)
        d_d2 = rotate_entries(d_entries[1], params.alpha)
        return d_alpha, d_d1, d_d2
    if method != "fd":
        raise ValueError(f"unknown sensitivity method '{method}'")

    def fd(delta, other, which):
        lo = max(delta - FD_STEP, DELTA_MIN)
        hi = min(delta + FD_STEP, DELTA_MAX)
        args = ((lo, other), (hi, other)) if which == 0 else ((other, lo), (other, hi))
        e_lo, _ = axis_tensor(*args[0], material=material,
                              soft_factor=soft_factor, resolution=resolution)
        e_hi, _ = axis_tensor(*args[1], material=material,
                              soft_factor=soft_factor, resolution=resolution)
        return (e_hi - e_lo) / (hi - lo)

    d_d1 = rotate_entries(fd(params.delta1, params.delta2, 0), params.alpha)
    d_d2 = rotate_entries(fd(params.delta2, params.delta1, 1), params.alpha)
    return d_alpha, d_d1, d_d2


def export_cell_database(path, deltas,
                         material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
                         soft_factor: float = DEFAULT_SOFT_FACTOR,
                         resolution: int = DEFAULT_RESOLUTION):
    """CSV table of effective tensors over a (delta1, delta2) grid."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta1", "delta2", "C1111", "C2222", "C1122",
                         "C1212", "C1112", "C2212"])
        for d1 in deltas:
            for d2 in deltas:
                entries, _ = axis_tensor(d1, d2, material, soft_factor, resolution)
                writer.writerow([f"{d1:.6g}", f"{d2:.6g}"]
                                + [f"{v:.12g}" for v in entries])
