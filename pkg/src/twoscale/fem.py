"""Biquadratic (9-node) finite elements on adaptive quadtree meshes.

One MacroProblem instance per (mesh, scenario) pair owns the node table,
the hanging-node constraint matrix, the load vector and the quadrature
tables; assembling for a new per-element tensor field only recomputes
element matrices.  All elements are squares, so the 18x18 stiffness
blocks are size independent and reduce to a contraction of the Voigt
matrix with one precomputed reference tensor.

Hanging edges couple one coarse edge to two half edges.  The fine
midside nodes at the quarter points of the coarse edge are slaved to
the three coarse edge nodes with weights (3/8, 3/4, -1/8); the fine
corner node at the coarse midpoint coincides with the coarse midside
node and needs no constraint.  Elimination happens through a global
expansion matrix T with u_all = T u_free.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import E, N, QuadMesh, S, W
from .scenario import Scenario
from .tensor import entries_to_full, entries_to_voigt

# 3-point Gauss on [-1, 1]: integrates degree 5 exactly
GAUSS3_PTS = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
GAUSS3_WTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])

# quarter-point constraint weights: (near corner, midside, far corner)
HANGING_WEIGHTS = (0.375, 0.75, -0.125)

_SIDE_LOCAL_NODES = {W: (0, 3, 6), E: (2, 5, 8), S: (0, 1, 2), N: (6, 7, 8)}


def shape1d(t):
    """Quadratic Lagrange values at nodes (-1, 0, 1); t arbitrary shape."""
    t = np.asarray(t, dtype=float)
    return np.stack([0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)], axis=-1)


def dshape1d(t):
    t = np.asarray(t, dtype=float)
    return np.stack([t - 0.5, -2.0 * t, t + 0.5], axis=-1)


def d2shape1d(t):
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    return np.stack([one, -2.0 * one, one], axis=-1)


def shape_vals(pts):
    """(m, 2) reference points in [-1,1]^2 -> (m, 9) shape values."""
    lx, ly = shape1d(pts[:, 0]), shape1d(pts[:, 1])
    return np.einsum("mj,mk->mkj", lx, ly).reshape(len(pts), 9)


def shape_grads(pts):
    """(m, 2) -> (m, 9, 2) reference gradients."""
    lx, ly = shape1d(pts[:, 0]), shape1d(pts[:, 1])
    dx, dy = dshape1d(pts[:, 0]), dshape1d(pts[:, 1])
    gx = np.einsum("mj,mk->mkj", dx, ly).reshape(len(pts), 9)
    gy = np.einsum("mj,mk->mkj", lx, dy).reshape(len(pts), 9)
    return np.stack([gx, gy], axis=-1)


# estimator edge sweeps evaluate the same few reference point sets for
# every element; memoizing on the raw bytes removes that rebuild cost
_VALS_CACHE: dict[bytes, np.ndarray] = {}
_GRADS_CACHE: dict[bytes, np.ndarray] = {}


def _cached(cache, build, pts):
    if len(cache) > 4096:
        cache.clear()
    key = pts.tobytes()
    out = cache.get(key)
    if out is None:
        out = build(pts)
        cache[key] = out
    return out


def shape_hessians(pts):
    """(m, 2) -> (m, 9, 2, 2) reference second derivatives."""
    lx, ly = shape1d(pts[:, 0]), shape1d(pts[:, 1])
    dx, dy = dshape1d(pts[:, 0]), dshape1d(pts[:, 1])
    hx, hy = d2shape1d(pts[:, 0]), d2shape1d(pts[:, 1])
    m = len(pts)
    out = np.empty((m, 9, 2, 2))
    out[:, :, 0, 0] = np.einsum("mj,mk->mkj", hx, ly).reshape(m, 9)
    out[:, :, 1, 1] = np.einsum("mj,mk->mkj", lx, hy).reshape(m, 9)
    mixed = np.einsum("mj,mk->mkj", dx, dy).reshape(m, 9)
    out[:, :, 0, 1] = out[:, :, 1, 0] = mixed
    return out


def _ref_quadrature():
    """Tensor 3x3 points/weights and the assembled stiffness kernel.

    Returns (pts (9,2), wts (9,), B (9,3,18), M (3,3,18,18)) with
    M[a,b] = sum_q w_q B[q,a,:]^T B[q,b,:]; element stiffness is then
    K_E = sum_ab D_E[a,b] M[a,b] for any element size.
    """
    px, py = np.meshgrid(GAUSS3_PTS, GAUSS3_PTS)
    pts = np.stack([px.ravel(), py.ravel()], axis=-1)
    wts = np.outer(GAUSS3_WTS, GAUSS3_WTS).ravel()
    grads = shape_grads(pts)  # (9, 9, 2)
    b = np.zeros((9, 3, 18))
    for i in range(9):
        b[:, 0, 2 * i] = grads[:, i, 0]
        b[:, 1, 2 * i + 1] = grads[:, i, 1]
        b[:, 2, 2 * i] = grads[:, i, 1]
        b[:, 2, 2 * i + 1] = grads[:, i, 0]
    m = np.einsum("q,qam,qbn->abmn", wts, b, b)
    return pts, wts, b, m


QUAD_PTS, QUAD_WTS, REF_B, REF_KERNEL = _ref_quadrature()


class DisplacementField:
    """Nodal values of a conforming displacement on a MacroProblem."""

    def __init__(self, problem: "MacroProblem", values: np.ndarray,
                 compliance: float | None = None, residual_rel: float | None = None):
        self.problem = problem
        self.values = values  # (n_nodes, 2), constraints already applied
        self.compliance = compliance
        self.residual_rel = residual_rel

    def element_coeffs(self) -> np.ndarray:
        """(nE, 9, 2) nodal values per element."""
        return self.values[self.problem.element_nodes]

    def strains_at(self, ref_pts: np.ndarray, elements: np.ndarray | None = None) -> np.ndarray:
        """Strains at shared reference points: (nE, m, 2, 2)."""
        pr = self.problem
        coeffs = self.values[pr.element_nodes if elements is None else pr.element_nodes[elements]]
        sizes = pr.sizes if elements is None else pr.sizes[elements]
        grads = _cached(_GRADS_CACHE, shape_grads, np.atleast_2d(ref_pts))
        # grad u[a, l] = sum_i u[i, a] dN_i/dx_l * (2/h)
        g = np.einsum("eia,mil->emal", coeffs, grads)
        g *= (2.0 / sizes)[:, None, None, None]
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    def values_at(self, ref_pts: np.ndarray, elements: np.ndarray | None = None) -> np.ndarray:
        pr = self.problem
        coeffs = self.values[pr.element_nodes if elements is None else pr.element_nodes[elements]]
        vals = _cached(_VALS_CACHE, shape_vals, np.atleast_2d(ref_pts))
        return np.einsum("eia,mi->ema", coeffs, vals)


class MacroProblem:
    """Node numbering, constraints, loads and solves for one mesh."""

    def __init__(self, mesh: QuadMesh, scenario: Scenario):
        self.mesh = mesh
        self.scenario = scenario
        self.leaf_ids = mesh.leaf_ids
        self.n_elements = len(self.leaf_ids)
        self._build_nodes()
        self._build_constraints()
        self._build_loads()

    # --- node table ------------------------------------------------------
    def _build_nodes(self):
        mesh = self.mesh
        self.scale_level = mesh.max_level() + 1
        node_index = {}
        elem_nodes = np.empty((self.n_elements, 9), dtype=np.int64)
        origins = np.empty((self.n_elements, 2))
        sizes = np.empty(self.n_elements)
        for e, cid in enumerate(self.leaf_ids):
            level, ix, iy = mesh.cell_of[cid]
            sh = self.scale_level - level - 1
            h = 2.0 ** -level
            origins[e] = (ix * h, iy * h)
            sizes[e] = h
            for jy in range(3):
                for jx in range(3):
                    key = ((2 * ix + jx) << sh, (2 * iy + jy) << sh)
                    idx = node_index.get(key)
                    if idx is None:
                        idx = len(node_index)
                        node_index[key] = idx
                    elem_nodes[e, 3 * jy + jx] = idx
        self.node_index = node_index
        self.element_nodes = elem_nodes
        self.origins = origins
        self.sizes = sizes
        unit = 2.0 ** -self.scale_level
        coords = np.empty((len(node_index), 2))
        for (kx, ky), idx in node_index.items():
            coords[idx] = (kx * unit, ky * unit)
        self.node_coords = coords
        self.n_nodes = len(coords)

    # --- hanging constraints and boundary conditions ---------------------
    def _build_constraints(self):
        mesh = self.mesh
        slave_of = {}
        for coarse_key, side, _fine in mesh.hanging_edges():
            level, ix, iy = coarse_key
            sh = self.scale_level - level - 1
            if side in (W, E):
                c = (2 * ix if side == W else 2 * ix + 2) << sh
                lo = (2 * iy) << sh
                masters = [(c, lo), (c, lo + (1 << sh)), (c, lo + (2 << sh))]
                quarters = [(c, lo + (1 << sh) // 2), (c, lo + 3 * ((1 << sh) // 2))]
            else:
                c = (2 * iy if side == S else 2 * iy + 2) << sh
                lo = (2 * ix) << sh
                masters = [(lo, c), (lo + (1 << sh), c), (lo + (2 << sh), c)]
                quarters = [(lo + (1 << sh) // 2, c), (lo + 3 * ((1 << sh) // 2), c)]
            m_idx = [self.node_index[k] for k in masters]
            for qpos, quarter in enumerate(quarters):
                slave = self.node_index[quarter]
                if qpos == 0:  # nearer masters[0]
                    weights = [(m_idx[0], HANGING_WEIGHTS[0]), (m_idx[1], HANGING_WEIGHTS[1]),
                               (m_idx[2], HANGING_WEIGHTS[2])]
                else:
                    weights = [(m_idx[2], HANGING_WEIGHTS[0]), (m_idx[1], HANGING_WEIGHTS[1]),
                               (m_idx[0], HANGING_WEIGHTS[2])]
                slave_of[slave] = weights
        for slave, masters in slave_of.items():
            for m, _w in masters:
                if m in slave_of:
                    raise RuntimeError("constraint master is itself constrained; mesh unbalanced")
        self.slave_of = slave_of

        # component-wise Dirichlet sets
        fixed = np.zeros((self.n_nodes, 2), dtype=bool)
        scn = self.scenario
        for idx in range(self.n_nodes):
            x, y = self.node_coords[idx]
            comps = scn.fixed_components(x, y)
            for c in comps:
                fixed[idx, c] = True
        self.fixed = fixed

        # raw dof (2*node+comp) -> column of T
        free_cols = {}
        for idx in range(self.n_nodes):
            if idx in slave_of:
                continue
            for c in (0, 1):
                if not fixed[idx, c]:
                    free_cols[2 * idx + c] = len(free_cols)
        self.free_cols = free_cols
        self.n_free = len(free_cols)

        rows, cols, vals = [], [], []
        for dof, col in free_cols.items():
            rows.append(dof)
            cols.append(col)
            vals.append(1.0)
        for slave, masters in slave_of.items():
            for c in (0, 1):
                for m, w in masters:
                    col = free_cols.get(2 * m + c)
                    if col is not None:
                        rows.append(2 * slave + c)
                        cols.append(col)
                        vals.append(w)
        self.T = sp.coo_matrix((vals, (rows, cols)),
                               shape=(2 * self.n_nodes, self.n_free)).tocsr()

        # global dof indices per element, interleaved (node, comp)
        g = np.empty((self.n_elements, 18), dtype=np.int64)
        g[:, 0::2] = 2 * self.element_nodes
        g[:, 1::2] = 2 * self.element_nodes + 1
        self.element_dofs = g

    # --- loads -----------------------------------------------------------
    def boundary_edges(self):
        """(element index, side, axis, coord, lo, hi) for all edges on the boundary."""
        out = []
        mesh = self.mesh
        for e, cid in enumerate(self.leaf_ids):
            key = mesh.cell_of[cid]
            x0, y0 = self.origins[e]
            h = self.sizes[e]
            for side in (W, E, S, N):
                kind, _ = mesh.neighbor(key, side)
                if kind != "boundary":
                    continue
                if side in (W, E):
                    out.append((e, side, 0, x0 if side == W else x0 + h, y0, y0 + h))
                else:
                    out.append((e, side, 1, y0 if side == S else y0 + h, x0, x0 + h))
        return out

    def _build_loads(self):
        f = np.zeros(2 * self.n_nodes)
        for e, side, axis, coord, a, b in self.boundary_edges():
            pieces = self.scenario.traction_on(axis, coord, a, b)
            if not pieces:
                continue
            local = _SIDE_LOCAL_NODES[side]
            nodes = self.element_nodes[e, list(local)]
            for lo, hi, g in pieces:
                # map [lo, hi] into the edge's reference coordinate
                mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
                t = (mid + half * GAUSS3_PTS - a) / (b - a) * 2.0 - 1.0
                phi = shape1d(t)  # (3 qp, 3 nodes)
                w = GAUSS3_WTS * half
                for k, node in enumerate(nodes):
                    contrib = (w * phi[:, k]).sum()
                    f[2 * node] += contrib * g[0]
                    f[2 * node + 1] += contrib * g[1]
        self.F_raw = f
        self.F_free = self.T.T @ f

    # --- assembly and solves ---------------------------------------------
    def element_matrices(self, c_entries: np.ndarray) -> np.ndarray:
        """(nE, 18, 18) stiffness blocks for per-element tensors (nE, 6)."""
        d = entries_to_voigt(np.asarray(c_entries, dtype=float))
        return np.einsum("eab,abmn->emn", d, REF_KERNEL)

    def assemble(self, c_entries: np.ndarray) -> sp.csr_matrix:
        ke = self.element_matrices(c_entries)
        g = self.element_dofs
        rows = np.repeat(g, 18, axis=1).ravel()
        cols = np.tile(g, (1, 18)).ravel()
        k_raw = sp.coo_matrix((ke.ravel(), (rows, cols)),
                              shape=(2 * self.n_nodes, 2 * self.n_nodes)).tocsr()
        return k_raw

    def _factorize(self, k: sp.csc_matrix):
        lu = spla.splu(k, permc_spec="MMD_AT_PLUS_A",
                       options=dict(SymmetricMode=True))
        self._pc = lu
        return lu

    def solve(self, c_entries: np.ndarray) -> DisplacementField:
        """Assemble, eliminate constraints, solve; attaches compliance.

        The first solve factorizes; later solves on the same mesh reuse
        that factorization as a CG preconditioner, since the coefficient
        field drifts slowly between calls.  Stagnating CG triggers a
        fresh factorization, so accuracy matches a direct solve.
        """
        k_raw = self.assemble(c_entries)
        k = (self.T.T @ k_raw @ self.T).tocsc()
        pc = getattr(self, "_pc", None)
        if pc is None:
            u_free = self._factorize(k).solve(self.F_free)
        else:
            m = spla.LinearOperator((self.n_free, self.n_free),
                                    matvec=pc.solve)
            u_free, info = spla.cg(k, self.F_free, M=m,
                                   rtol=1e-13, atol=0.0, maxiter=200)
            if info != 0:
                u_free = self._factorize(k).solve(self.F_free)
        res = np.linalg.norm(k @ u_free - self.F_free)
        scale = np.linalg.norm(self.F_free) + 1e-300
        if res / scale > 1e-9:
            u_free = self._factorize(k).solve(self.F_free)
            res = np.linalg.norm(k @ u_free - self.F_free)
        u_raw = self.T @ u_free
        field = DisplacementField(
            self, u_raw.reshape(-1, 2),
            compliance=float(self.F_raw @ u_raw),
            residual_rel=float(res / scale),
        )
        return field

    def load_functional(self, field: DisplacementField) -> float:
        return float(self.F_raw @ field.values.ravel())

    def a_form(self, c_entries: np.ndarray, u: DisplacementField, v: DisplacementField) -> float:
        """Energy bilinear form of two conforming fields."""
        ke = self.element_matrices(c_entries)
        ue = u.values.ravel()[self.element_dofs]
        ve = v.values.ravel()[self.element_dofs]
        return float(np.einsum("em,emn,en->", ue, ke, ve))

    def field_from_free(self, u_free: np.ndarray) -> DisplacementField:
        u_raw = self.T @ u_free
        return DisplacementField(self, u_raw.reshape(-1, 2))

    # --- derived quantities ----------------------------------------------
    def element_stresses(self, c_entries, field: DisplacementField, ref_pts) -> np.ndarray:
        eps = field.strains_at(ref_pts)
        d = entries_to_voigt(np.asarray(c_entries))
        ev = np.stack([eps[..., 0, 0], eps[..., 1, 1], 2 * eps[..., 0, 1]], axis=-1)
        sv = np.einsum("eab,emb->ema", d, ev)
        sig = np.empty_like(eps)
        sig[..., 0, 0] = sv[..., 0]
        sig[..., 1, 1] = sv[..., 1]
        sig[..., 0, 1] = sig[..., 1, 0] = sv[..., 2]
        return sig

    def stress_divergence(self, c_entries, field: DisplacementField, ref_pts) -> np.ndarray:
        """div(C eps(u)) per element at reference points: (nE, m, 2)."""
        hess = shape_hessians(np.atleast_2d(ref_pts))  # (m, 9, 2, 2)
        coeffs = field.element_coeffs()  # (nE, 9, 2)
        full = entries_to_full(np.asarray(c_entries))  # (nE, 2,2,2,2)
        # d2 u_m / dx_l dx_n = (2/h)^2 * sum_i u[i,m] H[q,i,l,n]
        d2u = np.einsum("eim,qiln->eqmln", coeffs, hess)
        d2u *= (2.0 / self.sizes[:, None, None, None, None]) ** 2
        return np.einsum("ealmn,eqmln->eqa", full, d2u)

    def von_mises(self, c_entries, field: DisplacementField) -> np.ndarray:
        from .tensor import von_mises as vm
        center = np.zeros((1, 2))
        sig = self.element_stresses(c_entries, field, center)[:, 0]
        return vm(sig)
