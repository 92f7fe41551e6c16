"""Boundary-integral backend for the truss-cell corrector problem.

The hard frame of the cell (unit square minus the centered soft
rectangle, which this backend treats as a traction-free hole) is
discretized along its boundary only: affine panels carrying linear
displacement and traction interpolation, collocated at panel endpoints.
Panel integrals of the point-load kernels are evaluated in closed form,
including principal-value / finite-part values on the panel line, so the
log-divergent antisymmetric parts cancel exactly when the two panels
meeting at a smooth node are summed.  Corner collocation points are
inset by 1e-6 panel lengths along the material bisector, which keeps
their jump coefficient at identity and sidesteps the ambiguous corner
normal.  Opposite outer edges are coupled periodically (equal
displacement, opposite traction), a zero-mean gauge removes the
translation invariance, and the square collocation system is solved by
least squares.  Effective energies come from the boundary work integral;
the full tensor from polarization of energies.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import IsotropicMaterial

DEFAULT_PANELS_PER_EDGE = 48

# collocation points this close to the panel line (relative) get the
# principal-value branch; corner offsets (1e-6) stay far above it
_ONLINE_REL = 1e-9
_CORNER_OFFSET = 1e-6
_MIN_DELTA = 0.05

_EYE = np.eye(2)


def kelvin_constants(material: IsotropicMaterial):
    """(k1, k2, beta, gamma) of the plane-strain point-load kernels."""
    lam, mu = material.lam, material.mu
    k1 = (lam + mu) / (4.0 * np.pi * mu * (lam + 2.0 * mu))
    k2 = (lam + 3.0 * mu) / (lam + mu)
    beta = mu / (2.0 * np.pi * (lam + 2.0 * mu))
    gamma = (lam + mu) / (np.pi * (lam + 2.0 * mu))
    return k1, k2, beta, gamma


def kelvin(p, q, material: IsotropicMaterial):
    """Displacement at q from a unit point load at p, as a 2x2 matrix.

    Row = load direction, column = displacement component; symmetric.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    r = q - p
    r2 = float(r @ r)
    if r2 == 0.0:
        raise ValueError("kelvin kernel needs distinct points")
    k1, k2, _, _ = kelvin_constants(material)
    return k1 * (-0.5 * k2 * np.log(r2) * _EYE + np.outer(r, r) / r2)


def traction_kernel(p, q, normal, material: IsotropicMaterial):
    """Traction at q (given its outward normal) of the point-load field.

    Row = load direction at p, column = traction component at q.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = np.asarray(normal, dtype=float)
    r = q - p
    r2 = float(r @ r)
    if r2 == 0.0:
        raise ValueError("traction kernel needs distinct points")
    rn = float(r @ n)
    _, _, beta, gamma = kelvin_constants(material)
    return (beta * (np.outer(r, n) - np.outer(n, r) - rn * _EYE) / r2
            - gamma * rn * np.outer(r, r) / r2 ** 2)


def panel_integrals(a, b, x, material: IsotropicMaterial):
    """Closed-form layer integrals of one affine panel.

    Integrates the displacement kernel (single layer) and the traction
    kernel (double layer) times the two linear shape functions (value 1
    at a resp. b) over the segment a-b, for collocation points x of
    shape (2,) or (n, 2).  Returns (sl_a, sl_b, dl_a, dl_b) with shape
    (..., 2, 2); points on the panel line get the finite-part values.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    length = float(np.hypot(d[0], d[1]))
    if length < 1e-14:
        raise ValueError("zero-length panel")
    tau = d / length
    nrm = np.array([tau[1], -tau[0]])

    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    u0 = (pts - a) @ tau
    eta = (pts - a) @ nrm
    sa = -u0
    sb = length - u0

    online = np.abs(eta) <= _ONLINE_REL * (length + np.abs(u0))
    eta = np.where(online, 0.0, eta)
    off = ~online

    # endpoint values of the antiderivatives; ln|s| snapped to 0 at the
    # collocation node itself (finite part)
    rho2a = sa ** 2 + eta ** 2
    rho2b = sb ** 2 + eta ** 2
    tiny = (1e-12 * length) ** 2
    lna = np.where(rho2a > tiny, 0.5 * np.log(np.maximum(rho2a, tiny)), 0.0)
    lnb = np.where(rho2b > tiny, 0.5 * np.log(np.maximum(rho2b, tiny)), 0.0)
    lg = lnb - lna

    safe_eta = np.where(off, eta, 1.0)
    at = np.where(off, np.arctan(sb / safe_eta) - np.arctan(sa / safe_eta), 0.0)

    ds = sb - sa
    ds2 = 0.5 * (sb ** 2 - sa ** 2)

    # moments of 1/rho^2 (eta-premultiplied where needed, so nothing
    # divides by eta) and the log moments
    m1 = lg
    m2 = ds - eta * at
    m3 = ds2 - eta ** 2 * lg
    il0 = (sb * lnb - sb) - (sa * lna - sa) + eta * at
    il1 = 0.5 * (rho2b * lnb - rho2a * lna) - 0.25 * (rho2b - rho2a)

    # eta-weighted 1/rho^4 moments for the traction kernel
    pa = np.where(off, sa / np.where(off, rho2a, 1.0), 0.0)
    pb = np.where(off, sb / np.where(off, rho2b, 1.0), 0.0)
    qa = np.where(off, 1.0 / np.where(off, rho2a, 1.0), 0.0)
    qb = np.where(off, 1.0 / np.where(off, rho2b, 1.0), 0.0)
    h2a = -0.5 * eta * (pb - pa) + 0.5 * at            # eta * int s^2/rho^4
    h2b = eta * lg + 0.5 * eta ** 3 * (qb - qa)        # eta * int s^3/rho^4
    h1a = -0.5 * eta ** 2 * (qb - qa)                  # eta^2 * int s/rho^4
    h1b = -0.5 * eta ** 2 * (pb - pa) + 0.5 * eta * at # eta^2 * int s^2/rho^4
    h0a = 0.5 * eta * (pb - pa) + 0.5 * at             # eta^3 * int 1/rho^4
    h0b = -0.5 * eta ** 3 * (qb - qa)                  # eta^3 * int s/rho^4

    k1, k2, beta, gamma = kelvin_constants(material)
    tt = np.outer(tau, tau)
    nn = np.outer(nrm, nrm)
    tn = np.outer(tau, nrm)
    nt = np.outer(nrm, tau)
    skew = tn - nt
    sym = tn + nt

    def blocks(c0, c1):
        sl = (k1 * (-k2) * (c0 * il0 + c1 * il1))[:, None, None] * _EYE \
            + (k1 * (c0 * m2 + c1 * m3))[:, None, None] * tt \
            - (k1 * eta * (c0 * m1 + c1 * m2))[:, None, None] * sym \
            + (k1 * (c0 * eta * at + c1 * eta ** 2 * lg))[:, None, None] * nn
        dl = (beta * (c0 * m1 + c1 * m2))[:, None, None] * skew \
            + (beta * (c0 * at + c1 * eta * lg))[:, None, None] * _EYE \
            + (gamma * (c0 * h2a + c1 * h2b))[:, None, None] * tt \
            - (gamma * (c0 * h1a + c1 * h1b))[:, None, None] * sym \
            + (gamma * (c0 * h0a + c1 * h0b))[:, None, None] * nn
        return sl, dl

    # shapes as affine functions of s: phi_a = (sb - s)/L, phi_b = (s - sa)/L
    sl_a, dl_a = blocks(sb / length, -1.0 / length * np.ones_like(sb))
    sl_b, dl_b = blocks(-sa / length, 1.0 / length * np.ones_like(sa))
    if single:
        return sl_a[0], sl_b[0], dl_a[0], dl_b[0]
    return sl_a, sl_b, dl_a, dl_b


def _stress_of(xi, material):
    xi = np.asarray(xi, dtype=float)
    return material.lam * np.trace(xi) * _EYE + 2.0 * material.mu * xi


@dataclass
class BEMSolution:
    """Boundary data of one cell solve: per panel-endpoint records."""

    energy: float
    residual: float
    points: np.ndarray      # (m, 2) panel endpoint coordinates
    w: np.ndarray           # (m, 2) corrector displacement there
    t: np.ndarray           # (m, 2) corrector traction there
    panel: np.ndarray       # (m,) panel index
    end: np.ndarray         # (m,) 0 for the panel start, 1 for its end


class CellBEM:
    """Assembled collocation system for one hard-frame cell geometry.

    Bar widths delta1 (vertical bars) and delta2 (horizontal bars) leave
    the hole (delta1/2, 1-delta1/2) x (delta2/2, 1-delta2/2); hole
    traction is prescribed by the macroscopic strain, outer-square data
    is periodic.  The matrix depends only on geometry, so one instance
    serves any number of loadings.
    """

    def __init__(self, delta1: float, delta2: float,
                 material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
                 panels_per_edge: int = DEFAULT_PANELS_PER_EDGE):
        if not (_MIN_DELTA <= delta1 <= 1.0 and _MIN_DELTA <= delta2 <= 1.0):
            raise ValueError("bar widths outside [%g, 1]" % _MIN_DELTA)
        if panels_per_edge < 2:
            raise ValueError("need at least 2 panels per edge")
        self.delta1 = float(delta1)
        self.delta2 = float(delta2)
        self.material = material
        p = int(panels_per_edge)
        self.panels_per_edge = p

        # outer loop, counterclockwise from the origin corner
        ts = np.arange(p) / p
        zeros = np.zeros(p)
        ones = np.ones(p)
        overts = np.concatenate([
            np.stack([ts, zeros], axis=1),          # bottom
            np.stack([ones, ts], axis=1),           # right
            np.stack([1.0 - ts, ones], axis=1),     # top
            np.stack([zeros, 1.0 - ts], axis=1),    # left
        ])
        n_out = 4 * p

        hx0, hx1 = 0.5 * delta1, 1.0 - 0.5 * delta1
        hy0, hy1 = 0.5 * delta2, 1.0 - 0.5 * delta2
        wx, wy = hx1 - hx0, hy1 - hy0
        self.has_hole = wx > 1e-9 and wy > 1e-9
        hverts = np.zeros((0, 2))
        hole_corner_local = []
        if self.has_hole:
            nx = max(2, int(round(p * wx)))
            ny = max(2, int(round(p * wy)))
            tx = np.arange(nx) / nx
            ty = np.arange(ny) / ny
            # clockwise so the right-hand normal points out of the frame
            hverts = np.concatenate([
                np.stack([np.full(ny, hx0), hy0 + ty * wy], axis=1),  # up
                np.stack([hx0 + tx * wx, np.full(nx, hy1)], axis=1),  # right
                np.stack([np.full(ny, hx1), hy1 - ty * wy], axis=1),  # down
                np.stack([hx1 - tx * wx, np.full(nx, hy0)], axis=1),  # left
            ])
            hole_corner_local = [0, ny, ny + nx, 2 * ny + nx]
        n_hole = len(hverts)
        self.vertices = np.concatenate([overts, hverts])
        nvert = n_out + n_hole

        # displacement columns: periodic master classes on the outer
        # square (all four corners identify), one slot per hole vertex
        wbase = np.full(nvert, -1, dtype=int)
        ncol = 0

        def new_w(v):
            nonlocal ncol
            nonlocal wbase
            wbase[v] = ncol
            ncol += 2

        new_w(0)
        for k in (p, 2 * p, 3 * p):
            wbase[k] = wbase[0]
        for pos in range(1, p):
            new_w(pos)                       # bottom interior
            wbase[3 * p - pos] = wbase[pos]  # its top partner
        for pos in range(1, p):
            new_w(3 * p + pos)                   # left interior
            wbase[2 * p - pos] = wbase[3 * p + pos]
        for v in range(n_out, nvert):
            new_w(v)

        # traction columns: per straight outer edge, nodes 0..p with the
        # corner slots doubled; top/right slave to bottom/left, negated
        tinfo = {}

        def new_t(edge, j):
            nonlocal ncol
            tinfo[(edge, j)] = (ncol, 1.0)
            ncol += 2

        for j in range(p + 1):
            new_t(0, j)
        for j in range(p + 1):
            new_t(3, j)
        for j in range(p + 1):
            base, _ = tinfo[(0, p - j)]
            tinfo[(2, j)] = (base, -1.0)
        for j in range(p + 1):
            base, _ = tinfo[(3, p - j)]
            tinfo[(1, j)] = (base, -1.0)

        self._wbase = wbase
        self._tinfo = tinfo
        self._ncol = ncol
        self._n_out = n_out
        self._n_hole = n_hole

        # panels: (va, vb, edge id); outer edges 0..3, hole edges 4..7
        panels = []
        for k in range(n_out):
            panels.append((k, (k + 1) % n_out, k // p))
        if self.has_hole:
            for k in range(n_hole):
                va = n_out + k
                vb = n_out + (k + 1) % n_hole
                if k < ny:
                    e = 4
                elif k < ny + nx:
                    e = 5
                elif k < 2 * ny + nx:
                    e = 6
                else:
                    e = 7
                panels.append((va, vb, e))
        self._panels = panels
        # outward normals of the hole edges (into the hole)
        self._hole_normals = {4: np.array([1.0, 0.0]), 5: np.array([0.0, -1.0]),
                              6: np.array([-1.0, 0.0]), 7: np.array([0.0, 1.0])}

        # collocation points: vertices, corners inset along the material
        # bisector by a fraction of the local panel length
        coll = self.vertices.copy()
        diag = np.sqrt(0.5)
        for k, sx, sy in ((0, 1, 1), (p, -1, 1), (2 * p, -1, -1), (3 * p, 1, -1)):
            coll[k] += _CORNER_OFFSET * (1.0 / p) * diag * np.array([sx, sy])
        cfac = np.full(nvert, 0.5)
        cfac[[0, p, 2 * p, 3 * p]] = 1.0
        if self.has_hole:
            hsize = min(wx / nx, wy / ny)
            center = np.array([0.5, 0.5])
            for loc in hole_corner_local:
                v = n_out + loc
                away = self.vertices[v] - center
                away = away / np.hypot(away[0], away[1])
                coll[v] += _CORNER_OFFSET * hsize * away
                cfac[v] = 1.0
        self._coll = coll

        # assemble: collocation rows against displacement and traction
        # columns; single-layer blocks of the hole accumulate per edge
        # for the strain-dependent right-hand side
        nc = nvert
        A = np.zeros((nc, 2, ncol))
        hole_sl = {e: np.zeros((nc, 2, 2)) for e in (4, 5, 6, 7)}
        for idx, (va, vb, e) in enumerate(panels):
            a = self.vertices[va]
            b = self.vertices[vb]
            sl_a, sl_b, dl_a, dl_b = panel_integrals(a, b, coll, material)
            wa, wb = wbase[va], wbase[vb]
            A[:, :, wa:wa + 2] += dl_a
            A[:, :, wb:wb + 2] += dl_b
            if e < 4:
                j = idx % p  # panel position along its edge
                ta, sga = tinfo[(e, j)]
                tb, sgb = tinfo[(e, j + 1)]
                A[:, :, ta:ta + 2] -= sga * sl_a
                A[:, :, tb:tb + 2] -= sgb * sl_b
            else:
                hole_sl[e] += sl_a + sl_b
        for v in range(nvert):
            wv = wbase[v]
            A[v, 0, wv] += cfac[v]
            A[v, 1, wv + 1] += cfac[v]

        gauge = np.zeros((2, ncol))
        for v in range(n_out):
            gauge[0, wbase[v]] += 1.0
            gauge[1, wbase[v] + 1] += 1.0
        self._matrix = np.concatenate([A.reshape(2 * nc, ncol), gauge])
        self._hole_sl = hole_sl

    # -- loading, solving, postprocessing ---------------------------------

    def _rhs(self, xi):
        nc = self._n_out + self._n_hole
        r = np.zeros((nc, 2))
        if self.has_hole:
            sig = _stress_of(xi, self.material)
            for e, nu in self._hole_normals.items():
                t_known = -(sig @ nu)
                r += self._hole_sl[e] @ t_known
        return np.concatenate([r.reshape(2 * nc), np.zeros(2)])

    def solve_raw(self, xis):
        """Least-squares boundary data for several strains at once."""
        rhs = np.stack([self._rhs(xi) for xi in xis], axis=1)
        z, _, _, _ = np.linalg.lstsq(self._matrix, rhs, rcond=None)
        mis = self._matrix @ z - rhs
        scale = np.maximum(np.linalg.norm(rhs, axis=0), 1e-30)
        resid = np.linalg.norm(mis, axis=0) / scale
        return z, resid

    def energy(self, z, xi):
        """Boundary work integral of the total field for one strain."""
        xi = np.asarray(xi, dtype=float)
        sig = _stress_of(xi, self.material)
        p = self.panels_per_edge
        total = 0.0
        for idx in range(self._n_out):
            va, vb, e = self._panels[idx]
            a = self.vertices[va]
            b = self.vertices[vb]
            d = b - a
            length = np.hypot(d[0], d[1])
            nu = np.array([d[1], -d[0]]) / length
            j = idx % p
            ta, sga = self._tinfo[(e, j)]
            tb, sgb = self._tinfo[(e, j + 1)]
            f_a = sga * z[ta:ta + 2] + sig @ nu
            f_b = sgb * z[tb:tb + 2] + sig @ nu
            wa, wb = self._wbase[va], self._wbase[vb]
            g_a = xi @ a + z[wa:wa + 2]
            g_b = xi @ b + z[wb:wb + 2]
            total += length / 6.0 * (2.0 * f_a @ g_a + f_a @ g_b
                                     + f_b @ g_a + 2.0 * f_b @ g_b)
        return float(total)

    def boundary_data(self, z, xi):
        """Per panel-endpoint records of w and the corrector traction."""
        xi = np.asarray(xi, dtype=float)
        sig = _stress_of(xi, self.material)
        rows = []
        p = self.panels_per_edge
        for idx, (va, vb, e) in enumerate(self._panels):
            for end, v in ((0, va), (1, vb)):
                pt = self.vertices[v]
                w = z[self._wbase[v]:self._wbase[v] + 2]
                if e < 4:
                    j = idx % p + end
                    tb, sg = self._tinfo[(e, j)]
                    t = sg * z[tb:tb + 2]
                else:
                    t = -(sig @ self._hole_normals[e])
                rows.append((idx, end, pt, w, t))
        m = len(rows)
        out = BEMSolution(
            energy=0.0, residual=0.0,
            points=np.array([r[2] for r in rows]),
            w=np.array([r[3] for r in rows]),
            t=np.array([r[4] for r in rows]),
            panel=np.array([r[0] for r in rows]),
            end=np.array([r[1] for r in rows]))
        return out


def solve_cell_bem(delta1, delta2, xi,
                   material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
                   panels_per_edge: int = DEFAULT_PANELS_PER_EDGE) -> BEMSolution:
    """Solve one cell problem; returns boundary data plus the energy."""
    cell = CellBEM(delta1, delta2, material, panels_per_edge)
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        m = 2 * len(cell._panels)
        pts = np.repeat([p for p in range(len(cell._panels))], 2)
        sol = cell.boundary_data(np.zeros(cell._ncol), xi)
        sol.energy = 0.0
        return sol
    z, resid = cell.solve_raw([xi])
    sol = cell.boundary_data(z[:, 0], xi)
    sol.energy = cell.energy(z[:, 0], xi)
    sol.residual = float(resid[0])
    return sol


_E11 = np.array([[1.0, 0.0], [0.0, 0.0]])
_E22 = np.array([[0.0, 0.0], [0.0, 1.0]])
_E12 = np.array([[0.0, 0.5], [0.5, 0.0]])


def cell_energies(delta1, delta2,
                  material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
                  panels_per_edge: int = DEFAULT_PANELS_PER_EDGE):
    """Effective energies for the three unit strains (e11, e22, e12)."""
    cell = CellBEM(delta1, delta2, material, panels_per_edge)
    xis = [_E11, _E22, _E12]
    z, _ = cell.solve_raw(xis)
    return tuple(cell.energy(z[:, k], xis[k]) for k in range(3))


def effective_tensor_bem(delta1, delta2,
                         material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0),
                         panels_per_edge: int = DEFAULT_PANELS_PER_EDGE):
    """Effective tensor entries by polarization of six energy solves.

    Returns (C1111, C2222, C1122, C1212, C1112, C2212); symmetric by
    construction since every off-diagonal comes from energy differences.
    """
    cell = CellBEM(delta1, delta2, material, panels_per_edge)
    xis = [_E11, _E22, _E12, _E11 + _E22, _E11 + _E12, _E22 + _E12]
    z, _ = cell.solve_raw(xis)
    e = [cell.energy(z[:, k], xis[k]) for k in range(6)]
    return np.array([
        e[0],
        e[1],
        0.5 * (e[3] - e[0] - e[1]),
        e[2],
        0.5 * (e[4] - e[0] - e[2]),
        0.5 * (e[5] - e[1] - e[2]),
    ])


def dump_boundary_csv(sol: BEMSolution, path):
    """Write panel-endpoint boundary data for inspection."""
    import csv

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["panel", "end", "x", "y", "wx", "wy", "tx", "ty"])
        for k in range(len(sol.panel)):
            wr.writerow([int(sol.panel[k]), int(sol.end[k]),
                         "%.12g" % sol.points[k, 0], "%.12g" % sol.points[k, 1],
                         "%.12g" % sol.w[k, 0], "%.12g" % sol.w[k, 1],
                         "%.12g" % sol.t[k, 0], "%.12g" % sol.t[k, 1]])
