"""Dual-weighted error indicators separating mesh and design effects.

Given a per-element composite tensor field and its displacement, the
estimator

  1. runs the layered-material alternating iteration for a fixed number
     of rounds to approximate the pointwise-optimal reference state,
  2. lifts the reference displacement to a biquartic interpolant on each
     element's sibling patch (the four children of its parent cell),
  3. assembles weighted residuals element by element: an interior part
     (stress divergence), an edge part (traction jumps and boundary
     mismatch), and a constitutive-gap part comparing the current tensor
     with the optimal layered tensor at the local strain.

The first two parts shrink under mesh refinement, the third as the design
approaches the optimal microstructure, so the split attributes the error
to discretization and to the constitutive description respectively.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .fem import GAUSS3_PTS, GAUSS3_WTS, QUAD_PTS, QUAD_WTS, DisplacementField
from .laminate import alternating_optimize, newton_invert
from .mesh import E, N, S, W
from .tensor import apply_entries, contract_entries

log = logging.getLogger(__name__)

# quartic Lagrange nodes on the parent reference square
_PATCH_NODES = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])

_SIDE_NORMAL = {W: (-1.0, 0.0), E: (1.0, 0.0), S: (0.0, -1.0), N: (0.0, 1.0)}


def _lagrange(tnodes: np.ndarray, t: np.ndarray):
    """Values and derivatives of the Lagrange basis on `tnodes` at `t`.

    Returns (vals, ders), each (len(t), len(tnodes)).
    """
    t = np.asarray(t, dtype=float)
    k = len(tnodes)
    diff = t[:, None] - tnodes[None, :]
    vals = np.empty((len(t), k))
    ders = np.empty((len(t), k))
    for j in range(k):
        others = [i for i in range(k) if i != j]
        denom = np.prod(tnodes[j] - tnodes[others])
        vals[:, j] = np.prod(diff[:, others], axis=1) / denom
        acc = np.zeros(len(t))
        for n in others:
            rest = [i for i in others if i != n]
            acc += np.prod(diff[:, rest], axis=1)
        ders[:, j] = acc / denom
    return vals, ders


class PatchInterpolant:
    """Biquartic lift of a nodal field onto each element's sibling patch.

    The four children of an element's parent carry 25 distinct nodes
    forming a 5x5 grid; the quartic tensor-product interpolant through
    them, restricted to the element, is a higher-order reconstruction of
    the field.  Elements whose siblings have been refined further (or
    coarsened away) keep the plain field; their count is logged.
    """

    def __init__(self, problem, field: DisplacementField):
        self.problem = problem
        self.field = field
        mesh = problem.mesh
        ne = problem.n_elements
        self.coeffs = np.zeros((ne, 5, 5, 2))
        self.has_patch = np.zeros(ne, dtype=bool)
        self.quadrant = np.zeros((ne, 2), dtype=np.int64)
        node_index = problem.node_index
        for e, cid in enumerate(problem.leaf_ids):
            level, ix, iy = mesh.cell_of[cid]
            px, py = ix >> 1, iy >> 1
            siblings = [(level, 2 * px + sx, 2 * py + sy)
                        for sy in (0, 1) for sx in (0, 1)]
            if not all(s in mesh.id_of for s in siblings):
                continue
            sh = problem.scale_level - level - 1
            for j in range(5):
                for i in range(5):
                    key = ((4 * px + i) << sh, (4 * py + j) << sh)
                    self.coeffs[e, j, i] = field.values[node_index[key]]
            self.quadrant[e] = (ix & 1, iy & 1)
            self.has_patch[e] = True
        n_plain = int((~self.has_patch).sum())
        if n_plain:
            log.debug("patch interpolant: %d of %d elements without a "
                      "same-level sibling patch use the plain field",
                      n_plain, ne)

    _basis_cache: dict = {}

    def _basis(self, ref_1d: np.ndarray, offset: int):
        # element ref coordinate -> parent patch coordinate; the same few
        # point sets recur for every element, so memoize on raw bytes
        cache = PatchInterpolant._basis_cache
        if len(cache) > 4096:
            cache.clear()
        key = (ref_1d.tobytes(), offset)
        out = cache.get(key)
        if out is None:
            out = _lagrange(_PATCH_NODES, 0.5 * (ref_1d + 2 * offset - 1))
            cache[key] = out
        return out

    def values(self, ref_pts: np.ndarray) -> np.ndarray:
        """(nE, m, 2) lifted values at shared reference points."""
        ref_pts = np.atleast_2d(ref_pts)
        out = np.empty((self.coeffs.shape[0], ref_pts.shape[0], 2))
        for ox in (0, 1):
            for oy in (0, 1):
                rows = np.flatnonzero(self.has_patch
                                      & (self.quadrant[:, 0] == ox)
                                      & (self.quadrant[:, 1] == oy))
                if rows.size == 0:
                    continue
                bx, _ = self._basis(ref_pts[:, 0], ox)
                by, _ = self._basis(ref_pts[:, 1], oy)
                out[rows] = np.einsum("ejia,mj,mi->ema",
                                      self.coeffs[rows], by, bx)
        plain = np.flatnonzero(~self.has_patch)
        if plain.size:
            out[plain] = self.field.values_at(ref_pts, elements=plain)
        return out

    def strains(self, ref_pts: np.ndarray) -> np.ndarray:
        """(nE, m, 2, 2) symmetric gradients of the lift."""
        ref_pts = np.atleast_2d(ref_pts)
        ne = self.coeffs.shape[0]
        grad = np.empty((ne, ref_pts.shape[0], 2, 2))
        # patch coordinate spans the parent cell: d(patch)/dx = 1/h
        inv_h = 1.0 / self.problem.sizes
        for ox in (0, 1):
            for oy in (0, 1):
                rows = np.flatnonzero(self.has_patch
                                      & (self.quadrant[:, 0] == ox)
                                      & (self.quadrant[:, 1] == oy))
                if rows.size == 0:
                    continue
                bx, dbx = self._basis(ref_pts[:, 0], ox)
                by, dby = self._basis(ref_pts[:, 1], oy)
                gx = np.einsum("ejia,mj,mi->ema", self.coeffs[rows], by, dbx)
                gy = np.einsum("ejia,mj,mi->ema", self.coeffs[rows], dby, bx)
                grad[rows, :, :, 0] = gx * inv_h[rows, None, None]
                grad[rows, :, :, 1] = gy * inv_h[rows, None, None]
        plain = np.flatnonzero(~self.has_patch)
        sym = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        if plain.size:
            sym[plain] = self.field.strains_at(ref_pts, elements=plain)
        return sym

    def values_at_element(self, e: int, ref_pts: np.ndarray) -> np.ndarray:
        """(m, 2) lifted values on one element at its reference points."""
        ref_pts = np.atleast_2d(ref_pts)
        if not self.has_patch[e]:
            return self.field.values_at(ref_pts, elements=np.array([e]))[0]
        ox, oy = self.quadrant[e]
        bx, _ = self._basis(ref_pts[:, 0], ox)
        by, _ = self._basis(ref_pts[:, 1], oy)
        return np.einsum("jia,mj,mi->ma", self.coeffs[e], by, bx)

    def values_at_elements(self, elements: np.ndarray,
                           ref_pts: np.ndarray) -> np.ndarray:
        """(n, m, 2) lifted values on listed elements at shared points."""
        ref_pts = np.atleast_2d(ref_pts)
        elements = np.asarray(elements)
        out = np.empty((elements.size, ref_pts.shape[0], 2))
        hp = self.has_patch[elements]
        quad = self.quadrant[elements]
        for ox in (0, 1):
            for oy in (0, 1):
                rows = np.flatnonzero(hp & (quad[:, 0] == ox)
                                      & (quad[:, 1] == oy))
                if rows.size == 0:
                    continue
                bx, _ = self._basis(ref_pts[:, 0], ox)
                by, _ = self._basis(ref_pts[:, 1], oy)
                out[rows] = np.einsum("njia,mj,mi->nma",
                                      self.coeffs[elements[rows]], by, bx)
        plain = np.flatnonzero(~hp)
        if plain.size:
            out[plain] = self.field.values_at(ref_pts,
                                              elements=elements[plain])
        return out


@dataclass
class ErrorBreakdown:
    """Per-element indicator parts and their totals.

    `edge`, `volume`, `model_abs` are absolute values; the matching signed
    per-element sums are kept for diagnostics.  The constitutive-gap part
    enters totals and marking indicators with weight 1/2.
    """
    edge: np.ndarray
    volume: np.ndarray
    model_abs: np.ndarray
    edge_signed: np.ndarray
    volume_signed: np.ndarray
    model_signed: np.ndarray
    compliance: float

    @property
    def n_elements(self) -> int:
        return self.edge.size

    @property
    def edge_total(self) -> float:
        return float(self.edge.sum())

    @property
    def volume_total(self) -> float:
        return float(self.volume.sum())

    @property
    def model_total(self) -> float:
        return 0.5 * float(self.model_abs.sum())

    @property
    def model_signed_total(self) -> float:
        return 0.5 * float(self.model_signed.sum())

    @property
    def total(self) -> float:
        return self.edge_total + self.volume_total + self.model_total

    @property
    def indicators(self) -> np.ndarray:
        """Per-element marking indicator."""
        return self.edge + self.volume + 0.5 * self.model_abs


def relaxed_state(problem, c_entries, u=None, rounds: int = 50,
                  volume_fraction: float | None = None,
                  regularization: float | None = None,
                  multiplier: float = 1.0):
    """Approximate pointwise-optimal layered reference for a design.

    Runs the alternating iteration from the given state; rounds=0 returns
    the inputs unchanged.  Returns (entries, displacement, multiplier).
    """
    entries, field, mult, _ = alternating_optimize(
        problem, c_entries, u=u, rounds=rounds,
        volume_fraction=volume_fraction, regularization=regularization,
        multiplier=multiplier)
    return entries, field, mult


def _edge_cuts(scenario, axis: int, coord: float, a: float, b: float):
    """Split points of a boundary edge at load and support patch ends."""
    cuts = {a, b}
    for seg in ([p.segment for p in scenario.loads]
                + [p.segment for p in scenario.dirichlet]):
        if seg.axis != axis or abs(seg.coord - coord) > 1e-12:
            continue
        for s in (seg.lo, seg.hi):
            if a + 1e-12 < s < b - 1e-12:
                cuts.add(s)
    return sorted(cuts)


def assemble_indicators(problem, c_entries, u: DisplacementField,
                        ref_entries, u_ref: DisplacementField,
                        model_mode: str = "newton",
                        multiplier: float = 1.0,
                        regularization: float | None = None,
                        lift: bool = True) -> ErrorBreakdown:
    """Weighted residual indicators for a state against a reference.

    The weight is (lifted reference) - (current displacement); `lift=False`
    skips the biquartic patch and uses the raw difference, which keeps the
    weight conforming (used by consistency tests).  `model_mode` selects
    how the comparison tensor at quadrature points is built: "newton"
    inverts the strain of the lifted reference pointwise, "elementwise"
    uses the per-element reference entries directly.
    """
    c_entries = np.asarray(c_entries, dtype=float)
    ref_entries = np.asarray(ref_entries, dtype=float)
    mesh = problem.mesh
    scenario = problem.scenario
    ne = problem.n_elements
    nq = QUAD_PTS.shape[0]

    patch = PatchInterpolant(problem, u_ref) if lift else None

    # interior residual: div(C eps(u)) . w, 3x3 Gauss
    div = problem.stress_divergence(c_entries, u, QUAD_PTS)
    w_vol = (patch.values(QUAD_PTS) if lift else u_ref.values_at(QUAD_PTS))
    w_vol = w_vol - u.values_at(QUAD_PTS)
    jac = (problem.sizes / 2.0) ** 2
    volume_signed = np.einsum("q,eqa,eqa->e", QUAD_WTS, div, w_vol) * jac

    # constitutive gap at the same points
    eps = u.strains_at(QUAD_PTS)
    if model_mode == "elementwise":
        model_entries = np.broadcast_to(ref_entries[:, None, :], (ne, nq, 6))
    elif model_mode == "newton":
        eps_ref = (patch.strains(QUAD_PTS) if lift
                   else u_ref.strains_at(QUAD_PTS))
        init = np.repeat(ref_entries, nq, axis=0)
        inverted = newton_invert(eps_ref.reshape(-1, 2, 2), multiplier,
                                 scenario.material,
                                 regularization=regularization,
                                 init_entries=init)[0]
        model_entries = inverted.reshape(ne, nq, 6)
    else:
        raise ValueError(f"unknown model_mode {model_mode!r}")
    gap = contract_entries(model_entries - c_entries[:, None, :], eps, eps)
    model_signed = np.einsum("q,eq->e", QUAD_WTS, gap) * jac

    # edge residual: signed sum over each element's boundary, then abs.
    # Interior sides fall into five reference-point layouts (same-size
    # neighbor, lower/upper half of a coarse neighbor's side, lower/upper
    # fine sub-edge), so they batch into a few dense contractions; only
    # boundary sides, whose segments depend on load and support cuts,
    # keep a per-segment loop.
    edge_signed = np.zeros(ne)
    pos_of = mesh.leaf_index()
    origins, sizes = problem.origins, problem.sizes
    half_lo = 0.5 * (GAUSS3_PTS - 1.0)
    half_hi = 0.5 * (GAUSS3_PTS + 1.0)
    _OWN_T = {"same": GAUSS3_PTS, "coarse0": GAUSS3_PTS,
              "coarse1": GAUSS3_PTS, "fine0": half_lo, "fine1": half_hi}
    _NB_T = {"same": GAUSS3_PTS, "coarse0": half_lo, "coarse1": half_hi,
             "fine0": GAUSS3_PTS, "fine1": GAUSS3_PTS}

    def _side_ref(side, along_vals, facing):
        axis = 0 if side in (W, E) else 1
        sign = -1.0 if side in (W, S) else 1.0
        pts = np.empty((along_vals.size, 2))
        pts[:, axis] = -sign if facing else sign
        pts[:, 1 - axis] = along_vals
        return pts

    groups: dict = {}
    boundary_sides = []
    for e in range(ne):
        key = mesh.cell_of[problem.leaf_ids[e]]
        for side in (W, E, S, N):
            kind, payload = mesh.neighbor(key, side)
            if kind == "boundary":
                boundary_sides.append((e, side))
                continue
            along = 1 if side in (W, E) else 0
            if kind == "fine":
                lo_e, hi_e = (pos_of[mesh.id_of[k]] for k in payload)
                groups.setdefault((side, "fine0"), []).append((e, lo_e))
                groups.setdefault((side, "fine1"), []).append((e, hi_e))
                continue
            nb = pos_of[mesh.id_of[payload]]
            if kind == "same":
                groups.setdefault((side, "same"), []).append((e, nb))
            else:
                upper = (origins[e][along] - origins[nb][along]
                         > 0.25 * sizes[nb])
                tag = "coarse1" if upper else "coarse0"
                groups.setdefault((side, tag), []).append((e, nb))

    for (side, tag), pairs in groups.items():
        arr = np.array(pairs, dtype=np.int64)
        es, nbs = arr[:, 0], arr[:, 1]
        ref_own = _side_ref(side, _OWN_T[tag], facing=False)
        ref_nb = _side_ref(side, _NB_T[tag], facing=True)
        nu = np.array(_SIDE_NORMAL[side])
        eps_own = u.strains_at(ref_own, elements=es)
        eps_nb = u.strains_at(ref_nb, elements=nbs)
        nq_e = ref_own.shape[0]
        sig_own = apply_entries(
            np.repeat(c_entries[es][:, None, :], nq_e, axis=1), eps_own)
        sig_nb = apply_entries(
            np.repeat(c_entries[nbs][:, None, :], nq_e, axis=1), eps_nb)
        jump = 0.5 * np.einsum("nqab,b->nqa", sig_own - sig_nb, nu)
        if lift:
            w_edge = patch.values_at_elements(es, ref_own)
        else:
            w_edge = u_ref.values_at(ref_own, elements=es)
        w_edge = w_edge - u.values_at(ref_own, elements=es)
        scale = 0.25 if tag.startswith("fine") else 0.5
        w_q = GAUSS3_WTS[None, :] * (scale * sizes[es])[:, None]
        edge_signed[es] += np.einsum("nq,nqa,nqa->n", w_q, jump, w_edge)

    for e, side in boundary_sides:
        h = sizes[e]
        axis = 0 if side in (W, E) else 1
        along = 1 - axis
        coord = origins[e][axis] + (h if side in (E, N) else 0.0)
        a = origins[e][along]
        b = a + h
        nu = np.array(_SIDE_NORMAL[side])
        cuts = _edge_cuts(scenario, axis, coord, a, b)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            half = 0.5 * (hi - lo)
            t_q = 0.5 * (lo + hi) + half * GAUSS3_PTS
            w_q = GAUSS3_WTS * half
            phys = np.empty((t_q.size, 2))
            phys[:, axis] = coord
            phys[:, along] = t_q
            ref_own = 2.0 * (phys - origins[e]) / h - 1.0
            eps_own = u.strains_at(ref_own, elements=np.array([e]))[0]
            tn = apply_entries(np.broadcast_to(c_entries[e], (t_q.size, 6)),
                               eps_own) @ nu
            mid = np.empty(2)
            mid[axis] = coord
            mid[along] = 0.5 * (lo + hi)
            fixed = scenario.fixed_components(mid[0], mid[1])
            if len(fixed) == 2:
                continue
            jump = tn.copy()
            for plo, phi, g in scenario.traction_on(axis, coord, lo, hi):
                if phi - plo > (hi - lo) - 1e-12:
                    jump -= g
            for comp in fixed:
                jump[:, comp] = 0.0
            if lift:
                w_edge = patch.values_at_element(e, ref_own)
            else:
                w_edge = u_ref.values_at(ref_own,
                                         elements=np.array([e]))[0]
            w_edge = w_edge - u.values_at(ref_own,
                                          elements=np.array([e]))[0]
            edge_signed[e] += float(np.einsum("q,qa,qa->",
                                              w_q, jump, w_edge))

    return ErrorBreakdown(edge=np.abs(edge_signed),
                          volume=np.abs(volume_signed),
                          model_abs=np.abs(model_signed),
                          edge_signed=edge_signed,
                          volume_signed=volume_signed,
                          model_signed=model_signed,
                          compliance=u.compliance)


def estimate(problem, c_entries, u: DisplacementField | None = None,
             rounds: int = 50, model_mode: str = "newton",
             volume_fraction: float | None = None,
             regularization: float | None = None,
             multiplier: float = 1.0) -> ErrorBreakdown:
    """Full pipeline: relaxed reference, biquartic lift, indicators."""
    c_entries = np.asarray(c_entries, dtype=float)
    if u is None:
        u = problem.solve(c_entries)
    ref_entries, u_ref, mult = relaxed_state(
        problem, c_entries, u, rounds=rounds,
        volume_fraction=volume_fraction, regularization=regularization,
        multiplier=multiplier)
    return assemble_indicators(problem, c_entries, u, ref_entries, u_ref,
                               model_mode=model_mode, multiplier=mult,
                               regularization=regularization)


def lagrangian(problem, c_entries, u: DisplacementField) -> float:
    """2 l(u) - a(C; u, u); equals the compliance when u solves C."""
    return (2.0 * problem.load_functional(u)
            - problem.a_form(np.asarray(c_entries, dtype=float), u, u))


@dataclass
class TrapezoidCheck:
    """Pieces of the exact cubic trapezoid identity between two states."""
    residual: float
    delta: float
    f0: float
    f1: float
    correction: float
    lagrangian0: float
    lagrangian1: float

    @property
    def scale(self) -> float:
        return max(abs(self.lagrangian0), abs(self.lagrangian1),
                   abs(self.f0), abs(self.f1), 1e-300)


def trapezoid_check(problem, c0, u0: DisplacementField,
                    c1, u1: DisplacementField) -> TrapezoidCheck:
    """Exact trapezoid identity along the segment between two states.

    The compliance Lagrangian is cubic along the straight segment from
    (c0, u0) to (c1, u1), so its increment equals the trapezoid rule of
    its derivative plus half the constant third-derivative term.  The
    returned residual is zero to rounding for any pair of states.
    """
    c0 = np.asarray(c0, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    e_u = DisplacementField(problem, u1.values - u0.values)
    e_c = c1 - c0
    l0 = lagrangian(problem, c0, u0)
    l1 = lagrangian(problem, c1, u1)
    two_l = 2.0 * problem.load_functional(e_u)
    f0 = two_l - 2.0 * problem.a_form(c0, u0, e_u) - problem.a_form(e_c, u0, u0)
    f1 = two_l - 2.0 * problem.a_form(c1, u1, e_u) - problem.a_form(e_c, u1, u1)
    correction = 0.5 * problem.a_form(e_c, e_u, e_u)
    residual = (l1 - l0) - 0.5 * (f0 + f1) - correction
    return TrapezoidCheck(residual=residual, delta=l1 - l0, f0=f0, f1=f1,
                          correction=correction, lagrangian0=l0,
                          lagrangian1=l1)
