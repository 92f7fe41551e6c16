"""Adaptive quadtree meshes of square cells with 2:1 balance.

Cells are addressed by integer keys (level, ix, iy): the cell
[ix, ix+1] x [iy, iy+1] scaled by 2**-level.  Domains are unions of
dyadic root squares, which covers the unit square, 1 x 1/2 rectangles
and the L-shape.  The 2:1 balance guarantees a hanging edge always
consists of one coarse edge facing exactly two half edges, so all
hanging-node constraints stay one level deep.
"""

from __future__ import annotations

import numpy as np

# side ids and their integer offsets
W, E, S, N = 0, 1, 2, 3
_SIDE_STEP = {W: (-1, 0), E: (1, 0), S: (0, -1), N: (0, 1)}
_OPPOSITE = {W: E, E: W, S: N, N: S}


class Domain:
    """Union of equal-size dyadic root squares."""

    def __init__(self, name: str, root_level: int, roots):
        self.name = name
        self.root_level = root_level
        self.roots = frozenset(roots)

    def contains(self, level: int, ix: int, iy: int) -> bool:
        if level < self.root_level or ix < 0 or iy < 0:
            return False
        if ix >> level or iy >> level:  # outside the unit square frame
            return False
        shift = level - self.root_level
        return (ix >> shift, iy >> shift) in self.roots

    def area(self) -> float:
        return len(self.roots) * 4.0 ** (-self.root_level)

    def cells_at_level(self, level: int):
        """All cell keys at a uniform level, in row-major (iy, ix) order."""
        if level < self.root_level:
            raise ValueError(f"level {level} below root level {self.root_level}")
        shift = level - self.root_level
        keys = []
        for iy in range(1 << level):
            for ix in range(1 << level):
                if (ix >> shift, iy >> shift) in self.roots:
                    keys.append((level, ix, iy))
        return keys


UNIT_SQUARE = Domain("unit_square", 0, [(0, 0)])
RECT_2X1 = Domain("rect_2x1", 1, [(0, 0), (1, 0)])  # [0,1] x [0,1/2]
L_SHAPE = Domain("l_shape", 1, [(0, 0), (1, 0), (0, 1)])  # [0,1]^2 minus top-right quadrant


class QuadMesh:
    """Leaf cells of an adaptive quadtree over a dyadic domain.

    Leaves carry stable integer ids (creation order).  `leaf_ids` gives the
    ascending id order used for dense per-element arrays everywhere else.
    """

    def __init__(self, domain: Domain):
        self.domain = domain
        self.cell_of = {}      # id -> key
        self.id_of = {}        # key -> id, leaves only
        self.internal = set()  # keys that have been subdivided
        self._next_id = 0
        self._leaf_ids = None

    # --- construction ----------------------------------------------------
    @classmethod
    def uniform(cls, domain: Domain, level: int) -> "QuadMesh":
        if level < 1:
            raise ValueError("level must be >= 1")
        if level < domain.root_level + 1:
            raise ValueError(
                f"level {level} leaves root cells of {domain.name} without parents; "
                f"need level >= {domain.root_level + 1}"
            )
        mesh = cls(domain)
        for key in domain.cells_at_level(level):
            mesh._add_leaf(key)
        return mesh

    def _add_leaf(self, key) -> int:
        cid = self._next_id
        self._next_id += 1
        self.cell_of[cid] = key
        self.id_of[key] = cid
        self._leaf_ids = None
        return cid

    # --- basic queries ---------------------------------------------------
    @property
    def leaf_ids(self) -> np.ndarray:
        if self._leaf_ids is None:
            self._leaf_ids = np.array(sorted(self.id_of.values()), dtype=np.int64)
        return self._leaf_ids

    def leaf_index(self) -> dict:
        """id -> dense position in leaf_ids order."""
        return {cid: k for k, cid in enumerate(self.leaf_ids)}

    @property
    def n_elements(self) -> int:
        return len(self.id_of)

    def key(self, cid: int):
        return self.cell_of[cid]

    def cell_size(self, cid: int) -> float:
        return 2.0 ** -self.cell_of[cid][0]

    def cell_origin(self, cid: int):
        level, ix, iy = self.cell_of[cid]
        h = 2.0 ** -level
        return ix * h, iy * h

    def max_level(self) -> int:
        return max(k[0] for k in self.id_of)

    def areas(self) -> np.ndarray:
        return np.array([4.0 ** -self.cell_of[cid][0] for cid in self.leaf_ids])

    # --- neighbor topology -----------------------------------------------
    def _status(self, key) -> str:
        if key in self.id_of:
            return "leaf"
        if key in self.internal:
            return "internal"
        level, ix, iy = key
        if not self.domain.contains(level, ix, iy):
            return "outside"
        return "virtual"  # covered by a coarser leaf

    def neighbor(self, key, side: int):
        """Neighbor of a leaf across one side.

        Returns one of
            ("boundary", None)
            ("same", key)
            ("coarse", coarse_key)
            ("fine", [key_a, key_b])   ordered by ascending (ix, iy)
        """
        level, ix, iy = key
        dx, dy = _SIDE_STEP[side]
        cand = (level, ix + dx, iy + dy)
        st = self._status(cand)
        if st == "leaf":
            return "same", cand
        if st == "outside":
            return "boundary", None
        if st == "virtual":
            coarse = (level - 1, (ix + dx) >> 1, (iy + dy) >> 1)
            if self._status(coarse) == "leaf":
                return "coarse", coarse
            raise RuntimeError(f"mesh not 2:1 balanced near {key}")
        # cand refined: with balance its near-side children are leaves
        _, cx, cy = cand
        if side in (W, E):
            sub_x = 2 * cx + (1 if side == W else 0)
            kids = [(level + 1, sub_x, 2 * cy), (level + 1, sub_x, 2 * cy + 1)]
        else:
            sub_y = 2 * cy + (1 if side == S else 0)
            kids = [(level + 1, 2 * cx, sub_y), (level + 1, 2 * cx + 1, sub_y)]
        for k in kids:
            if self._status(k) != "leaf":
                raise RuntimeError(f"mesh not 2:1 balanced near {key}")
        return "fine", kids

    def hanging_edges(self):
        """All (coarse_key, side_of_coarse, [fine_key_lo, fine_key_hi])."""
        out = []
        for cid in self.leaf_ids:
            key = self.cell_of[cid]
            for side in (W, E, S, N):
                kind, info = self.neighbor(key, side)
                if kind == "fine":
                    out.append((key, side, info))
        return out

    def vertex_constraints(self):
        """Hanging corner vertices -> ((master_a, master_b), (1/2, 1/2)).

        Positions are exact integer pairs at scale 2**-(max_level+1).
        """
        scale_level = self.max_level() + 1
        cons = {}
        for coarse_key, side, _ in self.hanging_edges():
            level, ix, iy = coarse_key
            sh = scale_level - level
            x0, y0 = ix << sh, iy << sh
            h = 1 << sh
            if side in (W, E):
                x = x0 if side == W else x0 + h
                mid, a, b = (x, y0 + h // 2), (x, y0), (x, y0 + h)
            else:
                y = y0 if side == S else y0 + h
                mid, a, b = (x0 + h // 2, y), (x0, y), (x0 + h, y)
            cons[mid] = ((a, b), (0.5, 0.5))
        return cons

    def is_balanced(self) -> bool:
        try:
            for cid in self.leaf_ids:
                for side in (W, E, S, N):
                    self.neighbor(self.cell_of[cid], side)
        except RuntimeError:
            return False
        return True

    # --- refinement ------------------------------------------------------
    def _split(self, cid: int):
        key = self.cell_of[cid]
        level, ix, iy = key
        del self.id_of[key]
        del self.cell_of[cid]
        self.internal.add(key)
        kids = []
        for oy in (0, 1):  # SW, SE, NW, NE
            for ox in (0, 1):
                kids.append(self._add_leaf((level + 1, 2 * ix + ox, 2 * iy + oy)))
        return kids

    def refine(self, marked_ids):
        """Subdivide marked leaves, then restore 2:1 balance by closure.

        Returns {parent_id: [child ids]} covering marked and closure splits.
        """
        children = {}
        for cid in sorted(marked_ids):
            if cid not in self.cell_of:
                raise KeyError(f"unknown or non-leaf element id {cid}")
            children[cid] = self._split(cid)
        # closure: any leaf whose side faces grandchildren gets split too
        while True:
            violators = []
            for cid in self.leaf_ids:
                level, ix, iy = self.cell_of[cid]
                for side in (W, E, S, N):
                    dx, dy = _SIDE_STEP[side]
                    cand = (level, ix + dx, iy + dy)
                    if self._status(cand) != "internal":
                        continue
                    _, cx, cy = cand
                    if side in (W, E):
                        sub_x = 2 * cx + (1 if side == W else 0)
                        kids = [(level + 1, sub_x, 2 * cy), (level + 1, sub_x, 2 * cy + 1)]
                    else:
                        sub_y = 2 * cy + (1 if side == S else 0)
                        kids = [(level + 1, 2 * cx, sub_y), (level + 1, 2 * cx + 1, sub_y)]
                    if any(self._status(k) == "internal" for k in kids):
                        violators.append(cid)
                        break
            if not violators:
                break
            for cid in sorted(violators):
                children[cid] = self._split(cid)
        self._leaf_ids = None
        return children

    # --- export ----------------------------------------------------------
    def dump_text(self) -> str:
        """Element list and hanging-vertex constraints, plain text."""
        lines = [f"domain {self.domain.name}", f"elements {self.n_elements}"]
        for cid in self.leaf_ids:
            level, ix, iy = self.cell_of[cid]
            h = 2.0 ** -level
            lines.append(f"{cid} {level} {ix * h:.10g} {iy * h:.10g} {h:.10g}")
        cons = self.vertex_constraints()
        lines.append(f"constraints {len(cons)}")
        sc = 2.0 ** -(self.max_level() + 1)
        for node, (masters, weights) in sorted(cons.items()):
            (ax, ay), (bx, by) = masters
            lines.append(
                f"{node[0] * sc:.10g} {node[1] * sc:.10g} <- "
                f"{ax * sc:.10g} {ay * sc:.10g} {weights[0]} {bx * sc:.10g} {by * sc:.10g} {weights[1]}"
            )
        return "\n".join(lines) + "\n"


def mark_bulk(indicators: np.ndarray, leaf_ids: np.ndarray, fraction: float):
    """Smallest set of largest indicators holding >= fraction of the total.

    Ties are broken by ascending element id; an all-zero field marks nothing.
    """
    indicators = np.asarray(indicators, dtype=float)
    if indicators.shape != leaf_ids.shape:
        raise ValueError("indicator/id shape mismatch")
    total = indicators.sum()
    if total <= 0.0:
        return []
    # sort by descending indicator, ascending id among ties
    order = np.lexsort((leaf_ids, -indicators))
    acc = 0.0
    marked = []
    target = fraction * total
    for pos in order:
        if acc >= target:
            break
        marked.append(int(leaf_ids[pos]))
        acc += indicators[pos]
    return marked
