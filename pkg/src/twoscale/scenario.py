"""Benchmark problem setups: domain, supports, loads, volume budget.

Boundary pieces are axis-aligned segments on the domain boundary.  Load
regions described only as points ("center of the right side") become
centered segments of configurable width, default 0.05 times the domain
height.  All loads have magnitude one and both Lame parameters default
to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import L_SHAPE, RECT_2X1, UNIT_SQUARE, Domain
from .tensor import IsotropicMaterial

_TOL = 1e-12


@dataclass(frozen=True)
class Segment:
    """Axis-aligned boundary segment.

    axis 0: vertical line x = coord, span in y; axis 1: horizontal line
    y = coord, span in x.
    """

    axis: int
    coord: float
    lo: float
    hi: float

    def contains_point(self, x: float, y: float) -> bool:
        on, along = (x, y) if self.axis == 0 else (y, x)
        return abs(on - self.coord) < _TOL and self.lo - _TOL <= along <= self.hi + _TOL

    def edge_overlap(self, axis: int, coord: float, a: float, b: float):
        """Overlap with a mesh edge on the same line, or None."""
        if axis != self.axis or abs(coord - self.coord) > _TOL:
            return None
        lo, hi = max(a, self.lo), min(b, self.hi)
        if hi - lo < _TOL:
            return None
        return lo, hi


@dataclass(frozen=True)
class DirichletPatch:
    segment: Segment
    components: tuple  # subset of (0, 1)


@dataclass(frozen=True)
class LoadPatch:
    segment: Segment
    traction: tuple  # (gx, gy), constant on the segment


@dataclass(frozen=True)
class Scenario:
    name: str
    domain: Domain
    dirichlet: tuple
    loads: tuple
    theta: float
    material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0)
    # extra single-point component pins (gauge fixing), ((x, y), component)
    point_pins: tuple = field(default=())

    def area(self) -> float:
        return self.domain.area()

    def fixed_components(self, x: float, y: float):
        comps = set()
        for patch in self.dirichlet:
            if patch.segment.contains_point(x, y):
                comps.update(patch.components)
        for (px, py), comp in self.point_pins:
            if abs(px - x) < _TOL and abs(py - y) < _TOL:
                comps.add(comp)
        return comps

    def traction_on(self, axis: int, coord: float, a: float, b: float):
        """Load patches overlapping a boundary edge: [(lo, hi, g), ...]."""
        out = []
        for patch in self.loads:
            ov = patch.segment.edge_overlap(axis, coord, a, b)
            if ov is not None:
                out.append((ov[0], ov[1], np.array(patch.traction)))
        return out


def _centered(span_center: float, width: float):
    return span_center - width / 2.0, span_center + width / 2.0


def make_scenario(name: str, load_width_factor: float = 0.05,
                  material: IsotropicMaterial = IsotropicMaterial(1.0, 1.0)) -> Scenario:
    """Build one of the named benchmark scenarios.

    carrier    unit square, clamped bottom, uniform shear (+x) on top, theta 0.67
    cantilever [0,1]x[0,1/2], clamped left, downward load mid right edge, theta 0.5
    bridge     [0,1]x[0,1/2], vertical rollers at both lower corners,
               downward load on the lower edge between them, theta 0.67
    lshape     L-domain, clamped top, downward load mid lower-right edge, theta 0.67
    """
    if name == "carrier":
        # shear plate: clamped base, laterally guided (vertical rollers on
        # the sides), tangential unit traction along the whole top edge.
        # With homogeneous material the exact solution is the linear shear
        # field u = (y, 0), which pins the compliance of the full-material
        # plate at exactly 1.
        return Scenario(
            name=name,
            domain=UNIT_SQUARE,
            dirichlet=(DirichletPatch(Segment(1, 0.0, 0.0, 1.0), (0, 1)),
                       DirichletPatch(Segment(0, 0.0, 0.0, 1.0), (1,)),
                       DirichletPatch(Segment(0, 1.0, 0.0, 1.0), (1,))),
            loads=(LoadPatch(Segment(1, 1.0, 0.0, 1.0), (1.0, 0.0)),),
            theta=0.67,
            material=material,
        )
    if name == "cantilever":
        height = 0.5
        lo, hi = _centered(0.25, load_width_factor * height)
        return Scenario(
            name=name,
            domain=RECT_2X1,
            dirichlet=(DirichletPatch(Segment(0, 0.0, 0.0, 0.5), (0, 1)),),
            loads=(LoadPatch(Segment(0, 1.0, lo, hi), (0.0, -1.0)),),
            theta=0.5,
            material=material,
        )
    if name == "bridge":
        w = load_width_factor * 1.0  # fraction of the lower boundary width
        return Scenario(
            name=name,
            domain=RECT_2X1,
            dirichlet=(
                DirichletPatch(Segment(1, 0.0, 0.0, w), (1,)),
                DirichletPatch(Segment(1, 0.0, 1.0 - w, 1.0), (1,)),
            ),
            loads=(LoadPatch(Segment(1, 0.0, w, 1.0 - w), (0.0, -1.0)),),
            theta=0.67,
            material=material,
            # rollers leave horizontal translation free; pin it at the origin
            point_pins=(((0.0, 0.0), 0),),
        )
    if name == "lshape":
        height = 1.0
        lo, hi = _centered(0.25, load_width_factor * height)
        return Scenario(
            name=name,
            domain=L_SHAPE,
            dirichlet=(DirichletPatch(Segment(1, 1.0, 0.0, 0.5), (0, 1)),),
            loads=(LoadPatch(Segment(0, 1.0, lo, hi), (0.0, -1.0)),),
            theta=0.67,
            material=material,
        )
    raise ValueError(f"unknown scenario '{name}'")


SCENARIO_NAMES = ("carrier", "cantilever", "bridge", "lshape")
