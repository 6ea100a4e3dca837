"""Honeycomb torus carrying qubits on vertices, edges and plaquettes.

Conventions used everywhere in the package:

* Unit cells are labelled ``(i, j)`` modulo ``(L1, L2)``. Each cell owns one
  plaquette ``p(i, j)``, a red vertex ``A(i, j)`` and an orange vertex ``B(i, j)``.
* The three edges of a cell all start at ``A(i, j)``::

      e0 = A(i, j) - B(i, j)
      e1 = A(i, j) - B(i, j-1)
      e2 = A(i, j) - B(i-1, j)

* The ring of ``p(i, j)`` read counterclockwise is
  ``A(i,j), B(i-1,j), A(i-1,j), B(i-1,j-1), A(i,j-1), B(i,j-1)``, positions
  ``n = 1..6``. Red vertices sit at odd ``n``. Ring edge ``n`` joins ring
  vertices ``n`` and ``n+1`` (cyclically).
* Planar drawing: plaquette centres at ``i*a1 + j*a2`` with
  ``a1 = (3/2, -sqrt(3)/2)``, ``a2 = (3/2, sqrt(3)/2)`` and unit hexagon side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

from .errors import TooSmall

ROLES = ("vertex", "edge", "plaquette", "grid-helper")
_PREFIX = {"vertex": "v", "edge": "e", "plaquette": "p", "grid-helper": "h"}
_ROLE_OF = {v: k for k, v in _PREFIX.items()}
ROLE_CODE = {r: k for k, r in enumerate(ROLES)}


@dataclass(frozen=True, order=True)
class QubitId:
    role: str
    index: int

    def __post_init__(self):
        if self.role not in _PREFIX:
            raise ValueError(f"unknown role {self.role!r}")

    def __str__(self):
        return f"{_PREFIX[self.role]}{self.index}"

    @classmethod
    def parse(cls, text: str) -> "QubitId":
        return cls(_ROLE_OF[text[0]], int(text[1:]))


def V(k):
    return QubitId("vertex", k)


def E(k):
    return QubitId("edge", k)


def P(k):
    return QubitId("plaquette", k)


@dataclass(frozen=True)
class Plaquette:
    index: int
    cell: tuple
    ring: tuple        # 6 vertex indices, n = 1..6
    ring_edges: tuple  # ring_edges[n-1] joins ring[n-1] and ring[n % 6]
    spokes: tuple      # spokes[n-1] is the third edge at ring[n-1]


@dataclass(frozen=True)
class HoneycombTorus:
    L1: int
    L2: int
    sublattice: tuple          # per vertex: "red" or "orange"
    edges: tuple               # per edge: (vertex, vertex)
    plaquettes: tuple          # Plaquette records
    coloring: dict | None = field(default=None, compare=False)

    @property
    def n_vertices(self):
        return len(self.sublattice)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_plaquettes(self):
        return len(self.plaquettes)

    def cell_index(self, i, j):
        return (i % self.L1) * self.L2 + (j % self.L2)

    def vertex_A(self, i, j):
        return 2 * self.cell_index(i, j)

    def vertex_B(self, i, j):
        return 2 * self.cell_index(i, j) + 1

    def edge(self, i, j, k):
        return 3 * self.cell_index(i, j) + k

    @cached_property
    def vertex_edges(self):
        out = [[] for _ in range(self.n_vertices)]
        for k, (a, b) in enumerate(self.edges):
            out[a].append(k)
            out[b].append(k)
        return tuple(tuple(x) for x in out)

    @cached_property
    def vertex_plaquettes(self):
        out = [[] for _ in range(self.n_vertices)]
        for p in self.plaquettes:
            for v in p.ring:
                out[v].append(p.index)
        return tuple(tuple(x) for x in out)

    @cached_property
    def edge_plaquettes(self):
        out = [[] for _ in range(self.n_edges)]
        for p in self.plaquettes:
            for e in p.ring_edges:
                out[e].append(p.index)
        return tuple(tuple(x) for x in out)

    @cached_property
    def dice_pairs(self):
        """<p,v> incidences as (plaquette, vertex, ring position n)."""
        return tuple((p.index, v, n + 1) for p in self.plaquettes for n, v in enumerate(p.ring))

    @cached_property
    def heavy_hex_pairs(self):
        """<v,e> incidences as (vertex, edge)."""
        return tuple((v, k) for k, ab in enumerate(self.edges) for v in ab)

    def adjacent_plaquettes(self):
        """Pairs (pL, pR, shared edge) with pL < pR."""
        out = []
        for k, ps in enumerate(self.edge_plaquettes):
            a, b = sorted(ps)
            out.append((a, b, k))
        return out

    def vertex_xy(self, v):
        i, j = divmod(v // 2, self.L2)
        cx, cy = _centre(i, j)
        return (cx + 1.0, cy) if v % 2 == 0 else (cx + 2.0, cy)

    def plaquette_xy(self, p):
        return _centre(*self.plaquettes[p].cell)

    def to_dict(self):
        return {
            "L1": self.L1,
            "L2": self.L2,
            "counts": {"vertices": self.n_vertices, "edges": self.n_edges,
                       "plaquettes": self.n_plaquettes},
            "vertices": [{"id": str(V(k)), "sublattice": s} for k, s in enumerate(self.sublattice)],
            "edges": [{"id": str(E(k)), "vertices": [str(V(a)), str(V(b))]}
                      for k, (a, b) in enumerate(self.edges)],
            "plaquettes": [{
                "id": str(P(p.index)), "cell": list(p.cell),
                "ring": [str(V(v)) for v in p.ring],
                "ring_edges": [str(E(e)) for e in p.ring_edges],
                "spokes": [str(E(e)) for e in p.spokes],
                "color": None if self.coloring is None else self.coloring[p.index],
            } for p in self.plaquettes],
            "dice_pairs": [[str(P(p)), str(V(v))] for p, v, _ in self.dice_pairs],
            "heavy_hex_pairs": [[str(V(v)), str(E(e))] for v, e in self.heavy_hex_pairs],
            "coloring": self.coloring is not None,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _centre(i, j):
    s = math.sqrt(3) / 2
    return (1.5 * i + 1.5 * j, -s * i + s * j)


def build_honeycomb_torus(L1: int, L2: int) -> HoneycombTorus:
    if L1 < 2 or L2 < 2:
        raise TooSmall(f"torus must be at least 2x2, got {L1}x{L2}")
    cell = lambda i, j: (i % L1) * L2 + (j % L2)
    A = lambda i, j: 2 * cell(i, j)
    B = lambda i, j: 2 * cell(i, j) + 1

    sub = tuple("red" if k % 2 == 0 else "orange" for k in range(2 * L1 * L2))
    edges = []
    for i in range(L1):
        for j in range(L2):
            edges += [(A(i, j), B(i, j)), (A(i, j), B(i, j - 1)), (A(i, j), B(i - 1, j))]
    eidx = {frozenset(e): k for k, e in enumerate(edges)}
    if len(eidx) != len(edges):
        raise TooSmall("duplicate edges")
    vedges = [[] for _ in sub]
    for k, (a, b) in enumerate(edges):
        vedges[a].append(k)
        vedges[b].append(k)

    plaqs = []
    for i in range(L1):
        for j in range(L2):
            ring = (A(i, j), B(i - 1, j), A(i - 1, j), B(i - 1, j - 1), A(i, j - 1), B(i, j - 1))
            redges = tuple(eidx[frozenset((ring[n], ring[(n + 1) % 6]))] for n in range(6))
            spokes = []
            for n, v in enumerate(ring):
                own = {redges[n], redges[n - 1]}
                (third,) = [e for e in vedges[v] if e not in own]
                spokes.append(third)
            plaqs.append(Plaquette(cell(i, j), (i, j), ring, redges, tuple(spokes)))

    coloring = None
    if L1 % 3 == 0 and L2 % 3 == 0:
        coloring = {cell(i, j): "RGB"[(i + 2 * j) % 3] for i in range(L1) for j in range(L2)}
    return HoneycombTorus(L1, L2, sub, tuple(edges), tuple(plaqs), coloring)


def square_torus_links(L: int):
    """Link qubits of an LxL square torus.

    Returns (stars, plaquettes): per site the 4 incident links, per face the 4
    boundary links. Link 2*(x*L+y) is horizontal from (x,y), +1 is vertical.
    """
    if L < 2:
        raise TooSmall(f"square torus side must be >= 2, got {L}")
    h = lambda x, y: 2 * ((x % L) * L + (y % L))
    w = lambda x, y: h(x, y) + 1
    stars = [(h(x, y), h(x - 1, y), w(x, y), w(x, y - 1)) for x in range(L) for y in range(L)]
    faces = [(h(x, y), h(x, y + 1), w(x, y), w(x + 1, y)) for x in range(L) for y in range(L)]
    return stars, faces


def H(k):
    return QubitId("grid-helper", k)


@dataclass(frozen=True)
class SquareGridEmbedding:
    """Placement of every physical qubit on a periodic square grid.

    The grid is the plane modulo the lattice spanned by ``(height, shift)`` and
    ``(0, width)``: leaving row ``height - 1`` downward re-enters at row 0 with
    the column moved by ``-shift``. Each honeycomb cell takes 8 grid cells:
    two vertices, three edges, one plaquette and two helpers. Physical qubits
    are named by the logical content they hold at the end of the grid
    schedule, which is why a plaquette sits in a helper slot of its face.
    """

    height: int
    width: int
    shift: int
    position: dict                 # QubitId -> (row, col)
    slots: dict = field(compare=False)  # plaquette -> {"C", "H1", "H3"} cells

    @cached_property
    def occupant(self):
        return {rc: q for q, rc in self.position.items()}

    @property
    def helpers(self):
        return sorted(q for q in self.position if q.role == "grid-helper")

    def canon(self, row, col):
        k, row = divmod(row, self.height)
        return row, (col - k * self.shift) % self.width

    def at(self, row, col):
        return self.occupant[self.canon(row, col)]

    def adjacent(self, a, b):
        (r, c), target = self.position[a], self.position[b]
        return any(self.canon(r + dr, c + dc) == target
                   for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)))

    def to_dict(self):
        return {"height": self.height, "width": self.width, "shift": self.shift,
                "cells": {str(q): list(rc) for q, rc in sorted(self.position.items())}}


def _grid_period(L1, L2):
    # Hermite normal form of the lattice spanned by (2L1, -2L1), (2L2, 2L2)
    a = math.gcd(2 * L1, 2 * L2)
    x, y = _ext_gcd(2 * L1, 2 * L2)
    b0 = -2 * L1 * x + 2 * L2 * y
    width = 8 * L1 * L2 // a
    return a, width, b0 % width


def _ext_gcd(a, b):
    if b == 0:
        return 1, 0
    x, y = _ext_gcd(b, a % b)
    return y, x - (a // b) * y


def build_square_grid_embedding(lat: HoneycombTorus) -> SquareGridEmbedding:
    """Brick-wall layout: plaquette (i, j) owns the 3x5 box at rows 2r..2r+2,
    columns 2c..2c+4 with r = i + j, c = j - i.

    The box corners and top/bottom middles are the ring vertices, the cells
    between them are ring edges, and the middle row holds the plaquette
    centre C flanked by helper slots H1 (left) and H3 (right).
    """
    height, width, shift = _grid_period(lat.L1, lat.L2)
    emb = SquareGridEmbedding(height, width, shift, {}, {})
    canon = emb.canon
    pos, slots = {}, {}

    def put(q, rc):
        rc = canon(*rc)
        if pos.setdefault(q, rc) != rc:
            raise ValueError(f"{q} placed twice")

    for p in lat.plaquettes:
        i, j = p.cell
        r, c = i + j, j - i
        top, mid, bot = 2 * r, 2 * r + 1, 2 * r + 2
        corners = [(bot, 2 * c + 2), (bot, 2 * c + 4), (top, 2 * c + 4),
                   (top, 2 * c + 2), (top, 2 * c), (bot, 2 * c)]
        for n in range(6):
            put(V(p.ring[n]), corners[n])
            (r1, c1), (r2, c2) = corners[n], corners[(n + 1) % 6]
            put(E(p.ring_edges[n]), ((r1 + r2) // 2, (c1 + c2) // 2))
        cells = {"C": canon(mid, 2 * c + 2), "H1": canon(mid, 2 * c + 1), "H3": canon(mid, 2 * c + 3)}
        slots[p.index] = cells
        # after its tour the plaquette ends in H3; the helpers end in H1 and C
        put(P(p.index), cells["H3"])
        put(H(2 * p.index), cells["H1"])
        put(H(2 * p.index + 1), cells["C"])

    if len(set(pos.values())) != len(pos) or len(pos) != height * width:
        raise ValueError("grid placement is not a bijection")
    return SquareGridEmbedding(height, width, shift, pos, slots)
