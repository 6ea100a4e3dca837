"""Layered circuit IR and the protocol builders.

A circuit is a list of layers. Every layer holds gates with pairwise disjoint
supports and a free-form tag naming the protocol stage it belongs to.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace

from .errors import NeedsColoring, NotGridLocal, TooSmall, WrongProtocol
from .lattice import E, P, V, QubitId, HoneycombTorus, SquareGridEmbedding, square_torus_links

ARITY = {"H": 1, "X": 1, "Y": 1, "Z": 1, "S": 1, "Tplus": 1, "Tminus": 1,
         "CZ": 2, "SWAP": 2, "CCZ": 3, "MeasX": 1}
TWO_BODY = ("CZ", "SWAP")


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple
    pauli: str | None = None   # only for MeasPauli

    def __post_init__(self):
        if self.kind == "MeasPauli":
            if self.pauli is None or len(self.pauli) != len(self.qubits):
                raise ValueError("MeasPauli needs one Pauli letter per qubit")
        elif ARITY.get(self.kind) != len(self.qubits):
            raise ValueError(f"{self.kind} acts on {ARITY.get(self.kind)} qubits, got {len(self.qubits)}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"repeated qubit in {self.kind}")

    def to_dict(self):
        d = {"kind": self.kind, "qubits": [str(q) for q in self.qubits]}
        if self.pauli:
            d["pauli"] = self.pauli
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(QubitId.parse(q) for q in d["qubits"]), d.get("pauli"))


@dataclass(frozen=True)
class Layer:
    gates: tuple
    tag: str = ""

    def __post_init__(self):
        seen = set()
        for g in self.gates:
            for q in g.qubits:
                if q in seen:
                    raise ValueError(f"qubit {q} used twice in layer {self.tag!r}")
                seen.add(q)

    @property
    def support(self):
        return {q for g in self.gates for q in g.qubits}


@dataclass(frozen=True)
class Circuit:
    layers: tuple
    protocol: str
    lattice: object = field(default=None, compare=False)
    meta: dict = field(default_factory=dict, compare=False)

    def gates(self):
        for layer in self.layers:
            yield from layer.gates

    def qubits(self):
        return sorted({q for g in self.gates() for q in g.qubits})

    def measured(self):
        return sorted(q for g in self.gates() if g.kind == "MeasX" for q in g.qubits)

    def count(self, kind):
        return sum(1 for g in self.gates() if g.kind == kind)

    def to_dict(self):
        meta = {k: v for k, v in self.meta.items() if _jsonable(v)}
        return {"protocol": self.protocol, "meta": meta,
                "layers": [{"tag": l.tag, "gates": [g.to_dict() for g in l.gates]} for l in self.layers]}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        layers = tuple(Layer(tuple(Gate.from_dict(g) for g in l["gates"]), l["tag"]) for l in d["layers"])
        return cls(layers, d["protocol"], None, dict(d.get("meta", {})))


def _jsonable(v):
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def schedule_greedy(gates, tag=""):
    """Pack gates into disjoint layers, first fit, in the order given.

    Callers pass gates sorted by an intended colour so that first fit reaches
    the optimal layer count; ties are broken by the lowest QubitId.
    """
    layers, busy = [], []
    for g in gates:
        for k, b in enumerate(busy):
            if b.isdisjoint(g.qubits):
                layers[k].append(g)
                b.update(g.qubits)
                break
        else:
            layers.append([g])
            busy.append(set(g.qubits))
    return [Layer(tuple(sorted(l, key=lambda g: g.qubits)), tag) for l in layers]


def single_layer(kind, qubits, tag):
    return Layer(tuple(Gate(kind, (q,)) for q in sorted(qubits)), tag)


def two_body_depth(c: Circuit) -> int:
    return sum(1 for l in c.layers if any(g.kind in TWO_BODY for g in l.gates))


def ccz_depth(c: Circuit) -> int:
    return sum(1 for l in c.layers if any(g.kind == "CCZ" for g in l.gates))


# -- builders ---------------------------------------------------------------

def build_toric_code_protocol(L: int) -> Circuit:
    stars, faces = square_torus_links(L)
    layers = [Layer((Gate("MeasPauli", tuple(E(k) for k in s), "ZZZZ"),), "star")
              for s in stars]
    return Circuit(tuple(layers), "toric", None,
                   {"L": L, "n_links": 2 * L * L, "stars": stars, "faces": faces})


def _dice_gates(lat):
    # colour of <p, v> = ring position n; each colour class is a perfect matching of P
    order = sorted(lat.dice_pairs, key=lambda t: (t[2], t[0]))
    return [Gate("CZ", (P(p), V(v))) for p, v, _ in order]


# edge slot k of cell c joins A(c) and some B. Colour (A, e_k) with k and
# (B, e_k) with k+2 mod 3; each colour is a matching covering every vertex once.
def _heavy_hex_gates(lat):
    tagged = []
    for e, (a, b) in enumerate(lat.edges):
        k = e % 3
        tagged.append((k, Gate("CZ", (V(a), E(e)))))
        tagged.append(((k + 2) % 3, Gate("CZ", (V(b), E(e)))))
    tagged.sort(key=lambda t: (t[0], t[1].qubits))
    return [g for _, g in tagged]


def rotation_kinds(lat, swap_signs=False):
    """Phase gate per vertex: Tplus on red and Tminus on orange by default."""
    red, orange = ("Tminus", "Tplus") if swap_signs else ("Tplus", "Tminus")
    return {v: (red if s == "red" else orange) for v, s in enumerate(lat.sublattice)}


def build_d4_protocol(lat: HoneycombTorus, swap_signs: bool = False, edge_frame: bool = True) -> Circuit:
    verts = [V(v) for v in range(lat.n_vertices)]
    kinds = rotation_kinds(lat, swap_signs)
    layers = schedule_greedy(_dice_gates(lat), "dice")
    layers.append(single_layer("H", verts, "rotation-H"))
    layers.append(Layer(tuple(Gate(kinds[v], (V(v),)) for v in range(lat.n_vertices)), "rotation-T"))
    layers += schedule_greedy(_heavy_hex_gates(lat), "heavy-hex")
    layers.append(single_layer("MeasX", [P(p) for p in range(lat.n_plaquettes)] + verts, "measure"))
    if edge_frame:
        layers.append(single_layer("H", [E(e) for e in range(lat.n_edges)], "edge-frame"))
    return Circuit(tuple(layers), "d4", lat, {"L1": lat.L1, "L2": lat.L2, "swap_signs": swap_signs,
                                             "rotation_hosts": {str(V(v)): str(V(v)) for v in range(lat.n_vertices)}})


# Two-body steps of the grid schedule, in cell-slot names. Around every
# vertical edge cell S sit its top vertex T, bottom vertex B, the right helper
# slot HL of the face on its left and the left helper slot HR of the face on
# its right. Each plaquette tours C -> H3 -> C -> H1 -> C -> H3 while the two
# ends of every vertical edge take turns stepping into S.
GRID_STEPS = (
    ("SWAP", ("T", "S"), ("C", "H3")),
    ("CZ", ("S", "HL")),
    ("SWAP", ("H3", "C")),
    ("CZ", ("C", "TM")),
    ("SWAP", ("C", "H1")),
    ("CZ", ("S", "HR")),
    ("SWAP", ("S", "T")),
    ("SWAP", ("B", "S")),
    ("CZ", ("S", "HR")),
    ("SWAP", ("H1", "C")),
    ("CZ", ("C", "BM")),
    ("SWAP", ("C", "H3")),
    ("CZ", ("S", "HL")),
    ("SWAP", ("S", "B")),
)


def _grid_slots(lat, emb):
    """Cell of every named slot, per plaquette (face slots) and per corridor."""
    faces, corridors = [], []
    for p in lat.plaquettes:
        pos = emb.position
        s = dict(emb.slots[p.index])
        s["TM"], s["BM"] = pos[V(p.ring[3])], pos[V(p.ring[0])]
        faces.append(s)
        # ring edge n=2 is the vertical edge on the right of the face
        r, c = pos[E(p.ring_edges[1])]
        corridors.append({"S": (r, c), "T": pos[V(p.ring[2])], "B": pos[V(p.ring[1])],
                          "HL": s["H3"], "HR": emb.canon(r, c + 1)})
    return faces, corridors


def build_d4_grid_protocol(lat: HoneycombTorus, emb: SquareGridEmbedding, native: bool = False,
                           swap_signs: bool = False, edge_frame: bool = True) -> Circuit:
    """D4 preparation restricted to nearest-neighbour gates on the grid.

    Physical qubits are the grid cells, named by their final content. The
    dice entangler is routed with SWAPs (see GRID_STEPS); the rotations and
    heavy-hex entangler then run with every vertex back at its home cell.
    """
    faces, corridors = _grid_slots(lat, emb)
    content = {rc: q for q, rc in emb.position.items()}
    # replay the tour backwards to find what each cell holds at the start
    for step in reversed(GRID_STEPS):
        if step[0] == "SWAP":
            for pair in step[1:]:
                groups = faces if pair[0] in faces[0] and pair[1] in faces[0] else corridors
                for g in groups:
                    a, b = g[pair[0]], g[pair[1]]
                    content[a], content[b] = content[b], content[a]
    physical = {rc: q for q, rc in emb.position.items()}
    layers, done = [], set()
    for step in GRID_STEPS:
        gates = []
        for pair in step[1:]:
            groups = faces if pair[0] in faces[0] and pair[1] in faces[0] else corridors
            for g in groups:
                a, b = g[pair[0]], g[pair[1]]
                gates.append(Gate(step[0], tuple(sorted((physical[a], physical[b])))))
                if step[0] == "SWAP":
                    content[a], content[b] = content[b], content[a]
                else:
                    pv = {content[a], content[b]}
                    if pv in done or {q.role for q in pv} != {"plaquette", "vertex"}:
                        raise NotGridLocal(f"grid step pairs {sorted(pv)}")
                    done.add(frozenset(pv))
        layers.append(Layer(tuple(sorted(gates, key=lambda g: g.qubits)), "dice-grid"))
    want = {frozenset((P(p), V(v))) for p, v, _ in lat.dice_pairs}
    if done != want or any(content[rc] != q for q, rc in emb.position.items()):
        raise NotGridLocal("grid schedule does not realise the dice entangler")

    verts = [V(v) for v in range(lat.n_vertices)]
    kinds = rotation_kinds(lat, swap_signs)
    layers.append(single_layer("H", verts, "rotation-H"))
    layers.append(Layer(tuple(Gate(kinds[v], (V(v),)) for v in range(lat.n_vertices)), "rotation-T"))
    layers += schedule_greedy(_heavy_hex_gates(lat), "heavy-hex")
    measured = [P(p) for p in range(lat.n_plaquettes)] + verts + emb.helpers
    layers.append(single_layer("MeasX", measured, "measure"))
    if edge_frame:
        layers.append(single_layer("H", [E(e) for e in range(lat.n_edges)], "edge-frame"))
    c = Circuit(tuple(layers), "d4-grid", lat,
                {"L1": lat.L1, "L2": lat.L2, "swap_signs": swap_signs, "embedding": emb.to_dict(),
                 "rotation_hosts": {str(V(v)): str(V(v)) for v in range(lat.n_vertices)}})
    check_grid_local(c, emb)
    if native:
        c = decompose_swaps(c)
        c = replace(c, protocol="d4-grid-native")
        check_grid_local(c, emb)
    return c


def _vertex_triples(lat):
    return [tuple(sorted(ps)) for ps in lat.vertex_plaquettes]


def q8_triangles(lat, orientation="both"):
    """Same-colour plaquette triangles used by the Q8 route.

    Same-colour plaquettes form a coarser triangular lattice. ``up`` and
    ``down`` pick one of the two triangle orientations; ``both`` takes all.
    """
    if lat.coloring is None:
        raise NeedsColoring("Q8 route needs 3 | L1 and 3 | L2")
    L1, L2 = lat.L1, lat.L2
    c = lat.cell_index
    # (1,1) and (2,-1) join same-colour cells under (i + 2j) mod 3
    up = [(c(i, j), c(i + 1, j + 1), c(i + 2, j - 1)) for i in range(L1) for j in range(L2)]
    down = [(c(i, j), c(i + 1, j + 1), c(i - 1, j + 2)) for i in range(L1) for j in range(L2)]
    pick = {"up": up, "down": down, "both": up + down}[orientation]
    # small tori can wrap several triangles onto one triple; CCZ^2 = 1
    counts = Counter(tuple(sorted(t)) for t in pick)
    return sorted(t for t, k in counts.items() if k % 2)


def _ccz_layers(triples, tag):
    # first fit over sorted triples; CCZ gates commute so order is free
    gates = [Gate("CCZ", tuple(P(p) for p in t)) for t in sorted(triples)]
    return schedule_greedy(gates, tag)


def _gauging_gates(lat):
    # CZ from p to its six spokes; colour by ring position n
    tagged = sorted(((n, p.index, e) for p in lat.plaquettes for n, e in enumerate(p.spokes)))
    return [Gate("CZ", (P(p), E(e))) for _, p, e in tagged]


def build_d4_spt_route(lat: HoneycombTorus) -> Circuit:
    layers = _ccz_layers(_vertex_triples(lat), "hypergraph")
    layers += schedule_greedy(_gauging_gates(lat), "gauging")
    layers.append(single_layer("MeasX", [P(p) for p in range(lat.n_plaquettes)], "measure"))
    layers.append(single_layer("H", [E(e) for e in range(lat.n_edges)], "edge-frame"))
    return Circuit(tuple(layers), "d4-spt", lat, {"L1": lat.L1, "L2": lat.L2})


def build_q8_spt_route(lat: HoneycombTorus, orientation: str = "both") -> Circuit:
    tri = q8_triangles(lat, orientation)
    layers = _ccz_layers(_vertex_triples(lat) + tri, "hypergraph")
    layers += schedule_greedy(_gauging_gates(lat), "gauging")
    layers.append(single_layer("MeasX", [P(p) for p in range(lat.n_plaquettes)], "measure"))
    layers.append(single_layer("H", [E(e) for e in range(lat.n_edges)], "edge-frame"))
    return Circuit(tuple(layers), "q8-spt", lat,
                   {"L1": lat.L1, "L2": lat.L2, "orientation": orientation, "triangles": tri})


def insert_vertex_z(c: Circuit, vertices) -> Circuit:
    vertices = sorted(set(vertices))
    if not vertices:
        return c
    hosts = c.meta.get("rotation_hosts")
    idx = next((k for k, l in enumerate(c.layers) if l.tag == "rotation-H"), None)
    if hosts is None or idx is None:
        raise WrongProtocol(f"protocol {c.protocol!r} has no rotation layer")
    qs = [QubitId.parse(hosts[str(V(v))]) for v in vertices]
    layer = single_layer("Z", qs, "vertex-z")
    meta = dict(c.meta, inserted_z=[str(V(v)) for v in vertices])
    return replace(c, layers=c.layers[:idx] + (layer,) + c.layers[idx:], meta=meta)


# -- SWAP decomposition -----------------------------------------------------

def decompose_swaps(c: Circuit, cancel: bool = True) -> Circuit:
    """Replace every SWAP layer by H, CZ, H, CZ, H, CZ (in time order).

    As an operator this is CZ (HH) CZ (HH) CZ (HH), which equals SWAP. The
    final CZ is then cancelled against a later CZ on the same pair when no
    other gate touches either qubit in between.
    """
    out = []
    for layer in c.layers:
        swaps = [g for g in layer.gates if g.kind == "SWAP"]
        if not swaps:
            out.append(layer)
            continue
        rest = tuple(g for g in layer.gates if g.kind != "SWAP")
        if rest:
            out.append(Layer(rest, layer.tag))
        hh = tuple(Gate("H", (q,)) for g in swaps for q in g.qubits)
        cz = tuple(Gate("CZ", g.qubits) for g in swaps)
        for _ in range(3):
            out.append(Layer(hh, layer.tag + ":swap-H"))
            out.append(Layer(cz, layer.tag + ":swap-CZ"))
    if cancel:
        out = _cancel_cz_pairs(out)
    return replace(c, layers=tuple(out), meta=dict(c.meta, native=True))


def _cancel_cz_pairs(layers):
    gates = [list(l.gates) for l in layers]
    dead = set()
    for t, lg in enumerate(gates):
        for g in lg:
            if g.kind != "CZ" or (t, g) in dead:
                continue
            a, b = g.qubits
            for u in range(t + 1, len(gates)):
                hit = [h for h in gates[u] if (a in h.qubits or b in h.qubits) and (u, h) not in dead]
                if not hit:
                    continue
                h = hit[0]
                if len(hit) == 1 and h.kind == "CZ" and set(h.qubits) == {a, b}:
                    dead.add((t, g))
                    dead.add((u, h))
                break
    out = []
    for t, lg in enumerate(gates):
        keep = tuple(g for g in lg if (t, g) not in dead)
        if keep:
            out.append(Layer(keep, layers[t].tag))
    return out


def check_grid_local(c: Circuit, emb):
    """Raise NotGridLocal unless every two-qubit gate joins neighbouring cells."""
    for layer in c.layers:
        for g in layer.gates:
            if len(g.qubits) < 2:
                continue
            if g.kind not in TWO_BODY:
                raise NotGridLocal(f"{g.kind} is not a two-body grid gate")
            if not emb.adjacent(*g.qubits):
                raise NotGridLocal(f"{g.kind} on {[str(q) for q in g.qubits]} is not grid-adjacent")


STAGE_TAGS = {"dice-cluster": ("dice",), "color-code": ("dice",),
              "rotated": ("dice", "rotation-H", "rotation-T"),
              "gauged": ("dice", "rotation-H", "rotation-T", "heavy-hex")}


def stage_circuit(c: Circuit, stage: str) -> Circuit:
    """Prefix of the native D4 circuit that prepares an intermediate stage.

    Every stage after the dice cluster measures the plaquettes right after the
    dice layers; nothing later touches them, so this equals measuring at the end.
    """
    if c.protocol != "d4":
        raise WrongProtocol(f"stages exist for the native d4 protocol, not {c.protocol!r}")
    tags = STAGE_TAGS[stage]
    layers = [l for l in c.layers if l.tag == "dice"]
    if stage != "dice-cluster":
        layers.append(single_layer("MeasX", [P(p) for p in range(c.lattice.n_plaquettes)], "measure-p"))
    layers += [l for l in c.layers if l.tag in tags and l.tag != "dice"]
    return replace(c, layers=tuple(layers), protocol=f"d4-stage-{stage}")
