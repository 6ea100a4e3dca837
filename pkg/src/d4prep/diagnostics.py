"""Entanglement diagnostics on prepared states.

Entropies are in bits, so a quantum dimension d shifts them by log2(d).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .circuit import insert_vertex_z
from .errors import RegionTooLarge
from .lattice import QubitId
from .simulator import Policy, reduced_density_matrix, run

REGION_LIMIT = 14
EIG_CUTOFF = 1e-12


def _ids(region):
    return [q if isinstance(q, QubitId) else QubitId.parse(str(q)) for q in region]


def entropy(state, region, limit=REGION_LIMIT) -> float:
    """Von Neumann entropy of ``region`` in bits.

    For a pure state S(R) = S(complement), so the smaller side is traced.
    """
    region = _ids(region)
    if not region:
        return 0.0
    inside = set(region)
    rest = [q for q in state.qubits if q not in inside]
    side = region if len(region) <= len(rest) else rest
    if len(side) > limit:
        raise RegionTooLarge(f"region of {len(region)} qubits: both sides exceed {limit}")
    if not side:
        return 0.0
    w = np.linalg.eigvalsh(reduced_density_matrix(state, side, limit))
    w = w[w > EIG_CUTOFF]
    return float(-(w * np.log2(w)).sum())


def kitaev_preskill(state, A, B, C, limit=REGION_LIMIT):
    """gamma = -(S_A + S_B + S_C - S_AB - S_BC - S_CA + S_ABC), in bits."""
    A, B, C = _ids(A), _ids(B), _ids(C)
    if set(A) & set(B) or set(B) & set(C) or set(A) & set(C):
        raise ValueError("KP regions must be pairwise disjoint")
    S = {name: entropy(state, r, limit) for name, r in
         (("A", A), ("B", B), ("C", C), ("AB", A + B), ("BC", B + C), ("CA", C + A), ("ABC", A + B + C))}
    topo = S["A"] + S["B"] + S["C"] - S["AB"] - S["BC"] - S["CA"] + S["ABC"]
    return {"gamma": -topo, "entropies": S, "sizes": {"A": len(A), "B": len(B), "C": len(C)}}


def anyon_entropy_shift(circuit, baseline_record, vertices, region, *, baseline_state=None, **run_kw):
    """S(region) with vertex Zs inserted minus S(region) at baseline.

    The modified circuit replays the baseline outcomes, so both states carry
    the same abelian charge pattern. Raises ImpossibleOutcome if the forced
    record has zero probability under the modified circuit.
    """
    if baseline_state is None:
        baseline_state, _ = run(circuit, Policy.replay(baseline_record), **run_kw)
    variant, _ = run(insert_vertex_z(circuit, vertices), Policy.replay(baseline_record), **run_kw)
    s0, s1 = entropy(baseline_state, region), entropy(variant, region)
    return {"vertices": sorted(vertices), "region": [str(q) for q in _ids(region)],
            "baseline_bits": s0, "variant_bits": s1, "delta_bits": s1 - s0}


def locate_excitations(state, family):
    """Raw expectation of each A-type member, keyed by plaquette name."""
    out = {}
    for name, expr, x in family.members:
        if name.startswith("A"):
            out[name] = float((state.expectation(expr) * x).real)
    return out


def entropy_table(state, regions: dict):
    return [{"region": name, "size": len(r), "entropy_bits": entropy(state, r)} for name, r in regions.items()]


def to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["region", "size", "entropy_bits"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({"region": r["region"], "size": r["size"], "entropy_bits": f"{r['entropy_bits']:.12f}"})
    return buf.getvalue()


def load_regions():
    """Region choices per lattice size, shipped as package data."""
    with resources.files("d4prep.data").joinpath("regions.json").open() as fh:
        return json.load(fh)


def partition_qubits(part, lat=None, L=None):
    """Turn one region entry of the data file into (A, B, C) qubit lists."""
    from .lattice import E, square_torus_links
    used, out = set(), []
    for key in ("A", "B", "C"):
        piece = []
        for item in part[key]:
            if part["kind"] == "star-links":
                stars, _ = square_torus_links(L)
                x, y = item
                links = stars[(x % L) * L + (y % L)]
            elif part["kind"] == "plaquette-rings":
                links = lat.plaquettes[item].ring_edges
            else:
                raise ValueError(f"unknown region kind {part['kind']!r}")
            for k in links:
                if k not in used:
                    used.add(k)
                    piece.append(E(k))
        out.append(piece)
    return out


def tee_report(state, partitions, lat=None, L=None, target=None):
    rows = []
    for part in partitions:
        A, B, C = partition_qubits(part, lat, L)
        r = kitaev_preskill(state, A, B, C)
        row = {"partition": part["name"], "kind": part["kind"], "gamma_bits": r["gamma"],
               "sizes": r["sizes"], "entropies": r["entropies"]}
        if target is not None:
            row["deviation_bits"] = r["gamma"] - target
        rows.append(row)
    return {"target_bits": target, "rows": rows}


def vertex_clusters(circuit, record, lat, family, vertices, threshold=0.9):
    """Plaquettes whose <A_p> drops below ``threshold`` with Z on ``vertices``."""
    st, _ = run(insert_vertex_z(circuit, vertices), Policy.replay(record))
    vals = locate_excitations(st, family)
    return sorted(int(name[3:-1]) for name, x in vals.items() if x < threshold), vals


def separated_pair(circuit, record, lat, family):
    """First vertex pair whose single-vertex excitation sets are disjoint,
    with the excitation set of each vertex; None if no such pair exists."""
    single = {v: vertex_clusters(circuit, record, lat, family, [v])[0] for v in range(lat.n_vertices)}
    for v1 in range(lat.n_vertices):
        for v2 in range(v1 + 1, lat.n_vertices):
            if not set(single[v1]) & set(single[v2]):
                return v1, v2, single[v1], single[v2]
    return None


def degeneracy(family, qubits, tol=1e-8):
    """Dimension of the common +1 eigenspace of every member of ``family``.

    Dense, so only for small supports (the (2,2) torus has 12 edge qubits).
    Diagonal members first cut the space down to the basis states they fix.
    """
    from .stabilizers import pauli_dense
    qubits = list(qubits)
    dim = 2 ** len(qubits)
    keep = np.ones(dim, dtype=bool)
    rest = []
    for _, expr, x in family.members:
        op = pauli_dense(expr.to_pauli_sum(), qubits) * x
        d = np.diag(op)
        if np.allclose(op, np.diag(d)):
            keep &= np.abs(d - 1) < tol
        else:
            rest.append(op)
    # members are Hermitian unitaries, so a unit vector fixed by the compressed
    # block P O P is fixed by O itself; the restriction loses nothing
    idx = np.flatnonzero(keep)
    acc = np.zeros((len(idx), len(idx)), dtype=complex)
    for op in rest:
        acc += np.eye(len(idx)) - op[np.ix_(idx, idx)]
    w = np.linalg.eigvalsh((acc + acc.conj().T) / 2)
    return int(np.sum(np.abs(w) < tol))


def ring_region(lat, plaquettes):
    from .lattice import E
    return sorted({E(e) for p in plaquettes for e in lat.plaquettes[p].ring_edges})


def shift_experiment(lat, circuit, state, record, family, vertices=None):
    """Entropy shift for a separated vertex-Z pair, with both controls.

    The 'one' region holds the ring edges around the first vertex's
    excitations, 'both' adds the second vertex's, and 'empty' inserts no Z.
    """
    if vertices is None:
        found = separated_pair(circuit, record, lat, family)
        if found is None:
            return {"pair": None, "why": "no vertex pair with disjoint excitation sets on this torus"}
        v1, v2, a, b = found
    else:
        v1, v2 = vertices
        a = vertex_clusters(circuit, record, lat, family, [v1])[0]
        b = vertex_clusters(circuit, record, lat, family, [v2])[0]
    one, both = ring_region(lat, a), ring_region(lat, a + b)
    out = {"pair": [v1, v2], "clusters": [a, b]}
    out["one"] = anyon_entropy_shift(circuit, record, [v1, v2], one, baseline_state=state)
    out["both"] = anyon_entropy_shift(circuit, record, [v1, v2], both, baseline_state=state)
    out["empty"] = anyon_entropy_shift(circuit, record, [], one, baseline_state=state)
    return out
