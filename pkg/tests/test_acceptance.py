"""Acceptance checks, one test per criterion.

Each test prints ``criterion N: PASS|FAIL|SKIP  detail`` (also repeated in the
terminal summary). Criteria that the implementation does not meet fail here
on purpose; the README lists them with the measured values.
"""

import os
import sys
import time

import numpy as np
import pytest

from d4prep import anyons as an
from d4prep import diagnostics as dg
from d4prep.circuit import (build_d4_grid_protocol, build_d4_protocol, build_d4_spt_route, build_q8_spt_route,
                            build_toric_code_protocol, stage_circuit, two_body_depth)
from d4prep.errors import NeedsColoring
from d4prep.lattice import P, V, build_honeycomb_torus, build_square_grid_embedding
from d4prep.simulator import MeasurementRecord, Policy, run
from d4prep.stabilizers import (OperatorExpr, color_code_family, commutes, compare_exact, d4_family, derive_d4_chain,
                                dice_cluster_family, exchange_identity, gauged_family, check_identity, q8_family,
                                rotated_family, toric_family, verify)

SEEDS = range(100)
TOL = 1e-9


def _report(acceptance, n, ok, detail, status=None):
    status = status or ("PASS" if ok else "FAIL")
    acceptance.append((n, status, detail))
    sys.__stdout__.write(f"\ncriterion {n}: {status}  {detail}\n")
    sys.__stdout__.flush()
    assert ok, detail


def test_criterion_01_depths(acceptance):
    t = time.perf_counter()
    lat = build_honeycomb_torus(2, 2)
    emb = build_square_grid_embedding(lat)
    native = two_body_depth(build_d4_protocol(lat))
    grid = two_body_depth(build_d4_grid_protocol(lat, emb))
    grid_native = two_body_depth(build_d4_grid_protocol(lat, emb, native=True))
    dt = time.perf_counter() - t
    got, want = (native, grid, grid_native), (9, 11, 13)
    detail = f"native/grid/grid-native = {got}, target {want}, {dt:.2f}s"
    _report(acceptance, 1, got == want and dt < 1.0, detail)


def test_criterion_02_toric(acceptance):
    t = time.perf_counter()
    bad = []
    for L in (2, 3):
        c = build_toric_code_protocol(L)
        for seed in SEEDS:
            st, rec = run(c, seed=seed)
            rep = verify(st, toric_family(L, rec), TOL)
            if not rep["ok"] or rec.product() != 1:
                bad.append((L, seed))
    dt = time.perf_counter() - t
    detail = f"L=2,3 x {len(SEEDS)} seeds, {len(bad)} failing, {dt:.1f}s"
    _report(acceptance, 2, not bad and dt < 10, detail)


def test_criterion_03_d4_family_and_stages(acceptance):
    t = time.perf_counter()
    lat = build_honeycomb_torus(2, 2)
    c = build_d4_protocol(lat)
    stages = {"dice-cluster": lambda r: dice_cluster_family(lat), "color-code": lambda r: color_code_family(lat, r),
              "rotated": lambda r: rotated_family(lat, r), "gauged": lambda r: gauged_family(lat, r)}
    names = {"dice-cluster": "dice", "color-code": "color", "rotated": "rotated", "gauged": "gauged"}
    bad = []
    for seed in SEEDS:
        st, rec = run(c, seed=seed)
        if not verify(st, d4_family(lat, rec), TOL)["ok"]:  # d4_family runs the derivation
            bad.append(("final", seed))
        for stage, fam in stages.items():
            s_st, s_rec = run(stage_circuit(c, stage), seed=seed)
            f = fam(s_rec)
            # stage records stop before the vertices are measured; only the
            # final step of the chain reads those signs
            chain = derive_d4_chain(lat, MeasurementRecord({**rec.outcomes, **s_rec.outcomes}))
            if not verify(s_st, f, TOL)["ok"] or compare_exact(f, chain[names[stage]]):
                bad.append((stage, seed))
            if stage == "color-code":
                for pl in lat.plaquettes:
                    y = OperatorExpr.product([("Y", V(v)) for v in pl.ring])
                    if abs(s_st.expectation(y) * s_rec.outcomes[str(P(pl.index))] + 1) > TOL:
                        bad.append(("AB=-xY", seed))
    dt = time.perf_counter() - t
    detail = f"(2,2) x {len(SEEDS)} seeds, final + 4 stages, {len(bad)} failing, {dt:.0f}s"
    _report(acceptance, 3, not bad and dt < 300, detail)


def test_criterion_04_spt_route(acceptance):
    lat = build_honeycomb_torus(2, 2)
    c = build_d4_spt_route(lat)
    bad = []
    for seed in SEEDS:
        st, rec = run(c, seed=seed)
        if not verify(st, d4_family(lat, rec, vertex_signs=False), TOL)["ok"]:
            bad.append(seed)
    _report(acceptance, 4, not bad, f"(2,2) x {len(SEEDS)} seeds, {len(bad)} failing")


def test_criterion_05_grid_equivalence(acceptance):
    lat = build_honeycomb_torus(2, 2)
    emb = build_square_grid_embedding(lat)
    c = build_d4_protocol(lat)
    bad, runs = [], 0
    for native, seeds in ((False, range(5)), (True, range(2))):
        g = build_d4_grid_protocol(lat, emb, native=native)
        for seed in seeds:
            _, rec = run(c, seed=seed)
            st, grec = run(g, Policy.replay(rec))
            runs += 1
            matched = all(grec.outcomes[k] == v for k, v in rec.outcomes.items())
            if not matched or not verify(st, d4_family(lat, rec, derive=False), TOL)["ok"]:
                bad.append((g.protocol, seed))
    _report(acceptance, 5, not bad, f"{runs} replayed grid runs, {len(bad)} failing")


def test_criterion_06_operator_identities(acceptance):
    lat = build_honeycomb_torus(2, 2)
    pairs = sorted({(a, b) for a, b, _ in lat.adjacent_plaquettes()})
    bad = [pr for pr in pairs if not check_identity(*exchange_identity(lat, *pr), tol=1e-12)]
    _, rec = run(build_d4_protocol(lat), seed=0)
    fam = d4_family(lat, rec, derive=False)
    nc = sum(1 for n, b, _ in fam.members if n.startswith("B")
             for _, o, _ in fam.members if not commutes(b, o, tol=1e-12))
    _report(acceptance, 6, not bad and nc == 0,
            f"{len(pairs)} adjacent pairs, {len(bad)} identity failures, {nc} non-commuting B pairs")


def test_criterion_07_anyons(acceptance):
    t = time.perf_counter()
    out = {}
    for name, count in (("D4", 22), ("Q8", 22), ("Z2", 4)):
        qd = an.QuantumDouble(an.make_group(name))
        sum_d2 = sum(a.dim ** 2 for a in qd.anyons)
        found = an.find_lagrangian_subgroups(qd)
        ok = (len(qd.anyons) == count and sum_d2 == len(qd.g.labels) ** 2 and an.check_modular(qd)["ok"]
              and bool(found) and all(an.is_lagrangian(qd, s)[0] for s in found))
        if name == "D4":
            sub = an.bilayer_subset(qd)
            ok = ok and an.bilayer_check(qd)["ok"] and an.is_lagrangian(qd, sub)[0] and sub in found
        out[name] = (len(qd.anyons), sum_d2, ok)
    dt = time.perf_counter() - t
    _report(acceptance, 7, all(v[2] for v in out.values()) and dt < 10,
            f"(anyons, sum d^2, ok) = {out}, {dt:.2f}s")


def test_criterion_08_entropy_shift(acceptance):
    lat22 = build_honeycomb_torus(2, 2)
    c22 = build_d4_protocol(lat22)
    _, rec22 = run(c22, seed=0)
    pair22 = dg.separated_pair(c22, rec22, lat22, d4_family(lat22, rec22, derive=False))
    lat = build_honeycomb_torus(2, 3)
    c = build_d4_protocol(lat)
    st, rec = run(c, seed=0)
    out = dg.shift_experiment(lat, c, st, rec, d4_family(lat, rec, derive=False))
    one, both, empty = (out[k]["delta_bits"] for k in ("one", "both", "empty"))
    ok = (pair22 is not None and abs(one - 1.0) <= 0.02 and abs(both) <= 0.02 and abs(empty) <= 0.02)
    detail = (f"(2,2): {'no separated pair' if pair22 is None else pair22[:2]}; (2,3) pair {out['pair']}: "
              f"one={one:+.3f} both={both:+.3f} empty={empty:+.3f} bits, target one=+1.00")
    _report(acceptance, 8, ok, detail)


def test_criterion_09_tee(acceptance):
    regions = dg.load_regions()
    st, _ = run(build_toric_code_protocol(3), seed=0)
    toric = [r["gamma_bits"] for r in dg.tee_report(st, regions["toric"]["3"], L=3)["rows"]]
    lat = build_honeycomb_torus(2, 3)
    st, _ = run(build_d4_protocol(lat), seed=0)
    d4 = [r["gamma_bits"] for r in dg.tee_report(st, regions["d4"]["2x3"], lat=lat)["rows"]]
    ok = all(abs(g - 1) <= 0.02 for g in toric) and all(abs(g - 3) <= 0.1 for g in d4)
    detail = (f"toric L=3 gamma {[round(g, 3) for g in toric]} (target 1); "
              f"D4 (2,3) ring partitions gamma {[round(g, 3) for g in d4]} (target 3)")
    _report(acceptance, 9, ok, detail)


def test_criterion_10_q8(acceptance):
    # required part: construction, NeedsColoring, Q8 anyon suite
    try:
        build_q8_spt_route(build_honeycomb_torus(2, 2))
        coloring = False
    except NeedsColoring:
        coloring = True
    built = build_q8_spt_route(build_honeycomb_torus(6, 6)).meta["triangles"] != []
    qd = an.QuantumDouble(an.make_group("Q8"))
    suite = len(qd.anyons) == 22 and an.check_modular(qd)["ok"]
    required = coloring and built and suite
    if not os.environ.get("D4PREP_HIGHMEM"):
        detail = f"required parts ok={required}; (3,3) run skipped, set D4PREP_HIGHMEM=1 (peak 29 qubits)"
        _report(acceptance, 10, required, detail, status="SKIP" if required else "FAIL")
        pytest.skip(detail)
    lat = build_honeycomb_torus(3, 3)
    st, rec = run(build_q8_spt_route(lat), seed=0, cap=30, precision="complex64")
    rep = verify(st, q8_family(lat, rec), 1e-6)
    _report(acceptance, 10, required and rep["ok"], f"(3,3) complex64: {rep['passed']}/{rep['n']} at 1e-6")


def test_criterion_11_engineering(acceptance):
    from test_simulator import dense, oracle_state, random_circuit
    lat = build_honeycomb_torus(2, 2)
    c = build_d4_protocol(lat)
    recs = {run(c, seed=s, threads=k)[1].to_json(sort_keys=True) for s in range(3) for k in (1, 2, 4)}
    determinism = len(recs) == 3
    emb = build_square_grid_embedding(lat)
    protocols = [build_toric_code_protocol(2), build_toric_code_protocol(3), c, build_d4_spt_route(lat),
                 build_d4_grid_protocol(lat, emb), build_d4_grid_protocol(lat, emb, native=True),
                 build_d4_protocol(build_honeycomb_torus(2, 3))]
    for p in protocols:
        run(p, seed=1, check_norm=True, norm_tol=1e-10)  # raises on drift
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 13))
        rc = random_circuit(rng, n, 40)
        st, _ = run(rc)
        psi = oracle_state(rc, n)
        worst = max(worst, float(np.abs(st.amplitudes([V(k) for k in range(n)]) - psi).max()))
        factors = tuple((["X", "Y", "Z"][rng.integers(3)], V(int(q))) for q in rng.permutation(n)[:min(n, 4)])
        m = np.eye(2 ** n, dtype=complex)
        for f in factors:
            m = m @ dense(f[0], [f[1].index], n)
        got = st.expectation(OperatorExpr(((1.0, factors),)))
        worst = max(worst, abs(got - np.vdot(psi, m @ psi)))
    _report(acceptance, 11, determinism and worst < 1e-10,
            f"thread-determinism={determinism}, norm checked on {len(protocols)} protocols, "
            f"oracle max error {worst:.1e}")
