import numpy as np
import pytest

from d4prep.circuit import build_d4_protocol, build_d4_spt_route, build_toric_code_protocol, stage_circuit
from d4prep.errors import MissingOutcome, NeedsColoring
from d4prep.lattice import E, P, V, build_honeycomb_torus
from d4prep.simulator import MeasurementRecord, run
from d4prep.stabilizers import (OperatorExpr, PauliGroup, PauliSum, check_identity, color_code_family,
                                commutes, compare_exact, d4_a, d4_b, d4_family, derive_d4_chain, derive_spt_chain,
                                dice_cluster_family, exchange_identity, gauged_family, pauli_dense, q8_family,
                                rotated_family, shared_edges, toric_family, verify)


def test_pauli_algebra():
    x, z = PauliSum.pauli("X", V(0)), PauliSum.pauli("Z", V(0))
    y = PauliSum.pauli("Y", V(0))
    assert (x * z).is_close(y.scale(-1j))
    assert (x * x).is_close(PauliSum.identity())
    m = pauli_dense(x * z, [V(0)])
    assert np.allclose(m, np.array([[0, 1], [1, 0]]) @ np.diag([1, -1]))


def test_cz_conjugation_matches_dense():
    a, b = E(0), E(1)
    op = PauliSum.pauli("X", a)
    out = op.conj_gate("CZ", (a, b))
    cz = np.diag([1, 1, 1, -1])
    x = np.kron(np.array([[0, 1], [1, 0]]), np.eye(2))
    assert np.allclose(pauli_dense(out, [a, b]), cz @ x @ cz)


def test_final_family_matches_derivation(lat22, lat23):
    for lat, seed in ((lat22, 0), (lat22, 1), (lat23, 2)):
        rec = run(build_d4_protocol(lat), seed=seed)[1] if lat.n_edges <= 12 else _fake_record(lat, seed)
        d4_family(lat, rec)  # raises if the closed form disagrees


def _fake_record(lat, seed):
    # the derivation only reads signs, so any +-1 assignment is a valid input
    rng = np.random.default_rng(seed)
    keys = [str(P(p)) for p in range(lat.n_plaquettes)] + [str(V(v)) for v in range(lat.n_vertices)]
    return MeasurementRecord({k: int(rng.choice([-1, 1])) for k in keys})


def test_stage_families_equal_derivation(lat22):
    rec = run(build_d4_protocol(lat22), seed=3)[1]
    ch = derive_d4_chain(lat22, rec)
    assert not ch["dropped"]
    assert compare_exact(dice_cluster_family(lat22), ch["dice"]) == []
    assert compare_exact(color_code_family(lat22, rec), ch["color"]) == []
    assert compare_exact(rotated_family(lat22, rec), ch["rotated"]) == []
    assert compare_exact(gauged_family(lat22, rec), ch["gauged"]) == []


@pytest.mark.parametrize("seed", range(4))
def test_stages_verify_on_state(lat22, d4_22, seed):
    fams = {"dice-cluster": lambda r: dice_cluster_family(lat22), "color-code": lambda r: color_code_family(lat22, r),
            "rotated": lambda r: rotated_family(lat22, r), "gauged": lambda r: gauged_family(lat22, r)}
    for stage, fam in fams.items():
        st, rec = run(stage_circuit(d4_22, stage), seed=seed)
        assert verify(st, fam(rec))["ok"], stage


def test_color_code_a_times_b(lat22, d4_22):
    st, rec = run(stage_circuit(d4_22, "color-code"), seed=7)
    for pl in lat22.plaquettes:
        y = OperatorExpr.product([("Y", V(v)) for v in pl.ring])
        x = rec.outcomes[str(P(pl.index))]
        # A_p B_p = -x_p prod Y on the ring, and the state has A_p = x_p, B_p = 1
        ab = OperatorExpr.product([("Z", V(v)) for v in pl.ring]) * OperatorExpr.product([("X", V(v)) for v in pl.ring])
        assert check_identity(ab, y * -1)
        assert abs(st.expectation(y) * x + 1) < 1e-9


def test_spt_chain_agrees(lat22):
    rec = run(build_d4_spt_route(lat22), seed=1)[1]
    ch = derive_spt_chain(lat22, rec)
    assert not ch["dropped"]
    d4_family(lat22, rec, vertex_signs=False)


def test_exchange_identity_all_pairs(lat22):
    pairs = {(a, b) for a, b, _ in lat22.adjacent_plaquettes()}
    assert pairs
    for pl, pr in pairs:
        lhs, rhs = exchange_identity(lat22, pl, pr)
        assert check_identity(lhs, rhs, tol=1e-12)


def test_exchange_identity_single_shared_edge():
    lat = build_honeycomb_torus(3, 3)
    for pl, pr, e in lat.adjacent_plaquettes():
        assert shared_edges(lat, pl, pr) == [e]
        kl, kr = lat.plaquettes[pl].ring_edges.index(e), lat.plaquettes[pr].ring_edges.index(e)
        assert kl % 2 != kr % 2
        if kl % 2:
            pl, pr = pr, pl
        # printed form: A_L A_R = B1_L B2_R A_R A_L with e at an even ring slot of L
        lhs = d4_a(lat, pl) * d4_a(lat, pr)
        rhs = d4_b(lat, pl, 1) * d4_b(lat, pr, 2) * d4_a(lat, pr) * d4_a(lat, pl)
        # 19 qubits is past the dense limit; compare exact Pauli expansions
        assert lhs.to_pauli_sum().is_close(rhs.to_pauli_sum(), tol=1e-12)
        assert not lhs.to_pauli_sum().is_close((d4_a(lat, pr) * d4_a(lat, pl)).to_pauli_sum())


def test_b_operators_commute_with_family(lat22):
    rec = run(build_d4_protocol(lat22), seed=0)[1]
    fam = d4_family(lat22, rec, derive=False)
    bs = [m for m in fam.members if m[0].startswith("B")]
    for _, b, _ in bs:
        for _, other, _ in fam.members:
            assert commutes(b, other, tol=1e-12)


def test_toric_family():
    for L in (2, 3):
        st, rec = run(build_toric_code_protocol(L), seed=L)
        assert verify(st, toric_family(L, rec))["ok"]


def test_pauli_group_membership():
    g = PauliGroup([PauliSum.pauli("Z", V(0)) * PauliSum.pauli("Z", V(1)), PauliSum.pauli("X", V(0)) * PauliSum.pauli("X", V(1))])
    assert g.rank == 2
    yy = PauliSum.pauli("Y", V(0)) * PauliSum.pauli("Y", V(1))
    assert g.contains(yy.scale(-1))
    assert not g.contains(yy)


def test_missing_outcome(lat22):
    with pytest.raises(MissingOutcome):
        d4_family(lat22, MeasurementRecord({}), derive=False)


def test_q8_family_needs_coloring(lat22):
    with pytest.raises(NeedsColoring):
        q8_family(lat22, MeasurementRecord({}))


def test_rotated_factor_matches_dense():
    from d4prep.simulator import StateVector
    X, Y = np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]])
    for kind, sign in (("XY+", 1), ("XY-", -1)):
        want = (X + sign * Y) / np.sqrt(2)
        expr = OperatorExpr.product([(kind, V(0))])
        assert np.allclose(expr.dense([V(0)]), want)
        st = StateVector().allocate_plus(V(0)).apply("Tplus", (V(0),))
        psi = st.amplitudes()
        assert abs(st.expectation(expr) - np.vdot(psi, want @ psi)) < 1e-12
